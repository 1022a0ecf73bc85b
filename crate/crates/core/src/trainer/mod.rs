//! Minibatch training with early stopping, evaluation, and repeated-run
//! experiments.

mod adam;
mod experiment;
mod metrics;

pub use adam::{clip_global_norm, global_grad_norm, scale_grads, AdamConfig, AdamState};
pub use experiment::{run_experiment, ExperimentRow, ExperimentTable, RowSummary};
pub use metrics::{f1_micro, significance_marker, spearman, t_test_one_tailed, Counts, Metrics, TTest};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::config::KeyValues;
use crate::corpus::{LabelSet, Splits, Vocab};
use crate::error::{Error, Result};
use crate::model::{encode_dialogues, Decision, Example, LossMode, LstmAttention, ModelConfig, ModelParams, Variant};
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            batch_size: 256,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "variant",
    "attention",
    "level",
    "speaker_indicator",
    "history_repr",
    "loss",
    "decision",
    "threshold",
    "dim",
    "word_dim",
    "context_length",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "clip_norm",
];

fn parse_loss(s: &str) -> Result<LossMode> {
    match s.trim().replace('-', "_").as_str() {
        "multi_label" => Ok(LossMode::MultiLabel),
        "single_label" => Ok(LossMode::SingleLabel),
        other => Err(Error::Config(format!("unknown loss {other:?}"))),
    }
}

fn parse_decision(s: &str) -> Result<Decision> {
    match s.trim().replace('-', "_").as_str() {
        "threshold" => Ok(Decision::Threshold),
        "top1" | "top_1" => Ok(Decision::Top1),
        other => Err(Error::Config(format!("unknown decision {other:?}"))),
    }
}

impl TrainConfig {
    /// Applies `key=value` overrides; unknown keys are rejected.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.check_known(TRAIN_KEYS)?;
        macro_rules! take {
            ($key:literal => $($field:tt)+) => {
                if let Some(v) = kv.parsed($key)? {
                    self.$($field)+ = v;
                }
            };
        }
        take!("dim" => model.dim);
        take!("word_dim" => model.word_dim);
        take!("context_length" => model.context_length);
        take!("threshold" => model.threshold);
        take!("batch_size" => batch_size);
        take!("max_epochs" => max_epochs);
        take!("patience" => patience);
        take!("seed" => seed);
        take!("lr" => adam.lr);
        take!("beta1" => adam.beta1);
        take!("beta2" => adam.beta2);
        take!("adam_eps" => adam.eps);
        if let Some(v) = kv.parsed::<f64>("clip_norm")? {
            self.clip_norm = (v > 0.0).then_some(v);
        }
        if let Some(v) = kv.get("loss") {
            self.model.loss = parse_loss(v)?;
        }
        if let Some(v) = kv.get("decision") {
            self.model.decision = parse_decision(v)?;
        }

        let mut att = match self.model.variant {
            Variant::Attention(a) => a,
            _ => AttentionConfig::default(),
        };
        let mut touched = false;
        if let Some(v) = kv.get("attention") {
            att.kind = v.parse()?;
            touched = true;
        }
        if let Some(v) = kv.get("level") {
            att.level = v.parse()?;
            touched = true;
        }
        if let Some(v) = kv.get("speaker_indicator") {
            att.speaker_indicator = v.parse()?;
            touched = true;
        }
        if let Some(v) = kv.get("history_repr") {
            att.history_repr = v.parse()?;
            touched = true;
        }
        match kv.get("variant").map(|v| v.trim().replace('-', "_")) {
            Some(v) => {
                self.model.variant = match v.as_str() {
                    "attention" => Variant::Attention(att),
                    "no_context" => Variant::NoContext,
                    "lstm_context" => Variant::LstmContext {
                        attention: LstmAttention::Off,
                    },
                    "lstm_context_content" => Variant::LstmContext {
                        attention: LstmAttention::Content,
                    },
                    other => return Err(Error::Config(format!("unknown variant {other:?}"))),
                };
                if touched && !matches!(self.model.variant, Variant::Attention(_)) {
                    return Err(Error::Config(format!("attention settings do not apply to variant {v}")));
                }
            }
            None if touched => self.model.variant = Variant::Attention(att),
            None => {}
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be >= 1".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }

    pub fn early_stopping(&self) -> String {
        format!("valid micro-F1, patience {}", self.patience)
    }
}

/// Encoded windows for each split plus the inventories built from train.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub labels: LabelSet,
    pub context_length: usize,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
    /// Optional initial word table, `[word_dim, |V|]`.
    pub word_table: Option<Tensor>,
}

impl Dataset {
    /// Vocabulary and labels come from the training dialogues only; valid
    /// and test labels outside that inventory count as misses.
    pub fn from_splits(splits: &Splits, context_length: usize) -> Result<Self> {
        let vocab = Vocab::build(&splits.train);
        let labels = LabelSet::build(&splits.train);
        let enc = |d| encode_dialogues(d, &vocab, &labels, context_length);
        Ok(Dataset {
            train: enc(&splits.train)?,
            valid: enc(&splits.valid)?,
            test: enc(&splits.test)?,
            vocab,
            labels,
            context_length,
            word_table: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: String,
    pub config: TrainConfig,
    pub early_stopping: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (first maximum of valid F1).
    pub best_epoch: usize,
    pub best_valid_f1: f64,
    pub test: Option<Metrics>,
    pub windows: [usize; 3],
}

/// A finished run with its restored best parameters.
#[derive(Debug, Clone)]
pub struct Trained {
    pub result: RunResult,
    pub model: ModelParams,
    pub store: ParamStore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub counts: Counts,
    pub metrics: Metrics,
}

/// Decides every example and pools the counts. Gold labels unknown to the
/// model count as misses.
pub fn evaluate(model: &ModelParams, store: &ParamStore, examples: &[Example]) -> Result<Evaluation> {
    let per = examples
        .par_iter()
        .map(|ex| {
            let (p, _) = model.predict(store, ex)?;
            let mut c = Counts::default();
            c.add(&p.decided, &ex.labels);
            c.fn_ += ex.unknown_labels;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = Counts::default();
    for c in per {
        counts.tp += c.tp;
        counts.fp += c.fp;
        counts.fn_ += c.fn_;
    }
    Ok(Evaluation {
        counts,
        metrics: counts.metrics(),
    })
}

fn diverged(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence {
            epoch,
            batch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Trains one model; the returned parameters are those of the epoch with
/// the best validation F1.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<Trained> {
    cfg.validate()?;
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::Data("train and valid splits must be non-empty".into()));
    }
    if data.context_length != cfg.model.context_length {
        return Err(Error::Config(format!(
            "dataset windows use context_length {}, model expects {}",
            data.context_length, cfg.model.context_length
        )));
    }
    let mut store = ParamStore::new();
    let model = ModelParams::build(&mut store, cfg.model, data.vocab.len(), data.labels.len(), cfg.seed)?;
    if let Some(t) = &data.word_table {
        model.set_word_embeddings(&mut store, t)?;
    }
    let mut adam = AdamState::new(&store, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            store.zero_grad();
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model
                    .accumulate_gradients(&mut store, &data.train[i])
                    .map_err(|e| diverged(epoch, b, e))?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("batch loss {batch_loss}"),
                });
            }
            total += batch_loss;
            scale_grads(&mut store, 1.0 / batch.len() as f64);
            if let Some(max) = cfg.clip_norm {
                let norm = clip_global_norm(&mut store, max);
                if !norm.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: b,
                        detail: format!("gradient norm {norm}"),
                    });
                }
            }
            adam.step(&mut store)?;
        }
        let train_loss = total / data.train.len() as f64;
        let valid_f1 = evaluate(&model, &store, &data.valid)?.metrics.f1;
        log::debug!("epoch {epoch}: train loss {train_loss:.6}, valid F1 {valid_f1:.4}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_f1,
        });
        if best.as_ref().is_none_or(|(_, f, _)| valid_f1 > *f) {
            best = Some((epoch, valid_f1, store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    let (best_epoch, best_valid_f1, best_store) = best.expect("at least one epoch ran");
    let test = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&model, &best_store, &data.test)?.metrics)
    };
    Ok(Trained {
        result: RunResult {
            model: cfg.model.variant.label(),
            config: *cfg,
            early_stopping: cfg.early_stopping(),
            seed: cfg.seed,
            epochs,
            best_epoch,
            best_valid_f1,
            test,
            windows: [data.train.len(), data.valid.len(), data.test.len()],
        },
        model,
        store: best_store,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{AttentionKind, Level};
    use crate::corpus::{generate, split, GeneratorSpec};

    fn tiny() -> Dataset {
        let spec = GeneratorSpec {
            n_dialogues: 6,
            turns_per_dialogue: 6,
            label_count: 3,
            labels_per_cue_group: 1,
            vocab_size: 9,
            noise_rate: 0.0,
            ..GeneratorSpec::default()
        };
        let d = generate(&spec).unwrap();
        let s = split(&d, [0.5, 0.5, 0.0], 0).unwrap();
        Dataset::from_splits(&s, 7).unwrap()
    }

    fn quick(variant: Variant) -> TrainConfig {
        let mut c = TrainConfig::default();
        c.model.dim = 8;
        c.model.word_dim = 6;
        c.model.variant = variant;
        c.batch_size = 4;
        c.max_epochs = 3;
        c.adam.lr = 0.01;
        c
    }

    #[test]
    fn same_seed_same_result() {
        let data = tiny();
        let cfg = quick(Variant::Attention(AttentionConfig::new(AttentionKind::Time, Level::Role)));
        let a = train(&cfg, &data).unwrap().result;
        let b = train(&cfg, &data).unwrap().result;
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = train(&TrainConfig { seed: 1, ..cfg }, &data).unwrap().result;
        assert_ne!(a.epochs, c.epochs);
    }

    #[test]
    fn patience_zero_stops_at_first_non_improvement() {
        let data = tiny();
        let mut cfg = quick(Variant::NoContext);
        cfg.patience = 0;
        cfg.max_epochs = 30;
        cfg.adam.lr = 1e-9;
        let r = train(&cfg, &data).unwrap().result;
        // with a frozen model the second epoch cannot improve
        assert_eq!(r.epochs.len(), 2);
        assert_eq!(r.best_epoch, 1);
    }

    #[test]
    fn config_overrides() {
        let mut cfg = TrainConfig::default();
        let kv = KeyValues::parse("attention=time\nlevel=role\nspeaker-indicator=both\nclip_norm=0\n", "t").unwrap();
        cfg.apply(&kv).unwrap();
        assert_eq!(cfg.clip_norm, None);
        match cfg.model.variant {
            Variant::Attention(a) => assert_eq!(a.label(), "time+ind/role"),
            v => panic!("{v:?}"),
        }
        let kv = KeyValues::parse("variant=no_context\nlevel=role\n", "t").unwrap();
        assert!(cfg.apply(&kv).is_err());
        let kv = KeyValues::parse("attention=time\nspeaker_indicator=time_only\n", "t").unwrap();
        assert!(TrainConfig::default().apply(&kv).is_err());
        let kv = KeyValues::parse("bogus=1\n", "t").unwrap();
        assert!(TrainConfig::default().apply(&kv).is_err());
    }

    #[test]
    fn context_length_must_match_windows() {
        let data = tiny();
        let mut cfg = quick(Variant::NoContext);
        cfg.model.context_length = 3;
        assert!(matches!(train(&cfg, &data), Err(Error::Config(_))));
    }
}
