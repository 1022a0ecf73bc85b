//! The full tagger: current-utterance summary, history summary, prediction
//! encoder and output layer, plus the non-attention baselines.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attention::{
    pool_sentence, score_content, summarize_history, AttentionConfig, AttentionParams, Family, Group,
    HistoryEntry, HistorySummary, Pool, WeightRecord,
};
use crate::autodiff::{Tape, Var};
use crate::corpus::{build_windows, separator, ContextWindow, Dialogue, LabelSet, Role, Vocab, WORD_INIT_BOUND};
use crate::encoder::{bilstm_encode, bilstm_encode_with_context, BiLstmParams};
use crate::error::{Error, Result};
use crate::tensor::{param_rng, uniform_tensor, ParamId, ParamStore, Tensor};

pub const OUTPUT_INIT_BOUND: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Sigmoid per label, mean binary cross-entropy.
    MultiLabel,
    /// Softmax over labels, categorical cross-entropy; one gold label.
    SingleLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Every label with probability at least the threshold.
    Threshold,
    /// The single most probable label.
    Top1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstmAttention {
    Off,
    Content,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Variant {
    /// Utterance-only classifier.
    NoContext,
    /// History utterances re-read by a dedicated BiLSTM.
    LstmContext { attention: LstmAttention },
    /// Intent and distance attention over the history.
    Attention(AttentionConfig),
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::NoContext => "no_context".into(),
            Variant::LstmContext { attention: LstmAttention::Off } => "lstm_context".into(),
            Variant::LstmContext { attention: LstmAttention::Content } => "lstm_context+content".into(),
            Variant::Attention(a) => a.label(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden size of every layer; each LSTM direction gets `dim / 2`.
    pub dim: usize,
    pub word_dim: usize,
    pub context_length: usize,
    pub variant: Variant,
    pub loss: LossMode,
    pub decision: Decision,
    pub threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 128,
            word_dim: 200,
            context_length: 7,
            variant: Variant::Attention(AttentionConfig::default()),
            loss: LossMode::MultiLabel,
            decision: Decision::Threshold,
            threshold: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!("dim must be even and >= 2, got {}", self.dim)));
        }
        if self.word_dim == 0 || self.context_length == 0 {
            return Err(Error::Config("word_dim and context_length must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if let Variant::Attention(a) = &self.variant {
            a.validate()?;
        }
        Ok(())
    }

    /// Width of the history summary appended to every word vector.
    pub fn history_dim(&self) -> usize {
        match &self.variant {
            Variant::NoContext => 0,
            Variant::LstmContext { .. } => self.dim,
            Variant::Attention(a) => a.history_dim(self.dim),
        }
    }
}

/// One prior utterance in id form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryInput {
    /// Speaker separator followed by the utterance's word ids.
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
    pub distance: usize,
    pub role: Role,
}

/// A context window in id form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub dialogue: String,
    pub turn: usize,
    pub tokens: Vec<usize>,
    pub speaker: Role,
    pub labels: Vec<usize>,
    /// Gold labels outside the label inventory.
    pub unknown_labels: usize,
    /// Nearest first.
    pub histories: Vec<HistoryInput>,
}

pub fn encode_window(w: &ContextWindow<'_>, vocab: &Vocab, labels: &LabelSet) -> Example {
    let known = labels.encode(&w.current.labels);
    Example {
        dialogue: w.dialogue_id.to_string(),
        turn: w.index,
        tokens: vocab.encode(&w.current.tokens),
        speaker: w.current.speaker,
        unknown_labels: w.current.labels.len() - known.len(),
        labels: known,
        histories: w
            .histories
            .iter()
            .map(|h| {
                let mut tokens = vec![vocab.id(separator(h.turn.speaker))];
                tokens.extend(vocab.encode(&h.turn.tokens));
                HistoryInput {
                    tokens,
                    labels: labels.encode(&h.turn.labels),
                    distance: h.distance,
                    role: h.turn.speaker,
                }
            })
            .collect(),
    }
}

/// Every window of every dialogue, in corpus order.
pub fn encode_dialogues(dialogues: &[Dialogue], vocab: &Vocab, labels: &LabelSet, context_length: usize) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for d in dialogues {
        for w in build_windows(d, context_length)? {
            out.push(encode_window(&w, vocab, labels));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub decided: Vec<usize>,
}

/// Label ids chosen from `probabilities`.
pub fn decide(probabilities: &[f64], decision: Decision, threshold: f64) -> Vec<usize> {
    match decision {
        Decision::Threshold => (0..probabilities.len()).filter(|&k| probabilities[k] >= threshold).collect(),
        Decision::Top1 => {
            let mut best = None::<usize>;
            for (k, &p) in probabilities.iter().enumerate() {
                if best.is_none_or(|b| p > probabilities[b]) {
                    best = Some(k);
                }
            }
            best.into_iter().collect()
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Result of one forward pass on a tape.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    pub history: Option<HistorySummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub vocab_size: usize,
    pub label_count: usize,
    /// `[word_dim, |V|]`.
    pub word_embeddings: ParamId,
    pub summary_encoder: BiLstmParams,
    /// Reads `w_t ⊕ s_hist` (the `s_hist` columns live in `w_ctx`);
    /// separate storage from `summary_encoder`.
    pub prediction_encoder: BiLstmParams,
    /// Only for the LSTM-context baselines.
    pub history_encoder: Option<BiLstmParams>,
    /// `[dim, |L|]`.
    pub intent_table: ParamId,
    pub attention: AttentionParams,
    /// `[|L|, dim]`.
    pub output_w: ParamId,
    pub output_b: ParamId,
}

impl ModelParams {
    /// Registers every tensor of the model in `store`.
    pub fn build(store: &mut ParamStore, cfg: ModelConfig, vocab_size: usize, label_count: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if vocab_size == 0 || label_count == 0 {
            return Err(Error::Data("empty vocabulary or label set".into()));
        }
        let hidden = cfg.dim / 2;
        let word_embeddings = store.register(
            "word_embeddings",
            uniform_tensor(vec![cfg.word_dim, vocab_size], WORD_INIT_BOUND, &mut param_rng(seed, "word_embeddings"))?,
        )?;
        let summary_encoder = BiLstmParams::register(store, "encoder.summary", cfg.word_dim, hidden, seed)?;
        let history_encoder = match cfg.variant {
            Variant::LstmContext { .. } => Some(BiLstmParams::register(store, "encoder.history", cfg.word_dim, hidden, seed)?),
            _ => None,
        };
        let prediction_encoder =
            BiLstmParams::register_with_context(store, "encoder.prediction", cfg.word_dim, cfg.history_dim(), hidden, seed)?;
        let intent_table = store.register(
            "intent_embeddings",
            uniform_tensor(vec![cfg.dim, label_count], OUTPUT_INIT_BOUND, &mut param_rng(seed, "intent_embeddings"))?,
        )?;
        let attention = AttentionParams::register(store, cfg.dim, cfg.context_length, seed)?;
        let output_w = store.register(
            "output.w",
            uniform_tensor(vec![label_count, cfg.dim], OUTPUT_INIT_BOUND, &mut param_rng(seed, "output.w"))?,
        )?;
        let output_b = store.register("output.b", Tensor::zeros(vec![label_count])?)?;
        Ok(ModelParams {
            cfg,
            vocab_size,
            label_count,
            word_embeddings,
            summary_encoder,
            prediction_encoder,
            history_encoder,
            intent_table,
            attention,
            output_w,
            output_b,
        })
    }

    /// Replaces the word table, e.g. with pretrained vectors.
    pub fn set_word_embeddings(&self, store: &mut ParamStore, table: &Tensor) -> Result<()> {
        let dst = store.get_mut(self.word_embeddings);
        if dst.shape() != table.shape() {
            return Err(Error::dim("set_word_embeddings", format!("{:?} vs {:?}", dst.shape(), table.shape())));
        }
        dst.values_mut().copy_from_slice(table.values());
        Ok(())
    }

    fn embed(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Vec<Var>> {
        ids.iter()
            .map(|&id| {
                if id >= self.vocab_size {
                    return Err(Error::Index {
                        what: "vocabulary",
                        index: id,
                        size: self.vocab_size,
                    });
                }
                tape.lookup_param(store, self.word_embeddings, id)
            })
            .collect()
    }

    /// `h_T`: final states of the summary encoder over the utterance.
    pub fn summarize_current(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("utterance"));
        }
        let words = self.embed(tape, store, ids)?;
        Ok(bilstm_encode(tape, store, &self.summary_encoder, &words)?.summary)
    }

    /// Mean intent-table column of `labels`; zeros when none are known.
    pub fn intent_vector(&self, tape: &mut Tape, store: &ParamStore, labels: &[usize]) -> Result<Var> {
        if labels.is_empty() {
            return tape.zeros(self.cfg.dim);
        }
        let cols = labels
            .iter()
            .map(|&l| tape.lookup_param(store, self.intent_table, l))
            .collect::<Result<Vec<_>>>()?;
        let sum = tape.add_all(&cols)?;
        if cols.len() == 1 {
            Ok(sum)
        } else {
            tape.scale(sum, 1.0 / cols.len() as f64)
        }
    }

    fn lstm_history(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        attention: LstmAttention,
        h_t: Var,
        histories: &[HistoryInput],
    ) -> Result<(Var, Option<HistorySummary>)> {
        let enc = self
            .history_encoder
            .as_ref()
            .ok_or_else(|| Error::Config("model has no history encoder".into()))?;
        if histories.is_empty() {
            return Ok((tape.zeros(self.cfg.dim)?, None));
        }
        match attention {
            LstmAttention::Off => {
                let ids: Vec<usize> = histories.iter().rev().flat_map(|h| h.tokens.iter().copied()).collect();
                let words = self.embed(tape, store, &ids)?;
                Ok((bilstm_encode(tape, store, enc, &words)?.summary, None))
            }
            LstmAttention::Content => {
                let att = self.attention.on_tape(tape, store)?;
                let mut vectors = Vec::with_capacity(histories.len());
                let mut scores = Vec::with_capacity(histories.len());
                for h in histories {
                    let words = self.embed(tape, store, &h.tokens)?;
                    let v = bilstm_encode(tape, store, enc, &words)?.summary;
                    scores.push(score_content(tape, &att, h_t, v, None)?);
                    vectors.push(v);
                }
                let pooled = pool_sentence(tape, &vectors, &scores, self.cfg.dim)?;
                let rows = histories
                    .iter()
                    .zip(&pooled.weights)
                    .map(|(h, &weight)| WeightRecord {
                        distance: h.distance,
                        role: h.role,
                        group: Group {
                            family: Family::Content,
                            pool: Pool::All,
                        },
                        weight,
                    })
                    .collect();
                let summary = HistorySummary {
                    s_hist: pooled.summary,
                    kind: crate::attention::AttentionKind::Content,
                    rows,
                };
                Ok((pooled.summary, Some(summary)))
            }
        }
    }

    /// History summary for `ex`, or `None` for the no-context model.
    pub fn summarize_context(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ex: &Example,
        h_t: Var,
    ) -> Result<(Option<Var>, Option<HistorySummary>)> {
        if ex.histories.len() > self.cfg.context_length {
            return Err(Error::Data(format!(
                "{} histories exceed context_length {}",
                ex.histories.len(),
                self.cfg.context_length
            )));
        }
        match self.cfg.variant {
            Variant::NoContext => Ok((None, None)),
            Variant::LstmContext { attention } => {
                let (s, summary) = self.lstm_history(tape, store, attention, h_t, &ex.histories)?;
                Ok((Some(s), summary))
            }
            Variant::Attention(cfg) => {
                let entries = ex
                    .histories
                    .iter()
                    .map(|h| {
                        Ok(HistoryEntry {
                            intent: self.intent_vector(tape, store, &h.labels)?,
                            distance: h.distance,
                            role: h.role,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let summary = summarize_history(tape, store, &self.attention, &cfg, h_t, &entries, ex.speaker)?;
                Ok((Some(summary.s_hist), Some(summary)))
            }
        }
    }

    /// Runs the prediction encoder over `w_t ⊕ s_hist` and the output layer.
    pub fn predict_logits(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize], s_hist: Option<Var>) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("utterance"));
        }
        let got = s_hist.map_or(0, |s| tape.value(s).len());
        if got != self.cfg.history_dim() {
            return Err(Error::dim(
                "predict",
                format!("history summary has {got} values, model expects {}", self.cfg.history_dim()),
            ));
        }
        let words = self.embed(tape, store, ids)?;
        let summary = bilstm_encode_with_context(tape, store, &self.prediction_encoder, &words, s_hist)?.summary;
        let w = tape.param(store, self.output_w)?;
        let b = tape.param(store, self.output_b)?;
        let z = tape.matvec(w, summary)?;
        tape.add(z, b)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ex: &Example) -> Result<Forward> {
        let (s_hist, history) = match self.cfg.variant {
            Variant::NoContext => (None, None),
            _ => {
                let h_t = self.summarize_current(tape, store, &ex.tokens)?;
                self.summarize_context(tape, store, ex, h_t)?
            }
        };
        let logits = self.predict_logits(tape, store, &ex.tokens, s_hist)?;
        Ok(Forward { logits, history })
    }

    /// Training loss of `logits` against the gold labels of `ex`.
    pub fn loss(&self, tape: &mut Tape, logits: Var, gold: &[usize]) -> Result<Var> {
        match self.cfg.loss {
            LossMode::MultiLabel => {
                let mut targets = vec![0.0; self.label_count];
                for &g in gold {
                    *targets.get_mut(g).ok_or(Error::Index {
                        what: "label",
                        index: g,
                        size: self.label_count,
                    })? = 1.0;
                }
                tape.bce_with_logits(logits, &targets)
            }
            LossMode::SingleLabel => match gold {
                [g] => tape.softmax_cross_entropy(logits, *g),
                _ => Err(Error::Data(format!(
                    "single_label mode needs exactly one gold label, got {}",
                    gold.len()
                ))),
            },
        }
    }

    pub fn prediction_from_logits(&self, logits: &[f64]) -> Prediction {
        let probabilities = match self.cfg.loss {
            LossMode::MultiLabel => logits.iter().map(|&z| sigmoid(z)).collect(),
            LossMode::SingleLabel => softmax(logits),
        };
        let decided = decide(&probabilities, self.cfg.decision, self.cfg.threshold);
        Prediction {
            logits: logits.to_vec(),
            probabilities,
            decided,
        }
    }

    pub fn predict(&self, store: &ParamStore, ex: &Example) -> Result<(Prediction, Option<HistorySummary>)> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, store, ex)?;
        Ok((self.prediction_from_logits(tape.value(f.logits)), f.history))
    }

    /// Adds the loss gradient of one example into `store`; returns the loss.
    pub fn accumulate_gradients(&self, store: &mut ParamStore, ex: &Example) -> Result<f64> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, store, ex)?;
        let loss = self.loss(&mut tape, f.logits, &ex.labels)?;
        let value = tape.scalar(loss);
        tape.backward(loss)?.accumulate_into(store);
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{AttentionKind, Level, SpeakerIndicator};
    use crate::gradcheck::{param_gradient_check, DEFAULT_EPS};

    fn small_cfg(variant: Variant) -> ModelConfig {
        ModelConfig {
            dim: 4,
            word_dim: 3,
            context_length: 3,
            variant,
            ..ModelConfig::default()
        }
    }

    fn toy_example() -> Example {
        Example {
            dialogue: "d".into(),
            turn: 2,
            tokens: vec![4, 5],
            speaker: Role::Tourist,
            labels: vec![1],
            unknown_labels: 0,
            histories: vec![
                HistoryInput {
                    tokens: vec![2, 4],
                    labels: vec![0],
                    distance: 1,
                    role: Role::Guide,
                },
                HistoryInput {
                    tokens: vec![3, 5, 5],
                    labels: vec![0, 1],
                    distance: 2,
                    role: Role::Tourist,
                },
            ],
        }
    }

    fn all_variants() -> Vec<Variant> {
        let mut v = vec![
            Variant::NoContext,
            Variant::LstmContext { attention: LstmAttention::Off },
            Variant::LstmContext { attention: LstmAttention::Content },
        ];
        for level in [Level::Sentence, Level::Role] {
            v.extend(AttentionConfig::grid(level).into_iter().map(Variant::Attention));
        }
        v
    }

    #[test]
    fn end_to_end_gradients() {
        let ex = toy_example();
        for variant in all_variants() {
            let mut store = ParamStore::new();
            let m = ModelParams::build(&mut store, small_cfg(variant), 6, 2, 11).unwrap();
            let ids: Vec<ParamId> = store.ids().collect();
            let r = param_gradient_check(
                &mut store,
                &ids,
                |t, s| {
                    let f = m.forward(t, s, &ex)?;
                    m.loss(t, f.logits, &ex.labels)
                },
                DEFAULT_EPS,
                1,
            )
            .unwrap();
            assert!(r.max_rel_err < 1e-6, "{variant}: {r:?}");
        }
    }

    #[test]
    fn encoders_are_distinct_storage() {
        let mut store = ParamStore::new();
        let m = ModelParams::build(&mut store, small_cfg(Variant::NoContext), 6, 2, 0).unwrap();
        assert_ne!(m.summary_encoder.forward.w, m.prediction_encoder.forward.w);
        let cfg = small_cfg(Variant::Attention(AttentionConfig::new(AttentionKind::Time, Level::Role)));
        let mut store = ParamStore::new();
        let m = ModelParams::build(&mut store, cfg, 6, 2, 0).unwrap();
        assert_eq!(m.prediction_encoder.input_dim(), 3 + 16);
    }

    #[test]
    fn history_width_is_checked() {
        let mut store = ParamStore::new();
        let cfg = small_cfg(Variant::Attention(AttentionConfig::new(AttentionKind::Time, Level::Sentence)));
        let m = ModelParams::build(&mut store, cfg, 6, 2, 0).unwrap();
        let mut t = Tape::new();
        let wrong = t.zeros(5).unwrap();
        assert!(matches!(m.predict_logits(&mut t, &store, &[4], Some(wrong)), Err(Error::Dimension { .. })));
        assert!(matches!(m.predict_logits(&mut t, &store, &[4], None), Err(Error::Dimension { .. })));
        assert!(matches!(m.summarize_current(&mut t, &store, &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn zero_output_layer_gives_half() {
        let mut store = ParamStore::new();
        let m = ModelParams::build(&mut store, small_cfg(Variant::NoContext), 6, 1, 0).unwrap();
        store.get_mut(m.output_w).values_mut().fill(0.0);
        let (p, _) = m.predict(&store, &toy_example()).unwrap();
        assert_eq!(p.logits, vec![0.0]);
        assert_eq!(p.probabilities, vec![0.5]);
        assert_eq!(p.decided, vec![0]);
    }

    #[test]
    fn loss_examples() {
        let mut store = ParamStore::new();
        let mut m = ModelParams::build(&mut store, small_cfg(Variant::NoContext), 6, 2, 0).unwrap();
        let mut t = Tape::new();
        let z = t.vector(vec![0.0, 0.0]).unwrap();
        let l = m.loss(&mut t, z, &[1]).unwrap();
        assert!((t.scalar(l) - 2f64.ln()).abs() < 1e-12);
        let sure = t.vector(vec![-20.0, 20.0]).unwrap();
        let l = m.loss(&mut t, sure, &[1]).unwrap();
        assert!(t.scalar(l) <= 1e-6);

        m.cfg.loss = LossMode::SingleLabel;
        let l = m.loss(&mut t, z, &[0]).unwrap();
        assert!((t.scalar(l) - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(m.loss(&mut t, z, &[]), Err(Error::Data(_))));
    }

    #[test]
    fn no_context_ignores_history() {
        let mut store = ParamStore::new();
        let m = ModelParams::build(&mut store, small_cfg(Variant::NoContext), 6, 2, 0).unwrap();
        let a = toy_example();
        let b = Example {
            histories: Vec::new(),
            ..a.clone()
        };
        assert_eq!(m.predict(&store, &a).unwrap().0, m.predict(&store, &b).unwrap().0);
    }

    #[test]
    fn lstm_baselines() {
        let ex = toy_example();
        let mut store = ParamStore::new();
        let cfg = small_cfg(Variant::LstmContext { attention: LstmAttention::Content });
        let m = ModelParams::build(&mut store, cfg, 6, 2, 3).unwrap();
        let one = Example {
            histories: ex.histories[..1].to_vec(),
            ..ex.clone()
        };
        let (_, h) = m.predict(&store, &one).unwrap();
        assert_eq!(h.unwrap().rows[0].weight, 1.0);

        let mut t = Tape::new();
        let h_t = m.summarize_current(&mut t, &store, &ex.tokens).unwrap();
        let empty = Example {
            histories: Vec::new(),
            ..ex.clone()
        };
        let (s, _) = m.summarize_context(&mut t, &store, &empty, h_t).unwrap();
        assert_eq!(t.value(s.unwrap()), &[0.0; 4]);

        let cfg = small_cfg(Variant::LstmContext { attention: LstmAttention::Off });
        let mut store = ParamStore::new();
        let m = ModelParams::build(&mut store, cfg, 6, 2, 3).unwrap();
        let mut swapped = ex.clone();
        swapped.histories.reverse();
        let mut t = Tape::new();
        let h_t = m.summarize_current(&mut t, &store, &ex.tokens).unwrap();
        let a = m.summarize_context(&mut t, &store, &ex, h_t).unwrap().0.unwrap();
        let b = m.summarize_context(&mut t, &store, &swapped, h_t).unwrap().0.unwrap();
        assert_ne!(t.value(a), t.value(b));
    }

    #[test]
    fn decisions() {
        assert_eq!(decide(&[0.2, 0.5, 0.9], Decision::Threshold, 0.5), vec![1, 2]);
        assert_eq!(decide(&[0.2, 0.9, 0.9], Decision::Top1, 0.5), vec![1]);
        assert!(decide(&[], Decision::Top1, 0.5).is_empty());
    }

    #[test]
    fn indicator_variant_rejected_without_context_attention() {
        let bad = AttentionConfig::new(AttentionKind::Content, Level::Role).with_indicator(SpeakerIndicator::TimeOnly);
        let mut store = ParamStore::new();
        assert!(ModelParams::build(&mut store, small_cfg(Variant::Attention(bad)), 6, 2, 0).is_err());
    }
}
