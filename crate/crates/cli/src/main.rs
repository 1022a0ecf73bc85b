//! `ctxslu` command-line interface.
//!
//! Settings resolve as built-in defaults < `--config` file < flags. Exit codes:
//! 0 success, 2 usage or data error, 3 numeric failure.

use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctxslu::attention::{
    export_weights, AttentionConfig, DistanceProfile, Level, WeightRecord,
};
use ctxslu::checkpoint;
use ctxslu::config::KeyValues;
use ctxslu::corpus::{generate, label_histogram, load_corpus, load_embeddings, split, write_corpus, GeneratorSpec, Splits};
use ctxslu::model::{encode_dialogues, Example, LstmAttention, Variant};
use ctxslu::trainer::{evaluate, run_experiment, spearman, train, Dataset, ExperimentRow, TrainConfig};
use ctxslu::{Error, Result};

#[derive(Parser)]
#[command(name = "ctxslu", version, about = "Time-aware context attention for dialogue act tagging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus.
    Generate(GenerateArgs),
    /// Train one model and save its best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Train a grid of configurations several times and compare them.
    Ablate(AblateArgs),
    /// Export attention weights of a checkpoint.
    InspectAttention(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator spec file (key=value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output corpus (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_dialogues: Option<usize>,
    #[arg(long)]
    turns_per_dialogue: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    label_count: Option<usize>,
    /// Comma-separated copy probabilities by distance.
    #[arg(long)]
    decay_profile: Option<String>,
    #[arg(long)]
    role_bias: Option<f64>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    labels_per_cue_group: Option<usize>,
    #[arg(long)]
    min_tokens: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
}

/// Model and optimizer overrides shared by `train` and `ablate`.
#[derive(Args, Default)]
struct TrainFlags {
    /// Training config file (key=value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// attention, no_context, lstm_context or lstm_context_content.
    #[arg(long)]
    variant: Option<String>,
    /// none, content, time, content_plus_time or content_x_time.
    #[arg(long)]
    attention: Option<String>,
    /// sentence or role.
    #[arg(long)]
    level: Option<String>,
    /// off, time_only, content_only or both.
    #[arg(long)]
    speaker_indicator: Option<String>,
    /// intent_only or intent_and_distance.
    #[arg(long)]
    history_repr: Option<String>,
    /// multi_label or single_label.
    #[arg(long)]
    loss: Option<String>,
    /// threshold or top1.
    #[arg(long)]
    decision: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    context_length: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Global gradient-norm bound; 0 disables clipping.
    #[arg(long)]
    clip_norm: Option<f64>,
}

#[derive(Args)]
struct DataArgs {
    /// Single corpus split into train/valid/test by --split.
    #[arg(long, conflicts_with_all = ["train", "valid", "test"])]
    corpus: Option<PathBuf>,
    /// Dialogue fractions for --corpus.
    #[arg(long, default_value = "0.7,0.15,0.15")]
    split: String,
    /// Seed of the dialogue shuffle before splitting.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, requires = "valid")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    valid: Option<PathBuf>,
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    /// Pretrained word vectors (`word v1 .. v_dim` lines).
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for model.ckpt and run.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Training config the checkpoint must match.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Metrics JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    flags: TrainFlags,
    /// Grid file: one `name: key=value ...` row per line.
    #[arg(long, conflicts_with = "preset")]
    grid: Option<PathBuf>,
    /// Built-in grid: attention-role, attention-sentence, attention or baselines.
    #[arg(long)]
    preset: Option<String>,
    /// Runs per row.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Baseline row name; repeatable. Defaults to the first row.
    #[arg(long)]
    baseline: Vec<String>,
    /// First run seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for table.csv, table.txt and runs.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// `all`, a window index, or `dialogue:turn`.
    #[arg(long, default_value = "all")]
    select: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for weights.csv and profile.csv.
    #[arg(long)]
    out: PathBuf,
}

fn set<T: Display>(kv: &mut KeyValues, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.set(key, v.to_string());
    }
}

fn load_kv(path: &Option<PathBuf>) -> Result<KeyValues> {
    path.as_ref().map_or_else(|| Ok(KeyValues::new()), KeyValues::load)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Usage(format!("cannot create {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Usage(format!("cannot write {}: {e}", path.display())))
}

impl TrainFlags {
    fn overrides(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        set(&mut kv, "variant", &self.variant);
        set(&mut kv, "attention", &self.attention);
        set(&mut kv, "level", &self.level);
        set(&mut kv, "speaker_indicator", &self.speaker_indicator);
        set(&mut kv, "history_repr", &self.history_repr);
        set(&mut kv, "loss", &self.loss);
        set(&mut kv, "decision", &self.decision);
        set(&mut kv, "threshold", &self.threshold);
        set(&mut kv, "dim", &self.dim);
        set(&mut kv, "word_dim", &self.word_dim);
        set(&mut kv, "context_length", &self.context_length);
        set(&mut kv, "batch_size", &self.batch_size);
        set(&mut kv, "max_epochs", &self.max_epochs);
        set(&mut kv, "patience", &self.patience);
        set(&mut kv, "lr", &self.lr);
        set(&mut kv, "beta1", &self.beta1);
        set(&mut kv, "beta2", &self.beta2);
        set(&mut kv, "adam_eps", &self.adam_eps);
        set(&mut kv, "clip_norm", &self.clip_norm);
        kv
    }

    /// Defaults, then the config file, then flags, then `seed`.
    fn resolve(&self, seed: Option<u64>) -> Result<TrainConfig> {
        let mut kv = load_kv(&self.config)?;
        kv.merge(&self.overrides());
        set(&mut kv, "seed", &seed);
        let mut cfg = TrainConfig::default();
        cfg.apply(&kv)?;
        Ok(cfg)
    }
}

fn parse_fractions(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Usage(format!("--split {s:?}: {e}")))?;
    v.try_into()
        .map_err(|_| Error::Usage(format!("--split {s:?} needs three fractions")))
}

impl DataArgs {
    fn splits(&self) -> Result<Splits> {
        match (&self.corpus, &self.train, &self.valid) {
            (Some(c), _, _) => split(&load_corpus(c)?, parse_fractions(&self.split)?, self.split_seed),
            (None, Some(t), Some(v)) => Ok(Splits {
                train: load_corpus(t)?,
                valid: load_corpus(v)?,
                test: self.test.as_ref().map_or_else(|| Ok(Vec::new()), load_corpus)?,
            }),
            _ => Err(Error::Usage("give --corpus, or --train and --valid".into())),
        }
    }

    fn dataset(&self, cfg: &TrainConfig) -> Result<Dataset> {
        let mut data = Dataset::from_splits(&self.splits()?, cfg.model.context_length)?;
        if let Some(path) = &self.embeddings {
            let (table, report) = load_embeddings(path, &data.vocab, cfg.model.word_dim, cfg.seed)?;
            println!(
                "embeddings: {}/{} words covered ({:.1}%)",
                report.matched,
                report.total,
                100.0 * report.coverage()
            );
            data.word_table = Some(table);
        }
        Ok(data)
    }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?
        .install(f)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut kv = load_kv(&a.config)?;
    set(&mut kv, "seed", &a.seed);
    set(&mut kv, "n_dialogues", &a.n_dialogues);
    set(&mut kv, "turns_per_dialogue", &a.turns_per_dialogue);
    set(&mut kv, "vocab_size", &a.vocab_size);
    set(&mut kv, "label_count", &a.label_count);
    set(&mut kv, "decay_profile", &a.decay_profile);
    set(&mut kv, "role_bias", &a.role_bias);
    set(&mut kv, "noise_rate", &a.noise_rate);
    set(&mut kv, "labels_per_cue_group", &a.labels_per_cue_group);
    set(&mut kv, "min_tokens", &a.min_tokens);
    set(&mut kv, "max_tokens", &a.max_tokens);
    let spec = GeneratorSpec::from_key_values(&kv)?;
    let dialogues = generate(&spec)?;
    write_corpus(&a.out, &dialogues)?;
    let turns: usize = dialogues.iter().map(|d| d.turns.len()).sum();
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "wrote {} dialogues, {turns} turns to {}", dialogues.len(), a.out.display());
    for (label, n) in label_histogram(&dialogues) {
        let _ = writeln!(out, "  {label:<16} {n}");
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.flags.resolve(a.seed)?;
    let data = a.data.dataset(&cfg)?;
    let out = single_threaded(|| train(&cfg, &data))?;
    create_dir(&a.out)?;
    checkpoint::save(a.out.join("model.ckpt"), &out.model, &out.store, &data.vocab, &data.labels, cfg.seed)?;
    write_file(&a.out.join("run.json"), serde_json::to_string_pretty(&out.result)?)?;
    let r = &out.result;
    println!("model {} seed {} ({})", r.model, r.seed, r.early_stopping);
    println!("best epoch {} of {}, valid F1 {:.4}", r.best_epoch, r.epochs.len(), r.best_valid_f1);
    if let Some(m) = r.test {
        println!("test P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
    }
    Ok(())
}

fn load_examples(ckpt: &checkpoint::Checkpoint, corpus: &Path) -> Result<Vec<Example>> {
    let dialogues = load_corpus(corpus)?;
    encode_dialogues(&dialogues, &ckpt.vocab, &ckpt.labels, ckpt.model.cfg.context_length)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    if let Some(path) = &a.config {
        let mut expected = TrainConfig::default();
        expected.apply(&KeyValues::load(path)?)?;
        ckpt.check_config(&expected.model)?;
    }
    let examples = load_examples(&ckpt, &a.corpus)?;
    let ev = single_threaded(|| evaluate(&ckpt.model, &ckpt.store, &examples))?;
    let m = ev.metrics;
    println!("windows {}", examples.len());
    println!("P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
    if let Some(out) = &a.out {
        write_file(out, serde_json::to_string_pretty(&ev)?)?;
    }
    Ok(())
}

fn preset_rows(name: &str) -> Result<Vec<(String, KeyValues)>> {
    let attention = |level| {
        AttentionConfig::grid(level)
            .into_iter()
            .map(|c| {
                let mut kv = KeyValues::new();
                kv.set("variant", "attention");
                kv.set("attention", c.kind.as_str());
                kv.set("level", c.level.as_str());
                kv.set("speaker_indicator", c.speaker_indicator.as_str());
                (c.label(), kv)
            })
            .collect::<Vec<_>>()
    };
    let variant = |name: &str, v: &str| {
        let mut kv = KeyValues::new();
        kv.set("variant", v);
        (name.to_string(), kv)
    };
    match name {
        "attention-role" => Ok(attention(Level::Role)),
        "attention-sentence" => Ok(attention(Level::Sentence)),
        "attention" => Ok([attention(Level::Sentence), attention(Level::Role)].concat()),
        "baselines" => {
            let mut rows = vec![
                variant(&Variant::NoContext.label(), "no_context"),
                variant(&Variant::LstmContext { attention: LstmAttention::Off }.label(), "lstm_context"),
                variant(
                    &Variant::LstmContext { attention: LstmAttention::Content }.label(),
                    "lstm_context_content",
                ),
            ];
            let best = AttentionConfig::default().with_indicator(ctxslu::attention::SpeakerIndicator::Both);
            let mut kv = KeyValues::new();
            kv.set("variant", "attention");
            kv.set("speaker_indicator", best.speaker_indicator.as_str());
            rows.push((best.label(), kv));
            Ok(rows)
        }
        other => Err(Error::Usage(format!(
            "unknown preset {other:?}; expected attention-role, attention-sentence, attention or baselines"
        ))),
    }
}

/// Parses `name: key=value key=value` lines; `#` starts a comment line.
fn parse_grid(text: &str, origin: &str) -> Result<Vec<(String, KeyValues)>> {
    let mut rows: Vec<(String, KeyValues)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |message: String| Error::Parse {
            path: origin.to_string(),
            line: k + 1,
            message,
        };
        let (name, rest) = line
            .split_once(':')
            .ok_or_else(|| fail(format!("expected `name: key=value ...`, got {line:?}")))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(fail("empty row name".into()));
        }
        if rows.iter().any(|(n, _)| n == name) {
            return Err(fail(format!("duplicate row {name:?}")));
        }
        let mut kv = KeyValues::new();
        for pair in rest.split_whitespace() {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| fail(format!("row {name:?}: expected key=value, got {pair:?}")))?;
            kv.set(key, value);
        }
        rows.push((name.to_string(), kv));
    }
    if rows.is_empty() {
        return Err(Error::Usage(format!("grid {origin} has no rows")));
    }
    Ok(rows)
}

fn ablation_threads() -> Result<usize> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("CTXSLU_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n.min(available)),
            _ => Err(Error::Usage(format!("CTXSLU_THREADS={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(available),
    }
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let grid = match (&a.grid, &a.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
            parse_grid(&text, &path.display().to_string())?
        }
        (None, Some(p)) => preset_rows(p)?,
        (None, None) => return Err(Error::Usage("give --grid or --preset".into())),
    };
    let mut base = load_kv(&a.flags.config)?;
    base.merge(&a.flags.overrides());
    let rows = grid
        .into_iter()
        .map(|(name, row)| {
            let mut kv = base.clone();
            kv.merge(&row);
            let mut config = TrainConfig::default();
            config
                .apply(&kv)
                .map_err(|e| Error::Config(format!("row {name:?}: {e}")))?;
            Ok(ExperimentRow { name, config })
        })
        .collect::<Result<Vec<_>>>()?;
    let baselines = if a.baseline.is_empty() {
        vec![0]
    } else {
        a.baseline
            .iter()
            .map(|b| {
                rows.iter()
                    .position(|r| &r.name == b)
                    .ok_or_else(|| Error::Usage(format!("baseline {b:?} is not a grid row")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    if let Some(r) = rows.iter().find(|r| r.config.model.context_length != rows[0].config.model.context_length) {
        return Err(Error::Config(format!("row {:?}: all rows must share context_length", r.name)));
    }
    let data = a.data.dataset(&rows[0].config)?;
    let threads = ablation_threads()?;
    let table = run_experiment(&rows, &data, a.runs, a.seed.unwrap_or(0), &baselines, threads)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("table.csv"), table.to_csv())?;
    write_file(&a.out.join("table.txt"), table.to_text())?;
    let runs: Vec<_> = table.rows.iter().flat_map(|r| &r.runs).collect();
    write_file(&a.out.join("runs.json"), serde_json::to_string_pretty(&runs)?)?;
    print!("{}", table.to_text());
    Ok(())
}

enum Selector {
    All,
    Index(usize),
    Turn(String, usize),
}

fn parse_selector(s: &str) -> Result<Selector> {
    let s = s.trim();
    if s == "all" {
        return Ok(Selector::All);
    }
    if let Some((d, t)) = s.rsplit_once(':') {
        let turn = t
            .parse()
            .map_err(|_| Error::Usage(format!("--select {s:?}: bad turn index")))?;
        return Ok(Selector::Turn(d.to_string(), turn));
    }
    s.parse()
        .map(Selector::Index)
        .map_err(|_| Error::Usage(format!("--select {s:?}: expected all, N or dialogue:turn")))
}

fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let has_weights = match ckpt.model.cfg.variant {
        Variant::Attention(c) => c.kind != ctxslu::attention::AttentionKind::None,
        Variant::LstmContext { attention } => attention == LstmAttention::Content,
        Variant::NoContext => false,
    };
    if !has_weights {
        return Err(Error::NoWeights("checkpoint model has no attention weights"));
    }
    let examples = load_examples(&ckpt, &a.corpus)?;
    let selected: Vec<&Example> = match parse_selector(&a.select)? {
        Selector::All => examples.iter().collect(),
        Selector::Index(i) => vec![examples.get(i).ok_or_else(|| {
            Error::Usage(format!("window {i} out of range; corpus has {} windows", examples.len()))
        })?],
        Selector::Turn(d, t) => vec![examples
            .iter()
            .find(|e| e.dialogue == d && e.turn == t)
            .ok_or_else(|| Error::Usage(format!("no window for dialogue {d:?} turn {t}")))?],
    };
    let per = single_threaded(|| {
        selected
            .iter()
            .map(|ex| {
                let (_, summary) = ckpt.model.predict(&ckpt.store, ex)?;
                match summary {
                    Some(s) => export_weights(&s),
                    None => Ok(Vec::new()),
                }
            })
            .collect::<Result<Vec<Vec<WeightRecord>>>>()
    })?;

    create_dir(&a.out)?;
    let mut weights = String::from("dialogue,turn,distance,role,group,weight\n");
    let mut profile = DistanceProfile::new();
    for (ex, rows) in selected.iter().zip(&per) {
        for r in rows {
            weights.push_str(&format!("{},{},{},{},{},{}\n", ex.dialogue, ex.turn, r.distance, r.role, r.group, r.weight));
        }
        profile.add(rows);
    }
    write_file(&a.out.join("weights.csv"), weights)?;

    let mut csv = String::from("family,distance,mean_weight,count\n");
    let mut out = std::io::stdout().lock();
    for family in profile.families() {
        let means = profile.means(family);
        for (d, m, n) in &means {
            csv.push_str(&format!("{family},{d},{m},{n}\n"));
        }
        let rho = if means.len() >= 2 {
            let d: Vec<f64> = means.iter().map(|x| x.0 as f64).collect();
            let m: Vec<f64> = means.iter().map(|x| x.1).collect();
            spearman(&d, &m).ok()
        } else {
            None
        };
        let shown = rho.map_or("n/a".to_string(), |r| format!("{r:.4}"));
        let _ = writeln!(out, "{family}: mean weight by distance, Spearman rho {shown}");
        for (d, m, n) in &means {
            let _ = writeln!(out, "  d={d:<2} {m:.4} (n={n})");
        }
    }
    write_file(&a.out.join("profile.csv"), csv)?;
    let _ = writeln!(out, "{} windows inspected", selected.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::InspectAttention(a) => cmd_inspect(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
