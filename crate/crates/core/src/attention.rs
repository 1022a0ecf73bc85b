//! Decay-function-free history attention.
//!
//! Each history utterance is represented by its intent vector `u` (built
//! from its gold labels) and a learned distance vector `d` looked up by how
//! many turns back it occurred. Importances are additive scores sharing one
//! pair of parameters `w_att`, `b_att`:
//!
//! * time:     `w_attᵀ tanh(h + d [+ s] + b_att)`
//! * content:  `w_attᵀ tanh(h + u [+ s] + b_att)`
//! * joint:    `w_attᵀ tanh(h + u + d [+ s] + b_att)`
//!
//! where `h` summarizes the current utterance and `s` is the optional
//! current-speaker vector. Scores are normalized either across all
//! histories (sentence level) or separately per speaker role (role level,
//! guide pool first), and the weighted history vectors form the summary.
//! Content-plus-time runs the time and content attentions independently and
//! concatenates both summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::Role;
use crate::error::{Error, Result};
use crate::tensor::{param_rng, uniform_tensor, ParamId, ParamStore};

macro_rules! named_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim().replace('-', "_").as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// Unweighted sum of history vectors.
    None,
    Content,
    Time,
    ContentPlusTime,
    /// One joint score from intent and distance together.
    ContentXTime,
}
named_enum!(AttentionKind {
    None => "none",
    Content => "content",
    Time => "time",
    ContentPlusTime => "content_plus_time",
    ContentXTime => "content_x_time",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Sentence,
    Role,
}
named_enum!(Level { Sentence => "sentence", Role => "role" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerIndicator {
    Off,
    TimeOnly,
    ContentOnly,
    Both,
}
named_enum!(SpeakerIndicator {
    Off => "off",
    TimeOnly => "time_only",
    ContentOnly => "content_only",
    Both => "both",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryRepr {
    IntentOnly,
    IntentAndDistance,
}
named_enum!(HistoryRepr {
    IntentOnly => "intent_only",
    IntentAndDistance => "intent_and_distance",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub kind: AttentionKind,
    pub level: Level,
    pub speaker_indicator: SpeakerIndicator,
    pub history_repr: HistoryRepr,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig::new(AttentionKind::Time, Level::Role)
    }
}

impl AttentionConfig {
    pub fn new(kind: AttentionKind, level: Level) -> Self {
        AttentionConfig {
            kind,
            level,
            speaker_indicator: SpeakerIndicator::Off,
            history_repr: HistoryRepr::IntentAndDistance,
        }
    }

    pub fn with_indicator(self, speaker_indicator: SpeakerIndicator) -> Self {
        AttentionConfig {
            speaker_indicator,
            ..self
        }
    }

    pub fn with_repr(self, history_repr: HistoryRepr) -> Self {
        AttentionConfig { history_repr, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        use AttentionKind as K;
        use SpeakerIndicator as S;
        let ok = match (self.kind, self.speaker_indicator) {
            (K::None, S::Off) => true,
            (K::None, _) => false,
            (K::ContentPlusTime, _) => true,
            (_, S::Off | S::Both) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "speaker_indicator={} is not valid with attention={}",
                self.speaker_indicator, self.kind
            )))
        }
    }

    /// Length of one history vector (`u ⊕ d` or `u`).
    pub fn entry_dim(&self, dim: usize) -> usize {
        match self.history_repr {
            HistoryRepr::IntentAndDistance => 2 * dim,
            HistoryRepr::IntentOnly => dim,
        }
    }

    /// Length of the history summary fed to the prediction stage.
    pub fn history_dim(&self, dim: usize) -> usize {
        let pooled = match self.level {
            Level::Sentence => self.entry_dim(dim),
            Level::Role => 2 * self.entry_dim(dim),
        };
        match self.kind {
            AttentionKind::ContentPlusTime => 2 * pooled,
            _ => pooled,
        }
    }

    fn time_indicator(&self) -> bool {
        matches!(self.speaker_indicator, SpeakerIndicator::Both | SpeakerIndicator::TimeOnly)
    }

    fn content_indicator(&self) -> bool {
        matches!(self.speaker_indicator, SpeakerIndicator::Both | SpeakerIndicator::ContentOnly)
    }

    pub fn uses_indicator(&self) -> bool {
        self.speaker_indicator != SpeakerIndicator::Off
    }

    /// Short row name, e.g. `time+ind/role`.
    pub fn label(&self) -> String {
        let kind = match (self.kind, self.speaker_indicator) {
            (AttentionKind::ContentPlusTime, SpeakerIndicator::TimeOnly) => "content+time[ind:time]".to_string(),
            (AttentionKind::ContentPlusTime, SpeakerIndicator::ContentOnly) => "content+time[ind:content]".to_string(),
            (k, SpeakerIndicator::Off) => k.to_string(),
            (k, _) => format!("{k}+ind"),
        };
        let repr = match self.history_repr {
            HistoryRepr::IntentAndDistance => "",
            HistoryRepr::IntentOnly => "/intent_only",
        };
        format!("{kind}/{}{repr}", self.level)
    }

    /// The eleven attention variants compared at one level.
    pub fn grid(level: Level) -> Vec<AttentionConfig> {
        use AttentionKind as K;
        use SpeakerIndicator as S;
        let mk = |k, s| AttentionConfig::new(k, level).with_indicator(s);
        vec![
            mk(K::None, S::Off),
            mk(K::Content, S::Off),
            mk(K::Content, S::Both),
            mk(K::Time, S::Off),
            mk(K::Time, S::Both),
            mk(K::ContentPlusTime, S::Off),
            mk(K::ContentPlusTime, S::ContentOnly),
            mk(K::ContentPlusTime, S::TimeOnly),
            mk(K::ContentPlusTime, S::Both),
            mk(K::ContentXTime, S::Off),
            mk(K::ContentXTime, S::Both),
        ]
    }
}

/// Trainable tensors of the history attention. `w_att`/`b_att` are shared by
/// every score type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub w_att: ParamId,
    pub b_att: ParamId,
    /// `[dim, context_length]`; column `distance - 1`.
    pub distance: ParamId,
    /// `[dim, 2]`; column [`Role::index`].
    pub speaker: ParamId,
    pub dim: usize,
    pub context_length: usize,
}

pub const ATTENTION_INIT_BOUND: f64 = 0.08;

impl AttentionParams {
    pub fn register(store: &mut ParamStore, dim: usize, context_length: usize, seed: u64) -> Result<Self> {
        if dim == 0 || context_length == 0 {
            return Err(Error::Config("attention needs dim >= 1 and context_length >= 1".into()));
        }
        let mut reg = |name: &str, shape: Vec<usize>| -> Result<ParamId> {
            let t = uniform_tensor(shape, ATTENTION_INIT_BOUND, &mut param_rng(seed, name))?;
            store.register(name, t)
        };
        Ok(AttentionParams {
            w_att: reg("attention.w", vec![dim])?,
            b_att: reg("attention.b", vec![dim])?,
            distance: reg("distance_embeddings", vec![dim, context_length])?,
            speaker: reg("speaker_embeddings", vec![dim, 2])?,
            dim,
            context_length,
        })
    }

    pub fn on_tape(&self, tape: &mut Tape, store: &ParamStore) -> Result<AttentionVars> {
        Ok(AttentionVars {
            w: tape.param(store, self.w_att)?,
            b: tape.param(store, self.b_att)?,
        })
    }

    pub fn distance_vector(&self, tape: &mut Tape, store: &ParamStore, distance: usize) -> Result<Var> {
        if distance == 0 || distance > self.context_length {
            return Err(Error::Index {
                what: "distance",
                index: distance,
                size: self.context_length,
            });
        }
        tape.lookup_param(store, self.distance, distance - 1)
    }

    pub fn speaker_vector(&self, tape: &mut Tape, store: &ParamStore, role: Role) -> Result<Var> {
        tape.lookup_param(store, self.speaker, role.index())
    }
}

/// `w_att` and `b_att` on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w: Var,
    pub b: Var,
}

fn additive_score(tape: &mut Tape, att: &AttentionVars, parts: &[Var]) -> Result<Var> {
    let s = tape.add_all(parts)?;
    let s = tape.add(s, att.b)?;
    let a = tape.tanh(s)?;
    tape.dot(att.w, a)
}

/// Time importance from the current summary and a distance vector.
pub fn score_time(tape: &mut Tape, att: &AttentionVars, h_t: Var, d_t: Var, s_cur: Option<Var>) -> Result<Var> {
    let mut parts = vec![h_t, d_t];
    parts.extend(s_cur);
    additive_score(tape, att, &parts)
}

/// Content importance from the current summary and an intent vector.
pub fn score_content(tape: &mut Tape, att: &AttentionVars, h_t: Var, u_t: Var, s_cur: Option<Var>) -> Result<Var> {
    let mut parts = vec![h_t, u_t];
    parts.extend(s_cur);
    additive_score(tape, att, &parts)
}

/// Joint importance from intent and distance at once.
pub fn score_inseparate(
    tape: &mut Tape,
    att: &AttentionVars,
    h_t: Var,
    u_t: Var,
    d_t: Var,
    s_cur: Option<Var>,
) -> Result<Var> {
    let mut parts = vec![h_t, u_t, d_t];
    parts.extend(s_cur);
    additive_score(tape, att, &parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Time,
    Content,
    Joint,
}
named_enum!(Family { Time => "time", Content => "content", Joint => "joint" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    All,
    Guide,
    Tourist,
}
named_enum!(Pool { All => "all", Guide => "guide", Tourist => "tourist" });

impl From<Role> for Pool {
    fn from(r: Role) -> Self {
        match r {
            Role::Guide => Pool::Guide,
            Role::Tourist => Pool::Tourist,
        }
    }
}

/// A softmax group: which score family and which pool it normalizes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Group {
    pub family: Family,
    pub pool: Pool,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.family, self.pool)
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, pool) = s
            .split_once(':')
            .ok_or_else(|| Error::Data(format!("bad group {s:?}")))?;
        Ok(Group {
            family: family.parse()?,
            pool: pool.parse()?,
        })
    }
}

/// One normalized attention weight of one history entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRecord {
    pub distance: usize,
    pub role: Role,
    pub group: Group,
    pub weight: f64,
}

/// One previous utterance as seen by the attention.
#[derive(Debug, Clone, Copy)]
pub struct HistoryEntry {
    pub intent: Var,
    pub distance: usize,
    pub role: Role,
}

#[derive(Debug, Clone)]
pub struct Pooled {
    pub summary: Var,
    /// Normalized weight of every entry, in entry order.
    pub weights: Vec<f64>,
}

fn check_aligned(vectors: &[Var], scores: &[Var]) -> Result<()> {
    if vectors.len() != scores.len() {
        return Err(Error::dim("pool", format!("{} vectors, {} scores", vectors.len(), scores.len())));
    }
    Ok(())
}

/// One softmax over every entry. No entries gives a zero vector.
pub fn pool_sentence(tape: &mut Tape, vectors: &[Var], scores: &[Var], entry_dim: usize) -> Result<Pooled> {
    check_aligned(vectors, scores)?;
    if vectors.is_empty() {
        return Ok(Pooled {
            summary: tape.zeros(entry_dim)?,
            weights: Vec::new(),
        });
    }
    let s = tape.concat(scores)?;
    let w = tape.masked_softmax(s, &vec![true; scores.len()])?;
    let summary = tape.weighted_sum(w, vectors)?;
    Ok(Pooled {
        summary,
        weights: tape.value(w).to_vec(),
    })
}

/// A softmax per speaker role; returns `s_guide ⊕ s_tourist`. A role with
/// no entries contributes zeros.
pub fn pool_role(tape: &mut Tape, vectors: &[Var], roles: &[Role], scores: &[Var], entry_dim: usize) -> Result<Pooled> {
    check_aligned(vectors, scores)?;
    if roles.len() != vectors.len() {
        return Err(Error::dim("pool_role", "roles not aligned with entries"));
    }
    let mut weights = vec![0.0; vectors.len()];
    if vectors.is_empty() {
        return Ok(Pooled {
            summary: tape.zeros(2 * entry_dim)?,
            weights,
        });
    }
    let s = tape.concat(scores)?;
    let mut halves = Vec::with_capacity(2);
    for role in Role::ALL {
        let mask: Vec<bool> = roles.iter().map(|&r| r == role).collect();
        if !mask.iter().any(|&m| m) {
            halves.push(tape.zeros(entry_dim)?);
            continue;
        }
        let w = tape.masked_softmax(s, &mask)?;
        for (k, &m) in mask.iter().enumerate() {
            if m {
                weights[k] = tape.value(w)[k];
            }
        }
        halves.push(tape.weighted_sum(w, vectors)?);
    }
    Ok(Pooled {
        summary: tape.concat(&halves)?,
        weights,
    })
}

fn pool_unweighted(tape: &mut Tape, vectors: &[Var], roles: &[Role], level: Level, entry_dim: usize) -> Result<Var> {
    let sum_or_zero = |tape: &mut Tape, items: &[Var]| -> Result<Var> {
        if items.is_empty() {
            tape.zeros(entry_dim)
        } else {
            tape.add_all(items)
        }
    };
    match level {
        Level::Sentence => sum_or_zero(tape, vectors),
        Level::Role => {
            let mut halves = Vec::with_capacity(2);
            for role in Role::ALL {
                let items: Vec<Var> = vectors
                    .iter()
                    .zip(roles)
                    .filter(|(_, &r)| r == role)
                    .map(|(&v, _)| v)
                    .collect();
                halves.push(sum_or_zero(tape, &items)?);
            }
            tape.concat(&halves)
        }
    }
}

#[derive(Debug, Clone)]
pub struct HistorySummary {
    pub s_hist: Var,
    pub kind: AttentionKind,
    /// Every normalized weight, grouped by family then entry order.
    pub rows: Vec<WeightRecord>,
}

/// Computes the history summary for one window.
#[allow(clippy::too_many_arguments)]
pub fn summarize_history(
    tape: &mut Tape,
    store: &ParamStore,
    params: &AttentionParams,
    cfg: &AttentionConfig,
    h_t: Var,
    entries: &[HistoryEntry],
    current: Role,
) -> Result<HistorySummary> {
    cfg.validate()?;
    let dim = params.dim;
    if tape.value(h_t).len() != dim {
        return Err(Error::dim("summarize_history", format!("h_T has {} values, dim is {dim}", tape.value(h_t).len())));
    }
    let entry_dim = cfg.entry_dim(dim);
    if entries.is_empty() {
        return Ok(HistorySummary {
            s_hist: tape.zeros(cfg.history_dim(dim))?,
            kind: cfg.kind,
            rows: Vec::new(),
        });
    }

    let roles: Vec<Role> = entries.iter().map(|e| e.role).collect();
    let mut distances = Vec::with_capacity(entries.len());
    for e in entries {
        distances.push(params.distance_vector(tape, store, e.distance)?);
    }
    let vectors = entries
        .iter()
        .zip(&distances)
        .map(|(e, &d)| match cfg.history_repr {
            HistoryRepr::IntentAndDistance => tape.concat(&[e.intent, d]),
            HistoryRepr::IntentOnly => Ok(e.intent),
        })
        .collect::<Result<Vec<_>>>()?;

    if cfg.kind == AttentionKind::None {
        return Ok(HistorySummary {
            s_hist: pool_unweighted(tape, &vectors, &roles, cfg.level, entry_dim)?,
            kind: cfg.kind,
            rows: Vec::new(),
        });
    }

    let att = params.on_tape(tape, store)?;
    let s_cur = if cfg.uses_indicator() {
        Some(params.speaker_vector(tape, store, current)?)
    } else {
        None
    };
    let time_s = s_cur.filter(|_| cfg.time_indicator());
    let content_s = s_cur.filter(|_| cfg.content_indicator());

    let mut families: Vec<(Family, Vec<Var>)> = Vec::with_capacity(2);
    match cfg.kind {
        AttentionKind::None => unreachable!("handled above"),
        AttentionKind::Time | AttentionKind::ContentPlusTime => {
            let scores = entries
                .iter()
                .zip(&distances)
                .map(|(_, &d)| score_time(tape, &att, h_t, d, time_s))
                .collect::<Result<Vec<_>>>()?;
            families.push((Family::Time, scores));
        }
        AttentionKind::Content => {}
        AttentionKind::ContentXTime => {
            let scores = entries
                .iter()
                .zip(&distances)
                .map(|(e, &d)| score_inseparate(tape, &att, h_t, e.intent, d, s_cur))
                .collect::<Result<Vec<_>>>()?;
            families.push((Family::Joint, scores));
        }
    }
    if matches!(cfg.kind, AttentionKind::Content | AttentionKind::ContentPlusTime) {
        let scores = entries
            .iter()
            .map(|e| score_content(tape, &att, h_t, e.intent, content_s))
            .collect::<Result<Vec<_>>>()?;
        families.push((Family::Content, scores));
    }

    let mut parts = Vec::with_capacity(families.len());
    let mut rows = Vec::with_capacity(entries.len() * families.len());
    for (family, scores) in families {
        let pooled = match cfg.level {
            Level::Sentence => pool_sentence(tape, &vectors, &scores, entry_dim)?,
            Level::Role => pool_role(tape, &vectors, &roles, &scores, entry_dim)?,
        };
        for (e, &weight) in entries.iter().zip(&pooled.weights) {
            let pool = match cfg.level {
                Level::Sentence => Pool::All,
                Level::Role => e.role.into(),
            };
            rows.push(WeightRecord {
                distance: e.distance,
                role: e.role,
                group: Group { family, pool },
                weight,
            });
        }
        parts.push(pooled.summary);
    }
    let s_hist = if parts.len() == 1 { parts[0] } else { tape.concat(&parts)? };
    Ok(HistorySummary {
        s_hist,
        kind: cfg.kind,
        rows,
    })
}

/// Per-entry weights of an attention summary.
pub fn export_weights(summary: &HistorySummary) -> Result<Vec<WeightRecord>> {
    if summary.kind == AttentionKind::None {
        return Err(Error::NoWeights("attention kind none has no weights"));
    }
    Ok(summary.rows.clone())
}

pub const WEIGHTS_CSV_HEADER: &str = "distance,role,group,weight";

/// Writes `distance,role,group,weight` rows. Weights use the shortest
/// representation that parses back to the same `f64`.
pub fn write_weights_csv<W: Write>(mut out: W, rows: &[WeightRecord]) -> std::io::Result<()> {
    writeln!(out, "{WEIGHTS_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.distance, r.role, r.group, r.weight)?;
    }
    Ok(())
}

pub fn read_weights_csv(text: &str) -> Result<Vec<WeightRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == WEIGHTS_CSV_HEADER => {}
        _ => {
            return Err(Error::Format {
                line: 1,
                message: format!("expected header {WEIGHTS_CSV_HEADER:?}"),
            })
        }
    }
    let mut out = Vec::new();
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |m: String| Error::Format { line: k + 1, message: m };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(fail(format!("expected 4 columns, got {}", cols.len())));
        }
        out.push(WeightRecord {
            distance: cols[0].parse().map_err(|_| fail(format!("bad distance {:?}", cols[0])))?,
            role: cols[1].parse().map_err(|e: Error| fail(e.to_string()))?,
            group: cols[2].parse().map_err(|e: Error| fail(e.to_string()))?,
            weight: cols[3].parse().map_err(|_| fail(format!("bad weight {:?}", cols[3])))?,
        });
    }
    Ok(out)
}

/// Running mean of attention weight per (family, distance).
#[derive(Debug, Clone, Default)]
pub struct DistanceProfile {
    sums: BTreeMap<(Family, usize), (f64, usize)>,
}

impl DistanceProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, rows: &[WeightRecord]) {
        for r in rows {
            let e = self.sums.entry((r.group.family, r.distance)).or_insert((0.0, 0));
            e.0 += r.weight;
            e.1 += 1;
        }
    }

    /// `(distance, mean weight, count)` for one family, by distance.
    pub fn means(&self, family: Family) -> Vec<(usize, f64, usize)> {
        self.sums
            .iter()
            .filter(|((f, _), _)| *f == family)
            .map(|(&(_, d), &(s, n))| (d, s / n as f64, n))
            .collect()
    }

    pub fn families(&self) -> Vec<Family> {
        let mut f: Vec<Family> = self.sums.keys().map(|(f, _)| *f).collect();
        f.dedup();
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    const E5: f64 = 148.413_159_102_576_6;

    fn tape_vec(t: &mut Tape, x: &[f64]) -> Var {
        t.vector(x.to_vec()).unwrap()
    }

    fn unit(n: usize, k: usize, v: f64) -> Vec<f64> {
        let mut x = vec![0.0; n];
        x[k] = v;
        x
    }

    #[test]
    fn score_examples() {
        let n = 4;
        let mut t = Tape::new();
        let att = AttentionVars {
            w: tape_vec(&mut t, &[0.0; 4]),
            b: tape_vec(&mut t, &[0.0; 4]),
        };
        let z = tape_vec(&mut t, &[0.0; 4]);
        let a = score_time(&mut t, &att, z, z, None).unwrap();
        assert_eq!(t.scalar(a), 0.0);
        let b = score_content(&mut t, &att, z, z, None).unwrap();
        assert_eq!(t.scalar(b), 0.0);
        let g = score_inseparate(&mut t, &att, z, z, z, None).unwrap();
        assert_eq!(t.scalar(g), 0.0);

        let att = AttentionVars {
            w: tape_vec(&mut t, &unit(n, 0, 1.0)),
            b: tape_vec(&mut t, &[0.0; 4]),
        };
        let h = tape_vec(&mut t, &unit(n, 0, 0.3));
        let d = tape_vec(&mut t, &unit(n, 0, 0.4));
        let a = score_time(&mut t, &att, h, d, None).unwrap();
        assert_eq!(t.scalar(a), 0.7f64.tanh());

        let s = tape_vec(&mut t, &unit(n, 0, 1.0));
        let a = score_time(&mut t, &att, z, z, Some(s)).unwrap();
        assert!((t.scalar(a) - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_in_scores() {
        let mut t = Tape::new();
        let att = AttentionVars {
            w: tape_vec(&mut t, &[0.0; 3]),
            b: tape_vec(&mut t, &[0.0; 3]),
        };
        let h = tape_vec(&mut t, &[0.0; 3]);
        let d = tape_vec(&mut t, &[0.0; 2]);
        assert!(matches!(score_time(&mut t, &att, h, d, None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn pool_examples() {
        let mut t = Tape::new();
        let v1 = tape_vec(&mut t, &[1.0, 2.0]);
        let v2 = tape_vec(&mut t, &[3.0, 4.0]);
        let v3 = tape_vec(&mut t, &[5.0, 9.0]);
        let s0 = tape_vec(&mut t, &[0.0]);
        let ln3 = tape_vec(&mut t, &[3f64.ln()]);

        let p = pool_sentence(&mut t, &[v1], &[ln3], 2).unwrap();
        assert_eq!(t.value(p.summary), &[1.0, 2.0]);

        let p = pool_sentence(&mut t, &[v1, v2], &[ln3, s0], 2).unwrap();
        assert!((p.weights[0] - 0.75).abs() < 1e-15 && (p.weights[1] - 0.25).abs() < 1e-15);

        let p = pool_sentence(&mut t, &[v1, v2, v3], &[s0, s0, s0], 2).unwrap();
        let mean = [3.0, 5.0];
        for (a, b) in t.value(p.summary).iter().zip(mean) {
            assert!((a - b).abs() < 1e-12);
        }

        let p = pool_role(&mut t, &[v1, v2], &[Role::Guide, Role::Tourist], &[ln3, s0], 2).unwrap();
        assert_eq!(t.value(p.summary), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p.weights, vec![1.0, 1.0]);

        let p = pool_role(&mut t, &[v1, v3], &[Role::Tourist, Role::Tourist], &[ln3, s0], 2).unwrap();
        assert_eq!(&t.value(p.summary)[..2], &[0.0, 0.0]);

        let p = pool_role(&mut t, &[v1, v2, v3], &[Role::Guide; 3], &[s0, s0, s0], 2).unwrap();
        let out = t.value(p.summary);
        assert!((out[0] - 3.0).abs() < 1e-12 && (out[1] - 5.0).abs() < 1e-12);
        assert_eq!(&out[2..], &[0.0, 0.0]);

        let p = pool_role(&mut t, &[], &[], &[], 2).unwrap();
        assert_eq!(t.value(p.summary), &[0.0; 4]);
        let p = pool_sentence(&mut t, &[], &[], 2).unwrap();
        assert_eq!(t.value(p.summary), &[0.0; 2]);
    }

    #[test]
    fn masked_example_through_pool() {
        let mut t = Tape::new();
        let v: Vec<Var> = (0..3).map(|k| tape_vec(&mut t, &[k as f64])).collect();
        let s: Vec<Var> = [5.0, 0.0, 0.0].iter().map(|&x| tape_vec(&mut t, &[x])).collect();
        let p = pool_role(&mut t, &v, &[Role::Guide, Role::Tourist, Role::Guide], &s, 1).unwrap();
        assert!((p.weights[0] - E5 / (E5 + 1.0)).abs() < 1e-12);
        assert_eq!(p.weights[1], 1.0);
        assert!((p.weights[2] - 1.0 / (E5 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn config_validation_and_dims() {
        use AttentionKind as K;
        use SpeakerIndicator as S;
        assert!(AttentionConfig::new(K::Time, Level::Role).with_indicator(S::TimeOnly).validate().is_err());
        assert!(AttentionConfig::new(K::None, Level::Role).with_indicator(S::Both).validate().is_err());
        assert!(AttentionConfig::new(K::ContentPlusTime, Level::Role).with_indicator(S::ContentOnly).validate().is_ok());
        let role = AttentionConfig::new(K::Time, Level::Role);
        assert_eq!(role.history_dim(8), 32);
        assert_eq!(AttentionConfig::new(K::Time, Level::Sentence).history_dim(8), 16);
        assert_eq!(AttentionConfig::new(K::ContentPlusTime, Level::Role).history_dim(8), 64);
        assert_eq!(role.with_repr(HistoryRepr::IntentOnly).history_dim(8), 16);
        for level in Level::ALL {
            let g = AttentionConfig::grid(*level);
            assert_eq!(g.len(), 11);
            assert!(g.iter().all(|c| c.validate().is_ok()));
        }
        assert_eq!("content-x-time".parse::<K>().unwrap(), K::ContentXTime);
    }

    #[test]
    fn csv_round_trip_and_none_kind() {
        let rows = vec![
            WeightRecord {
                distance: 1,
                role: Role::Guide,
                group: Group { family: Family::Time, pool: Pool::All },
                weight: 0.123_456_789_012_345_67,
            },
            WeightRecord {
                distance: 2,
                role: Role::Tourist,
                group: Group { family: Family::Time, pool: Pool::All },
                weight: 1.0 - 0.123_456_789_012_345_67,
            },
        ];
        let mut buf = Vec::new();
        write_weights_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("distance,role,group,weight\n1,guide,time:all,"));
        let back = read_weights_csv(&text).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            assert!((a.weight - b.weight).abs() < 1e-9);
            assert_eq!((a.distance, a.role, a.group), (b.distance, b.role, b.group));
        }

        let mut t = Tape::new();
        let s = HistorySummary {
            s_hist: t.zeros(1).unwrap(),
            kind: AttentionKind::None,
            rows: Vec::new(),
        };
        assert!(matches!(export_weights(&s), Err(Error::NoWeights(_))));
    }

    #[test]
    fn summary_respects_distance_bounds() {
        let mut store = ParamStore::new();
        let p = AttentionParams::register(&mut store, 2, 3, 0).unwrap();
        let mut t = Tape::new();
        let h = t.zeros(2).unwrap();
        let u = t.leaf(&Tensor::vector(vec![0.1, 0.2]).unwrap()).unwrap();
        let cfg = AttentionConfig::new(AttentionKind::Time, Level::Sentence);
        let bad = [HistoryEntry { intent: u, distance: 4, role: Role::Guide }];
        assert!(matches!(
            summarize_history(&mut t, &store, &p, &cfg, h, &bad, Role::Guide),
            Err(Error::Index { .. })
        ));
        let empty = summarize_history(&mut t, &store, &p, &cfg, h, &[], Role::Guide).unwrap();
        assert_eq!(t.value(empty.s_hist), &[0.0; 4]);
    }
}
