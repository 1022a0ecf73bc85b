//! Dialogue corpus: line-delimited JSON ingestion, context windows,
//! vocabularies and dialogue-level splits.

mod embeddings;
mod generator;

pub use embeddings::{load_embeddings, EmbeddingReport, WORD_INIT_BOUND};
pub use generator::{generate, label_histogram, GeneratorSpec};

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Guide,
    Tourist,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Guide, Role::Tourist];

    /// Column of the speaker-embedding table.
    pub fn index(self) -> usize {
        match self {
            Role::Guide => 0,
            Role::Tourist => 1,
        }
    }

    pub fn other(self) -> Role {
        match self {
            Role::Guide => Role::Tourist,
            Role::Tourist => Role::Guide,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Guide => "guide",
            Role::Tourist => "tourist",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guide" => Ok(Role::Guide),
            "tourist" => Ok(Role::Tourist),
            other => Err(Error::Data(format!("unknown speaker {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Role,
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: String,
    tokens: Vec<String>,
    labels: Vec<String>,
}

#[derive(Deserialize)]
struct RawDialogue {
    id: String,
    turns: Vec<RawTurn>,
}

fn parse_dialogue(line: &str) -> std::result::Result<Dialogue, String> {
    let raw: RawDialogue = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if raw.turns.is_empty() {
        return Err(format!("dialogue {} has no turns", raw.id));
    }
    let mut turns = Vec::with_capacity(raw.turns.len());
    for (k, t) in raw.turns.into_iter().enumerate() {
        let speaker = t.speaker.parse::<Role>().map_err(|e| e.to_string())?;
        if t.tokens.is_empty() || t.labels.is_empty() {
            return Err(format!("turn {k} of {} needs tokens and labels", raw.id));
        }
        let mut labels: Vec<String> = Vec::with_capacity(t.labels.len());
        for l in t.labels {
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        turns.push(Turn {
            speaker,
            tokens: t.tokens,
            labels,
        });
    }
    Ok(Dialogue { id: raw.id, turns })
}

/// Reads one dialogue per non-blank line, in file order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d = parse_dialogue(&line).map_err(|message| Error::Parse {
            path: path.display().to_string(),
            line: k + 1,
            message,
        })?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, dialogues: &[Dialogue]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in dialogues {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A prior turn seen from the current one; `distance` 1 is the previous turn.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub turn: &'a Turn,
    pub index: usize,
    pub distance: usize,
}

/// The current turn plus its most recent prior turns, nearest first.
#[derive(Debug, Clone)]
pub struct ContextWindow<'a> {
    pub dialogue_id: &'a str,
    pub index: usize,
    pub current: &'a Turn,
    pub histories: Vec<History<'a>>,
}

/// One window per turn; never crosses the dialogue boundary.
pub fn build_windows(d: &Dialogue, context_length: usize) -> Result<Vec<ContextWindow<'_>>> {
    if context_length == 0 {
        return Err(Error::Config("context_length must be >= 1".into()));
    }
    Ok(d.turns
        .iter()
        .enumerate()
        .map(|(k, turn)| ContextWindow {
            dialogue_id: &d.id,
            index: k,
            current: turn,
            histories: (1..=k.min(context_length))
                .map(|j| History {
                    turn: &d.turns[k - j],
                    index: k - j,
                    distance: j,
                })
                .collect(),
        })
        .collect())
}

pub const UNK: usize = 0;
pub const PAD: usize = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";
pub const RESERVED: usize = 2;

/// Separator token placed before a history utterance by the given speaker.
pub fn separator(role: Role) -> &'static str {
    match role {
        Role::Guide => "<guide>",
        Role::Tourist => "<tourist>",
    }
}

/// Word vocabulary; ids 0 and 1 are UNK and PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Reserved ids, both speaker separators, then every token sorted.
    pub fn build<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Self {
        let mut set = BTreeSet::new();
        for d in dialogues {
            for t in &d.turns {
                set.extend(t.tokens.iter().cloned());
            }
        }
        set.remove(UNK_TOKEN);
        set.remove(PAD_TOKEN);
        set.remove(separator(Role::Guide));
        set.remove(separator(Role::Tourist));
        let mut words = vec![
            UNK_TOKEN.to_string(),
            PAD_TOKEN.to_string(),
            separator(Role::Guide).to_string(),
            separator(Role::Tourist).to_string(),
        ];
        words.extend(set);
        Self::from_words(words).expect("built vocabulary is valid")
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < RESERVED || words[UNK] != UNK_TOKEN || words[PAD] != PAD_TOKEN {
            return Err(Error::Data("vocabulary must start with <unk>, <pad>".into()));
        }
        let index: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != words.len() {
            return Err(Error::Data("duplicate vocabulary entry".into()));
        }
        Ok(Vocab { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Unknown words map to UNK.
    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn hash(&self) -> String {
        hash_strings(&self.words)
    }
}

/// Semantic-label inventory, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn build<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Self {
        let set: BTreeSet<String> = dialogues
            .into_iter()
            .flat_map(|d| d.turns.iter())
            .flat_map(|t| t.labels.iter().cloned())
            .collect();
        Self::from_labels(set.into_iter().collect()).expect("sorted set has no duplicates")
    }

    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let index: HashMap<String, usize> = labels.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != labels.len() {
            return Err(Error::Data("duplicate label".into()));
        }
        Ok(LabelSet { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    /// Known label ids; labels outside the inventory are dropped.
    pub fn encode(&self, labels: &[String]) -> Vec<usize> {
        labels.iter().filter_map(|l| self.get(l)).collect()
    }

    pub fn hash(&self) -> String {
        hash_strings(&self.labels)
    }
}

fn hash_strings(items: &[String]) -> String {
    let mut h = Sha256::new();
    for s in items {
        h.update(s.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Dialogue-level train/valid/test partition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Dialogue>,
    pub valid: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

/// Shuffles dialogues with `seed` and cuts them into three parts by
/// largest-remainder rounding of `fractions`.
pub fn split(dialogues: &[Dialogue], fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let n = dialogues.len();
    let nonzero = fractions.iter().filter(|&&f| f > 0.0).count();
    if n < nonzero {
        return Err(Error::Data(format!("{n} dialogues cannot fill {nonzero} non-empty splits")));
    }
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| (r + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - sizes[a] as f64;
        let fb = raw[b] - sizes[b] as f64;
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut k = 0;
    while sizes.iter().sum::<usize>() < n {
        sizes[order[k % 3]] += 1;
        k += 1;
    }
    for i in 0..3 {
        if fractions[i] > 0.0 && sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| sizes[j]).expect("three parts");
            sizes[donor] -= 1;
            sizes[i] = 1;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| idx[range].iter().map(|&i| dialogues[i].clone()).collect();
    Ok(Splits {
        train: take(0..sizes[0]),
        valid: take(sizes[0]..sizes[0] + sizes[1]),
        test: take(sizes[0] + sizes[1]..n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(speaker: Role, label: &str) -> Turn {
        Turn {
            speaker,
            tokens: vec!["hi".into()],
            labels: vec![label.into()],
        }
    }

    fn dialogue(id: &str, n: usize) -> Dialogue {
        Dialogue {
            id: id.into(),
            turns: (0..n)
                .map(|k| turn(if k % 2 == 0 { Role::Guide } else { Role::Tourist }, &format!("L{k}")))
                .collect(),
        }
    }

    #[test]
    fn load_empty_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_corpus(&p).unwrap().is_empty());

        let ds = vec![dialogue("a", 2), dialogue("b", 5)];
        write_corpus(&p, &ds).unwrap();
        assert_eq!(load_corpus(&p).unwrap(), ds);
        let w = build_windows(&ds[0], 7).unwrap();
        assert_eq!(w[0].histories.len(), 0);
        assert_eq!(w[1].histories.len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let good = serde_json::to_string(&dialogue("a", 1)).unwrap();
        std::fs::write(&p, format!("{good}\n{{not json\n")).unwrap();
        match load_corpus(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bad = good.replace("guide", "captain");
        std::fs::write(&p, format!("{bad}\n")).unwrap();
        match load_corpus(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("unknown speaker"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn windows_are_capped_and_gapless() {
        let d = dialogue("x", 10);
        let ws = build_windows(&d, 7).unwrap();
        assert_eq!(ws.len(), 10);
        assert_eq!(ws[0].histories.len(), 0);
        let last = &ws[9];
        assert_eq!(last.histories.iter().map(|h| h.distance).collect::<Vec<_>>(), (1..=7).collect::<Vec<_>>());
        for w in &ws {
            assert!(w.histories.len() <= 7);
            for (j, h) in w.histories.iter().enumerate() {
                assert_eq!(h.distance, j + 1);
                assert_eq!(h.index + h.distance, w.index);
            }
        }
        assert!(build_windows(&d, 0).is_err());
    }

    #[test]
    fn dropping_a_turn_shifts_distances() {
        let mut d = dialogue("x", 6);
        let target_label = d.turns[1].labels.clone();
        d.turns.remove(3);
        let ws = build_windows(&d, 7).unwrap();
        let last = ws.last().unwrap();
        // brute force: count turns strictly between the history and the current one
        for h in &last.histories {
            let between = (h.index + 1..last.index).count();
            assert_eq!(h.distance, between + 1);
        }
        let h = last.histories.iter().find(|h| h.turn.labels == target_label).unwrap();
        assert_eq!(h.distance, 3);
    }

    #[test]
    fn vocab_reserves_ids() {
        let d = dialogue("x", 3);
        let v = Vocab::build([&d]);
        assert_eq!(v.id("<unk>"), UNK);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("never-seen"), UNK);
        assert_ne!(v.id("hi"), UNK);
        let l = LabelSet::build([&d]);
        assert_eq!(l.labels(), &["L0", "L1", "L2"]);
        assert_eq!(l.encode(&["L2".into(), "zzz".into()]), vec![2]);
    }

    #[test]
    fn split_sizes() {
        let ds: Vec<Dialogue> = (0..29).map(|i| dialogue(&i.to_string(), 1)).collect();
        let s = split(&ds, [14.0 / 29.0, 6.0 / 29.0, 9.0 / 29.0], 3).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (14, 6, 9));
        assert_eq!(s, split(&ds, [14.0 / 29.0, 6.0 / 29.0, 9.0 / 29.0], 3).unwrap());
        let all = split(&ds, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(all.train.len(), 29);
        assert!(split(&ds[..2], [0.5, 0.25, 0.25], 0).is_err());
        assert!(split(&ds, [0.5, 0.6, 0.0], 0).is_err());
        let mut ids: Vec<_> = s.train.iter().chain(&s.valid).chain(&s.test).map(|d| d.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 29);
    }
}
