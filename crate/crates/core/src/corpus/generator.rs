//! Synthetic two-party dialogues with planted temporal relevance.
//!
//! Each turn's label is either copied from a history turn picked by the
//! decay profile or drawn uniformly. Labels are grouped into cue groups that
//! share the same cue words, so an utterance alone only narrows its label to
//! its group; the history disambiguates within the group.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dialogue, Role, Turn};
use crate::config::KeyValues;
use crate::error::{Error, Result};

const ACTS: [&str; 4] = ["QST", "RES", "FOL", "INI"];
const ATTRIBUTES: [&str; 8] = [
    "RECOMMEND", "INFO", "EXPLAIN", "ACK", "WHERE", "WHEN", "PRICE", "PREFERENCE",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_dialogues: usize,
    pub turns_per_dialogue: usize,
    pub vocab_size: usize,
    pub label_count: usize,
    /// Probability that a turn copies the label of the history at distance
    /// `j + 1`.
    pub decay_profile: Vec<f64>,
    /// Probability that a copying turn takes its label from the most recent
    /// guide turn instead of the turn picked by the decay profile.
    pub role_bias: f64,
    /// Per-token probability of replacing a cue word with a random word.
    pub noise_rate: f64,
    /// Number of labels sharing one set of cue words.
    pub labels_per_cue_group: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n_dialogues: 200,
            turns_per_dialogue: 30,
            vocab_size: 48,
            label_count: 12,
            decay_profile: vec![0.5, 0.25, 0.1, 0.05, 0.0, 0.0, 0.0],
            role_bias: 0.8,
            noise_rate: 0.1,
            labels_per_cue_group: 6,
            min_tokens: 3,
            max_tokens: 6,
            seed: 0,
        }
    }
}

const KEYS: [&str; 11] = [
    "n_dialogues",
    "turns_per_dialogue",
    "vocab_size",
    "label_count",
    "decay_profile",
    "role_bias",
    "noise_rate",
    "labels_per_cue_group",
    "min_tokens",
    "max_tokens",
    "seed",
];

impl GeneratorSpec {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.check_known(&KEYS)?;
        let mut s = GeneratorSpec::default();
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = kv.parsed(stringify!($field))? {
                    s.$field = v;
                }
            };
        }
        take!(n_dialogues);
        take!(turns_per_dialogue);
        take!(vocab_size);
        take!(label_count);
        take!(role_bias);
        take!(noise_rate);
        take!(labels_per_cue_group);
        take!(min_tokens);
        take!(max_tokens);
        take!(seed);
        if let Some(p) = kv.parsed_list("decay_profile")? {
            s.decay_profile = p;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn cue_groups(&self) -> usize {
        self.label_count.div_ceil(self.labels_per_cue_group)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.turns_per_dialogue == 0 || self.label_count == 0 || self.labels_per_cue_group == 0 {
            return bad("turns_per_dialogue, label_count and labels_per_cue_group must be >= 1".into());
        }
        if self.decay_profile.is_empty() {
            return bad("decay_profile must not be empty".into());
        }
        if self.decay_profile.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad(format!("decay_profile entries must be >= 0: {:?}", self.decay_profile));
        }
        let total: f64 = self.decay_profile.iter().sum();
        if total > 1.0 + 1e-12 {
            return bad(format!("decay_profile sums to {total} > 1"));
        }
        for (name, p) in [("role_bias", self.role_bias), ("noise_rate", self.noise_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.vocab_size < self.cue_groups() {
            return bad(format!("vocab_size {} < {} cue groups", self.vocab_size, self.cue_groups()));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad(format!("token range {}..={} invalid", self.min_tokens, self.max_tokens));
        }
        Ok(())
    }

    pub fn label_name(&self, id: usize) -> String {
        let base = format!("{}-{}", ACTS[id % ACTS.len()], ATTRIBUTES[(id / ACTS.len()) % ATTRIBUTES.len()]);
        match id / (ACTS.len() * ATTRIBUTES.len()) {
            0 => base,
            k => format!("{base}{k}"),
        }
    }

    fn word(&self, id: usize) -> String {
        format!("w{id:03}")
    }

    /// Cue words of group `g`: a contiguous block of the vocabulary.
    fn cue_range(&self, g: usize) -> std::ops::Range<usize> {
        let per = self.vocab_size / self.cue_groups();
        g * per..(g + 1) * per
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<Vec<Dialogue>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n_dialogues);
    for d in 0..spec.n_dialogues {
        let first = if rng.gen_bool(0.5) { Role::Guide } else { Role::Tourist };
        let mut speakers = Vec::with_capacity(spec.turns_per_dialogue);
        let mut labels: Vec<usize> = Vec::with_capacity(spec.turns_per_dialogue);
        let mut turns = Vec::with_capacity(spec.turns_per_dialogue);
        for t in 0..spec.turns_per_dialogue {
            let speaker = if t % 2 == 0 { first } else { first.other() };
            let u: f64 = rng.gen();
            let redirect = rng.gen_bool(spec.role_bias);
            let mut cum = 0.0;
            let mut source = None;
            for (j, p) in spec.decay_profile.iter().enumerate() {
                cum += p;
                if u < cum {
                    let distance = j + 1;
                    if distance <= t {
                        source = Some(t - distance);
                    }
                    break;
                }
            }
            let label = match source {
                Some(mut s) => {
                    if redirect {
                        if let Some(g) = (0..t).rev().find(|&k| speakers[k] == Role::Guide) {
                            s = g;
                        }
                    }
                    labels[s]
                }
                None => rng.gen_range(0..spec.label_count),
            };
            let group = label / spec.labels_per_cue_group;
            let cues = spec.cue_range(group);
            let n_tokens = rng.gen_range(spec.min_tokens..=spec.max_tokens);
            let tokens = (0..n_tokens)
                .map(|_| {
                    let id = if rng.gen_bool(spec.noise_rate) {
                        rng.gen_range(0..spec.vocab_size)
                    } else {
                        rng.gen_range(cues.clone())
                    };
                    spec.word(id)
                })
                .collect();
            speakers.push(speaker);
            labels.push(label);
            turns.push(Turn {
                speaker,
                tokens,
                labels: vec![spec.label_name(label)],
            });
        }
        out.push(Dialogue {
            id: format!("syn-{d:05}"),
            turns,
        });
    }
    Ok(out)
}

/// Count of turns carrying each label.
pub fn label_histogram(dialogues: &[Dialogue]) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for t in dialogues.iter().flat_map(|d| &d.turns) {
        for l in &t.labels {
            *h.entry(l.clone()).or_insert(0) += 1;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorSpec {
        GeneratorSpec {
            n_dialogues: 20,
            turns_per_dialogue: 12,
            role_bias: 0.0,
            noise_rate: 0.0,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn degenerate_copy_profile() {
        let spec = GeneratorSpec {
            decay_profile: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            ..small()
        };
        for d in generate(&spec).unwrap() {
            for w in d.turns.windows(2) {
                assert_eq!(w[0].labels, w[1].labels);
            }
        }
    }

    #[test]
    fn deterministic_and_alternating() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for d in &a {
            assert_eq!(d.turns.len(), 12);
            for w in d.turns.windows(2) {
                assert_ne!(w[0].speaker, w[1].speaker);
            }
        }
        let other = generate(&GeneratorSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn noise_free_tokens_are_cue_words() {
        let spec = small();
        for d in generate(&spec).unwrap() {
            for t in &d.turns {
                let id = (0..spec.label_count).find(|&i| spec.label_name(i) == t.labels[0]).unwrap();
                let cues = spec.cue_range(id / spec.labels_per_cue_group);
                for tok in &t.tokens {
                    let w: usize = tok[1..].parse().unwrap();
                    assert!(cues.contains(&w), "{tok} not a cue of {}", t.labels[0]);
                }
            }
        }
    }

    #[test]
    fn copy_rate_matches_profile() {
        let p = 0.6;
        let spec = GeneratorSpec {
            n_dialogues: 400,
            turns_per_dialogue: 30,
            decay_profile: vec![p, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            label_count: 1000,
            labels_per_cue_group: 10,
            vocab_size: 100,
            ..small()
        };
        let mut same = 0usize;
        let mut total = 0usize;
        for d in generate(&spec).unwrap() {
            for w in d.turns.windows(2) {
                total += 1;
                same += usize::from(w[0].labels == w[1].labels);
            }
        }
        assert!(total >= 10_000);
        let rate = same as f64 / total as f64;
        // chance collisions add p_residual / label_count
        assert!((rate - p).abs() < 0.02, "{rate}");
    }

    #[test]
    fn role_bias_redirects_to_guide() {
        let spec = GeneratorSpec {
            decay_profile: vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            role_bias: 1.0,
            label_count: 1000,
            labels_per_cue_group: 10,
            vocab_size: 100,
            ..small()
        };
        for d in generate(&spec).unwrap() {
            for t in 4..d.turns.len() {
                if d.turns[t].speaker == Role::Guide {
                    // the most recent guide turn is two back
                    assert_eq!(d.turns[t].labels, d.turns[t - 2].labels);
                } else {
                    assert_eq!(d.turns[t].labels, d.turns[t - 1].labels);
                }
            }
        }
    }

    #[test]
    fn validation() {
        let bad = GeneratorSpec {
            decay_profile: vec![0.7, 0.5],
            ..small()
        };
        assert!(matches!(generate(&bad), Err(Error::Config(_))));
        assert!(GeneratorSpec { role_bias: 1.5, ..small() }.validate().is_err());
        assert!(GeneratorSpec { decay_profile: vec![-0.1], ..small() }.validate().is_err());
        let kv = KeyValues::parse("n_dialogues=3\ndecay_profile=1,0\n", "t").unwrap();
        let s = GeneratorSpec::from_key_values(&kv).unwrap();
        assert_eq!(s.n_dialogues, 3);
        assert_eq!(s.decay_profile, vec![1.0, 0.0]);
        let kv = KeyValues::parse("bogus=1\n", "t").unwrap();
        assert!(GeneratorSpec::from_key_values(&kv).is_err());
    }
}
