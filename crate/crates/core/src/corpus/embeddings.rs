use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;

use super::{Vocab, RESERVED};
use crate::error::{Error, Result};
use crate::tensor::{param_rng, uniform_tensor, Tensor};

pub const WORD_INIT_BOUND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingReport {
    /// Non-reserved vocabulary words found in the file.
    pub matched: usize,
    /// Non-reserved vocabulary size.
    pub total: usize,
    /// Words that appeared more than once (last occurrence kept).
    pub duplicates: Vec<String>,
}

impl EmbeddingReport {
    pub fn coverage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }
}

/// Reads `word v1 .. v_dim` lines into a `[dim, |V|]` table. Words missing
/// from the file keep their uniform random init.
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocab, dim: usize, seed: u64) -> Result<(Tensor, EmbeddingReport)> {
    let path = path.as_ref();
    let cols = vocab.len();
    let mut table = uniform_tensor(vec![dim, cols], WORD_INIT_BOUND, &mut param_rng(seed, "word_embeddings"))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut duplicates = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Format {
                    line: k + 1,
                    message: format!("bad number {p:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(Error::Format {
                line: k + 1,
                message: format!("expected {dim} values, got {}", values.len()),
            });
        }
        let Some(id) = vocab.get(word).filter(|&id| id >= RESERVED) else { continue };
        if !seen.insert(id) {
            warn!("{}:{}: duplicate embedding for {word:?}, keeping the last", path.display(), k + 1);
            duplicates.push(word.to_string());
        }
        let data = table.values_mut();
        for (r, v) in values.into_iter().enumerate() {
            data[r * cols + id] = v;
        }
    }
    let report = EmbeddingReport {
        matched: seen.len(),
        total: cols - RESERVED,
        duplicates,
    };
    Ok((table, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dialogue, Role, Turn};

    fn vocab() -> Vocab {
        let d = Dialogue {
            id: "x".into(),
            turns: vec![Turn {
                speaker: Role::Guide,
                tokens: vec!["a".into(), "b".into()],
                labels: vec!["L".into()],
            }],
        };
        Vocab::build([&d])
    }

    #[test]
    fn coverage_counts() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "zzz 1 2\n").unwrap();
        let (_, r) = load_embeddings(&p, &v, 2, 0).unwrap();
        assert_eq!(r.matched, 0);

        let text: String = v.words()[RESERVED..].iter().map(|w| format!("{w} 0.5 -0.5\n")).collect();
        std::fs::write(&p, text).unwrap();
        let (t, r) = load_embeddings(&p, &v, 2, 0).unwrap();
        assert_eq!(r.matched, v.len() - 2);
        assert_eq!(r.coverage(), 1.0);
        assert_eq!(t.column(v.id("a")).unwrap(), vec![0.5, -0.5]);
    }

    #[test]
    fn duplicates_last_wins() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "a 1 1\nb 3 3\na 2 2\n").unwrap();
        let (t, r) = load_embeddings(&p, &v, 2, 0).unwrap();
        assert_eq!(t.column(v.id("a")).unwrap(), vec![2.0, 2.0]);
        assert_eq!(r.duplicates, vec!["a".to_string()]);
        assert_eq!(r.matched, 2);
    }

    #[test]
    fn wrong_width_names_line() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "a 1 1\nb 3\n").unwrap();
        match load_embeddings(&p, &v, 2, 0) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
