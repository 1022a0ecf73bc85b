//! Single-file model checkpoints.
//!
//! Layout: magic `CTXSLUCK`, `u32` LE format version, `u64` LE manifest
//! length, the JSON manifest, then every tensor's values as LE `f64` in
//! manifest order. The manifest carries the model config, vocabulary and
//! label lists with their hashes, and each tensor's name and shape.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSet, Vocab};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::ParamStore;

pub const MAGIC: &[u8; 8] = b"CTXSLUCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    model: ModelConfig,
    seed: u64,
    vocab: Vec<String>,
    vocab_hash: String,
    labels: Vec<String>,
    labels_hash: String,
    tensors: Vec<TensorEntry>,
}

/// A loaded model with its vocabularies.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub store: ParamStore,
    pub vocab: Vocab,
    pub labels: LabelSet,
    pub seed: u64,
}

impl Checkpoint {
    /// Rejects a checkpoint whose model config differs from `expected`.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        if &self.model.cfg != expected {
            return Err(Error::Checkpoint(format!(
                "model config mismatch: checkpoint has {}, expected {}",
                serde_json::to_string(&self.model.cfg)?,
                serde_json::to_string(expected)?
            )));
        }
        Ok(())
    }
}

pub fn save(
    path: impl AsRef<Path>,
    model: &ModelParams,
    store: &ParamStore,
    vocab: &Vocab,
    labels: &LabelSet,
    seed: u64,
) -> Result<()> {
    let path = path.as_ref();
    let manifest = Manifest {
        model: model.cfg,
        seed,
        vocab: vocab.words().to_vec(),
        vocab_hash: vocab.hash(),
        labels: labels.labels().to_vec(),
        labels_hash: labels.hash(),
        tensors: store
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for (_, t) in store.iter() {
        for v in t.values() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("truncated file while reading {what}")),
        _ => Error::Checkpoint(format!("reading {what}: {e}")),
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let mut word = [0u8; 4];
    read_exact(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let mut len = [0u8; 8];
    read_exact(&mut r, &mut len, "manifest length")?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| Error::Checkpoint("manifest too large".into()))?;
    let file_len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    if len as u64 > file_len {
        return Err(Error::Checkpoint("truncated file while reading manifest".into()));
    }
    let mut json = vec![0u8; len];
    read_exact(&mut r, &mut json, "manifest")?;
    let manifest: Manifest =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;

    let vocab = Vocab::from_words(manifest.vocab)?;
    let labels = LabelSet::from_labels(manifest.labels)?;
    if vocab.hash() != manifest.vocab_hash || labels.hash() != manifest.labels_hash {
        return Err(Error::Checkpoint("vocabulary hash does not match manifest".into()));
    }

    let mut store = ParamStore::new();
    let model = ModelParams::build(&mut store, manifest.model, vocab.len(), labels.len(), manifest.seed)
        .map_err(|e| Error::Checkpoint(format!("manifest config invalid: {e}")))?;
    let expected: Vec<TensorEntry> = store
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect();
    if expected != manifest.tensors {
        return Err(Error::Checkpoint("tensor list does not match the model config".into()));
    }

    let mut buf = [0u8; 8];
    for t in store.tensors_mut() {
        for v in t.values_mut() {
            read_exact(&mut r, &mut buf, "tensor data")?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint {
        model,
        store,
        vocab,
        labels,
        seed: manifest.seed,
    })
}
