//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `b"SLOTFILL"`, `u32` version, `u64` metadata length, UTF-8 JSON metadata,
//! `u64` tensor count, then per tensor `u32` name length, name bytes,
//! `u32` rank, `rank x u64` dims, and the values as raw `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data::{LabelSet, Vocab};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SlotFillingModel};
use crate::numerics::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"SLOTFILL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub word_vocab: Vocab,
    pub pos_vocab: Vocab,
    pub label_set: LabelSet,
    pub params: ParamSet,
    pub best_dev_f1: f64,
    /// 1-based epoch the parameters come from.
    pub best_epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    model: ModelConfig,
    train: TrainConfig,
    word_vocab: Vec<String>,
    word_lowercase: bool,
    pos_vocab: Vec<String>,
    pos_lowercase: bool,
    labels: Vec<String>,
    best_dev_f1: f64,
    best_epoch: usize,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Checkpoint(format!("{what} does not fit in memory")))
    }
}

impl Checkpoint {
    /// Rebuilds the network description the parameters belong to.
    pub fn build_model(&self) -> Result<SlotFillingModel> {
        let m = SlotFillingModel::new(&self.model, self.word_vocab.len(), self.pos_vocab.len(), &self.label_set)?;
        m.check_params(&self.params)?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            model: self.model.clone(),
            train: self.train.clone(),
            word_vocab: self.word_vocab.items().to_vec(),
            word_lowercase: self.word_vocab.lowercase(),
            pos_vocab: self.pos_vocab.items().to_vec(),
            pos_lowercase: self.pos_vocab.lowercase(),
            labels: self.label_set.tags().to_vec(),
            best_dev_f1: self.best_dev_f1,
            best_epoch: self.best_epoch,
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 8 * self.params.scalar_count() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let meta_len = r.usize("metadata length")?;
        let meta: Metadata =
            serde_json::from_slice(r.take(meta_len, "metadata")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = r.usize("tensor count")?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank).map(|_| r.usize("dim")).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?, &name)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        if !r.buf.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(Self {
            model: meta.model,
            train: meta.train,
            word_vocab: Vocab::from_items(meta.word_vocab, meta.word_lowercase)?,
            pos_vocab: Vocab::from_items(meta.pos_vocab, meta.pos_lowercase)?,
            label_set: LabelSet::from_ordered(meta.labels).map_err(|e| Error::Checkpoint(e.to_string()))?,
            params,
            best_dev_f1: meta.best_dev_f1,
            best_epoch: meta.best_epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
