//! Binary checkpoints.
//!
//! Layout (little-endian): magic, format version `u32`, header length `u64`,
//! JSON header, header CRC32; then one block per parameter (and, when saved,
//! two per parameter for the optimizer moments), each as value count `u64`,
//! `f64` values, CRC32 of the value bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uniconv_numcore::{AdamConfig, AdamState};

use crate::config::Config;
use crate::corpus::hex;
use crate::error::{Error, Result};
use crate::model::UniConv;
use crate::ontology::Ontology;
use crate::vocab::Vocab;

pub const MAGIC: &[u8; 8] = b"UNICONV\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    /// Fingerprint of the corpus the model was trained on.
    fingerprint: String,
    /// Hash of config, ontology and vocabularies.
    model_hash: String,
    config: Config,
    ontology: Ontology,
    src_vocab: Vocab,
    res_vocab: Vocab,
    params: Vec<ParamEntry>,
    best_val_loss: Option<f64>,
    epoch: usize,
    optimizer: Option<OptimizerHeader>,
}

/// A trained model with the data fingerprint and bookkeeping it was saved with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub config: Config,
    pub model: UniConv,
    pub best_val_loss: Option<f64>,
    pub epoch: usize,
    pub optimizer: Option<AdamState>,
}

fn model_hash(config: &Config, ontology: &Ontology, src: &Vocab, res: &Vocab) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&config.model).expect("config serialises"));
    h.update(serde_json::to_vec(ontology).expect("ontology serialises"));
    h.update(serde_json::to_vec(src).expect("vocab serialises"));
    h.update(serde_json::to_vec(res).expect("vocab serialises"));
    hex(&h.finalize())
}

fn put_block(out: &mut Vec<u8>, values: &[f64]) {
    let start = out.len() + 8;
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("{}: truncated at byte {}", self.path.display(), self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn block(&mut self, what: &str, expected: usize) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n != expected {
            return Err(Error::Checkpoint(format!("{what}: {n} values stored, {expected} expected")));
        }
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint(format!("{what}: bad length")))?)?;
        let crc = self.u32()?;
        if crc32fast::hash(bytes) != crc {
            return Err(Error::Checkpoint(format!("{}: checksum mismatch in {what}", self.path.display())));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let m = &self.model;
        let header = Header {
            fingerprint: self.fingerprint.clone(),
            model_hash: model_hash(&self.config, &m.ontology, &m.src_vocab, &m.res_vocab),
            config: self.config.clone(),
            ontology: m.ontology.clone(),
            src_vocab: m.src_vocab.clone(),
            res_vocab: m.res_vocab.clone(),
            params: m
                .store
                .iter()
                .map(|(_, p)| ParamEntry {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    trainable: p.trainable,
                })
                .collect(),
            best_val_loss: self.best_val_loss,
            epoch: self.epoch,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                beta1: o.config.beta1,
                beta2: o.config.beta2,
                eps: o.config.eps,
                lr: o.config.lr,
                t: o.t,
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(json.len() + m.store.num_values() * 8 + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&crc32fast::hash(&json).to_le_bytes());
        for (_, p) in m.store.iter() {
            put_block(&mut out, p.tensor.data());
        }
        if let Some(o) = &self.optimizer {
            for (mm, vv) in o.m.iter().zip(&o.v) {
                put_block(&mut out, mm);
                put_block(&mut out, vv);
            }
        }
        out
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let bytes = self.encode();
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Reads a checkpoint. With `expected_fingerprint`, refuses one trained
    /// on different data.
    pub fn load(path: &Path, expected_fingerprint: Option<&str>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path, expected_fingerprint)
    }

    pub fn decode(bytes: &[u8], path: &Path, expected_fingerprint: Option<&str>) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0, path };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: format version {version}, this build reads {FORMAT_VERSION}",
                path.display()
            )));
        }
        let len = r.u64()? as usize;
        let json = r.take(len)?;
        if crc32fast::hash(json) != r.u32()? {
            return Err(Error::Checkpoint(format!("{}: checksum mismatch in header", path.display())));
        }
        let h: Header = serde_json::from_slice(json).map_err(|e| Error::json(path, e))?;
        if let Some(fp) = expected_fingerprint {
            if fp != h.fingerprint {
                return Err(Error::Checkpoint(format!(
                    "{}: trained on data {}, current data is {fp}",
                    path.display(),
                    h.fingerprint
                )));
            }
        }
        if model_hash(&h.config, &h.ontology, &h.src_vocab, &h.res_vocab) != h.model_hash {
            return Err(Error::Checkpoint(format!("{}: header hash mismatch", path.display())));
        }
        let mut model = UniConv::new(h.config.model.clone(), h.ontology, h.src_vocab, h.res_vocab, 0)?;
        if model.store.len() != h.params.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {} parameters stored, model has {}",
                path.display(),
                h.params.len(),
                model.store.len()
            )));
        }
        for (p, e) in model.store.iter_mut().zip(&h.params) {
            if p.name != e.name || p.tensor.shape() != e.shape.as_slice() {
                return Err(Error::Checkpoint(format!("parameter {} does not match the model layout", e.name)));
            }
            let n = p.tensor.len();
            let values = r.block(&e.name, n)?;
            p.tensor.data_mut().copy_from_slice(&values);
            p.trainable = e.trainable;
        }
        let optimizer = match &h.optimizer {
            Some(o) => {
                let mut m = Vec::with_capacity(h.params.len());
                let mut v = Vec::with_capacity(h.params.len());
                for (e, (_, p)) in h.params.iter().zip(model.store.iter()) {
                    m.push(r.block(&format!("{} first moment", e.name), p.tensor.len())?);
                    v.push(r.block(&format!("{} second moment", e.name), p.tensor.len())?);
                }
                Some(AdamState {
                    config: AdamConfig {
                        beta1: o.beta1,
                        beta2: o.beta2,
                        eps: o.eps,
                        lr: o.lr,
                    },
                    m,
                    v,
                    t: o.t,
                })
            }
            None => None,
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{}: {} trailing bytes", path.display(), bytes.len() - r.pos)));
        }
        Ok(Self {
            fingerprint: h.fingerprint,
            config: h.config,
            model,
            best_val_loss: h.best_val_loss,
            epoch: h.epoch,
            optimizer,
        })
    }
}
