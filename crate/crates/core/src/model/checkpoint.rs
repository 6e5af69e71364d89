//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LNLB" | version u16 | meta_len u32 | meta (UTF-8 key=value lines)
//! then per tensor until EOF:
//!   name_len u32 | name | rank u8 | dims u64 * rank | f32 payload, row-major
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use super::config::ModelConfig;
use super::encoder::{layer_prefix, parameter_layout, LayoutEncoder};
use crate::corpus::LabelSet;
use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::textcodec::Vocab;

pub const MAGIC: &[u8; 4] = b"LNLB";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabStamp {
    pub hash: String,
    pub size: usize,
}

impl VocabStamp {
    pub fn of(vocab: &Vocab) -> Self {
        Self { hash: vocab.fingerprint(), size: vocab.len() }
    }
}

impl std::fmt::Display for VocabStamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.hash, self.size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: VocabStamp,
    /// Label set of the tagging head, when the model has one.
    pub labels: Option<LabelSet>,
    pub tensors: Vec<NamedTensor>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_model<F: Scalar>(model: &LayoutEncoder<F>, vocab: &VocabStamp) -> Self {
        let tensors = model
            .params()
            .iter()
            .map(|(_, p)| NamedTensor {
                name: p.name.clone(),
                dims: p.value().shape().to_vec(),
                data: p.value().data().iter().map(|v| v.as_f32()).collect(),
            })
            .collect();
        Self {
            config: model.config().clone(),
            vocab: vocab.clone(),
            labels: model.ner_labels().cloned(),
            tensors,
        }
    }

    /// Every configured parameter present exactly once with matching dims,
    /// and nothing else.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.vocab.size != self.config.vocab_size {
            return Err(ckpt_err(format!(
                "vocabulary size {} disagrees with vocab_size {}",
                self.vocab.size, self.config.vocab_size
            )));
        }
        let mut expected: HashMap<String, Vec<usize>> = parameter_layout(&self.config).into_iter().collect();
        if let Some(labels) = &self.labels {
            expected.insert("ner.weight".into(), vec![self.config.hidden, labels.num_tags()]);
            expected.insert("ner.bias".into(), vec![labels.num_tags()]);
        }
        let mut seen = HashSet::new();
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(ckpt_err(format!("tensor {} appears twice", t.name)));
            }
            let dims = expected
                .get(&t.name)
                .ok_or_else(|| ckpt_err(format!("unexpected tensor {}", t.name)))?;
            if *dims != t.dims {
                return Err(ckpt_err(format!("tensor {}: dims {:?}, expected {dims:?}", t.name, t.dims)));
            }
            if t.data.len() != dims.iter().product::<usize>() {
                return Err(ckpt_err(format!("tensor {}: payload length", t.name)));
            }
        }
        if let Some(missing) = expected.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(ckpt_err(format!("missing tensor {missing}")));
        }
        Ok(())
    }

    pub fn to_model<F: Scalar>(&self) -> Result<LayoutEncoder<F>> {
        self.validate()?;
        let by_name: HashMap<&str, &NamedTensor> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let load = |name: &str| -> Result<Tensor<F>> {
            let t = by_name.get(name).ok_or_else(|| ckpt_err(format!("missing tensor {name}")))?;
            Tensor::new(t.dims.clone(), t.data.iter().map(|v| F::of_f32(*v)).collect())
        };
        let mut model = LayoutEncoder::assemble(self.config.clone(), |name, _| load(name))?;
        if let Some(labels) = &self.labels {
            model.set_ner_head(labels.clone(), load("ner.weight")?, load("ner.bias")?)?;
        }
        Ok(model)
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        let found = VocabStamp::of(vocab);
        if found != self.vocab {
            return Err(Error::Fingerprint { expected: self.vocab.to_string(), found: found.to_string() });
        }
        Ok(())
    }

    /// Keep embeddings, the bottom `k` layers and the heads.
    pub fn truncate_layers(&self, k: usize) -> Result<Checkpoint> {
        if k == 0 || k > self.config.layers {
            return Err(invalid(format!("cannot keep {k} of {} layers", self.config.layers)));
        }
        let dropped: Vec<String> = (k..self.config.layers).map(layer_prefix).collect();
        let mut out = self.clone();
        out.config.layers = k;
        out.tensors.retain(|t| !dropped.iter().any(|p| t.name.starts_with(p.as_str())));
        Ok(out)
    }

    fn metadata(&self) -> String {
        let mut s = String::new();
        for line in self.config.to_text().lines() {
            let (k, v) = line.split_once(" = ").expect("config text format");
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "vocab_hash={}", self.vocab.hash);
        let _ = writeln!(s, "vocab_tokens={}", self.vocab.size);
        if let Some(labels) = &self.labels {
            for l in labels.labels() {
                let _ = writeln!(s, "label={l}");
            }
        }
        let _ = writeln!(s, "tensors={}", self.tensors.len());
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.metadata();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dims.len() as u8);
            for d in &t.dims {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ckpt_err("bad magic"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(ckpt_err(format!("unsupported version {version}")));
        }
        let meta_len = u32::from_le_bytes(r.array()?) as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?).map_err(|_| ckpt_err("metadata is not UTF-8"))?;

        let mut config_text = String::new();
        let mut hash = None;
        let mut size = None;
        let mut labels = Vec::new();
        let mut count = None;
        for line in meta.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| ckpt_err(format!("bad metadata line {line:?}")))?;
            let num = || v.parse::<usize>().map_err(|_| ckpt_err(format!("bad number in {line:?}")));
            match k {
                "vocab_hash" => hash = Some(v.to_string()),
                "vocab_tokens" => size = Some(num()?),
                "label" => labels.push(v.to_string()),
                "tensors" => count = Some(num()?),
                _ => {
                    let _ = writeln!(config_text, "{k} = {v}");
                }
            }
        }
        let config = ModelConfig::from_text(&config_text).map_err(|e| ckpt_err(e.to_string()))?;
        let vocab = VocabStamp {
            hash: hash.ok_or_else(|| ckpt_err("missing vocab_hash"))?,
            size: size.ok_or_else(|| ckpt_err("missing vocab_tokens"))?,
        };
        let labels = if labels.is_empty() { None } else { Some(LabelSet::new(labels)?) };

        let mut tensors = Vec::new();
        while !r.done() {
            let name_len = u32::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ckpt_err("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u64::from_le_bytes(r.array()?) as usize);
            }
            let n: usize = dims.iter().product();
            let payload = r.take(n.checked_mul(4).ok_or_else(|| ckpt_err("tensor too large"))?)?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        if let Some(c) = count {
            if c != tensors.len() {
                return Err(ckpt_err(format!("metadata lists {c} tensors, found {}", tensors.len())));
            }
        }
        let ckpt = Self { config, vocab, labels, tensors };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| ckpt_err("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
