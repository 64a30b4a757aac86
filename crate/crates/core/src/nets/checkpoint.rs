//! Binary checkpoint: magic, a little-endian `u64` header length, a JSON
//! header, then every parameter and optimizer moment as raw little-endian
//! `f32`s in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use super::params::{Group, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"VOXREP01";

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = |what: &str| Error::Checkpoint(format!("corrupt rng {what}"));
        if self.seed.len() != 64 {
            return Err(bad("seed"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("position"))?);
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    name: String,
    config: AdamConfig,
    groups: Vec<String>,
    step: u64,
    moments: Vec<(String, usize)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    step: u64,
    rng: Option<RngState>,
    params: Vec<(String, Vec<usize>)>,
    optimizers: Vec<OptimizerHeader>,
    meta: serde_json::Value,
}

/// Everything needed to resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub step: u64,
    pub rng: Option<RngState>,
    pub params: ParamSet,
    pub optimizers: Vec<(String, Adam)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(fingerprint: impl Into<String>, step: u64, params: ParamSet) -> Self {
        Self {
            fingerprint: fingerprint.into(),
            step,
            rng: None,
            params,
            optimizers: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }

    pub fn optimizer(&self, name: &str) -> Option<&Adam> {
        self.optimizers.iter().find(|(n, _)| n == name).map(|(_, o)| o)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body: Vec<u8> = Vec::new();
        let push = |body: &mut Vec<u8>, xs: &[f32]| {
            for x in xs {
                body.extend_from_slice(&x.to_le_bytes());
            }
        };
        for (_, t) in self.params.iter() {
            push(&mut body, t.data());
        }
        let mut optimizers = Vec::new();
        for (name, opt) in &self.optimizers {
            let (step, moments) = opt.state();
            let mut lens = Vec::new();
            for (pname, (m, v)) in moments {
                push(&mut body, m);
                push(&mut body, v);
                lens.push((pname.clone(), m.len()));
            }
            optimizers.push(OptimizerHeader {
                name: name.clone(),
                config: opt.config,
                groups: opt.groups().iter().map(|g| g.prefix().to_string()).collect(),
                step,
                moments: lens,
            });
        }
        let header = Header {
            fingerprint: self.fingerprint.clone(),
            step: self.step,
            rng: self.rng.clone(),
            params: self.params.layout(),
            optimizers,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |why: &str| Error::Checkpoint(why.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut floats = bytes[16 + hlen..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        if !(bytes.len() - 16 - hlen).is_multiple_of(4) {
            return Err(corrupt("ragged body"));
        }
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let v: Vec<f32> = floats.by_ref().take(n).collect();
            if v.len() != n {
                return Err(corrupt("truncated body"));
            }
            Ok(v)
        };
        let mut params = ParamSet::new();
        for (name, shape) in &header.params {
            let n = shape.iter().product();
            params.insert(name.clone(), Tensor::from_vec(shape, take(n)?)?)?;
        }
        let mut optimizers = Vec::new();
        for oh in header.optimizers {
            let groups = oh
                .groups
                .iter()
                .map(|g| Group::of(g).ok_or_else(|| corrupt("unknown optimizer group")))
                .collect::<Result<Vec<_>>>()?;
            let mut opt = Adam::new(oh.config, &groups);
            let mut moments = BTreeMap::new();
            for (pname, n) in oh.moments {
                let m = take(n)?;
                let v = take(n)?;
                moments.insert(pname, (m, v));
            }
            opt.restore(oh.step, moments);
            optimizers.push((oh.name, opt));
        }
        if floats.next().is_some() {
            return Err(corrupt("trailing data"));
        }
        Ok(Self {
            fingerprint: header.fingerprint,
            step: header.step,
            rng: header.rng,
            params,
            optimizers,
            meta: header.meta,
        })
    }

    /// Writes atomically via a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Loads and checks the fingerprint against `expected`.
    pub fn load(path: &Path, expected: &str) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck = Self::from_bytes(&bytes)?;
        if ck.fingerprint != expected {
            return Err(Error::Checkpoint(format!(
                "fingerprint mismatch: file has {}, expected {expected}",
                ck.fingerprint
            )));
        }
        Ok(ck)
    }
}
