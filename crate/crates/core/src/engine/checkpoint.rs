//! Single-file binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, JSON header,
//! little-endian array payload, then a `u64` FNV-1a checksum over all
//! preceding bytes.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::EpisodeLog;
use super::search::Search;
use crate::error::{Error, Result};
use crate::searchspace::DecisionSchema;
use crate::tensor::{Moments, Tensor5};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VNASCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> std::result::Result<ChaCha8Rng, String> {
        use rand::SeedableRng;
        if self.seed.len() != 64 {
            return Err("rng seed must be 32 hex bytes".into());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|e| e.to_string())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse::<u128>().map_err(|e| e.to_string())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ExperimentConfig,
    schema: DecisionSchema,
    episode: usize,
    logs: Vec<EpisodeLog>,
    /// Bit pattern of the controller baseline.
    baseline_bits: Option<u64>,
    controller_step: u64,
    child_steps: Vec<u64>,
    controller_rng: RngState,
    train_rng: RngState,
    planted: Option<Vec<usize>>,
    arrays: Vec<ArrayEntry>,
}

enum Array {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn encode(search: &Search) -> Result<Vec<u8>> {
    let mut arrays: Vec<(String, Array)> = Vec::new();
    let mut child_steps = Vec::new();
    if let Some(child) = &search.child {
        for (p, m) in child.weights.params().iter().zip(&child.optimizer.moments) {
            arrays.push((format!("param/{}", p.name), Array::F32(p.value.data().to_vec())));
            arrays.push((format!("adam_m/{}", p.name), Array::F32(m.m.clone())));
            arrays.push((format!("adam_v/{}", p.name), Array::F32(m.v.clone())));
            child_steps.push(m.t);
        }
    }
    let c = &search.controller;
    arrays.push(("controller/params".into(), Array::F64(c.params.clone())));
    arrays.push(("controller/adam_m".into(), Array::F64(c.moments.m.clone())));
    arrays.push(("controller/adam_v".into(), Array::F64(c.moments.v.clone())));

    let header = Header {
        config: search.config.clone(),
        schema: search.schema.clone(),
        episode: search.episode,
        logs: search.logs.clone(),
        baseline_bits: c.baseline.map(f64::to_bits),
        controller_step: c.moments.t,
        child_steps,
        controller_rng: RngState::capture(&search.controller_rng),
        train_rng: RngState::capture(&search.train_rng),
        planted: search.planted.clone(),
        arrays: arrays
            .iter()
            .map(|(name, a)| {
                let (dtype, len) = match a {
                    Array::F32(v) => ("f32", v.len()),
                    Array::F64(v) => ("f64", v.len()),
                };
                ArrayEntry {
                    name: name.clone(),
                    dtype: dtype.into(),
                    len,
                }
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, a) in &arrays {
        match a {
            Array::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Array::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

fn decode(bytes: &[u8], path: &Path) -> Result<(Header, Vec<Array>)> {
    let bad = |d: String| Error::format(path, d);
    let prefix = CHECKPOINT_MAGIC.len() + 4 + 8;
    if bytes.len() < prefix + 8 {
        return Err(bad(format!("file is truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(bad("checksum mismatch".into()));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if header_len > body.len() - prefix {
        return Err(bad("header length exceeds file size".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[prefix..prefix + header_len]).map_err(|e| bad(e.to_string()))?;
    let mut payload = &body[prefix + header_len..];
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in &header.arrays {
        let width = match entry.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(bad(format!("array {} has unknown dtype `{other}`", entry.name))),
        };
        let n = entry.len.checked_mul(width).filter(|&n| n <= payload.len());
        let Some(n) = n else {
            return Err(bad(format!("array {} runs past the end of the payload", entry.name)));
        };
        let (chunk, rest) = payload.split_at(n);
        payload = rest;
        arrays.push(if width == 4 {
            Array::F32(chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
        } else {
            Array::F64(chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
        });
    }
    if !payload.is_empty() {
        return Err(bad(format!("{} unexpected trailing payload bytes", payload.len())));
    }
    Ok((header, arrays))
}

impl Search {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let bytes = encode(self)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Rebuilds a search from a checkpoint, reloading the dataset named in
    /// the stored configuration.
    pub fn load_checkpoint(path: &Path) -> Result<Search> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (header, _) = decode(&bytes, path)?;
        let mut search = Search::new(header.config.clone())?;
        search.restore_bytes(&bytes, path)?;
        Ok(search)
    }

    /// Replaces this search's state with a checkpoint's. On error nothing is changed.
    pub fn restore(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.restore_bytes(&bytes, path)
    }

    fn restore_bytes(&mut self, bytes: &[u8], path: &Path) -> Result<()> {
        let (header, arrays) = decode(bytes, path)?;
        if header.schema != self.schema {
            return Err(Error::Incompatible("checkpoint schema differs from this dataset's schema".into()));
        }
        let bad = |d: &str| Error::format(path, d.to_string());
        let mut it = arrays.into_iter();
        let mut next_f32 = |len: usize| match it.next() {
            Some(Array::F32(v)) if v.len() == len => Ok(v),
            _ => Err(bad("array table does not match the supernet layout")),
        };
        let mut child_state = None;
        if let Some(child) = &self.child {
            if header.child_steps.len() != child.weights.params().len() {
                return Err(bad("optimizer step table does not match the supernet"));
            }
            let mut values = Vec::new();
            let mut moments = Vec::new();
            for (p, &t) in child.weights.params().iter().zip(&header.child_steps) {
                let n = p.value.numel();
                values.push(Tensor5::new(p.value.shape(), next_f32(n)?)?);
                let m = next_f32(n)?;
                let v = next_f32(n)?;
                moments.push(Moments { m, v, t });
            }
            child_state = Some((values, moments));
        }
        let n = self.controller.params.len();
        let mut next_f64 = || match it.next() {
            Some(Array::F64(v)) if v.len() == n => Ok(v),
            _ => Err(bad("array table does not match the controller layout")),
        };
        let (cp, cm, cv) = (next_f64()?, next_f64()?, next_f64()?);
        if it.next().is_some() {
            return Err(bad("checkpoint holds extra arrays"));
        }
        let controller_rng = header.controller_rng.restore().map_err(|e| bad(&e))?;
        let train_rng = header.train_rng.restore().map_err(|e| bad(&e))?;

        // Everything validated; commit.
        if let (Some(child), Some((values, moments))) = (self.child.as_mut(), child_state) {
            child.weights.load_values(values)?;
            child.optimizer.moments = moments;
        }
        self.controller.params = cp;
        self.controller.moments = Moments {
            m: cm,
            v: cv,
            t: header.controller_step,
        };
        self.controller.baseline = header.baseline_bits.map(f64::from_bits);
        self.controller_rng = controller_rng;
        self.train_rng = train_rng;
        self.planted = header.planted;
        self.episode = header.episode;
        self.logs = header.logs;
        self.config = header.config;
        Ok(())
    }
}
