//! `HTCK` checkpoint files.
//!
//! Layout (little-endian): magic `HTCK`, `u32` version, `u64`-prefixed JSON metadata
//! (configs, counters, running statistics), two RNG states, then the policy and
//! curiosity parameter sets. A parameter set is a `u32` count followed by
//! `(u32 name length, name, u32 rows, u32 cols, f64 values)` records.

use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EpisodeConfig;
use crate::insight::DetectorConfig;

use super::params::Params;
use super::rnd::RunningStd;
use super::train::{Agent, TrainConfig, Trainer};

pub const MAGIC: &[u8; 4] = b"HTCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("bad checkpoint metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("checkpoint does not match the configured network: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub episode: EpisodeConfig,
    pub detectors: DetectorConfig,
    pub steps: u64,
    pub iteration: usize,
    pub stats: [RunningStd; 2],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub rng: RngState,
    pub rnd_rng: RngState,
    pub policy: Params,
    pub curiosity: Params,
}

fn put_params(out: &mut Vec<u8>, p: &Params) {
    out.extend((p.len() as u32).to_le_bytes());
    for (name, t) in p.names().iter().zip(p.tensors()) {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.nrows() as u32).to_le_bytes());
        out.extend((t.ncols() as u32).to_le_bytes());
        for v in t.iter() {
            out.extend(v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn rng(&mut self) -> Result<RngState, CheckpointError> {
        let seed: [u8; 32] = self.take(32)?.try_into().expect("32 bytes");
        let stream = self.u64()?;
        let word_pos = u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes"));
        Ok(RngState { seed, stream, word_pos })
    }

    fn params(&mut self) -> Result<Params, CheckpointError> {
        let count = self.u32()? as usize;
        let mut names = Vec::with_capacity(count);
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = self.u32()? as usize;
            let name = String::from_utf8(self.take(len)?.to_vec())
                .map_err(|_| CheckpointError::Mismatch("parameter name is not UTF-8".into()))?;
            let rows = self.u32()? as usize;
            let cols = self.u32()? as usize;
            let raw =
                self.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or(CheckpointError::Truncated)?)?;
            let values: Vec<f64> =
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            names.push(name);
            tensors.push(Array2::from_shape_vec((rows, cols), values).expect("shape"));
        }
        Ok(Params::from_parts(names, tensors))
    }
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                config: t.config.clone(),
                episode: t.episode.clone(),
                detectors: t.detectors.clone(),
                steps: t.steps,
                iteration: t.iteration,
                stats: t.stats.clone(),
            },
            rng: RngState::capture(&t.rng),
            rnd_rng: RngState::capture(&t.rnd_rng),
            policy: t.agent.params.clone(),
            curiosity: t.agent.rnd_params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        out.extend((meta.len() as u64).to_le_bytes());
        out.extend(meta);
        for r in [&self.rng, &self.rnd_rng] {
            out.extend(r.seed);
            out.extend(r.stream.to_le_bytes());
            out.extend(r.word_pos.to_le_bytes());
        }
        put_params(&mut out, &self.policy);
        put_params(&mut out, &self.curiosity);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = usize::try_from(r.u64()?).map_err(|_| CheckpointError::Truncated)?;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(len)?)?;
        let rng = r.rng()?;
        let rnd_rng = r.rng()?;
        let policy = r.params()?;
        let curiosity = r.params()?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Mismatch(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { meta, rng, rnd_rng, policy, curiosity })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuilds the network from the stored config and installs the stored weights.
    pub fn agent(&self) -> Result<Agent, CheckpointError> {
        let cfg = &self.meta.config;
        let mut agent = Agent::new(&cfg.net, &cfg.rnd, cfg.seed);
        check_layout(&agent.params, &self.policy, "policy")?;
        check_layout(&agent.rnd_params, &self.curiosity, "curiosity")?;
        agent.params = self.policy.clone();
        agent.rnd_params = self.curiosity.clone();
        Ok(agent)
    }
}

fn check_layout(expected: &Params, got: &Params, what: &str) -> Result<(), CheckpointError> {
    if expected.len() != got.len() {
        return Err(CheckpointError::Mismatch(format!("{what}: {} tensors, expected {}", got.len(), expected.len())));
    }
    for (i, (e, g)) in expected.tensors().iter().zip(got.tensors()).enumerate() {
        if expected.names()[i] != got.names()[i] || e.dim() != g.dim() {
            return Err(CheckpointError::Mismatch(format!(
                "{what}: tensor {i} is {} {:?}, expected {} {:?}",
                got.names()[i],
                g.dim(),
                expected.names()[i],
                e.dim()
            )));
        }
    }
    Ok(())
}
