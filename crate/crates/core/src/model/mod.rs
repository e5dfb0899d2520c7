//! The two-stage action model: a shared encoder trunk with a per-position
//! score head (first sub-action and Monte-Carlo Q regression), a pooled
//! state-value head (the REINFORCE baseline) and a dot-product attention
//! head over swap partners (second sub-action).

mod grad;
mod net;

pub use grad::{log_prob_and_grads, GradBundle};
pub use net::{encode, ActionDistribution, Encoding, NeuralPolicy, SelectMode};

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::instance::Variant;

/// Width of the per-position feature vector; fields not applicable to a
/// variant are zero-filled.
pub const FEATURE_DIM: usize = 8;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SVRP";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("state has no legal first node (fewer than 2 interior positions)")]
    NoAction,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("non-finite value at trajectory step {step}: {detail}")]
    Numeric { step: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub hidden_dim: usize,
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub w_emb: usize,
    pub b_emb: usize,
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub w_score: usize,
    pub b_score: usize,
    pub w_val: usize,
    pub b_val: usize,
    pub p_q: usize,
    pub p_k: usize,
    pub total: usize,
}

impl ModelDims {
    pub fn new(hidden_dim: usize) -> Self {
        ModelDims {
            feature_dim: FEATURE_DIM,
            hidden_dim,
        }
    }

    pub(crate) fn layout(&self) -> Layout {
        let d = self.hidden_dim;
        let f = self.feature_dim;
        let w_emb = 0;
        let b_emb = w_emb + d * f;
        let w_q = b_emb + d;
        let w_k = w_q + d * d;
        let w_v = w_k + d * d;
        let w_score = w_v + d * d;
        let b_score = w_score + d;
        let w_val = b_score + 1;
        let b_val = w_val + d;
        let p_q = b_val + 1;
        let p_k = p_q + d * d;
        let total = p_k + d * d;
        Layout {
            w_emb,
            b_emb,
            w_q,
            w_k,
            w_v,
            w_score,
            b_score,
            w_val,
            b_val,
            p_q,
            p_k,
            total,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// All learnable weights as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    flat: Vec<f64>,
}

impl ModelParams {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, deterministic in the
    /// seed. Biases use the fan-in of their layer.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let layout = dims.layout();
        let d = dims.hidden_dim;
        let f = dims.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = vec![0.0; layout.total];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, flat: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for slot in &mut flat[range] {
                *slot = rng.gen_range(-bound..bound);
            }
        };
        fill(layout.w_emb..layout.b_emb, f, &mut flat);
        fill(layout.b_emb..layout.w_q, f, &mut flat);
        fill(layout.w_q..layout.w_k, d, &mut flat);
        fill(layout.w_k..layout.w_v, d, &mut flat);
        fill(layout.w_v..layout.w_score, d, &mut flat);
        fill(layout.w_score..layout.p_q, d, &mut flat);
        fill(layout.p_q..layout.p_k, d, &mut flat);
        fill(layout.p_k..layout.total, d, &mut flat);
        ModelParams { dims, flat }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            dims,
            flat: vec![0.0; dims.param_count()],
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub(crate) fn block(&self, start: usize, len: usize) -> &[f64] {
        &self.flat[start..start + len]
    }

    /// Writes the checkpoint: a small header followed by the flat vector
    /// as little-endian 64-bit floats.
    pub fn save(&self, path: &Path, variant: Variant, seed: u64) -> Result<(), ModelError> {
        let mut buf = Vec::with_capacity(33 + self.flat.len() * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.push(match variant {
            Variant::Cvrp => 0u8,
            Variant::Tsptw => 1,
            Variant::Cvrptw => 2,
        });
        buf.extend_from_slice(&(self.dims.hidden_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dims.feature_dim as u32).to_le_bytes());
        buf.extend_from_slice(&seed.to_le_bytes());
        buf.extend_from_slice(&(self.flat.len() as u64).to_le_bytes());
        for &value in &self.flat {
            buf.extend_from_slice(&value.to_le_bytes());
        }
        let mut file = fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader), ModelError> {
        let bytes = fs::read(path)?;
        let take = |range: std::ops::Range<usize>| -> Result<&[u8], ModelError> {
            bytes
                .get(range)
                .ok_or_else(|| ModelError::Checkpoint("file truncated".into()))
        };
        if take(0..4)? != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad magic; not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(take(4..8)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let variant = match take(8..9)?[0] {
            0 => Variant::Cvrp,
            1 => Variant::Tsptw,
            2 => Variant::Cvrptw,
            other => return Err(ModelError::Checkpoint(format!("unknown variant tag {other}"))),
        };
        let hidden_dim = u32::from_le_bytes(take(9..13)?.try_into().unwrap()) as usize;
        let feature_dim = u32::from_le_bytes(take(13..17)?.try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(take(17..25)?.try_into().unwrap());
        let len = u64::from_le_bytes(take(25..33)?.try_into().unwrap()) as usize;
        if feature_dim != FEATURE_DIM {
            return Err(ModelError::Checkpoint(format!(
                "feature width mismatch: checkpoint has {feature_dim}, expected {FEATURE_DIM}"
            )));
        }
        let dims = ModelDims {
            feature_dim,
            hidden_dim,
        };
        if len != dims.param_count() {
            return Err(ModelError::Checkpoint(format!(
                "parameter count {len} does not match hidden_dim {hidden_dim}"
            )));
        }
        let data = take(33..33 + len * 8)?;
        let flat: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((
            ModelParams { dims, flat },
            CheckpointHeader {
                variant,
                hidden_dim,
                feature_dim,
                seed,
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub variant: Variant,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let dims = ModelDims::new(16);
        let l = dims.layout();
        assert_eq!(l.w_emb, 0);
        assert_eq!(l.total, 16 * 8 + 16 + 3 * 256 + 17 + 17 + 2 * 256);
        assert_eq!(dims.param_count(), l.total);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let dims = ModelDims::new(8);
        let a = ModelParams::init(dims, 5);
        let b = ModelParams::init(dims, 5);
        assert_eq!(a.flat(), b.flat());
        let bound = 1.0 / (FEATURE_DIM as f64).sqrt();
        for &w in a.block(0, 8 * FEATURE_DIM) {
            assert!(w.abs() <= bound);
        }
        let c = ModelParams::init(dims, 6);
        assert_ne!(a.flat(), c.flat());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = ModelParams::init(ModelDims::new(12), 3);
        params.save(&path, Variant::Cvrptw, 3).unwrap();
        let (loaded, header) = ModelParams::load(&path).unwrap();
        assert_eq!(params.flat(), loaded.flat());
        assert_eq!(header.variant, Variant::Cvrptw);
        assert_eq!(header.hidden_dim, 12);
        assert_eq!(header.seed, 3);
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = ModelParams::init(ModelDims::new(12), 3);
        params.save(&path, Variant::Cvrp, 3).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Claim a different hidden width than the payload provides.
        bytes[9..13].copy_from_slice(&64u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = ModelParams::load(&path).unwrap_err();
        assert!(matches!(err, ModelError::Checkpoint(_)));
    }
}
