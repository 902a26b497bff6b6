//! Set-to-set network producing one virtual prediction per agent.
//!
//! Layout: a two-layer per-agent embedding, `n_blocks` single-head self-attention
//! blocks (attention + residual, feed-forward + residual), and a per-agent linear
//! head. Nothing depends on an agent's position in the input, so permuting the
//! agents permutes the outputs.

mod checkpoint;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use model::{backward, forward, forward_features, forward_with_cache, ForwardCache};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ProblemInstance;

/// Input and output scale in kW (largest nominal capability).
pub const POWER_SCALE: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperParams {
    pub d_in: usize,
    pub d_h: usize,
    pub n_blocks: usize,
    pub d_out: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            d_in: 2,
            d_h: 64,
            n_blocks: 1,
            d_out: 1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_in", self.d_in),
            ("d_h", self.d_h),
            ("n_blocks", self.n_blocks),
            ("d_out", self.d_out),
        ] {
            if v == 0 {
                return Err(Error::HyperParams(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Affine map `x W + b` applied row-wise; `b` is a 1×out row.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Linear {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: DMatrix::zeros(fan_in, fan_out),
            b: DMatrix::zeros(1, fan_out),
        }
    }

    fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit));
        Linear {
            w,
            b: DMatrix::zeros(1, fan_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: HyperParams,
    pub embed1: Linear,
    pub embed2: Linear,
    pub blocks: Vec<AttentionBlock>,
    pub head: Linear,
}

impl ModelParams {
    pub fn zeros(hyper: HyperParams) -> Self {
        let d = hyper.d_h;
        ModelParams {
            hyper,
            embed1: Linear::zeros(hyper.d_in, d),
            embed2: Linear::zeros(d, d),
            blocks: (0..hyper.n_blocks)
                .map(|_| AttentionBlock {
                    query: Linear::zeros(d, d),
                    key: Linear::zeros(d, d),
                    value: Linear::zeros(d, d),
                    output: Linear::zeros(d, d),
                    ff1: Linear::zeros(d, d),
                    ff2: Linear::zeros(d, d),
                })
                .collect(),
            head: Linear::zeros(d, hyper.d_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hyper)
    }

    fn linears(&self) -> Vec<(String, &Linear)> {
        let mut out = vec![("embed1".to_string(), &self.embed1), ("embed2".to_string(), &self.embed2)];
        for (k, b) in self.blocks.iter().enumerate() {
            for (name, l) in [
                ("query", &b.query),
                ("key", &b.key),
                ("value", &b.value),
                ("output", &b.output),
                ("ff1", &b.ff1),
                ("ff2", &b.ff2),
            ] {
                out.push((format!("blocks.{k}.{name}"), l));
            }
        }
        out.push(("head".to_string(), &self.head));
        out
    }

    fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut out = vec![&mut self.embed1, &mut self.embed2];
        for b in &mut self.blocks {
            out.extend([
                &mut b.query,
                &mut b.key,
                &mut b.value,
                &mut b.output,
                &mut b.ff1,
                &mut b.ff2,
            ]);
        }
        out.push(&mut self.head);
        out
    }

    /// Every weight and bias with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &DMatrix<f64>)> {
        self.linears()
            .into_iter()
            .flat_map(|(name, l)| [(format!("{name}.w"), &l.w), (format!("{name}.b"), &l.b)])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        self.linears_mut()
            .into_iter()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All scalars flattened in tensor order (column-major within a tensor).
    pub fn flatten(&self) -> Vec<f64> {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect()
    }

    pub fn scalar_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for t in self.tensors_mut() {
            if index < t.len() {
                return Some(&mut t.as_mut_slice()[index]);
            }
            index -= t.len();
        }
        None
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Hash of the exact parameter bits, used to detect stale forward caches.
    pub fn fingerprint(&self) -> u64 {
        const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0xcbf2_9ce4_8422_2325, |h, x| (h ^ x.to_bits()).wrapping_mul(FNV_PRIME))
    }

    pub fn check_consistent(&self) -> Result<()> {
        self.hyper.validate()?;
        let reference = ModelParams::zeros(self.hyper);
        for ((name, got), (_, want)) in self.named_tensors().iter().zip(reference.named_tensors()) {
            if got.shape() != want.shape() {
                return Err(Error::HyperParams(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        if self.blocks.len() != self.hyper.n_blocks {
            return Err(Error::HyperParams("block count disagrees with n_blocks".into()));
        }
        Ok(())
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_params(hyper: HyperParams, seed: u64) -> Result<ModelParams> {
    hyper.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = hyper.d_h;
    let embed1 = Linear::glorot(hyper.d_in, d, &mut rng);
    let embed2 = Linear::glorot(d, d, &mut rng);
    let blocks = (0..hyper.n_blocks)
        .map(|_| AttentionBlock {
            query: Linear::glorot(d, d, &mut rng),
            key: Linear::glorot(d, d, &mut rng),
            value: Linear::glorot(d, d, &mut rng),
            output: Linear::glorot(d, d, &mut rng),
            ff1: Linear::glorot(d, d, &mut rng),
            ff2: Linear::glorot(d, d, &mut rng),
        })
        .collect();
    let head = Linear::glorot(d, hyper.d_out, &mut rng);
    Ok(ModelParams {
        hyper,
        embed1,
        embed2,
        blocks,
        head,
    })
}

/// Per-agent features `[p_cap, p_dem] / 25 kW`, one row per agent.
pub fn normalize_inputs(instance: &ProblemInstance) -> DMatrix<f64> {
    DMatrix::from_fn(instance.len(), 2, |i, j| {
        let a = &instance.agents[i];
        if j == 0 {
            a.p_cap / POWER_SCALE
        } else {
            a.p_dem / POWER_SCALE
        }
    })
}
