//! Frozen sequence model over continuous token vectors. Its weights never
//! receive updates, but gradients flow through it to upstream modules.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{AttentionStack, BlockCache, Mode};
use crate::error::{Error, Result};
use crate::nn::{Param, Parameters};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSource {
    SeededRandom { seed: u64 },
    File { path: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub source: WeightSource,
}

#[derive(Clone, Debug)]
pub struct Backbone<F> {
    pub spec: BackboneSpec,
    stack: AttentionStack<F>,
}

impl<F: Real> Backbone<F> {
    /// Seeded initialization; the two residual-writing projections of each
    /// block are scaled by `1/sqrt(2·depth)`.
    pub fn seeded(dim: usize, depth: usize, heads: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / ((2 * depth.max(1)) as f64).sqrt();
        let stack = AttentionStack::new(depth, dim, heads, 0.0, scale, &mut rng)?;
        Ok(Backbone {
            spec: BackboneSpec {
                dim,
                depth,
                heads,
                source: WeightSource::SeededRandom { seed },
            },
            stack,
        })
    }

    pub fn from_spec(spec: &BackboneSpec) -> Result<Self> {
        match &spec.source {
            WeightSource::SeededRandom { seed } => Self::seeded(spec.dim, spec.depth, spec.heads, *seed),
            WeightSource::File { path } => {
                let mut b = Self::seeded(spec.dim, spec.depth, spec.heads, 0)?;
                let tensors = crate::checkpoint::read_tensor_file(std::path::Path::new(path))?;
                b.load_tensors(&tensors)?;
                b.spec.source = spec.source.clone();
                Ok(b)
            }
        }
    }

    pub fn is_frozen(&self) -> bool {
        true
    }

    pub fn depth(&self) -> usize {
        self.stack.depth()
    }

    pub fn forward(&self, ce: &Array2<F>) -> Result<(Array2<F>, Vec<BlockCache<F>>)> {
        if ce.ncols() != self.spec.dim {
            return Err(Error::Shape(format!(
                "backbone width {} but input width {}",
                self.spec.dim,
                ce.ncols()
            )));
        }
        if self.stack.depth() == 0 {
            return Ok((ce.clone(), Vec::new()));
        }
        // the backbone never runs dropout, so the rng is never drawn from
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        self.stack.forward(ce, Mode::Eval, &mut unused)
    }

    /// Propagates `dL/dh` to `dL/dCE` without touching weight gradients.
    pub fn backward(&mut self, caches: &[BlockCache<F>], dh: &Array2<F>) -> Array2<F> {
        if caches.is_empty() {
            return dh.clone();
        }
        self.stack.backward(caches, dh, false)
    }

    /// SHA-256 over parameter names and their `f32` little-endian bytes.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, p) in self.stack.named_params() {
            h.update((name.len() as u32).to_le_bytes());
            h.update(name.as_bytes());
            for v in p.value.iter() {
                h.update((v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn weights(&self) -> Vec<(String, &Param<F>)> {
        self.stack.named_params()
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_count()
    }

    pub fn load_tensors(&mut self, tensors: &[(String, Array2<f32>)]) -> Result<()> {
        let mut params = self.stack.named_params_mut();
        if params.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "backbone expects {} tensors, file has {}",
                params.len(),
                tensors.len()
            )));
        }
        for ((name, p), (tname, t)) in params.iter_mut().zip(tensors) {
            if name != tname || p.value.dim() != t.dim() {
                return Err(Error::Checkpoint(format!("backbone tensor {tname} does not match {name}")));
            }
            p.value = t.mapv(|v| F::of(v as f64));
        }
        Ok(())
    }
}

/// Trainable / total parameter ratio.
pub fn trainable_fraction(trainable: usize, frozen: usize) -> f64 {
    let total = trainable + frozen;
    if total == 0 {
        return 0.0;
    }
    trainable as f64 / total as f64
}
