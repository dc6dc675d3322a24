//! Temporal tokenization: split slot embeddings into fixed-length segments,
//! attend within each segment, pool every segment to a single token, then
//! attend across segment tokens.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionStack, BlockCache, Mode};
use crate::error::{Error, Result};
use crate::nn::{join_path, normal_matrix, softmax_rows, softmax_rows_backward, Linear, Param, Parameters};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub segment_len: usize,
}

impl SegmentationConfig {
    pub fn num_segments(&self, t: usize) -> Result<usize> {
        if self.segment_len == 0 || t == 0 || t % self.segment_len != 0 {
            return Err(Error::Shape(format!(
                "history length {t} is not a positive multiple of segment length {}",
                self.segment_len
            )));
        }
        Ok(t / self.segment_len)
    }
}

/// Non-overlapping row views `[i·L, (i+1)·L)` of `e`.
pub fn segment<'a, F: Real>(e: &'a Array2<F>, cfg: &SegmentationConfig) -> Result<Vec<ArrayView2<'a, F>>> {
    let n = cfg.num_segments(e.nrows())?;
    let l = cfg.segment_len;
    Ok((0..n).map(|i| e.slice(s![i * l..(i + 1) * l, ..])).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenStage {
    RawPooled,
    InterRefined,
    SemanticCombined,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentToken<F> {
    pub vector: Array1<F>,
    pub stage: TokenStage,
    pub segment_index: usize,
}

impl<F: Real> SegmentToken<F> {
    /// Replaces the vector and moves to a later stage; stages never go back.
    pub fn advance(&mut self, stage: TokenStage, vector: Array1<F>) -> Result<()> {
        if stage <= self.stage {
            return Err(Error::Shape(format!(
                "token {} cannot move from {:?} to {:?}",
                self.segment_index, self.stage, stage
            )));
        }
        self.stage = stage;
        self.vector = vector;
        Ok(())
    }
}

/// Single-query attention pooling.
#[derive(Clone, Debug)]
pub struct Pooler<F> {
    pub query: Param<F>,
    pub w_k: Linear<F>,
    pub w_v: Linear<F>,
}

#[derive(Clone, Debug)]
pub struct PoolCache<F> {
    x: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    weights: Array2<F>,
}

impl<F> PoolCache<F> {
    /// `1 × L` pooling weights.
    pub fn weights(&self) -> &Array2<F> {
        &self.weights
    }
}

impl<F: Real> Pooler<F> {
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Pooler {
            query: Param::new(normal_matrix(1, dim, 1.0, rng)),
            w_k: Linear::xavier(dim, dim, false, rng),
            w_v: Linear::xavier(dim, dim, false, rng),
        }
    }

    fn scale(&self) -> F {
        F::of(1.0 / (self.query.value.ncols() as f64).sqrt())
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> Result<(Array1<F>, PoolCache<F>)> {
        if x.nrows() == 0 || x.ncols() != self.query.value.ncols() {
            return Err(Error::Shape(format!(
                "pooling input {:?} incompatible with dim {}",
                x.dim(),
                self.query.value.ncols()
            )));
        }
        let x = x.to_owned();
        let k = self.w_k.forward(&x);
        let v = self.w_v.forward(&x);
        let scores = self.query.value.dot(&k.t()) * self.scale();
        let weights = softmax_rows(&scores);
        let out = weights.dot(&v).row(0).to_owned();
        Ok((out, PoolCache { x, k, v, weights }))
    }

    pub fn backward(&mut self, cache: &PoolCache<F>, dout: &Array1<F>) -> Array2<F> {
        let dout = dout.view().insert_axis(Axis(0));
        let dv = cache.weights.t().dot(&dout);
        let dw = dout.dot(&cache.v.t());
        let ds = softmax_rows_backward(&cache.weights, &dw) * self.scale();
        self.query.grad += &ds.dot(&cache.k);
        let dk = ds.t().dot(&self.query.value);
        let mut dx = self.w_k.backward(&cache.x, &dk, true);
        dx += &self.w_v.backward(&cache.x, &dv, true);
        dx
    }
}

impl<F: Real> Parameters<F> for Pooler<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        out.push((join_path(prefix, "query"), &self.query));
        self.w_k.visit(&join_path(prefix, "w_k"), out);
        self.w_v.visit(&join_path(prefix, "w_v"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        out.push((join_path(prefix, "query"), &mut self.query));
        self.w_k.visit_mut(&join_path(prefix, "w_k"), out);
        self.w_v.visit_mut(&join_path(prefix, "w_v"), out);
    }
}

pub fn intra_attend<F: Real, R: Rng + ?Sized>(
    segment: &ArrayView2<F>,
    stack: &AttentionStack<F>,
    mode: Mode,
    rng: &mut R,
) -> Result<(Array2<F>, Vec<BlockCache<F>>)> {
    stack.forward(&segment.to_owned(), mode, rng)
}

pub fn inter_attend<F: Real, R: Rng + ?Sized>(
    tokens: &Array2<F>,
    stack: &AttentionStack<F>,
    mode: Mode,
    rng: &mut R,
) -> Result<(Array2<F>, Vec<BlockCache<F>>)> {
    stack.forward(tokens, mode, rng)
}

/// Intra stack (shared by all segments), pooler and inter stack. With
/// `hierarchical = false` both attention stages are skipped and segments are
/// pooled directly.
#[derive(Clone, Debug)]
pub struct Tokenizer<F> {
    pub segmentation: SegmentationConfig,
    pub hierarchical: bool,
    pub intra: AttentionStack<F>,
    pub pooler: Pooler<F>,
    pub inter: AttentionStack<F>,
}

#[derive(Clone, Debug)]
pub struct TokenizerCache<F> {
    intra: Vec<Vec<BlockCache<F>>>,
    pools: Vec<PoolCache<F>>,
    inter: Vec<BlockCache<F>>,
    segment_len: usize,
}

impl<F> TokenizerCache<F> {
    pub fn pool_caches(&self) -> &[PoolCache<F>] {
        &self.pools
    }
}

impl<F: Real> Tokenizer<F> {
    /// Returns `N × D` tokens (inter-refined, or raw-pooled when not
    /// hierarchical).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        e: &Array2<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<F>, TokenizerCache<F>)> {
        let segments = segment(e, &self.segmentation)?;
        let mut tokens = Array2::zeros((segments.len(), e.ncols()));
        let mut intra = Vec::new();
        let mut pools = Vec::with_capacity(segments.len());
        for (i, seg) in segments.iter().enumerate() {
            let pooled = if self.hierarchical {
                let (attended, caches) = intra_attend(seg, &self.intra, mode, rng)?;
                intra.push(caches);
                self.pooler.forward(&attended.view())?
            } else {
                self.pooler.forward(seg)?
            };
            tokens.row_mut(i).assign(&pooled.0);
            pools.push(pooled.1);
        }
        let (refined, inter) = if self.hierarchical {
            inter_attend(&tokens, &self.inter, mode, rng)?
        } else {
            (tokens, Vec::new())
        };
        Ok((
            refined,
            TokenizerCache {
                intra,
                pools,
                inter,
                segment_len: self.segmentation.segment_len,
            },
        ))
    }

    /// Returns `dL/dE` for the `T × D` slot embeddings.
    pub fn backward(&mut self, cache: &TokenizerCache<F>, dtokens: &Array2<F>) -> Array2<F> {
        let dtokens = if self.hierarchical {
            self.inter.backward(&cache.inter, dtokens, true)
        } else {
            dtokens.clone()
        };
        let l = cache.segment_len;
        let mut de = Array2::zeros((l * cache.pools.len(), dtokens.ncols()));
        for (i, pool) in cache.pools.iter().enumerate() {
            let mut dseg = self.pooler.backward(pool, &dtokens.row(i).to_owned());
            if self.hierarchical {
                dseg = self.intra.backward(&cache.intra[i], &dseg, true);
            }
            de.slice_mut(s![i * l..(i + 1) * l, ..]).assign(&dseg);
        }
        de
    }

    /// Wraps forward output rows as stage-tagged tokens.
    pub fn tokens(&self, rows: &Array2<F>) -> Vec<SegmentToken<F>> {
        let stage = if self.hierarchical {
            TokenStage::InterRefined
        } else {
            TokenStage::RawPooled
        };
        rows.rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| SegmentToken {
                vector: r.to_owned(),
                stage,
                segment_index: i,
            })
            .collect()
    }
}

impl<F: Real> Parameters<F> for Tokenizer<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        if self.hierarchical {
            self.intra.visit(&join_path(prefix, "intra"), out);
        }
        self.pooler.visit(&join_path(prefix, "pooler"), out);
        if self.hierarchical {
            self.inter.visit(&join_path(prefix, "inter"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        if self.hierarchical {
            self.intra.visit_mut(&join_path(prefix, "intra"), out);
        }
        self.pooler.visit_mut(&join_path(prefix, "pooler"), out);
        if self.hierarchical {
            self.inter.visit_mut(&join_path(prefix, "inter"), out);
        }
    }
}
