//! Pre-norm transformer block: multi-head self-attention followed by a
//! sigmoid-gated feed-forward network.
//!
//! ```text
//! A   = LN1(X)
//! Z   = A + Dropout(MultiHead(A))
//! B   = LN2(Z)
//! out = Z + Dropout(W2·GELU(W1·B) ⊙ σ(Wgate·B))
//! ```
//!
//! No positional term and no causal mask: the block is permutation
//! equivariant over tokens.

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    check_finite, dropout_mask, gelu, gelu_backward, join_path, sigmoid, softmax_rows,
    softmax_rows_backward, LayerNorm, LayerNormCache, Linear, Param, Parameters,
};
use crate::real::Real;

pub const FFN_EXPANSION: usize = 4;

/// Forward mode. Dropout is active only in `Train`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct AttentionBlock<F> {
    pub heads: usize,
    pub dropout: f64,
    pub ln1: LayerNorm<F>,
    pub w_q: Linear<F>,
    pub w_k: Linear<F>,
    pub w_v: Linear<F>,
    pub w_out: Linear<F>,
    pub ln2: LayerNorm<F>,
    pub w_1: Linear<F>,
    pub w_2: Linear<F>,
    pub w_gate: Linear<F>,
}

#[derive(Clone, Debug)]
pub struct BlockCache<F> {
    ln1: LayerNormCache<F>,
    a: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    concat: Array2<F>,
    attn_mask: Option<Array2<F>>,
    ln2: LayerNormCache<F>,
    b: Array2<F>,
    u: Array2<F>,
    g: Array2<F>,
    f: Array2<F>,
    gate: Array2<F>,
    ffn_mask: Option<Array2<F>>,
}

impl<F> BlockCache<F> {
    /// Attention probabilities per head, each `n × n`.
    pub fn attention_weights(&self) -> &[Array2<F>] {
        &self.probs
    }
}

impl<F: Real> AttentionBlock<F> {
    /// `residual_scale` multiplies the init std of the two projections that
    /// write into the residual stream (`w_out`, `w_2`).
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        heads: usize,
        dropout: f64,
        residual_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Shape(format!("model dim {dim} not divisible by {heads} heads")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::config("dropout", format!("rate {dropout} outside [0,1)")));
        }
        let hidden = FFN_EXPANSION * dim;
        let std_d = 1.0 / (dim as f64).sqrt();
        let std_h = 1.0 / (hidden as f64).sqrt();
        Ok(AttentionBlock {
            heads,
            dropout,
            ln1: LayerNorm::new(dim),
            w_q: Linear::new(dim, dim, false, std_d, rng),
            w_k: Linear::new(dim, dim, false, std_d, rng),
            w_v: Linear::new(dim, dim, false, std_d, rng),
            w_out: Linear::new(dim, dim, false, std_d * residual_scale, rng),
            ln2: LayerNorm::new(dim),
            w_1: Linear::new(dim, hidden, false, std_d, rng),
            w_2: Linear::new(hidden, dim, false, std_h * residual_scale, rng),
            w_gate: Linear::new(dim, dim, false, std_d, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.input_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Array2<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<F>, BlockCache<F>)> {
        let d = self.dim();
        if x.nrows() == 0 {
            return Err(Error::Shape("attention block needs at least one token".into()));
        }
        if x.ncols() != d {
            return Err(Error::Shape(format!("input width {} != block dim {d}", x.ncols())));
        }
        check_finite(x, "attention block input")?;

        let n = x.nrows();
        let dk = self.head_dim();
        let scale = F::of(1.0 / (dk as f64).sqrt());

        let (a, ln1) = self.ln1.forward(x);
        let q = self.w_q.forward(&a);
        let k = self.w_k.forward(&a);
        let v = self.w_v.forward(&a);

        let mut concat = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let p = softmax_rows(&scores);
            concat.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let mut m = self.w_out.forward(&concat);
        let train = mode == Mode::Train && self.dropout > 0.0;
        let attn_mask = train.then(|| dropout_mask::<F, R>(n, d, self.dropout, rng));
        if let Some(mask) = &attn_mask {
            m *= mask;
        }
        let z = &a + &m;

        let (b, ln2) = self.ln2.forward(&z);
        let u = self.w_1.forward(&b);
        let g = u.mapv(gelu);
        let f = self.w_2.forward(&g);
        let gate = self.w_gate.forward(&b).mapv(sigmoid);
        let mut y = &f * &gate;
        let ffn_mask = train.then(|| dropout_mask::<F, R>(n, d, self.dropout, rng));
        if let Some(mask) = &ffn_mask {
            y *= mask;
        }
        let out = &z + &y;

        Ok((
            out,
            BlockCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                concat,
                attn_mask,
                ln2,
                b,
                u,
                g,
                f,
                gate,
                ffn_mask,
            },
        ))
    }

    /// Returns `dL/dX`; parameter gradients accumulate only when `track` is set.
    pub fn backward(&mut self, cache: &BlockCache<F>, dout: &Array2<F>, track: bool) -> Array2<F> {
        let dk = self.head_dim();
        let scale = F::of(1.0 / (dk as f64).sqrt());

        // gated FFN branch
        let mut dy = dout.clone();
        if let Some(mask) = &cache.ffn_mask {
            dy *= mask;
        }
        let df = &dy * &cache.gate;
        let mut dt = &dy * &cache.f;
        Zip::from(&mut dt)
            .and(&cache.gate)
            .for_each(|d, &s| *d = *d * s * (F::one() - s));
        let dg = self.w_2.backward(&cache.g, &df, track);
        let du = gelu_backward(&cache.u, &dg);
        let mut db = self.w_1.backward(&cache.b, &du, track);
        db += &self.w_gate.backward(&cache.b, &dt, track);
        let dz = dout + &self.ln2.backward(&cache.ln2, &db, track);

        // attention branch
        let mut dm = dz.clone();
        if let Some(mask) = &cache.attn_mask {
            dm *= mask;
        }
        let dconcat = self.w_out.backward(&cache.concat, &dm, track);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dkm = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dk..(h + 1) * dk];
            let doh = dconcat.slice(cols);
            let dp = doh.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&doh));
            let ds = softmax_rows_backward(p, &dp) * scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dkm.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let mut da = dz;
        da += &self.w_q.backward(&cache.a, &dq, track);
        da += &self.w_k.backward(&cache.a, &dkm, track);
        da += &self.w_v.backward(&cache.a, &dv, track);
        self.ln1.backward(&cache.ln1, &da, track)
    }
}

impl<F: Real> Parameters<F> for AttentionBlock<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        self.ln1.visit(&join_path(prefix, "ln1"), out);
        self.w_q.visit(&join_path(prefix, "w_q"), out);
        self.w_k.visit(&join_path(prefix, "w_k"), out);
        self.w_v.visit(&join_path(prefix, "w_v"), out);
        self.w_out.visit(&join_path(prefix, "w_out"), out);
        self.ln2.visit(&join_path(prefix, "ln2"), out);
        self.w_1.visit(&join_path(prefix, "w_1"), out);
        self.w_2.visit(&join_path(prefix, "w_2"), out);
        self.w_gate.visit(&join_path(prefix, "w_gate"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        self.ln1.visit_mut(&join_path(prefix, "ln1"), out);
        self.w_q.visit_mut(&join_path(prefix, "w_q"), out);
        self.w_k.visit_mut(&join_path(prefix, "w_k"), out);
        self.w_v.visit_mut(&join_path(prefix, "w_v"), out);
        self.w_out.visit_mut(&join_path(prefix, "w_out"), out);
        self.ln2.visit_mut(&join_path(prefix, "ln2"), out);
        self.w_1.visit_mut(&join_path(prefix, "w_1"), out);
        self.w_2.visit_mut(&join_path(prefix, "w_2"), out);
        self.w_gate.visit_mut(&join_path(prefix, "w_gate"), out);
    }
}

/// Sequential composition of attention blocks.
#[derive(Clone, Debug)]
pub struct AttentionStack<F> {
    pub blocks: Vec<AttentionBlock<F>>,
}

impl<F: Real> AttentionStack<F> {
    pub fn new<R: Rng + ?Sized>(
        depth: usize,
        dim: usize,
        heads: usize,
        dropout: f64,
        residual_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|_| AttentionBlock::new(dim, heads, dropout, residual_scale, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(AttentionStack { blocks })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Array2<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<F>, Vec<BlockCache<F>>)> {
        if self.blocks.is_empty() {
            return Err(Error::Shape("attention stack has no blocks".into()));
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for block in &self.blocks {
            let (next, cache) = block.forward(&h, mode, rng)?;
            caches.push(cache);
            h = next;
        }
        Ok((h, caches))
    }

    pub fn backward(&mut self, caches: &[BlockCache<F>], dout: &Array2<F>, track: bool) -> Array2<F> {
        let mut grad = dout.clone();
        for (block, cache) in self.blocks.iter_mut().zip(caches).rev() {
            grad = block.backward(cache, &grad, track);
        }
        grad
    }
}

impl<F: Real> Parameters<F> for AttentionStack<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join_path(prefix, &i.to_string()), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join_path(prefix, &i.to_string()), out);
        }
    }
}

/// Sum over rows, used by tests and diagnostics.
pub fn row_sums<F: Real>(x: &Array2<F>) -> Vec<F> {
    x.sum_axis(Axis(1)).to_vec()
}
