use ndarray::{Array2, Axis};

use super::param::{join_path, Param, Parameters};
use crate::real::Real;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalization over the feature axis with learnable gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm<F> {
    pub gain: Param<F>,
    pub bias: Param<F>,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    inv_std: Vec<F>,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Param::ones(1, dim),
            bias: Param::zeros(1, dim),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let d = F::from_usize(x.ncols()).unwrap();
        let eps = F::of(LAYER_NORM_EPS);
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<F>() / d;
            let s = F::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * s);
            inv_std.push(s);
        }
        let y = &xhat * &self.gain.value + &self.bias.value;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache<F>, dy: &Array2<F>, track: bool) -> Array2<F> {
        if track {
            self.gain.grad += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
            self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        let d = F::from_usize(dy.ncols()).unwrap();
        let dxhat = dy * &self.gain.value;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
            let g = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let sum_g = g.sum();
            let sum_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>();
            let s = cache.inv_std[i] / d;
            for j in 0..out.len() {
                out[j] = s * (d * g[j] - sum_g - xh[j] * sum_gx);
            }
        }
        dx
    }
}

impl<F: Real> Parameters<F> for LayerNorm<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        out.push((join_path(prefix, "gain"), &self.gain));
        out.push((join_path(prefix, "bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        out.push((join_path(prefix, "gain"), &mut self.gain));
        out.push((join_path(prefix, "bias"), &mut self.bias));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalized_rows_have_zero_mean_unit_variance() {
        let ln = LayerNorm::<f64>::new(4);
        let (y, _) = ln.forward(&array![[1.0, 2.0, 3.0, 4.0], [-2.0, 0.0, 0.0, 10.0]]);
        for row in y.rows() {
            let mean = row.sum() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut ln = LayerNorm::<f64>::new(3);
        ln.gain.value = array![[1.5, -0.5, 2.0]];
        ln.bias.value = array![[0.1, 0.2, 0.3]];
        let x = array![[0.3, -1.1, 0.8], [2.0, 0.5, -0.4]];
        let w = array![[0.7, -0.2, 1.3], [0.4, 0.9, -1.0]];
        let loss = |ln: &LayerNorm<f64>, x: &Array2<f64>| (&ln.forward(x).0 * &w).sum();
        let (_, cache) = ln.forward(&x);
        let dx = ln.backward(&cache, &w, true);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (loss(&ln, &xp) - loss(&ln, &xm)) / (2.0 * h);
                assert!((fd - dx[[i, j]]).abs() < 1e-7);
            }
        }
    }
}
