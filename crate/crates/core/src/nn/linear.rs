use ndarray::{Array2, Axis};
use rand::Rng;

use super::param::{join_path, normal_matrix, Param, Parameters};
use crate::real::Real;

/// Affine map on row vectors: `y = x·W + b`, with `W` stored as `in × out`.
#[derive(Clone, Debug)]
pub struct Linear<F> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
}

impl<F: Real> Linear<F> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, bias: bool, std: f64, rng: &mut R) -> Self {
        Linear {
            weight: Param::new(normal_matrix(input, output, std, rng)),
            bias: bias.then(|| Param::zeros(1, output)),
        }
    }

    /// Fan-in scaled initialization.
    pub fn xavier<R: Rng + ?Sized>(input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        Self::new(input, output, bias, 1.0 / (input as f64).sqrt(), rng)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let y = x.dot(&self.weight.value);
        match &self.bias {
            Some(b) => y + &b.value,
            None => y,
        }
    }

    /// Accumulates parameter gradients when `track` is set and returns `dL/dx`.
    pub fn backward(&mut self, x: &Array2<F>, dy: &Array2<F>, track: bool) -> Array2<F> {
        if track {
            self.weight.grad += &x.t().dot(dy);
            if let Some(b) = &mut self.bias {
                b.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
        }
        dy.dot(&self.weight.value.t())
    }
}

impl<F: Real> Parameters<F> for Linear<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        out.push((join_path(prefix, "weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((join_path(prefix, "bias"), b));
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        out.push((join_path(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join_path(prefix, "bias"), b));
        }
    }
}
