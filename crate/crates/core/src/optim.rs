//! Adam with decoupled weight decay.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::real::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<F> {
    pub lr: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Array2<F>>,
    pub v: Vec<Array2<F>>,
}

impl<F: Real> AdamW<F> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// `θ ← θ − lr·m̂/(√v̂+ε) − lr·wd·θ`, moments from the gradients in
    /// `params` (which must keep the same order between calls).
    pub fn step(&mut self, params: &mut [(String, &mut Param<F>)]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| Array2::zeros(p.value.raw_dim())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::of(1.0 - BETA1.powi(t));
        let bc2 = F::of(1.0 - BETA2.powi(t));
        let (b1, b2, eps) = (F::of(BETA1), F::of(BETA2), F::of(EPS));
        let lr = F::of(self.lr);
        let decay = F::of(self.lr * self.weight_decay);
        for ((_, p), (m, v)) in params.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let p: &mut Param<F> = p;
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|theta, &g, m, v| {
                    *m = b1 * *m + (F::one() - b1) * g;
                    *v = b2 * *v + (F::one() - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps) - decay * *theta;
                });
        }
        Ok(())
    }
}
