//! Location head: projects hidden states at future positions to logits over
//! grid cells, plus cross-entropy and top-k helpers.

use ndarray::{s, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{log_softmax_rows, softmax_rows, Linear, Param, Parameters};
use crate::real::Real;

/// Probabilities below this are clamped before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Clone, Debug)]
pub struct HeadParams<F> {
    pub proj: Linear<F>,
}

impl<F: Real> HeadParams<F> {
    pub fn new<R: Rng + ?Sized>(dim: usize, vocab: usize, rng: &mut R) -> Self {
        HeadParams {
            proj: Linear::xavier(dim, vocab, true, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.proj.output_dim()
    }

    /// Logits for the last `horizon` rows of `h`.
    pub fn logits(&self, h: &Array2<F>, horizon: usize) -> Result<Array2<F>> {
        if horizon == 0 || horizon > h.nrows() {
            return Err(Error::Shape(format!("horizon {horizon} with {} hidden rows", h.nrows())));
        }
        if h.ncols() != self.proj.input_dim() {
            return Err(Error::Shape(format!(
                "hidden width {} but head expects {}",
                h.ncols(),
                self.proj.input_dim()
            )));
        }
        let start = h.nrows() - horizon;
        Ok(self.proj.forward(&h.slice(s![start.., ..]).to_owned()))
    }

    /// `H × |L|` row-stochastic matrix.
    pub fn predict_distribution(&self, h: &Array2<F>, horizon: usize) -> Result<Array2<F>> {
        Ok(softmax_rows(&self.logits(h, horizon)?))
    }

    /// Backward of [`HeadParams::logits`]; returns `dL/dh` for all rows of `h`.
    pub fn backward(&mut self, h: &Array2<F>, dlogits: &Array2<F>) -> Array2<F> {
        let start = h.nrows() - dlogits.nrows();
        let tail = h.slice(s![start.., ..]).to_owned();
        let dtail = self.proj.backward(&tail, dlogits, true);
        let mut dh = Array2::zeros(h.raw_dim());
        dh.slice_mut(s![start.., ..]).assign(&dtail);
        dh
    }
}

impl<F: Real> Parameters<F> for HeadParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        self.proj.visit(prefix, out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        self.proj.visit_mut(prefix, out);
    }
}

fn present_count(targets: &[Option<u32>]) -> Result<usize> {
    let n = targets.iter().flatten().count();
    if n == 0 {
        return Err(Error::NoTargets("every target in the horizon is unobserved".into()));
    }
    Ok(n)
}

/// Mean of `-ln p(target)` over present targets, with probabilities
/// clamped at [`PROB_FLOOR`].
pub fn cross_entropy_loss<F: Real>(probs: &Array2<F>, targets: &[Option<u32>]) -> Result<f64> {
    if probs.nrows() != targets.len() {
        return Err(Error::Shape(format!("{} rows vs {} targets", probs.nrows(), targets.len())));
    }
    let n = present_count(targets)?;
    let mut total = 0.0;
    for (row, t) in probs.rows().into_iter().zip(targets) {
        if let Some(t) = t {
            let p = row
                .get(*t as usize)
                .ok_or_else(|| Error::Index(format!("target {t} outside vocabulary")))?
                .to_f64_lossy();
            total -= p.max(PROB_FLOOR).ln();
        }
    }
    Ok(total / n as f64)
}

/// Summed negative log-likelihood from logits and its gradient scaled by
/// `1/normalizer`. Returns `(sum_nll, present, dlogits)`.
pub fn nll_and_grad<F: Real>(
    logits: &Array2<F>,
    targets: &[Option<u32>],
    normalizer: f64,
) -> Result<(f64, usize, Array2<F>)> {
    let log_probs = log_softmax_rows(logits);
    let mut grad = log_probs.mapv(|v| v.exp());
    let mut sum = 0.0;
    let mut present = 0;
    let scale = F::of(1.0 / normalizer);
    for (i, t) in targets.iter().enumerate() {
        match t {
            Some(t) => {
                let t = *t as usize;
                if t >= logits.ncols() {
                    return Err(Error::Index(format!("target {t} outside vocabulary")));
                }
                sum -= log_probs[[i, t]].to_f64_lossy();
                present += 1;
                grad[[i, t]] -= F::one();
                grad.row_mut(i).mapv_inplace(|v| v * scale);
            }
            None => grad.row_mut(i).fill(F::zero()),
        }
    }
    Ok((sum, present, grad))
}

/// Ids of the `k` most probable cells; exact ties go to the lower id.
pub fn top_k<F: Real>(row: &[F], k: usize) -> Result<Vec<u32>> {
    if k == 0 || k > row.len() {
        return Err(Error::Index(format!("k={k} outside 1..={}", row.len())));
    }
    let mut ids: Vec<u32> = (0..row.len() as u32).collect();
    ids.sort_by(|&a, &b| {
        row[b as usize]
            .partial_cmp(&row[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids.truncate(k);
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::normal_matrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_is_uniform() {
        let mut head = HeadParams::<f64>::new(8, 400, &mut ChaCha8Rng::seed_from_u64(1));
        head.proj.weight.value.fill(0.0);
        let h: Array2<f64> = normal_matrix(55, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let p = head.predict_distribution(&h, 48).unwrap();
        assert_eq!(p.dim(), (48, 400));
        assert!(p.iter().all(|&v| (v - 1.0 / 400.0).abs() < 1e-15));
        let targets: Vec<Option<u32>> = (0..48).map(|i| (i % 2 == 0).then_some(i)).collect();
        let loss = cross_entropy_loss(&p, &targets).unwrap();
        assert!((loss - 400f64.ln()).abs() < 1e-12);
        assert!((loss - 5.9915).abs() < 1e-4);
    }

    #[test]
    fn shift_invariance() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut head = HeadParams::<f64>::new(8, 10, &mut r);
        let h: Array2<f64> = normal_matrix(4, 8, 1.0, &mut r);
        let p = head.predict_distribution(&h, 2).unwrap();
        head.proj.bias.as_mut().unwrap().value += 7.5;
        let q = head.predict_distribution(&h, 2).unwrap();
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn one_hot_gives_zero_loss_and_masking_keeps_mean_scale() {
        let p = ndarray::array![[1.0f64, 0.0], [0.0, 1.0]];
        assert_eq!(cross_entropy_loss(&p, &[Some(0), Some(1)]).unwrap(), 0.0);
        let u = Array2::from_elem((4, 4), 0.25f64);
        let full = cross_entropy_loss(&u, &[Some(0), Some(1), Some(2), Some(3)]).unwrap();
        let half = cross_entropy_loss(&u, &[Some(0), None, Some(2), None]).unwrap();
        assert!((full - half).abs() < 1e-15);
        assert!(matches!(cross_entropy_loss(&u, &[None; 4]), Err(Error::NoTargets(_))));
        let zero = ndarray::array![[0.0f64, 1.0]];
        assert!(cross_entropy_loss(&zero, &[Some(0)]).unwrap().is_finite());
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k(&[0.1f64, 0.5, 0.4], 2).unwrap(), vec![1, 2]);
        assert_eq!(top_k(&[0.25f64; 4], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(top_k(&[0.2f32, 0.3, 0.5], 3).unwrap().len(), 3);
        assert!(top_k(&[0.5f64, 0.5], 0).is_err());
        assert!(top_k(&[0.5f64, 0.5], 3).is_err());
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let logits = ndarray::array![[0.2f64, -1.0, 0.7], [1.5, 0.1, -0.3]];
        let targets = [Some(2), None];
        let (_, n, g) = nll_and_grad(&logits, &targets, 1.0).unwrap();
        assert_eq!(n, 1);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut lp = logits.clone();
                lp[[i, j]] += h;
                let mut lm = logits.clone();
                lm[[i, j]] -= h;
                let fd = (nll_and_grad(&lp, &targets, 1.0).unwrap().0 - nll_and_grad(&lm, &targets, 1.0).unwrap().0) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let head = HeadParams::<f32>::new(8, 37, &mut r);
            let h: Array2<f32> = normal_matrix(6, 8, scale, &mut r);
            let p = head.predict_distribution(&h, 5).unwrap();
            for row in p.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
