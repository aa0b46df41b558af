//! Score-function estimator of the Jacobian of the ratio ranking with
//! respect to the model parameters.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::models::{GenerativeModel, Period};
use crate::ranking::{sample_shares, SampleBatch};

/// Samples paired with their scores `d log p(y_m) / d phi`.
#[derive(Debug, Clone)]
pub struct ScoreBatch {
    samples: SampleBatch,
    scores: Array2<f64>,
}

impl ScoreBatch {
    /// `scores` is `M x P`, one row per sample.
    pub fn new(samples: SampleBatch, scores: Array2<f64>) -> Result<Self> {
        if scores.nrows() != samples.n_samples() {
            return Err(Error::shape(format!(
                "{} score rows for {} samples",
                scores.nrows(),
                samples.n_samples()
            )));
        }
        if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite score entry {bad}")));
        }
        Ok(ScoreBatch { samples, scores })
    }

    /// Scores each sample under `model`.
    pub fn from_model(model: &dyn GenerativeModel, period: &Period<'_>, samples: SampleBatch) -> Result<Self> {
        let p = model.n_params();
        let mut scores = Array2::zeros((samples.n_samples(), p));
        for (m, mut row) in scores.rows_mut().into_iter().enumerate() {
            let slice = row.as_slice_mut().expect("standard layout");
            model.accumulate_grad_logpdf(period, samples.row(m), 1.0, slice)?;
        }
        ScoreBatch::new(samples, scores)
    }

    pub fn samples(&self) -> &SampleBatch {
        &self.samples
    }

    pub fn scores(&self) -> ArrayView2<'_, f64> {
        self.scores.view()
    }

    pub fn n_params(&self) -> usize {
        self.scores.ncols()
    }
}

/// `(1/M) sum_m score_m (y_m / (1 . y_m))^T`, a `P x S` matrix.
pub fn score_function_grad(batch: &ScoreBatch) -> Array2<f64> {
    let (m_count, s) = (batch.samples.n_samples(), batch.samples.n_sites());
    let mut out = Array2::zeros((batch.n_params(), s));
    let mut share = vec![0.0; s];
    for m in 0..m_count {
        sample_shares(batch.samples.row(m), &mut share);
        let score = batch.scores.row(m);
        for (mut out_row, &sc) in out.rows_mut().into_iter().zip(score) {
            if sc != 0.0 {
                for (o, sh) in out_row.iter_mut().zip(&share) {
                    *o += sc * sh;
                }
            }
        }
    }
    out / m_count as f64
}

/// Parameter gradient from the three chain factors: `grad_r` is `P x S`
/// (`d r_c / d phi`), `jac_b` is `S x S` with entry `(a, c) = d b_a / d r_c`,
/// and `grad_b` is `dL / d b`. Returns `grad_r . jac_b^T . grad_b`.
pub fn chain_grad_phi(
    grad_r: ArrayView2<'_, f64>,
    jac_b: ArrayView2<'_, f64>,
    grad_b: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    let s = grad_b.len();
    if jac_b.dim() != (s, s) || grad_r.ncols() != s {
        return Err(Error::shape(format!(
            "cannot chain {:?} x {:?} x {}",
            grad_r.dim(),
            jac_b.dim(),
            s
        )));
    }
    let grad_r_vec = jac_b.t().dot(&grad_b);
    Ok(grad_r.dot(&grad_r_vec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn batch(rows: &[Vec<f64>], scores: Array2<f64>) -> ScoreBatch {
        ScoreBatch::new(SampleBatch::from_rows(rows).unwrap(), scores).unwrap()
    }

    #[test]
    fn single_sample_is_outer_product() {
        let b = batch(&[vec![1.0, 3.0]], array![[2.0, -1.0, 0.5]]);
        let g = score_function_grad(&b);
        assert_eq!(g, array![[0.5, 1.5], [-0.25, -0.75], [0.125, 0.375]]);
    }

    #[test]
    fn all_zero_sample_contributes_nothing() {
        let b = batch(&[vec![0.0, 0.0], vec![2.0, 2.0]], array![[5.0], [1.0]]);
        assert_eq!(score_function_grad(&b), array![[0.25, 0.25]]);
    }

    #[test]
    fn shape_and_finiteness_checked() {
        let s = SampleBatch::from_rows(&[vec![1.0]]).unwrap();
        assert!(ScoreBatch::new(s.clone(), Array2::zeros((2, 1))).is_err());
        assert!(ScoreBatch::new(s, array![[f64::NAN]]).is_err());
    }

    #[test]
    fn chain_examples() {
        let grad_r = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]];
        let jac = array![[0.2, -0.1, 0.0], [0.3, 0.4, -0.2], [-0.5, 0.1, 0.6]];
        let zero = chain_grad_phi(grad_r.view(), jac.view(), Array1::zeros(3).view()).unwrap();
        assert_eq!(zero, array![0.0, 0.0]);

        let gb = array![1.0, -2.0, 0.5];
        let ident = chain_grad_phi(grad_r.view(), Array2::eye(3).view(), gb.view()).unwrap();
        assert_eq!(ident, grad_r.dot(&gb));

        // Element-wise triple sum: out_p = sum_c sum_a grad_r[p][c] jac[a][c] gb[a].
        let out = chain_grad_phi(grad_r.view(), jac.view(), gb.view()).unwrap();
        for p in 0..2 {
            let mut expected = 0.0;
            for c in 0..3 {
                for a in 0..3 {
                    expected += grad_r[[p, c]] * jac[[a, c]] * gb[a];
                }
            }
            assert!((out[p] - expected).abs() < 1e-14);
        }
        assert!(chain_grad_phi(grad_r.view(), jac.view(), array![1.0, 2.0].view()).is_err());
    }
}
