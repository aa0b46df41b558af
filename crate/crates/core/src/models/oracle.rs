use ndarray::Array2;

use super::{check_len, GenerativeModel, ParamBlock, Period};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Point mass at the observed outcome of each period: a perfect-foresight
/// reference model with no parameters.
#[derive(Debug, Clone)]
pub struct PointMassModel {
    counts: Array2<f64>,
}

impl PointMassModel {
    /// `counts` is the `T x S` panel the model will reproduce.
    pub fn new(counts: Array2<f64>) -> Self {
        PointMassModel { counts }
    }

    fn row(&self, period: &Period<'_>) -> ndarray::ArrayView1<'_, f64> {
        self.counts.row(period.index)
    }
}

impl GenerativeModel for PointMassModel {
    fn family(&self) -> &'static str {
        "point_mass"
    }

    fn n_sites(&self) -> usize {
        self.counts.ncols()
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn set_params(&mut self, phi: &[f64]) -> Result<()> {
        check_len("point-mass parameters", phi.len(), 0)
    }

    fn param_blocks(&self) -> Vec<ParamBlock> {
        Vec::new()
    }

    fn sample_into(&self, period: &Period<'_>, _rng: &mut Rng, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(self.row(period)) {
            *o = *v;
        }
    }

    fn logpdf(&self, period: &Period<'_>, y: &[f64]) -> Result<f64> {
        check_len("outcome", y.len(), self.n_sites())?;
        if period.index >= self.counts.nrows() {
            return Err(Error::invalid(format!("period {} outside the panel", period.index)));
        }
        let hit = self.row(period).iter().zip(y).all(|(a, b)| a == b);
        Ok(if hit { 0.0 } else { f64::NEG_INFINITY })
    }

    fn accumulate_grad_logpdf(
        &self,
        period: &Period<'_>,
        y: &[f64],
        _weight: f64,
        _grad: &mut [f64],
    ) -> Result<f64> {
        self.logpdf(period, y)
    }
}
