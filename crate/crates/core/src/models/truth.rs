use rand_distr::{Distribution, StandardNormal};

use super::{check_len, GenerativeModel, ParamBlock, Period};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::special::std_normal_cdf;

/// Ground-truth generator for the synthetic 1D task: `round(N(mean_s, sigma^2))`
/// clipped at zero, independently per site.
#[derive(Debug, Clone)]
pub struct QuantizedGaussianTruth {
    means: Vec<f64>,
    sigma: f64,
}

impl QuantizedGaussianTruth {
    pub fn new(means: Vec<f64>, sigma: f64) -> Result<Self> {
        if means.is_empty() || means.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::invalid("site means must be non-negative"));
        }
        if !(sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        Ok(QuantizedGaussianTruth { means, sigma })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// P(y = k) for one site.
    pub fn pmf(&self, site: usize, k: f64) -> f64 {
        let (m, s) = (self.means[site], self.sigma);
        let upper = std_normal_cdf((k + 0.5 - m) / s);
        if k == 0.0 {
            upper
        } else {
            upper - std_normal_cdf((k - 0.5 - m) / s)
        }
    }
}

impl GenerativeModel for QuantizedGaussianTruth {
    fn family(&self) -> &'static str {
        "quantized_gaussian"
    }

    fn n_sites(&self) -> usize {
        self.means.len()
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn set_params(&mut self, phi: &[f64]) -> Result<()> {
        check_len("truth parameters", phi.len(), 0)
    }

    fn param_blocks(&self) -> Vec<ParamBlock> {
        Vec::new()
    }

    fn sample_into(&self, _period: &Period<'_>, rng: &mut Rng, out: &mut [f64]) {
        for (slot, m) in out.iter_mut().zip(&self.means) {
            let z: f64 = StandardNormal.sample(rng);
            *slot = (m + self.sigma * z).round().max(0.0);
        }
    }

    fn logpdf(&self, _period: &Period<'_>, y: &[f64]) -> Result<f64> {
        check_len("outcome", y.len(), self.means.len())?;
        let mut total = 0.0;
        for (s, &v) in y.iter().enumerate() {
            if !(v >= 0.0 && v.fract() == 0.0) {
                return Err(Error::Domain(format!("y[{s}] = {v} is not a count")));
            }
            total += self.pmf(s, v).ln();
        }
        Ok(total)
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
