//! Probabilistic count models behind a common generative contract.
//!
//! Every model carries a flat vector of *unconstrained* parameters `phi`;
//! constrained quantities (positive scales, simplex weights, correlations)
//! are derived from it through smooth bijections, so gradient descent can
//! move `phi` freely. Gradients returned by [`GenerativeModel`] are always
//! with respect to `phi`.

mod abc;
pub mod checkpoint;
mod negbin;
mod oracle;
mod tgmm;
mod truth;

pub use abc::{AbcDemoModel, AbcSiteType};
pub use negbin::{NegBinMixedEffects, NegBinParams};
pub use oracle::PointMassModel;
pub use tgmm::{TruncGaussMixture, TruncGaussMixtureParams, SIGMA_FLOOR};
pub use truth::QuantizedGaussianTruth;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranking::SampleBatch;
use crate::rng::{Rng, StreamKey};

/// Conditioning information for one time period.
#[derive(Debug, Clone, Copy)]
pub struct Period<'a> {
    /// Row of the panel this period came from.
    pub index: usize,
    /// Value of the time regressor.
    pub time: f64,
    /// Site-major `S x D` feature block, empty when the panel has no features.
    pub features: &'a [f64],
    pub n_features: usize,
}

impl<'a> Period<'a> {
    pub fn bare(index: usize) -> Self {
        Period {
            index,
            time: index as f64,
            features: &[],
            n_features: 0,
        }
    }

    pub fn site_features(&self, site: usize) -> &'a [f64] {
        if self.n_features == 0 {
            &[]
        } else {
            &self.features[site * self.n_features..(site + 1) * self.n_features]
        }
    }
}

/// Name and shape of one contiguous block of `phi`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    pub fn new(name: &'static str, shape: Vec<usize>) -> Self {
        ParamBlock { name, shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub trait GenerativeModel: Send + Sync {
    fn family(&self) -> &'static str;

    fn n_sites(&self) -> usize;

    fn params(&self) -> &[f64];

    fn set_params(&mut self, phi: &[f64]) -> Result<()>;

    fn param_blocks(&self) -> Vec<ParamBlock>;

    fn n_params(&self) -> usize {
        self.params().len()
    }

    /// Draws one joint outcome for the period into `out` (length S).
    fn sample_into(&self, period: &Period<'_>, rng: &mut Rng, out: &mut [f64]);

    fn logpdf(&self, period: &Period<'_>, y: &[f64]) -> Result<f64>;

    /// Adds `weight * d log p(y) / d phi` into `grad` and returns `log p(y)`.
    fn accumulate_grad_logpdf(
        &self,
        period: &Period<'_>,
        y: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64>;

    /// Log prior density of `phi`; zero for models without a prior.
    fn logprior(&self) -> f64 {
        0.0
    }

    /// Adds `weight * d log prior / d phi` into `grad` and returns the log prior.
    fn accumulate_grad_logprior(&self, _weight: f64, _grad: &mut [f64]) -> f64 {
        0.0
    }

    /// Centre of the random initialization given the training outcomes
    /// (all values flattened). Zero by default; models may randomize it.
    fn init_center(&self, _train_values: &[f64], _rng: &mut Rng) -> Vec<f64> {
        vec![0.0; self.n_params()]
    }

    fn sample(&self, period: &Period<'_>, rng: &mut Rng, n_samples: usize) -> Result<SampleBatch> {
        let s = self.n_sites();
        let mut data = Array2::zeros((n_samples, s));
        for mut row in data.rows_mut() {
            let slice = row.as_slice_mut().expect("standard layout");
            self.sample_into(period, rng, slice);
        }
        SampleBatch::new(data)
    }

    fn grad_logpdf(&self, period: &Period<'_>, y: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.n_params()];
        self.accumulate_grad_logpdf(period, y, 1.0, &mut grad)?;
        Ok(grad)
    }

    fn grad_logprior(&self) -> Vec<f64> {
        let mut grad = vec![0.0; self.n_params()];
        self.accumulate_grad_logprior(1.0, &mut grad);
        grad
    }
}

/// Serializable description of a model family and its dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Tgmm { n_components: usize },
    Negbin,
}

impl ModelSpec {
    pub fn build(&self, n_sites: usize, n_features: usize) -> Result<Box<dyn GenerativeModel>> {
        match *self {
            ModelSpec::Tgmm { n_components } => {
                Ok(Box::new(TruncGaussMixture::new(n_sites, n_components)?))
            }
            ModelSpec::Negbin => Ok(Box::new(NegBinMixedEffects::new(n_sites, n_features)?)),
        }
    }
}

/// `phi = center + scale * z` with `z` standard normal; the centre and `z`
/// share the given stream.
pub fn init_params(
    model: &mut dyn GenerativeModel,
    train_values: &[f64],
    scale: f64,
    key: StreamKey,
) -> Result<()> {
    let mut rng = key.rng();
    let phi: Vec<f64> = model
        .init_center(train_values, &mut rng)
        .into_iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            c + scale * z
        })
        .collect();
    model.set_params(&phi)
}

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::shape(format!("{what}: expected length {expected}, got {got}")));
    }
    Ok(())
}
