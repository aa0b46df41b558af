use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BprConfig;
use crate::smoothing::SmoothingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Negative log likelihood, plus the negative log prior when the model has one.
    Nll,
    /// Summed negative BPR only.
    Bpr,
    /// Likelihood with a penalty whenever a period's BPR falls below epsilon.
    Daml,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Nll => "nll",
            Objective::Bpr => "bpr",
            Objective::Daml => "daml",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub k: usize,
    pub epsilon: f64,
    pub lambda: f64,
    /// Forecast samples per period for the ranking and its score gradient.
    pub n_samples: usize,
    /// Noise draws per period for the smoothed top-K.
    pub n_perturbations: usize,
    pub sigma: f64,
    pub step_size: f64,
    pub optimizer: OptimizerKind,
    pub max_epochs: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Forecast samples per period when evaluating BPR.
    pub eval_samples: usize,
    /// Evaluation windows without improvement before stopping.
    pub patience: usize,
    pub grad_tol: f64,
    /// Standard deviation of the random initialization around the model's centre.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Nll,
            k: 1,
            epsilon: 0.0,
            lambda: 30.0,
            n_samples: 100,
            n_perturbations: SmoothingConfig::DEFAULT_PERTURBATIONS,
            sigma: SmoothingConfig::DEFAULT_SIGMA,
            step_size: 0.01,
            optimizer: OptimizerKind::Adam,
            max_epochs: 500,
            seed: 0,
            eval_every: 1,
            eval_samples: 100,
            patience: 20,
            grad_tol: 1e-6,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_sites: usize) -> Result<()> {
        self.bpr_config().validate(n_sites)?;
        self.smoothing().validate(n_sites)?;
        let positive = [
            ("n_samples", self.n_samples),
            ("eval_every", self.eval_every),
            ("eval_samples", self.eval_samples),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size must be positive"));
        }
        if !(self.grad_tol >= 0.0 && self.init_scale >= 0.0) {
            return Err(Error::invalid("grad_tol and init_scale must be non-negative"));
        }
        Ok(())
    }

    pub fn bpr_config(&self) -> BprConfig {
        BprConfig { k: self.k, epsilon: self.epsilon, lambda: self.lambda }
    }

    pub fn smoothing(&self) -> SmoothingConfig {
        SmoothingConfig { sigma: self.sigma, n_perturbations: self.n_perturbations, k: self.k }
    }

    /// Short run label such as `daml_eps0.9`.
    pub fn label(&self) -> String {
        match self.objective {
            Objective::Daml => format!("daml_eps{}", (self.epsilon * 1e4).round() / 1e4),
            other => other.name().to_string(),
        }
    }
}
