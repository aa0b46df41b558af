//! Per-site mixture of Gaussians truncated to `[0, inf)` with shared
//! component locations and scales and site-specific mixture weights.
//!
//! Unconstrained layout of `phi`:
//! `[mu_raw (L), sigma_raw (L), pi_raw (S x L, row-major)]` with
//! `mu = softplus(mu_raw)`, `sigma = SIGMA_FLOOR + softplus(sigma_raw)` and
//! `pi[s] = softmax(pi_raw[s])`.

use rand::distr::weighted::WeightedIndex;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{check_len, GenerativeModel, ParamBlock, Period};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::special::{inv_mills, log_std_normal_cdf, sigmoid, softmax_into, softplus, softplus_inv, LN_2PI};

/// Lower bound on component scales, keeps components from collapsing.
pub const SIGMA_FLOOR: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct TruncGaussMixtureParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `pi[s][l]`, each row on the simplex.
    pub pi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TruncGaussMixture {
    n_sites: usize,
    n_components: usize,
    phi: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    // log Phi(mu / sigma): the truncation normalizer.
    log_mass: Vec<f64>,
    pi: Vec<f64>,
    log_pi: Vec<f64>,
}

impl TruncGaussMixture {
    pub fn new(n_sites: usize, n_components: usize) -> Result<Self> {
        if n_sites == 0 || n_components == 0 {
            return Err(Error::invalid("mixture needs at least one site and one component"));
        }
        let mut model = TruncGaussMixture {
            n_sites,
            n_components,
            phi: Vec::new(),
            mu: Vec::new(),
            sigma: Vec::new(),
            log_mass: Vec::new(),
            pi: Vec::new(),
            log_pi: Vec::new(),
        };
        model.set_params(&vec![0.0; 2 * n_components + n_sites * n_components])?;
        Ok(model)
    }

    pub fn from_constrained(params: &TruncGaussMixtureParams) -> Result<Self> {
        let l = params.mu.len();
        let mut model = TruncGaussMixture::new(params.pi.len(), l)?;
        model.set_params(&Self::inverse_transform(params)?)?;
        Ok(model)
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn transform(&self) -> TruncGaussMixtureParams {
        let l = self.n_components;
        TruncGaussMixtureParams {
            mu: self.mu.clone(),
            sigma: self.sigma.clone(),
            pi: self.pi.chunks(l).map(<[f64]>::to_vec).collect(),
        }
    }

    /// Constrained parameters back to `phi`. Mixture rows map to their logs,
    /// one of the many raw rows with the same softmax.
    pub fn inverse_transform(params: &TruncGaussMixtureParams) -> Result<Vec<f64>> {
        let l = params.mu.len();
        check_len("sigma", params.sigma.len(), l)?;
        let mut phi = Vec::with_capacity(2 * l + params.pi.len() * l);
        for &m in &params.mu {
            if !(m > 0.0) {
                return Err(Error::invalid(format!("component mean {m} must be positive")));
            }
            phi.push(softplus_inv(m));
        }
        for &s in &params.sigma {
            if !(s > SIGMA_FLOOR) {
                return Err(Error::invalid(format!("component scale {s} must exceed {SIGMA_FLOOR}")));
            }
            phi.push(softplus_inv(s - SIGMA_FLOOR));
        }
        for row in &params.pi {
            check_len("mixture row", row.len(), l)?;
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("mixture rows must be strictly positive and sum to 1"));
            }
            phi.extend(row.iter().map(|p| p.ln()));
        }
        Ok(phi)
    }

    #[inline]
    fn log_component(&self, l: usize, y: f64) -> f64 {
        let z = (y - self.mu[l]) / self.sigma[l];
        -0.5 * z * z - 0.5 * LN_2PI - self.sigma[l].ln() - self.log_mass[l]
    }

    fn check_y(&self, y: &[f64]) -> Result<()> {
        check_len("outcome", y.len(), self.n_sites)?;
        if let Some(s) = y.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!(
                "truncated mixture has no density at y[{s}] = {}",
                y[s]
            )));
        }
        Ok(())
    }

    fn site_log_terms(&self, site: usize, y: f64, terms: &mut [f64]) {
        let l = self.n_components;
        for (c, t) in terms.iter_mut().enumerate() {
            *t = self.log_pi[site * l + c] + self.log_component(c, y);
        }
    }

    /// Mean of the truncated component `l`.
    pub fn component_mean(&self, l: usize) -> f64 {
        let a = self.mu[l] / self.sigma[l];
        self.mu[l] + self.sigma[l] * inv_mills(a)
    }
}

impl GenerativeModel for TruncGaussMixture {
    fn family(&self) -> &'static str {
        "tgmm"
    }

    fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn params(&self) -> &[f64] {
        &self.phi
    }

    fn set_params(&mut self, phi: &[f64]) -> Result<()> {
        let l = self.n_components;
        check_len("tgmm parameters", phi.len(), 2 * l + self.n_sites * l)?;
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tgmm parameters must be finite"));
        }
        self.phi = phi.to_vec();
        self.mu = phi[..l].iter().map(|&v| softplus(v)).collect();
        self.sigma = phi[l..2 * l].iter().map(|&v| SIGMA_FLOOR + softplus(v)).collect();
        self.log_mass = self
            .mu
            .iter()
            .zip(&self.sigma)
            .map(|(m, s)| log_std_normal_cdf(m / s))
            .collect();
        self.pi = vec![0.0; self.n_sites * l];
        for (raw, out) in phi[2 * l..].chunks(l).zip(self.pi.chunks_mut(l)) {
            softmax_into(raw, out);
        }
        self.log_pi = self.pi.iter().map(|p| p.ln()).collect();
        Ok(())
    }

    fn param_blocks(&self) -> Vec<ParamBlock> {
        let l = self.n_components;
        vec![
            ParamBlock::new("mu_raw", vec![l]),
            ParamBlock::new("sigma_raw", vec![l]),
            ParamBlock::new("pi_raw", vec![self.n_sites, l]),
        ]
    }

    fn sample_into(&self, _period: &Period<'_>, rng: &mut Rng, out: &mut [f64]) {
        let l = self.n_components;
        for (s, slot) in out.iter_mut().enumerate() {
            let u: f64 = rng.random();
            let row = &self.pi[s * l..(s + 1) * l];
            let mut comp = l - 1;
            let mut acc = 0.0;
            for (c, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    comp = c;
                    break;
                }
            }
            // mu > 0 so each proposal is accepted with probability > 1/2.
            *slot = loop {
                let z: f64 = StandardNormal.sample(rng);
                let v = self.mu[comp] + self.sigma[comp] * z;
                if v >= 0.0 {
                    break v;
                }
            };
        }
    }

    fn logpdf(&self, _period: &Period<'_>, y: &[f64]) -> Result<f64> {
        self.check_y(y)?;
        let mut terms = vec![0.0; self.n_components];
        let mut total = 0.0;
        for (s, &v) in y.iter().enumerate() {
            self.site_log_terms(s, v, &mut terms);
            total += crate::special::log_sum_exp(&terms);
        }
        Ok(total)
    }

    fn accumulate_grad_logpdf(
        &self,
        _period: &Period<'_>,
        y: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_y(y)?;
        let l = self.n_components;
        check_len("gradient buffer", grad.len(), self.phi.len())?;
        let mut terms = vec![0.0; l];
        // d log f / d mu and d sigma per component, at the current y.
        let mills: Vec<f64> = (0..l).map(|c| inv_mills(self.mu[c] / self.sigma[c])).collect();
        let dmu_draw: Vec<f64> = self.phi[..l].iter().map(|&v| sigmoid(v)).collect();
        let dsigma_draw: Vec<f64> = self.phi[l..2 * l].iter().map(|&v| sigmoid(v)).collect();
        let mut total = 0.0;
        for (s, &v) in y.iter().enumerate() {
            self.site_log_terms(s, v, &mut terms);
            let lse = crate::special::log_sum_exp(&terms);
            total += lse;
            for c in 0..l {
                let resp = (terms[c] - lse).exp();
                let sigma = self.sigma[c];
                let z = (v - self.mu[c]) / sigma;
                let dmu = (z - mills[c]) / sigma;
                let dsigma = (-1.0 + z * z + mills[c] * self.mu[c] / sigma) / sigma;
                grad[c] += weight * resp * dmu * dmu_draw[c];
                grad[l + c] += weight * resp * dsigma * dsigma_draw[c];
                grad[2 * l + s * l + c] += weight * (resp - self.pi[s * l + c]);
            }
        }
        Ok(total)
    }

    fn init_center(&self, train_values: &[f64], rng: &mut Rng) -> Vec<f64> {
        // k-means++ seeding of the component means over the training
        // outcomes, a common scale, and uniform mixture weights.
        let l = self.n_components;
        let mut center = vec![0.0; self.phi.len()];
        if train_values.is_empty() {
            return center;
        }
        let n = train_values.len() as f64;
        let mean = train_values.iter().sum::<f64>() / n;
        let sd = (train_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut means = vec![train_values[rng.random_range(0..train_values.len())]];
        while means.len() < l {
            let d2: Vec<f64> = train_values
                .iter()
                .map(|v| means.iter().map(|m| (v - m).powi(2)).fold(f64::INFINITY, f64::min))
                .collect();
            let next = match WeightedIndex::new(&d2) {
                Ok(w) => train_values[w.sample(rng)],
                // Every value already coincides with a mean.
                Err(_) => means[0],
            };
            means.push(next);
        }
        for (c, m) in means.into_iter().enumerate() {
            center[c] = softplus_inv(m.max(1e-3));
            center[l + c] = softplus_inv((sd / l as f64).max(1.0));
        }
        center
    }
}
