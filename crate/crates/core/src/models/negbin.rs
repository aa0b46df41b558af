//! Negative-binomial mixed-effects regression with per-site random intercepts
//! and time slopes.
//!
//! `y_st ~ NB(r = mu_st, q)` with `log mu_st = beta0 + beta . x_st + b0_s + b1_s t`.
//! The pmf counts failures before the `r`-th success,
//! `Gamma(y + r) / (Gamma(r) y!) q^r (1 - q)^y`, so the mean is `r (1 - q) / q`.
//! `(b0_s, b1_s)` share a zero-mean bivariate normal prior with scales
//! `sigma0`, `sigma1` and correlation `rho`.
//!
//! Unconstrained layout of `phi`:
//! `[beta0, beta (D), b0 (S), b1 (S), q_raw, xi0, xi1, u]` with
//! `q = sigmoid(q_raw)`, `sigma_i = softplus(xi_i)`, `rho = tanh(u)`.

use rand_distr::{Distribution, Gamma, Poisson};
use statrs::function::gamma::{digamma, ln_gamma};

use super::{check_len, GenerativeModel, ParamBlock, Period};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::special::{logit, sigmoid, softplus, softplus_inv};

const LN_2: f64 = std::f64::consts::LN_2;
const LN_2PI: f64 = crate::special::LN_2PI;

#[derive(Debug, Clone, PartialEq)]
pub struct NegBinParams {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
    pub q: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct NegBinMixedEffects {
    n_sites: usize,
    n_features: usize,
    phi: Vec<f64>,
}

impl NegBinMixedEffects {
    pub fn new(n_sites: usize, n_features: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::invalid("negative binomial model needs at least one site"));
        }
        Ok(NegBinMixedEffects {
            n_sites,
            n_features,
            phi: vec![0.0; 1 + n_features + 2 * n_sites + 4],
        })
    }

    pub fn from_constrained(params: &NegBinParams) -> Result<Self> {
        let mut m = NegBinMixedEffects::new(params.b0.len(), params.beta.len())?;
        m.set_params(&Self::inverse_transform(params)?)?;
        Ok(m)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn idx_b0(&self) -> usize {
        1 + self.n_features
    }

    fn idx_b1(&self) -> usize {
        1 + self.n_features + self.n_sites
    }

    fn idx_tail(&self) -> usize {
        1 + self.n_features + 2 * self.n_sites
    }

    pub fn transform(&self) -> NegBinParams {
        let t = self.idx_tail();
        NegBinParams {
            beta0: self.phi[0],
            beta: self.phi[1..self.idx_b0()].to_vec(),
            b0: self.phi[self.idx_b0()..self.idx_b1()].to_vec(),
            b1: self.phi[self.idx_b1()..t].to_vec(),
            q: sigmoid(self.phi[t]),
            sigma0: softplus(self.phi[t + 1]),
            sigma1: softplus(self.phi[t + 2]),
            rho: self.phi[t + 3].tanh(),
        }
    }

    pub fn inverse_transform(p: &NegBinParams) -> Result<Vec<f64>> {
        check_len("b1", p.b1.len(), p.b0.len())?;
        if !(p.q > 0.0 && p.q < 1.0) {
            return Err(Error::invalid(format!("q = {} must lie in (0, 1)", p.q)));
        }
        if !(p.sigma0 > 0.0 && p.sigma1 > 0.0) {
            return Err(Error::invalid("random-effect scales must be positive"));
        }
        if !(p.rho.abs() < 1.0) {
            return Err(Error::invalid(format!("rho = {} must lie in (-1, 1)", p.rho)));
        }
        let mut phi = vec![p.beta0];
        phi.extend(&p.beta);
        phi.extend(&p.b0);
        phi.extend(&p.b1);
        phi.extend([logit(p.q), softplus_inv(p.sigma0), softplus_inv(p.sigma1), p.rho.atanh()]);
        Ok(phi)
    }

    /// `log mu_st` for every site.
    fn log_rates(&self, period: &Period<'_>) -> Vec<f64> {
        let d = self.n_features;
        let beta = &self.phi[1..1 + d];
        let (b0, b1) = (self.idx_b0(), self.idx_b1());
        (0..self.n_sites)
            .map(|s| {
                let x = period.site_features(s);
                let lin: f64 = beta.iter().zip(x).map(|(b, v)| b * v).sum();
                self.phi[0] + lin + self.phi[b0 + s] + self.phi[b1 + s] * period.time
            })
            .collect()
    }

    fn check_period(&self, period: &Period<'_>) -> Result<()> {
        if period.n_features != self.n_features
            || period.features.len() != self.n_sites * self.n_features
        {
            return Err(Error::shape(format!(
                "period has {} features per site, model expects {}",
                period.n_features, self.n_features
            )));
        }
        Ok(())
    }

    fn check_y(&self, y: &[f64]) -> Result<()> {
        check_len("outcome", y.len(), self.n_sites)?;
        if let Some(s) = y.iter().position(|v| !(*v >= 0.0 && v.fract() == 0.0)) {
            return Err(Error::invalid(format!(
                "negative binomial outcome y[{s}] = {} is not a non-negative integer",
                y[s]
            )));
        }
        Ok(())
    }

    /// `(log q, log(1 - q))` computed without cancellation.
    fn log_q(&self) -> (f64, f64) {
        let q_raw = self.phi[self.idx_tail()];
        (-softplus(-q_raw), -softplus(q_raw))
    }

    /// Expected count per site for the period.
    pub fn mean(&self, period: &Period<'_>) -> Result<Vec<f64>> {
        self.check_period(period)?;
        let (lq, l1q) = self.log_q();
        Ok(self
            .log_rates(period)
            .into_iter()
            .map(|eta| (eta + l1q - lq).exp())
            .collect())
    }
}

/// `ln(1 - tanh(u)^2) = 2 (ln 2 - |u| - ln(1 + e^{-2|u|}))`.
fn ln_one_minus_rho_sq(u: f64) -> f64 {
    let a = u.abs();
    2.0 * (LN_2 - a - (-2.0 * a).exp().ln_1p())
}

impl GenerativeModel for NegBinMixedEffects {
    fn family(&self) -> &'static str {
        "negbin"
    }

    fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn params(&self) -> &[f64] {
        &self.phi
    }

    fn set_params(&mut self, phi: &[f64]) -> Result<()> {
        check_len("negbin parameters", phi.len(), self.phi.len())?;
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("negbin parameters must be finite"));
        }
        self.phi.copy_from_slice(phi);
        Ok(())
    }

    fn param_blocks(&self) -> Vec<ParamBlock> {
        vec![
            ParamBlock::new("beta0", vec![1]),
            ParamBlock::new("beta", vec![self.n_features]),
            ParamBlock::new("b0", vec![self.n_sites]),
            ParamBlock::new("b1", vec![self.n_sites]),
            ParamBlock::new("q_raw", vec![1]),
            ParamBlock::new("xi0", vec![1]),
            ParamBlock::new("xi1", vec![1]),
            ParamBlock::new("u", vec![1]),
        ]
    }

    fn sample_into(&self, period: &Period<'_>, rng: &mut Rng, out: &mut [f64]) {
        let (lq, l1q) = self.log_q();
        // Gamma scale (1 - q) / q, i.e. rate q / (1 - q).
        let scale = (l1q - lq).exp();
        for (slot, eta) in out.iter_mut().zip(self.log_rates(period)) {
            let shape = eta.exp();
            let g = match Gamma::new(shape, scale) {
                Ok(dist) if shape > 0.0 && shape.is_finite() => dist.sample(rng),
                _ => 0.0,
            };
            *slot = if g > 0.0 && g.is_finite() {
                Poisson::new(g).map(|p| p.sample(rng)).unwrap_or(0.0)
            } else {
                0.0
            };
        }
    }

    fn logpdf(&self, period: &Period<'_>, y: &[f64]) -> Result<f64> {
        self.check_period(period)?;
        self.check_y(y)?;
        let (lq, l1q) = self.log_q();
        Ok(self
            .log_rates(period)
            .into_iter()
            .zip(y)
            .map(|(eta, &v)| {
                let r = eta.exp();
                ln_gamma(v + r) - ln_gamma(r) - ln_gamma(v + 1.0) + r * lq + v * l1q
            })
            .sum())
    }

    fn accumulate_grad_logpdf(
        &self,
        period: &Period<'_>,
        y: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_period(period)?;
        self.check_y(y)?;
        check_len("gradient buffer", grad.len(), self.phi.len())?;
        let (lq, l1q) = self.log_q();
        let q = lq.exp();
        let (b0, b1, tail) = (self.idx_b0(), self.idx_b1(), self.idx_tail());
        let mut total = 0.0;
        let mut dq_raw = 0.0;
        for (s, (eta, &v)) in self.log_rates(period).into_iter().zip(y).enumerate() {
            let r = eta.exp();
            total += ln_gamma(v + r) - ln_gamma(r) - ln_gamma(v + 1.0) + r * lq + v * l1q;
            let dr = if v == 0.0 { lq } else { digamma(v + r) - digamma(r) + lq };
            let deta = weight * r * dr;
            grad[0] += deta;
            for (g, x) in grad[1..b0].iter_mut().zip(period.site_features(s)) {
                *g += deta * x;
            }
            grad[b0 + s] += deta;
            grad[b1 + s] += deta * period.time;
            dq_raw += r * (1.0 - q) - v * q;
        }
        grad[tail] += weight * dq_raw;
        Ok(total)
    }

    fn logprior(&self) -> f64 {
        let t = self.idx_tail();
        let (s0, s1, u) = (softplus(self.phi[t + 1]), softplus(self.phi[t + 2]), self.phi[t + 3]);
        let rho = u.tanh();
        let ln_det = ln_one_minus_rho_sq(u);
        let one_m = ln_det.exp();
        let (b0, b1) = (self.idx_b0(), self.idx_b1());
        (0..self.n_sites)
            .map(|s| {
                let a = self.phi[b0 + s] / s0;
                let c = self.phi[b1 + s] / s1;
                let quad = (a * a - 2.0 * rho * a * c + c * c) / one_m;
                -LN_2PI - s0.ln() - s1.ln() - 0.5 * ln_det - 0.5 * quad
            })
            .sum()
    }

    fn accumulate_grad_logprior(&self, weight: f64, grad: &mut [f64]) -> f64 {
        let t = self.idx_tail();
        let (xi0, xi1, u) = (self.phi[t + 1], self.phi[t + 2], self.phi[t + 3]);
        let (s0, s1) = (softplus(xi0), softplus(xi1));
        let rho = u.tanh();
        let ln_det = ln_one_minus_rho_sq(u);
        let one_m = ln_det.exp();
        let (b0, b1) = (self.idx_b0(), self.idx_b1());
        let (mut ds0, mut ds1, mut drho, mut total) = (0.0, 0.0, 0.0, 0.0);
        for s in 0..self.n_sites {
            let a = self.phi[b0 + s] / s0;
            let c = self.phi[b1 + s] / s1;
            let num = a * a - 2.0 * rho * a * c + c * c;
            total += -LN_2PI - s0.ln() - s1.ln() - 0.5 * ln_det - 0.5 * num / one_m;
            grad[b0 + s] += weight * (-(a - rho * c) / (one_m * s0));
            grad[b1 + s] += weight * (-(c - rho * a) / (one_m * s1));
            ds0 += -1.0 / s0 + (a * a - rho * a * c) / (one_m * s0);
            ds1 += -1.0 / s1 + (c * c - rho * a * c) / (one_m * s1);
            drho += rho / one_m + a * c / one_m - num * rho / (one_m * one_m);
        }
        grad[t + 1] += weight * ds0 * sigmoid(xi0);
        grad[t + 2] += weight * ds1 * sigmoid(xi1);
        grad[t + 3] += weight * drho * one_m;
        total
    }

    fn init_center(&self, train_values: &[f64], _rng: &mut Rng) -> Vec<f64> {
        // Intercept matched to the training mean at q = 1/2.
        let mut center = vec![0.0; self.phi.len()];
        if !train_values.is_empty() {
            let mean = train_values.iter().sum::<f64>() / train_values.len() as f64;
            center[0] = mean.max(1e-2).ln();
        }
        center
    }
}
