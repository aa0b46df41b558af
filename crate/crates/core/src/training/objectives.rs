//! Training objectives and their gradients, summed over periods.
//!
//! For the ranking terms, each period draws `M` forecasts and `J` noise
//! vectors from its own stream. The ratio ranking `r` selects a hard top-K
//! whose BPR gives the loss; the gradient flows through the smoothed top-K
//! Jacobian and the score-function estimate of `dr/dphi`, contracted as
//! `v = jac^T dL/db` followed by `(1/M) sum_m (share_m . v) score_m`.

use std::ops::Range;

use rayon::prelude::*;

use super::config::{Objective, TrainConfig};
use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::metrics::{constraint_g, hard_bpr, oracle_reach, penalty_term};
use crate::models::{GenerativeModel, Period};
use crate::ranking::sample_shares;
use crate::rng::{domain, StreamKey, NOISE_STREAM, SAMPLE_STREAM};
use crate::smoothing::{PerturbationNoise, PerturbedTopK};
use crate::topk::{check_k, RankingVector};

/// Stream for period `t` of training epoch `epoch`.
pub fn period_key(seed: u64, epoch: u64, t: usize) -> StreamKey {
    StreamKey::new(seed).child(domain::EPOCH).child(epoch).child(t as u64)
}

/// The random inputs of one period's ranking terms.
#[derive(Debug, Clone)]
pub struct PeriodDraws {
    /// `M x S`, row-major.
    pub samples: Vec<f64>,
    pub n_sites: usize,
    pub noise: PerturbationNoise,
}

impl PeriodDraws {
    pub fn n_samples(&self) -> usize {
        self.samples.len() / self.n_sites
    }

    pub fn sample(&self, m: usize) -> &[f64] {
        &self.samples[m * self.n_sites..(m + 1) * self.n_sites]
    }

    /// Ratio ranking of the forecasts.
    pub fn ratio(&self) -> Vec<f64> {
        let s = self.n_sites;
        let mut r = vec![0.0; s];
        let mut share = vec![0.0; s];
        for m in 0..self.n_samples() {
            sample_shares(self.sample(m), &mut share);
            r.iter_mut().zip(&share).for_each(|(a, b)| *a += b);
        }
        let m = self.n_samples() as f64;
        r.iter_mut().for_each(|v| *v /= m);
        r
    }
}

pub fn draw_period(
    model: &dyn GenerativeModel,
    period: &Period<'_>,
    key: StreamKey,
    n_samples: usize,
    n_perturbations: usize,
) -> PeriodDraws {
    let s = model.n_sites();
    let mut samples = vec![0.0; n_samples * s];
    let mut rng = key.child(SAMPLE_STREAM).rng();
    for row in samples.chunks_exact_mut(s) {
        model.sample_into(period, &mut rng, row);
    }
    let noise = PerturbationNoise::draw(n_perturbations, s, &mut key.child(NOISE_STREAM).rng());
    PeriodDraws { samples, n_sites: s, noise }
}

/// Objective value and gradient with per-term breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Sum of `-log p(y_t)` over the periods, prior excluded.
    pub nll: f64,
    pub logprior: f64,
    /// Sum over periods of the hard BPR of the ratio ranking; `None` for
    /// the likelihood objective, which never draws forecasts.
    pub bpr_sum: Option<f64>,
    /// Periods whose BPR constraint was violated (DAML only).
    pub n_violated: usize,
}

impl ObjectiveEval {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

struct PeriodResult {
    value: f64,
    nll: f64,
    bpr: Option<f64>,
    violated: bool,
    grad: Vec<f64>,
}

fn finite(term: &'static str, period: usize, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term, period, value })
    }
}

fn period_result(
    model: &dyn GenerativeModel,
    data: &PanelDataset,
    t: usize,
    cfg: &TrainConfig,
    key: StreamKey,
) -> Result<PeriodResult> {
    let period = data.period(t);
    let y_row = data.outcome_row(t);
    let y = y_row.as_slice().expect("standard layout");
    let mut grad = vec![0.0; model.n_params()];

    let uses_likelihood = cfg.objective != Objective::Bpr;
    let mut nll = 0.0;
    if uses_likelihood {
        nll = -finite("log_likelihood", t, model.accumulate_grad_logpdf(&period, y, -1.0, &mut grad)?)?;
    }
    if cfg.objective == Objective::Nll {
        return Ok(PeriodResult { value: nll, nll, bpr: None, violated: false, grad });
    }

    let draws = draw_period(model, &period, key, cfg.n_samples, cfg.n_perturbations);
    let r = draws.ratio();
    let reach = oracle_reach(y, cfg.k);
    let bpr = hard_bpr(&r, y, cfg.k, &mut Vec::with_capacity(y.len()));
    let loss = -bpr;

    let (value, grad_scale, violated) = match cfg.objective {
        Objective::Bpr => (loss, 1.0, false),
        _ => {
            let g = constraint_g(loss, cfg.epsilon);
            (nll + penalty_term(g, cfg.lambda), cfg.lambda, g > 0.0)
        }
    };
    let needs_ranking_grad = reach > 0.0 && (cfg.objective == Objective::Bpr || violated);
    if needs_ranking_grad {
        let grad_b: Vec<f64> = y.iter().map(|v| -grad_scale * v / reach).collect();
        let ranking = RankingVector::new(r)?;
        let smoothed = PerturbedTopK::with_noise(&ranking, cfg.sigma, cfg.k, draws.noise.clone())?;
        let v = smoothed.vjp(&grad_b);
        let inv_m = 1.0 / draws.n_samples() as f64;
        let mut share = vec![0.0; y.len()];
        for m in 0..draws.n_samples() {
            let sample = draws.sample(m);
            sample_shares(sample, &mut share);
            let w: f64 = share.iter().zip(&v).map(|(a, b)| a * b).sum();
            if w != 0.0 {
                finite("sample_log_likelihood", t, model.accumulate_grad_logpdf(&period, sample, w * inv_m, &mut grad)?)?;
            }
        }
    }
    if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite { term: "gradient", period: t, value: *bad });
    }
    Ok(PeriodResult { value: finite("objective", t, value)?, nll, bpr: Some(bpr), violated, grad })
}

/// The configured objective over `periods`, with `epoch_key` as the parent
/// of the per-period streams. Periods are evaluated in parallel and reduced
/// in period order.
pub fn evaluate_objective(
    model: &dyn GenerativeModel,
    data: &PanelDataset,
    periods: Range<usize>,
    cfg: &TrainConfig,
    epoch_key: StreamKey,
) -> Result<ObjectiveEval> {
    if model.n_sites() != data.n_sites() {
        return Err(Error::shape(format!(
            "model has {} sites, data {}",
            model.n_sites(),
            data.n_sites()
        )));
    }
    check_k(cfg.k, data.n_sites())?;
    if periods.end > data.n_periods() {
        return Err(Error::invalid("period range outside the panel"));
    }
    let results: Vec<PeriodResult> = periods
        .clone()
        .into_par_iter()
        .map(|t| period_result(model, data, t, cfg, epoch_key.child(t as u64)))
        .collect::<Result<_>>()?;

    let mut eval = ObjectiveEval {
        value: 0.0,
        grad: vec![0.0; model.n_params()],
        nll: 0.0,
        logprior: 0.0,
        bpr_sum: (cfg.objective != Objective::Nll).then_some(0.0),
        n_violated: 0,
    };
    for res in results {
        eval.value += res.value;
        eval.nll += res.nll;
        if let (Some(total), Some(b)) = (eval.bpr_sum.as_mut(), res.bpr) {
            *total += b;
        }
        eval.n_violated += usize::from(res.violated);
        eval.grad.iter_mut().zip(&res.grad).for_each(|(a, b)| *a += b);
    }
    if cfg.objective != Objective::Bpr {
        eval.logprior = model.accumulate_grad_logprior(-1.0, &mut eval.grad);
        eval.value -= eval.logprior;
        finite("log_prior", periods.start, eval.logprior)?;
    }
    Ok(eval)
}

fn with_objective(cfg: &TrainConfig, objective: Objective) -> TrainConfig {
    TrainConfig { objective, ..cfg.clone() }
}

/// `sum_t -log p(y_t) - log prior` and its gradient.
pub fn nll_objective(model: &dyn GenerativeModel, data: &PanelDataset, periods: Range<usize>) -> Result<(f64, Vec<f64>)> {
    let cfg = TrainConfig { k: 1, ..TrainConfig::default() };
    let eval = evaluate_objective(model, data, periods, &cfg, StreamKey::new(0))?;
    Ok((eval.value, eval.grad))
}

/// `sum_t -BPR_t` and its estimated gradient.
pub fn bpr_objective(
    model: &dyn GenerativeModel,
    data: &PanelDataset,
    periods: Range<usize>,
    cfg: &TrainConfig,
    epoch_key: StreamKey,
) -> Result<(f64, Vec<f64>)> {
    let eval = evaluate_objective(model, data, periods, &with_objective(cfg, Objective::Bpr), epoch_key)?;
    Ok((eval.value, eval.grad))
}

/// `sum_t [lambda max(epsilon - BPR_t, 0) - log p(y_t)] - log prior` and its
/// estimated gradient.
pub fn daml_objective(
    model: &dyn GenerativeModel,
    data: &PanelDataset,
    periods: Range<usize>,
    cfg: &TrainConfig,
    epoch_key: StreamKey,
) -> Result<(f64, Vec<f64>)> {
    let eval = evaluate_objective(model, data, periods, &with_objective(cfg, Objective::Daml), epoch_key)?;
    Ok((eval.value, eval.grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_1d, Split};
    use crate::models::{PointMassModel, TruncGaussMixture};

    fn small_panel() -> PanelDataset {
        let full = gen_synthetic_1d(1);
        let counts = full.counts().slice(ndarray::s![..20, ..]).to_owned();
        PanelDataset::new(counts, Split::new(0..20, 20..20, 20..20, 20).unwrap()).unwrap()
    }

    fn tgmm() -> TruncGaussMixture {
        let mut m = TruncGaussMixture::new(7, 2).unwrap();
        let phi = m.init_center(&small_panel().values_in(0..20), &mut StreamKey::new(0).rng());
        m.set_params(&phi).unwrap();
        m
    }

    fn cfg(objective: Objective, epsilon: f64) -> TrainConfig {
        TrainConfig { objective, k: 5, epsilon, n_samples: 30, n_perturbations: 30, ..TrainConfig::default() }
    }

    #[test]
    fn daml_at_zero_epsilon_equals_nll_exactly() {
        let (data, model) = (small_panel(), tgmm());
        let key = StreamKey::new(5);
        let nll = evaluate_objective(&model, &data, 0..20, &cfg(Objective::Nll, 0.0), key).unwrap();
        let daml = evaluate_objective(&model, &data, 0..20, &cfg(Objective::Daml, 0.0), key).unwrap();
        assert_eq!(nll.value.to_bits(), daml.value.to_bits());
        assert!(nll.grad.iter().zip(&daml.grad).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(daml.n_violated, 0);
    }

    #[test]
    fn satisfied_constraints_leave_nll_gradient() {
        let (data, model) = (small_panel(), tgmm());
        let key = StreamKey::new(6);
        let daml = evaluate_objective(&model, &data, 0..20, &cfg(Objective::Daml, 0.01), key).unwrap();
        let nll = evaluate_objective(&model, &data, 0..20, &cfg(Objective::Nll, 0.0), key).unwrap();
        assert_eq!(daml.n_violated, 0);
        assert_eq!(daml.grad, nll.grad);
    }

    #[test]
    fn point_mass_bpr_is_perfect() {
        let data = small_panel();
        let model = PointMassModel::new(data.counts().clone());
        let (value, grad) = bpr_objective(&model, &data, 0..20, &cfg(Objective::Bpr, 0.0), StreamKey::new(0)).unwrap();
        assert_eq!(value, -20.0);
        assert!(grad.is_empty());
    }

    #[test]
    fn nll_is_additive_over_periods() {
        let (data, model) = (small_panel(), tgmm());
        let (a, _) = nll_objective(&model, &data, 0..10).unwrap();
        let (b, _) = nll_objective(&model, &data, 10..20).unwrap();
        let (all, _) = nll_objective(&model, &data, 0..20).unwrap();
        assert!((a + b - all).abs() < 1e-9 * all.abs());
    }

    #[test]
    fn reproducible_under_key() {
        let (data, model) = (small_panel(), tgmm());
        let c = cfg(Objective::Daml, 0.95);
        let a = evaluate_objective(&model, &data, 0..20, &c, StreamKey::new(3)).unwrap();
        let b = evaluate_objective(&model, &data, 0..20, &c, StreamKey::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.n_violated > 0);
    }
}
