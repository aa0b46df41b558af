//! Held-out evaluation: likelihood, BPR distributions over repeated
//! Monte-Carlo rankings, point-forecast errors and reference rankers.

use std::ops::Range;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::metrics::hard_bpr;
use crate::models::GenerativeModel;
use crate::ranking::EstimatorSums;
use crate::rng::StreamKey;
use crate::topk::check_k;

/// Per-period likelihood and single-draw BPR over a range of periods.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMetrics {
    /// `-log p(y_t)` per period.
    pub nll: Vec<f64>,
    /// BPR of the ratio ranking per period.
    pub bpr: Vec<f64>,
}

impl SplitMetrics {
    pub fn len(&self) -> usize {
        self.nll.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nll.is_empty()
    }

    pub fn nll_mean(&self) -> f64 {
        mean(&self.nll)
    }

    pub fn bpr_mean(&self) -> f64 {
        mean(&self.bpr)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn check_inputs(model: &dyn GenerativeModel, data: &PanelDataset, periods: &Range<usize>, k: usize) -> Result<()> {
    if model.n_sites() != data.n_sites() {
        return Err(Error::shape("model and data have different site counts"));
    }
    if periods.end > data.n_periods() {
        return Err(Error::invalid("period range outside the panel"));
    }
    check_k(k, data.n_sites())
}

/// Ratio ranking of period `t` from `n_samples` draws on `key`, plus the
/// per-site forecast mean.
fn rankings(model: &dyn GenerativeModel, data: &PanelDataset, t: usize, n_samples: usize, key: StreamKey) -> (Vec<f64>, Vec<f64>) {
    let period = data.period(t);
    let mut rng = key.rng();
    let mut sums = EstimatorSums::new(data.n_sites());
    let mut y = vec![0.0; data.n_sites()];
    for _ in 0..n_samples {
        model.sample_into(&period, &mut rng, &mut y);
        sums.push(&y);
    }
    (sums.ratio(), sums.mean())
}

/// Likelihood and BPR of each period in `periods`. Period `t` ranks with
/// `n_samples` draws from `key.child(t)`, so repeated calls with the same key
/// reuse the same random numbers.
pub fn split_metrics(
    model: &dyn GenerativeModel,
    data: &PanelDataset,
    periods: Range<usize>,
    k: usize,
    n_samples: usize,
    key: StreamKey,
) -> Result<SplitMetrics> {
    check_inputs(model, data, &periods, k)?;
    let rows: Vec<(f64, f64)> = periods
        .into_par_iter()
        .map(|t| -> Result<(f64, f64)> {
            let y_row = data.outcome_row(t);
            let y = y_row.as_slice().expect("standard layout");
            let nll = -model.logpdf(&data.period(t), y)?;
            let (ratio, _) = rankings(model, data, t, n_samples, key.child(t as u64));
            Ok((nll, hard_bpr(&ratio, y, k, &mut Vec::new())))
        })
        .collect::<Result<_>>()?;
    let (nll, bpr) = rows.into_iter().unzip();
    Ok(SplitMetrics { nll, bpr })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary of a model or reference ranker on a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_periods: usize,
    pub k: usize,
    /// Total log likelihood; `None` for rankers without a density.
    pub loglik: Option<f64>,
    pub nll_mean: Option<f64>,
    pub bpr_mean: f64,
    pub bpr_p05: f64,
    pub bpr_p50: f64,
    pub bpr_p95: f64,
    pub mae: f64,
    pub rmse: f64,
    /// One value per trial: the mean BPR over the split's periods.
    pub bpr_trials: Vec<f64>,
}

fn summarize(
    k: usize,
    n_periods: usize,
    loglik: Option<f64>,
    bpr_trials: Vec<f64>,
    abs_err: f64,
    sq_err: f64,
    n_cells: usize,
) -> EvalReport {
    let mut sorted = bpr_trials.clone();
    sorted.sort_by(f64::total_cmp);
    EvalReport {
        n_periods,
        k,
        loglik,
        nll_mean: loglik.map(|l| -l / n_periods as f64),
        bpr_mean: mean(&bpr_trials),
        bpr_p05: quantile(&sorted, 0.05),
        bpr_p50: quantile(&sorted, 0.5),
        bpr_p95: quantile(&sorted, 0.95),
        mae: abs_err / n_cells as f64,
        rmse: (sq_err / n_cells as f64).sqrt(),
        bpr_trials,
    }
}

/// Each trial re-ranks every period from a fresh batch of `n_samples`
/// forecasts. Point errors use the forecast mean of trial 0.
pub fn evaluate_model(
    model: &dyn GenerativeModel,
    data: &PanelDataset,
    periods: Range<usize>,
    k: usize,
    n_samples: usize,
    n_trials: usize,
    key: StreamKey,
) -> Result<EvalReport> {
    check_inputs(model, data, &periods, k)?;
    if periods.is_empty() || n_trials == 0 || n_samples == 0 {
        return Err(Error::invalid("evaluation needs periods, trials and samples"));
    }
    let mut loglik = 0.0;
    for t in periods.clone() {
        loglik += model.logpdf(&data.period(t), data.outcome_row(t).as_slice().expect("standard layout"))?;
    }
    let per_trial: Vec<(f64, f64, f64)> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let trial_key = key.child(trial as u64);
            let mut scratch = Vec::new();
            let (mut bpr_sum, mut abs_err, mut sq_err) = (0.0, 0.0, 0.0);
            for t in periods.clone() {
                let y_row = data.outcome_row(t);
                let y = y_row.as_slice().expect("standard layout");
                let (ratio, forecast) = rankings(model, data, t, n_samples, trial_key.child(t as u64));
                bpr_sum += hard_bpr(&ratio, y, k, &mut scratch);
                if trial == 0 {
                    for (f, v) in forecast.iter().zip(y) {
                        abs_err += (f - v).abs();
                        sq_err += (f - v).powi(2);
                    }
                }
            }
            (bpr_sum / periods.len() as f64, abs_err, sq_err)
        })
        .collect();
    let (abs_err, sq_err) = (per_trial[0].1, per_trial[0].2);
    let trials = per_trial.into_iter().map(|(b, _, _)| b).collect();
    Ok(summarize(k, periods.len(), Some(loglik), trials, abs_err, sq_err, periods.len() * data.n_sites()))
}

/// Rankers that need no training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineRanker {
    /// Predicts zero everywhere and so selects K sites uniformly at random.
    Chance,
    /// Predicts the mean of all earlier periods' counts (zero at the start).
    HistoricalAverage,
}

pub fn evaluate_baseline(
    ranker: BaselineRanker,
    data: &PanelDataset,
    periods: Range<usize>,
    k: usize,
    n_trials: usize,
    key: StreamKey,
) -> Result<EvalReport> {
    let s = data.n_sites();
    if periods.is_empty() || periods.end > data.n_periods() || n_trials == 0 {
        return Err(Error::invalid("evaluation needs periods inside the panel and at least one trial"));
    }
    check_k(k, s)?;
    let forecasts: Vec<Vec<f64>> = periods
        .clone()
        .map(|t| match ranker {
            BaselineRanker::Chance => vec![0.0; s],
            BaselineRanker::HistoricalAverage if t == 0 => vec![0.0; s],
            BaselineRanker::HistoricalAverage => (0..s)
                .map(|site| data.counts().column(site).iter().take(t).sum::<f64>() / t as f64)
                .collect(),
        })
        .collect();
    let (mut abs_err, mut sq_err) = (0.0, 0.0);
    for (t, f) in periods.clone().zip(&forecasts) {
        for (p, v) in f.iter().zip(data.outcome_row(t)) {
            abs_err += (p - v).abs();
            sq_err += (p - v).powi(2);
        }
    }
    let trials: Vec<f64> = (0..n_trials)
        .map(|trial| {
            let mut rng = key.child(trial as u64).rng();
            let mut scratch = Vec::new();
            let mut total = 0.0;
            for (t, f) in periods.clone().zip(&forecasts) {
                let y_row = data.outcome_row(t);
                let y = y_row.as_slice().expect("standard layout");
                let scores: Vec<f64> = match ranker {
                    BaselineRanker::Chance => {
                        let mut sc = vec![0.0; s];
                        for i in sample_indices(&mut rng, s, k) {
                            sc[i] = 1.0;
                        }
                        sc
                    }
                    BaselineRanker::HistoricalAverage => f.clone(),
                };
                total += hard_bpr(&scores, y, k, &mut scratch);
            }
            total / periods.len() as f64
        })
        .collect();
    Ok(summarize(k, periods.len(), None, trials, abs_err, sq_err, periods.len() * s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::models::PointMassModel;
    use ndarray::array;

    fn toy() -> PanelDataset {
        let counts = array![[4.0, 0.0, 1.0, 0.0], [0.0, 3.0, 0.0, 2.0], [1.0, 1.0, 6.0, 0.0]];
        PanelDataset::new(counts, Split::new(0..3, 3..3, 3..3, 3).unwrap()).unwrap()
    }

    #[test]
    fn perfect_foresight_scores_one() {
        let data = toy();
        let model = PointMassModel::new(data.counts().clone());
        let r = evaluate_model(&model, &data, 0..3, 2, 5, 4, StreamKey::new(0)).unwrap();
        assert_eq!(r.bpr_trials, vec![1.0; 4]);
        assert_eq!((r.mae, r.rmse, r.loglik), (0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn zero_predictor_mae_is_mean_abs_count() {
        let r = evaluate_baseline(BaselineRanker::Chance, &toy(), 0..3, 1, 50, StreamKey::new(1)).unwrap();
        // sum |y| = 18 over 12 cells.
        assert!((r.mae - 1.5).abs() < 1e-12);
        assert!((r.rmse - (68.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert!(r.bpr_mean < 0.6);
    }

    #[test]
    fn historical_average_is_deterministic() {
        let r = evaluate_baseline(BaselineRanker::HistoricalAverage, &toy(), 1..3, 1, 3, StreamKey::new(2)).unwrap();
        // Period 1 predicts [4,0,1,0] -> site 0, BPR 0. Period 2 predicts [2,1.5,0.5,1] -> site 0, BPR 1/6.
        assert!(r.bpr_trials.iter().all(|&b| (b - 1.0 / 12.0).abs() < 1e-12));
    }

    #[test]
    fn quantiles() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.05), 0.2);
        assert!(quantile(&[], 0.5).is_nan());
    }
}
