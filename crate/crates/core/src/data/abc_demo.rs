//! The nine-site ranking demo: exact expectations by enumeration and the
//! Monte-Carlo comparison of mean and ratio rankings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bpr, Outcome};
use crate::models::{AbcDemoModel, GenerativeModel, Period};
use crate::ranking::{EstimatorSums, Estimator};
use crate::rng::StreamKey;
use crate::topk::{check_k, topk_ids_of, RankingVector, TopKIds};

/// Calls `f(y, probability)` for each of the 2^6 joint outcomes.
fn for_each_outcome(mut f: impl FnMut(&[f64], f64)) {
    let mut y = [0.0; 9];
    for bits in 0u32..64 {
        let mut p = 1.0;
        for (s, site) in AbcDemoModel::SITES.iter().enumerate() {
            let support = site.support();
            let (value, prob) = if support.len() == 1 {
                support[0]
            } else {
                // Bits 0..6 pick the upper support value of the six random sites.
                support[((bits >> (s - 3)) & 1) as usize]
            };
            y[s] = value;
            p *= prob;
        }
        f(&y, p);
    }
}

/// Exact `E[y / (1 . y)]` under the demo model. The type-A sites always
/// produce 7, so the total is never zero.
pub fn abc_exact_ratio_expectation() -> RankingVector {
    let mut r = [0.0; 9];
    for_each_outcome(|y, p| {
        let total: f64 = y.iter().sum();
        for (ri, yi) in r.iter_mut().zip(y) {
            *ri += p * yi / total;
        }
    });
    RankingVector::new(r.to_vec()).expect("finite by construction")
}

/// Exact expected BPR of a fixed selection under the demo model.
pub fn abc_exact_expected_bpr(selection: &TopKIds, k: usize) -> Result<f64> {
    check_k(k, 9)?;
    let mut total = 0.0;
    let mut err = None;
    for_each_outcome(|y, p| match bpr(selection, &Outcome::new(y.to_vec()).expect("valid"), k) {
        Ok(v) => total += p * v,
        Err(e) => err = Some(e),
    });
    match err {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// One cell of the demo table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcDemoRow {
    pub estimator: Estimator,
    pub k: usize,
    pub bpr_mean: f64,
    pub bpr_std_err: f64,
    /// Fraction of trials in which each site was in the selected top-K.
    pub selection_freq: Vec<f64>,
}

/// Each trial draws a fresh true outcome and an independent batch of
/// `n_samples` forecasts, ranks sites with both estimators and scores every
/// `K` in `ks`. Rows are ordered by estimator (mean first), then `ks`.
pub fn abc_demo_table(ks: &[usize], n_trials: usize, n_samples: usize, seed: u64) -> Result<Vec<AbcDemoRow>> {
    if n_trials == 0 || n_samples == 0 {
        return Err(Error::invalid("need at least one trial and one sample"));
    }
    for &k in ks {
        check_k(k, 9)?;
    }
    let model = AbcDemoModel;
    let period = Period::bare(0);
    let key = StreamKey::new(seed).child(crate::rng::domain::TRIAL);
    let estimators = [Estimator::Mean, Estimator::Ratio];

    // Per trial: for each (estimator, k), the BPR and the selected ids.
    let per_trial: Vec<Vec<(f64, TopKIds)>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<(f64, TopKIds)>> {
            let trial_key = key.child(trial as u64);
            let mut truth_rng = trial_key.child(0).rng();
            let mut y = vec![0.0; 9];
            model.sample_into(&period, &mut truth_rng, &mut y);
            let y_true = Outcome::new(y.clone())?;

            let mut rng = trial_key.child(1).rng();
            let mut sums = EstimatorSums::new(9);
            for _ in 0..n_samples {
                model.sample_into(&period, &mut rng, &mut y);
                sums.push(&y);
            }
            let rankings = [sums.mean(), sums.ratio()];
            let mut out = Vec::with_capacity(estimators.len() * ks.len());
            for ranking in &rankings {
                for &k in ks {
                    let ids = topk_ids_of(ranking, k)?;
                    out.push((bpr(&ids, &y_true, k)?, ids));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let n = n_trials as f64;
    let mut rows = Vec::new();
    for (e_idx, &estimator) in estimators.iter().enumerate() {
        for (k_idx, &k) in ks.iter().enumerate() {
            let cell = e_idx * ks.len() + k_idx;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut freq = vec![0.0; 9];
            for trial in &per_trial {
                let (b, ids) = &trial[cell];
                sum += b;
                sum_sq += b * b;
                for &i in ids.as_slice() {
                    freq[i] += 1.0;
                }
            }
            let mean = sum / n;
            let var = if n_trials > 1 { (sum_sq - n * mean * mean).max(0.0) / (n - 1.0) } else { 0.0 };
            freq.iter_mut().for_each(|f| *f /= n);
            rows.push(AbcDemoRow {
                estimator,
                k,
                bpr_mean: mean,
                bpr_std_err: (var / n).sqrt(),
                selection_freq: freq,
            });
        }
    }
    Ok(rows)
}

/// Monte-Carlo expected BPR of one estimator at one K.
pub fn abc_expected_bpr(estimator: Estimator, k: usize, n_trials: usize, n_samples: usize, seed: u64) -> Result<f64> {
    let rows = abc_demo_table(&[k], n_trials, n_samples, seed)?;
    Ok(rows
        .into_iter()
        .find(|r| r.estimator == estimator)
        .expect("both estimators are tabulated")
        .bpr_mean)
}
