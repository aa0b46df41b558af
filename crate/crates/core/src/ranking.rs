//! Monte-Carlo ranking estimators: per-site mean and the ratio estimator
//! `E[y / (1 . y)]`, the expected share of all events each site receives.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bpr_or_one, Outcome};
use crate::models::{GenerativeModel, Period};
use crate::rng::{Rng, StreamKey};
use crate::topk::{topk_ids, RankingVector};

/// `M x S` i.i.d. draws from the model for one period.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    samples: Array2<f64>,
}

impl SampleBatch {
    pub fn new(samples: Array2<f64>) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::invalid("sample batch needs at least one sample and one site"));
        }
        if samples.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("samples must be finite and non-negative"));
        }
        Ok(SampleBatch { samples: samples.as_standard_layout().into_owned() })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let s = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != s) {
            return Err(Error::shape("ragged sample rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((rows.len(), s), flat).map_err(|e| Error::shape(e.to_string()))?;
        SampleBatch::new(arr)
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_sites(&self) -> usize {
        self.samples.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        self.samples.row(m).to_slice().expect("standard layout")
    }
}

/// Writes `y / (1 . y)` into `out`; an all-zero sample yields the zero
/// vector. Returns the total.
#[inline]
pub(crate) fn sample_shares(y: &[f64], out: &mut [f64]) -> f64 {
    let total: f64 = y.iter().sum();
    if total > 0.0 {
        for (o, v) in out.iter_mut().zip(y) {
            *o = v / total;
        }
    } else {
        out.fill(0.0);
    }
    total
}

/// Running sums for both estimators over a stream of samples.
#[derive(Debug, Clone)]
pub(crate) struct EstimatorSums {
    sum: Vec<f64>,
    share_sum: Vec<f64>,
    share: Vec<f64>,
    count: usize,
}

impl EstimatorSums {
    pub(crate) fn new(n_sites: usize) -> Self {
        EstimatorSums {
            sum: vec![0.0; n_sites],
            share_sum: vec![0.0; n_sites],
            share: vec![0.0; n_sites],
            count: 0,
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, y: &[f64]) {
        sample_shares(y, &mut self.share);
        for ((s, r), (v, sh)) in self
            .sum
            .iter_mut()
            .zip(self.share_sum.iter_mut())
            .zip(y.iter().zip(&self.share))
        {
            *s += v;
            *r += sh;
        }
        self.count += 1;
    }

    pub(crate) fn mean(&self) -> Vec<f64> {
        let m = self.count as f64;
        self.sum.iter().map(|v| v / m).collect()
    }

    pub(crate) fn ratio(&self) -> Vec<f64> {
        let m = self.count as f64;
        self.share_sum.iter().map(|v| v / m).collect()
    }
}

fn batch_sums(batch: &SampleBatch) -> EstimatorSums {
    let mut sums = EstimatorSums::new(batch.n_sites());
    for m in 0..batch.n_samples() {
        sums.push(batch.row(m));
    }
    sums
}

/// Per-site sample mean.
pub fn mean_rank(batch: &SampleBatch) -> Result<RankingVector> {
    RankingVector::new(batch_sums(batch).mean())
}

/// Average share of events per site.
pub fn ratio_rank(batch: &SampleBatch) -> Result<RankingVector> {
    RankingVector::new(batch_sums(batch).ratio())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Mean,
    Ratio,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Mean => "mean",
            Estimator::Ratio => "ratio",
        }
    }
}

/// Draws `n_samples` outcomes and returns `(mean ranking, ratio ranking)`
/// without materializing the batch.
pub fn estimate_rankings(
    model: &dyn GenerativeModel,
    period: &Period<'_>,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<(RankingVector, RankingVector)> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one Monte-Carlo sample"));
    }
    let mut sums = EstimatorSums::new(model.n_sites());
    let mut y = vec![0.0; model.n_sites()];
    for _ in 0..n_samples {
        model.sample_into(period, rng, &mut y);
        sums.push(&y);
    }
    Ok((RankingVector::new(sums.mean())?, RankingVector::new(sums.ratio())?))
}

/// BPR of the ratio-ranked top-K against `y_true`, once per trial. Each
/// trial draws a fresh batch of `n_samples` from its own substream of `key`;
/// results are returned in trial order.
pub fn bpr_distribution(
    model: &dyn GenerativeModel,
    period: &Period<'_>,
    y_true: &Outcome,
    k: usize,
    n_samples: usize,
    n_trials: usize,
    key: StreamKey,
) -> Result<Vec<f64>> {
    if n_trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    if y_true.len() != model.n_sites() {
        return Err(Error::shape("outcome length differs from model sites"));
    }
    (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = key.child(trial as u64).rng();
            let (_, ratio) = estimate_rankings(model, period, n_samples, &mut rng)?;
            bpr_or_one(&topk_ids(&ratio, k)?, y_true, k)
        })
        .collect()
}
