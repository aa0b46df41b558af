//! Spatiotemporal count panels, generators and file formats.

mod abc_demo;
mod csv_io;
mod features;
mod synthetic;

pub use abc_demo::{
    abc_demo_table, abc_exact_expected_bpr, abc_exact_ratio_expectation, abc_expected_bpr, AbcDemoRow,
};
pub use csv_io::{load_panel_csv, write_panel_csv};
pub use features::{make_lag_features, standardize_features};
pub use synthetic::{gen_negbin_panel, gen_synthetic_1d, NegBinPanelSpec, SYNTHETIC_1D_MEANS, SYNTHETIC_1D_SIGMA};

use std::ops::Range;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Outcome;
use crate::models::Period;

/// Contiguous, ordered period ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn new(train: Range<usize>, val: Range<usize>, test: Range<usize>, n_periods: usize) -> Result<Self> {
        let ordered = train.start == 0
            && train.start < train.end
            && train.end <= val.start
            && val.start <= val.end
            && val.end <= test.start
            && test.start <= test.end
            && test.end <= n_periods;
        if !ordered {
            return Err(Error::invalid(format!(
                "split {train:?} / {val:?} / {test:?} is not ordered within 0..{n_periods}"
            )));
        }
        Ok(Split { train, val, test })
    }

    /// Leading `train_frac` for training, next `val_frac` for validation,
    /// the rest for test.
    pub fn by_fraction(n_periods: usize, train_frac: f64, val_frac: f64) -> Result<Self> {
        if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0) {
            return Err(Error::invalid("split fractions must be positive and sum to at most 1"));
        }
        let train_end = ((n_periods as f64 * train_frac).round() as usize).clamp(1, n_periods);
        let val_end = ((n_periods as f64 * (train_frac + val_frac)).round() as usize).clamp(train_end, n_periods);
        Split::new(0..train_end, train_end..val_end, val_end..n_periods, n_periods)
    }

    pub fn range(&self, which: SplitName) -> Range<usize> {
        match which {
            SplitName::Train => self.train.clone(),
            SplitName::Val => self.val.clone(),
            SplitName::Test => self.test.clone(),
        }
    }
}

/// `T x S` counts with optional `T x S x D` features.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    counts: Array2<f64>,
    /// Period-major, then site-major, then feature.
    features: Vec<f64>,
    feature_names: Vec<String>,
    site_ids: Vec<String>,
    time_index: Vec<i64>,
    /// Time regressor handed to models; defaults to the raw index.
    time_values: Vec<f64>,
    split: Split,
}

impl PanelDataset {
    pub fn new(counts: Array2<f64>, split: Split) -> Result<Self> {
        let (t, s) = counts.dim();
        if t == 0 || s == 0 {
            return Err(Error::invalid("panel needs at least one period and one site"));
        }
        if let Some(((ti, si), v)) = counts.indexed_iter().find(|(_, v)| !(**v >= 0.0 && v.fract() == 0.0)) {
            return Err(Error::invalid(format!("count at period {ti}, site {si} is {v}; expected a non-negative integer")));
        }
        Split::new(split.train.clone(), split.val.clone(), split.test.clone(), t)?;
        Ok(PanelDataset {
            counts,
            features: Vec::new(),
            feature_names: Vec::new(),
            site_ids: (0..s).map(|i| i.to_string()).collect(),
            time_index: (0..t as i64).collect(),
            time_values: (0..t).map(|i| i as f64).collect(),
            split,
        })
    }

    /// Attaches a flattened `T x S x D` feature block.
    pub fn with_features(mut self, names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let expected = self.n_periods() * self.n_sites() * names.len();
        if values.len() != expected {
            return Err(Error::shape(format!("{} feature values, expected {expected}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature value {v}")));
        }
        self.feature_names = names;
        self.features = values;
        Ok(self)
    }

    pub fn with_site_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_sites() {
            return Err(Error::shape("site id count differs from site count"));
        }
        self.site_ids = ids;
        Ok(self)
    }

    pub fn with_time_index(mut self, index: Vec<i64>) -> Result<Self> {
        if index.len() != self.n_periods() || index.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("time index must be strictly increasing, one per period"));
        }
        self.time_values = index.iter().map(|&t| t as f64).collect();
        self.time_index = index;
        Ok(self)
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        self.split = Split::new(split.train, split.val, split.test, self.n_periods())?;
        Ok(self)
    }

    pub(crate) fn set_time_values(&mut self, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.n_periods());
        self.time_values = values;
    }

    pub(crate) fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn n_periods(&self) -> usize {
        self.counts.nrows()
    }

    pub fn n_sites(&self) -> usize {
        self.counts.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn counts(&self) -> &Array2<f64> {
        &self.counts
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn time_index(&self) -> &[i64] {
        &self.time_index
    }

    pub fn time_values(&self) -> &[f64] {
        &self.time_values
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn outcome_row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.counts.row(t)
    }

    pub fn outcome(&self, t: usize) -> Outcome {
        Outcome::new(self.counts.row(t).to_vec()).expect("counts validated at construction")
    }

    pub fn period(&self, t: usize) -> Period<'_> {
        let block = self.n_sites() * self.n_features();
        Period {
            index: t,
            time: self.time_values[t],
            features: &self.features[t * block..(t + 1) * block],
            n_features: self.n_features(),
        }
    }

    /// Counts of the given periods, flattened row by row.
    pub fn values_in(&self, periods: Range<usize>) -> Vec<f64> {
        periods.flat_map(|t| self.counts.row(t).to_vec()).collect()
    }
}
