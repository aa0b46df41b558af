use super::PanelDataset;
use crate::error::{Error, Result};

/// Appends `lag_1..lag_n` (count at `t - k`, zero before the panel starts)
/// and a `lag_padded` indicator that is 1 for periods with any padded lag.
pub fn make_lag_features(panel: &PanelDataset, n_lags: usize) -> Result<PanelDataset> {
    if n_lags == 0 {
        return Err(Error::invalid("n_lags must be at least 1"));
    }
    let (t_len, s, d) = (panel.n_periods(), panel.n_sites(), panel.n_features());
    let d_new = d + n_lags + 1;
    let mut values = Vec::with_capacity(t_len * s * d_new);
    for t in 0..t_len {
        let period = panel.period(t);
        for site in 0..s {
            values.extend_from_slice(period.site_features(site));
            for k in 1..=n_lags {
                values.push(if t >= k { panel.counts()[[t - k, site]] } else { 0.0 });
            }
            values.push(if t < n_lags { 1.0 } else { 0.0 });
        }
    }
    let mut names = panel.feature_names().to_vec();
    names.extend((1..=n_lags).map(|k| format!("lag_{k}")));
    names.push("lag_padded".to_string());
    panel.clone().with_features(names, values)
}

/// Centres and scales each feature column and the time regressor using the
/// training periods only. Columns constant over training are only centred.
pub fn standardize_features(panel: &PanelDataset) -> PanelDataset {
    let mut out = panel.clone();
    let train = panel.split().train.clone();
    let (s, d) = (panel.n_sites(), panel.n_features());
    let n = (train.len() * s) as f64;
    for f in 0..d {
        let column = |t: usize, site: usize| panel.features()[(t * s + site) * d + f];
        let mean = train.clone().flat_map(|t| (0..s).map(move |site| (t, site))).map(|(t, site)| column(t, site)).sum::<f64>() / n;
        let var = train
            .clone()
            .flat_map(|t| (0..s).map(move |site| (t, site)))
            .map(|(t, site)| (column(t, site) - mean).powi(2))
            .sum::<f64>()
            / n;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let values = out.features_mut();
        for t in 0..panel.n_periods() {
            for site in 0..s {
                let v = &mut values[(t * s + site) * d + f];
                *v = (*v - mean) / scale;
            }
        }
    }
    let times = &panel.time_values()[train.clone()];
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    out.set_time_values(panel.time_values().iter().map(|t| (t - mean) / scale).collect());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use ndarray::array;

    fn panel(counts: ndarray::Array2<f64>) -> PanelDataset {
        let t = counts.nrows();
        PanelDataset::new(counts, Split::new(0..t, t..t, t..t, t).unwrap()).unwrap()
    }

    #[test]
    fn single_lag() {
        let p = make_lag_features(&panel(array![[3.0], [5.0]]), 1).unwrap();
        assert_eq!(p.feature_names(), &["lag_1", "lag_padded"]);
        assert_eq!(p.features(), &[0.0, 1.0, 3.0, 0.0]);
    }

    #[test]
    fn lags_reproduce_history() {
        let counts = ndarray::Array2::from_shape_fn((9, 3), |(t, s)| (t * 3 + s) as f64);
        let p = make_lag_features(&panel(counts.clone()), 5).unwrap();
        for t in 5..9 {
            for s in 0..3 {
                let f = p.period(t).site_features(s);
                for k in 1..=5 {
                    assert_eq!(f[k - 1], counts[[t - k, s]]);
                }
                assert_eq!(f[5], 0.0);
            }
        }
        assert!(make_lag_features(&panel(counts), 0).is_err());
    }

    #[test]
    fn standardization_uses_training_rows() {
        let p = panel(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
            .with_features(vec!["x".into()], vec![1.0, 1.0, 3.0, 3.0, 100.0, 100.0])
            .unwrap()
            .with_split(Split::new(0..2, 2..3, 3..3, 3).unwrap())
            .unwrap();
        let z = standardize_features(&p);
        assert_eq!(&z.features()[..4], &[-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(z.time_values(), &[-1.0, 1.0, 3.0]);
    }
}
