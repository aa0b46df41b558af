use ndarray::Array2;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal, Uniform};

use super::{PanelDataset, Split};
use crate::error::{Error, Result};
use crate::models::{GenerativeModel, Period, QuantizedGaussianTruth};
use crate::rng::{domain, StreamKey};

pub const SYNTHETIC_1D_MEANS: [f64; 7] = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 100.0];
pub const SYNTHETIC_1D_SIGMA: f64 = 2.0;
const SYNTHETIC_1D_PERIODS: usize = 500;

/// Seven independent quantized Gaussian sites over 500 i.i.d. periods,
/// split 400 / 50 / 50.
pub fn gen_synthetic_1d(seed: u64) -> PanelDataset {
    let truth = QuantizedGaussianTruth::new(SYNTHETIC_1D_MEANS.to_vec(), SYNTHETIC_1D_SIGMA)
        .expect("constant parameters are valid");
    let key = StreamKey::new(seed).child(domain::DATA);
    let s = SYNTHETIC_1D_MEANS.len();
    let mut counts = Array2::zeros((SYNTHETIC_1D_PERIODS, s));
    for (t, mut row) in counts.rows_mut().into_iter().enumerate() {
        let mut rng = key.child(t as u64).rng();
        truth.sample_into(&Period::bare(t), &mut rng, row.as_slice_mut().expect("standard layout"));
    }
    let split = Split::new(0..400, 400..450, 450..500, SYNTHETIC_1D_PERIODS).expect("fixed split is ordered");
    PanelDataset::new(counts, split).expect("generator emits valid counts")
}

const Q_REF: f64 = 0.3;

/// Shape of a synthetic mixed-effects count panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegBinPanelSpec {
    pub n_sites: usize,
    pub n_periods: usize,
    pub n_features: usize,
    pub seed: u64,
    /// Per-site success probabilities are drawn uniformly from this range.
    pub q_range: (f64, f64),
}

impl Default for NegBinPanelSpec {
    fn default() -> Self {
        NegBinPanelSpec { n_sites: 20, n_periods: 60, n_features: 2, seed: 0, q_range: (0.1, 0.6) }
    }
}

/// Negative binomial counts with log-linear site effects, Gaussian features
/// and a linear time trend. The success probability varies by site (drawn
/// from `q_range`), so a model with one shared dispersion is
/// misspecified in the same way as the ranking demo: heavy-tailed sites and
/// steady sites can share a mean but differ in their share of events.
pub fn gen_negbin_panel(spec: NegBinPanelSpec) -> Result<PanelDataset> {
    let NegBinPanelSpec { n_sites: s, n_periods: t_len, n_features: d, seed, q_range: (q_lo, q_hi) } = spec;
    if s < 2 || t_len < 3 {
        return Err(Error::invalid("negative binomial panel needs at least 2 sites and 3 periods"));
    }
    if !(0.0 < q_lo && q_lo <= q_hi && q_hi < 1.0) {
        return Err(Error::invalid("success probabilities must lie in (0, 1)"));
    }
    let key = StreamKey::new(seed).child(domain::DATA);
    let mut rng = key.child(0).rng();
    let beta: Vec<f64> = (0..d).map(|_| 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
    let (sigma0, sigma1, rho) = (0.8, 0.3, 0.3);
    let q_dist = Uniform::new_inclusive(q_lo, q_hi).map_err(|e| Error::invalid(e.to_string()))?;
    let mut b0 = Vec::with_capacity(s);
    let mut b1 = Vec::with_capacity(s);
    let mut q = Vec::with_capacity(s);
    for _ in 0..s {
        let z0: f64 = StandardNormal.sample(&mut rng);
        let z1: f64 = StandardNormal.sample(&mut rng);
        b0.push(sigma0 * z0);
        b1.push(sigma1 * (rho * z0 + (1.0 - rho * rho).sqrt() * z1));
        q.push(q_dist.sample(&mut rng));
    }
    let beta0 = 5f64.ln();

    let mut features = Vec::with_capacity(t_len * s * d);
    let mut counts = Array2::zeros((t_len, s));
    for t in 0..t_len {
        let mut rng = key.child(1 + t as u64).rng();
        let time = t as f64 / (t_len - 1) as f64 - 0.5;
        for site in 0..s {
            let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eta = beta0 + beta.iter().zip(&x).map(|(b, v)| b * v).sum::<f64>() + b0[site] + b1[site] * time;
            // Scaling the shape keeps the mean at exp(eta) (1 - q_ref) / q_ref.
            let shape = eta.exp() * q[site] / (1.0 - q[site]) * (1.0 - Q_REF) / Q_REF;
            let g = Gamma::new(shape, (1.0 - q[site]) / q[site])
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng);
            counts[[t, site]] = if g > 0.0 {
                Poisson::new(g).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng)
            } else {
                0.0
            };
            features.extend(x);
        }
    }
    let split = Split::by_fraction(t_len, 0.7, 0.15)?;
    let names = (0..d).map(|i| format!("x{i}")).collect();
    PanelDataset::new(counts, split)?.with_features(names, features)
}
