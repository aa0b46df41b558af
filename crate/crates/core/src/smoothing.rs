//! Gaussian-perturbed top-K: a smoothed selection mask with a Monte-Carlo
//! Jacobian, so ranking losses can pass gradients back to the ranking.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{oracle_reach, Outcome};
use crate::rng::Rng;
use crate::topk::{check_k, select_top_k, RankingVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Noise standard deviation.
    pub sigma: f64,
    /// Number of noise draws.
    pub n_perturbations: usize,
    pub k: usize,
}

impl SmoothingConfig {
    pub const DEFAULT_SIGMA: f64 = 0.05;
    pub const DEFAULT_PERTURBATIONS: usize = 100;

    pub fn new(k: usize) -> Self {
        SmoothingConfig {
            sigma: Self::DEFAULT_SIGMA,
            n_perturbations: Self::DEFAULT_PERTURBATIONS,
            k,
        }
    }

    pub fn validate(&self, n_sites: usize) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma = {} must be positive", self.sigma)));
        }
        if self.n_perturbations == 0 {
            return Err(Error::invalid("need at least one perturbation"));
        }
        check_k(self.k, n_sites)
    }
}

/// `J x S` standard normal draws, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationNoise {
    z: Vec<f64>,
    n_sites: usize,
}

impl PerturbationNoise {
    pub fn draw(n_perturbations: usize, n_sites: usize, rng: &mut Rng) -> Self {
        let z = (0..n_perturbations * n_sites).map(|_| StandardNormal.sample(rng)).collect();
        PerturbationNoise { z, n_sites }
    }

    pub fn from_vec(z: Vec<f64>, n_sites: usize) -> Result<Self> {
        if n_sites == 0 || z.is_empty() || z.len() % n_sites != 0 {
            return Err(Error::shape(format!("{} noise values for {n_sites} sites", z.len())));
        }
        Ok(PerturbationNoise { z, n_sites })
    }

    pub fn n_perturbations(&self) -> usize {
        self.z.len() / self.n_sites
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.z[j * self.n_sites..(j + 1) * self.n_sites]
    }
}

/// Hard masks of every perturbed ranking plus their average. Forward value
/// and Jacobian share the same draws.
#[derive(Debug, Clone)]
pub struct PerturbedTopK {
    sigma: f64,
    noise: PerturbationNoise,
    /// Selected ids of each perturbed ranking, `J x K`.
    selected: Vec<usize>,
    k: usize,
    forward: Vec<f64>,
}

impl PerturbedTopK {
    pub fn new(r: &RankingVector, cfg: &SmoothingConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate(r.len())?;
        let noise = PerturbationNoise::draw(cfg.n_perturbations, r.len(), rng);
        Self::with_noise(r, cfg.sigma, cfg.k, noise)
    }

    pub fn with_noise(r: &RankingVector, sigma: f64, k: usize, noise: PerturbationNoise) -> Result<Self> {
        let s = r.len();
        if noise.n_sites() != s {
            return Err(Error::shape(format!("noise has {} sites, ranking {s}", noise.n_sites())));
        }
        SmoothingConfig { sigma, n_perturbations: noise.n_perturbations(), k }.validate(s)?;
        let n_pert = noise.n_perturbations();
        let mut perturbed = vec![0.0; s];
        let mut scratch = Vec::with_capacity(s);
        let mut selected = Vec::with_capacity(n_pert * k);
        let mut forward = vec![0.0; s];
        for j in 0..n_pert {
            for ((p, base), z) in perturbed.iter_mut().zip(r.as_slice()).zip(noise.row(j)) {
                *p = base + sigma * z;
            }
            for &i in select_top_k(&perturbed, k, &mut scratch) {
                selected.push(i);
                forward[i] += 1.0;
            }
        }
        for f in &mut forward {
            *f /= n_pert as f64;
        }
        Ok(PerturbedTopK { sigma, noise, selected, k, forward })
    }

    /// Smoothed mask, entries in `[0, 1]` summing to K.
    pub fn forward(&self) -> &[f64] {
        &self.forward
    }

    pub fn noise(&self) -> &PerturbationNoise {
        &self.noise
    }

    fn selected(&self, j: usize) -> &[usize] {
        &self.selected[j * self.k..(j + 1) * self.k]
    }

    /// Entry `(a, c)` estimates `d E[b_a] / d r_c` as
    /// `(1/(J sigma)) sum_j b_j[a] z_j[c]`.
    pub fn jacobian(&self) -> Array2<f64> {
        let s = self.noise.n_sites();
        let n_pert = self.noise.n_perturbations();
        let mut jac = Array2::zeros((s, s));
        for j in 0..n_pert {
            let z = self.noise.row(j);
            for &a in self.selected(j) {
                for (out, zc) in jac.row_mut(a).iter_mut().zip(z) {
                    *out += zc;
                }
            }
        }
        jac / (n_pert as f64 * self.sigma)
    }

    /// `jacobian()^T . g` without forming the matrix.
    pub fn vjp(&self, g: &[f64]) -> Vec<f64> {
        let s = self.noise.n_sites();
        let n_pert = self.noise.n_perturbations();
        let mut out = vec![0.0; s];
        for j in 0..n_pert {
            let w: f64 = self.selected(j).iter().map(|&a| g[a]).sum();
            if w != 0.0 {
                for (o, z) in out.iter_mut().zip(self.noise.row(j)) {
                    *o += w * z;
                }
            }
        }
        let scale = 1.0 / (n_pert as f64 * self.sigma);
        out.iter_mut().for_each(|o| *o *= scale);
        out
    }

    /// Smoothed mask at `r_new` with the draws held fixed as points
    /// `u_j = r + sigma z_j` and reweighted by the Gaussian density ratio.
    /// Equals [`Self::forward`] at the base ranking and is differentiable in
    /// `r_new`, with gradient at the base point equal to [`Self::jacobian`].
    pub fn reweighted_forward(&self, base: &[f64], r_new: &[f64]) -> Vec<f64> {
        let s = self.noise.n_sites();
        let n_pert = self.noise.n_perturbations();
        let delta: Vec<f64> = r_new.iter().zip(base).map(|(a, b)| a - b).collect();
        let delta_sq: f64 = delta.iter().map(|d| d * d).sum();
        let sig2 = self.sigma * self.sigma;
        let mut out = vec![0.0; s];
        for j in 0..n_pert {
            let zd: f64 = self.noise.row(j).iter().zip(&delta).map(|(z, d)| z * d).sum();
            let w = (zd / self.sigma - delta_sq / (2.0 * sig2)).exp();
            for &a in self.selected(j) {
                out[a] += w;
            }
        }
        out.iter_mut().for_each(|o| *o /= n_pert as f64);
        out
    }
}

pub fn perturbed_topk_forward(r: &RankingVector, cfg: &SmoothingConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    Ok(PerturbedTopK::new(r, cfg, rng)?.forward().to_vec())
}

pub fn perturbed_topk_jacobian(r: &RankingVector, cfg: &SmoothingConfig, rng: &mut Rng) -> Result<Array2<f64>> {
    Ok(PerturbedTopK::new(r, cfg, rng)?.jacobian())
}

/// Gradient of the smoothed negative-BPR loss `-y . b / reach` with respect to
/// the ranking, once from the Jacobian estimate and once by central
/// differences of the reweighted smoothed loss on the same frozen draws.
pub fn smoothed_loss_grad_check(
    r: &RankingVector,
    y: &Outcome,
    cfg: &SmoothingConfig,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if y.len() != r.len() {
        return Err(Error::shape("outcome and ranking lengths differ"));
    }
    let reach = oracle_reach(y.as_slice(), cfg.k);
    let grad_b: Vec<f64> = if reach > 0.0 {
        y.as_slice().iter().map(|v| -v / reach).collect()
    } else {
        vec![0.0; y.len()]
    };
    let smoothed = PerturbedTopK::new(r, cfg, rng)?;
    let estimated = smoothed.vjp(&grad_b);

    let base = r.as_slice();
    let loss = |point: &[f64]| -> f64 {
        smoothed.reweighted_forward(base, point).iter().zip(&grad_b).map(|(b, g)| b * g).sum()
    };
    let h = 1e-4 * cfg.sigma;
    let mut point = base.to_vec();
    let fd = (0..base.len())
        .map(|c| {
            point[c] = base[c] + h;
            let up = loss(&point);
            point[c] = base[c] - h;
            let down = loss(&point);
            point[c] = base[c];
            (up - down) / (2.0 * h)
        })
        .collect();
    Ok((estimated, fd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use crate::special::{std_normal_cdf, std_normal_pdf};
    use proptest::prelude::*;

    fn rv(v: &[f64]) -> RankingVector {
        RankingVector::new(v.to_vec()).unwrap()
    }

    fn cfg(sigma: f64, j: usize, k: usize) -> SmoothingConfig {
        SmoothingConfig { sigma, n_perturbations: j, k }
    }

    #[test]
    fn separated_scores_give_hard_mask() {
        let mut rng = StreamKey::new(1).rng();
        let f = perturbed_topk_forward(&rv(&[100.0, 0.0, -100.0]), &cfg(0.01, 50, 1), &mut rng).unwrap();
        assert_eq!(f, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_site_closed_forms() {
        let mut rng = StreamKey::new(2).rng();
        let p = PerturbedTopK::new(&rv(&[1.0, 0.0]), &cfg(1.0, 100_000, 1), &mut rng).unwrap();
        let expected = std_normal_cdf(1.0 / 2f64.sqrt());
        assert!((p.forward()[0] - expected).abs() < 0.01, "{:?}", p.forward());
        let deriv = std_normal_pdf(1.0 / 2f64.sqrt()) / 2f64.sqrt();
        assert!((p.jacobian()[[0, 0]] - deriv).abs() < 0.02);

        let mut rng = StreamKey::new(3).rng();
        let tie = perturbed_topk_forward(&rv(&[0.0, 0.0]), &cfg(1.0, 100_000, 1), &mut rng).unwrap();
        assert!((tie[0] - 0.5).abs() < 0.01);
    }

    #[test]
    fn full_selection_has_zero_jacobian() {
        let mut rng = StreamKey::new(4).rng();
        let p = PerturbedTopK::new(&rv(&[0.3, -1.0, 2.0]), &cfg(0.5, 1000, 3), &mut rng).unwrap();
        assert_eq!(p.forward(), &[1.0, 1.0, 1.0]);
        // Each row is the noise mean, which is O(1/sqrt(J)).
        assert!(p.jacobian().iter().all(|v| v.abs() < 0.3));
    }

    #[test]
    fn vjp_matches_dense_transpose() {
        let mut rng = StreamKey::new(5).rng();
        let p = PerturbedTopK::new(&rv(&[0.2, 0.1, 0.4, 0.0]), &cfg(0.1, 64, 2), &mut rng).unwrap();
        let g = [0.5, -1.0, 2.0, 0.25];
        let dense = p.jacobian().t().dot(&ndarray::arr1(&g));
        for (a, b) in p.vjp(&g).iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_check_agrees_and_zero_case() {
        let mut rng = StreamKey::new(6).rng();
        let y = Outcome::new(vec![4.0, 1.0, 3.0, 0.0]).unwrap();
        let (est, fd) = smoothed_loss_grad_check(&rv(&[0.3, 0.25, 0.28, 0.1]), &y, &cfg(0.05, 200, 2), &mut rng).unwrap();
        for (a, b) in est.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
        }
        let zero = Outcome::new(vec![0.0; 4]).unwrap();
        let (est, fd) = smoothed_loss_grad_check(&rv(&[0.3, 0.25, 0.28, 0.1]), &zero, &cfg(0.05, 20, 2), &mut rng).unwrap();
        assert!(est.iter().chain(&fd).all(|v| *v == 0.0));
    }

    #[test]
    fn reweighting_is_identity_at_base() {
        let mut rng = StreamKey::new(7).rng();
        let r = rv(&[0.5, 0.2, 0.9]);
        let p = PerturbedTopK::new(&r, &cfg(0.3, 50, 1), &mut rng).unwrap();
        assert_eq!(p.reweighted_forward(r.as_slice(), r.as_slice()), p.forward());
    }

    #[test]
    fn converges_to_hard_mask_as_sigma_shrinks() {
        let mut rng = StreamKey::new(8).rng();
        let f = perturbed_topk_forward(&rv(&[0.4, 0.1, 0.3, 0.2]), &cfg(1e-6, 100, 2), &mut rng).unwrap();
        assert_eq!(f, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        let r = rv(&[1.0, 2.0]);
        let mut rng = StreamKey::new(0).rng();
        assert!(perturbed_topk_forward(&r, &cfg(0.0, 10, 1), &mut rng).is_err());
        assert!(perturbed_topk_forward(&r, &cfg(0.1, 0, 1), &mut rng).is_err());
        assert!(perturbed_topk_forward(&r, &cfg(0.1, 10, 3), &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn forward_sums_to_k(
            scores in prop::collection::vec(-2.0f64..2.0, 1..10),
            k_frac in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let k = 1 + ((scores.len() - 1) as f64 * k_frac) as usize;
            let mut rng = StreamKey::new(seed).rng();
            let f = perturbed_topk_forward(&rv(&scores), &cfg(0.5, 37, k), &mut rng).unwrap();
            prop_assert!((f.iter().sum::<f64>() - k as f64).abs() < 1e-9);
            prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn translation_invariant_with_shared_noise(
            scores in prop::collection::vec(-2.0f64..2.0, 2..8),
            quarters in -8i32..8,
            seed in any::<u64>(),
        ) {
            let shifted: Vec<f64> = scores.iter().map(|v| v + quarters as f64 / 4.0).collect();
            let noise = PerturbationNoise::draw(40, scores.len(), &mut StreamKey::new(seed).rng());
            let a = PerturbedTopK::with_noise(&rv(&scores), 0.25, 1, noise.clone()).unwrap();
            let b = PerturbedTopK::with_noise(&rv(&shifted), 0.25, 1, noise).unwrap();
            // Dyadic shifts can still flip near-ties by rounding, so compare with slack of one draw.
            for (x, y) in a.forward().iter().zip(b.forward()) {
                prop_assert!((x - y).abs() <= 1.0 / 40.0 + 1e-12);
            }
        }
    }
}
