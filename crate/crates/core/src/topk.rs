//! Exact ranking and top-K selection.
//!
//! Ties are broken by the lower site index, so every function here is a
//! deterministic function of its input. Ranks are 1-based (rank 1 is the
//! largest score); site indices are 0-based.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length-S priority scores; larger means higher priority.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingVector(Vec<f64>);

impl RankingVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("ranking vector must have at least one site"));
        }
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "ranking score at site {i} is not finite ({})",
                scores[i]
            )));
        }
        Ok(RankingVector(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for RankingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Binary selection vector with exactly K ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKMask(Vec<u8>);

impl TopKMask {
    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.iter().map(|&b| b as usize).sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }

    pub fn to_ids(&self) -> TopKIds {
        TopKIds(
            self.0
                .iter()
                .enumerate()
                .filter_map(|(i, &b)| (b == 1).then_some(i))
                .collect(),
        )
    }
}

/// The K selected site indices, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKIds(Vec<usize>);

impl TopKIds {
    /// Builds a selection from arbitrary indices; rejects duplicates and
    /// out-of-range entries.
    pub fn new(mut ids: Vec<usize>, n_sites: usize) -> Result<Self> {
        ids.sort_unstable();
        if let Some(&bad) = ids.iter().find(|&&i| i >= n_sites) {
            return Err(Error::invalid(format!("site index {bad} out of range 0..{n_sites}")));
        }
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("selection contains duplicate site indices"));
        }
        Ok(TopKIds(ids))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_mask(&self, n_sites: usize) -> TopKMask {
        let mut mask = vec![0u8; n_sites];
        for &i in &self.0 {
            mask[i] = 1;
        }
        TopKMask(mask)
    }
}

/// Descending by score, ascending by index among equal scores.
#[inline]
fn priority(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b]
        .partial_cmp(&scores[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

pub(crate) fn check_k(k: usize, n_sites: usize) -> Result<()> {
    if k == 0 || k > n_sites {
        return Err(Error::invalid(format!("K = {k} must lie in 1..={n_sites}")));
    }
    Ok(())
}

/// Indices of the K highest scores in unspecified order. `scratch` is reused
/// between calls to avoid allocating in hot loops. Caller guarantees
/// `1 <= k <= scores.len()` and finite scores.
pub(crate) fn select_top_k<'a>(scores: &[f64], k: usize, scratch: &'a mut Vec<usize>) -> &'a [usize] {
    scratch.clear();
    scratch.extend(0..scores.len());
    if k < scores.len() {
        scratch.select_nth_unstable_by(k - 1, |&a, &b| priority(scores, a, b));
    }
    &scratch[..k]
}

/// 1-based ranks: a permutation of 1..=S with rank 1 at the largest score.
pub fn rank(r: &RankingVector) -> Vec<usize> {
    let scores = r.as_slice();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| priority(scores, a, b));
    let mut ranks = vec![0; scores.len()];
    for (pos, site) in order.into_iter().enumerate() {
        ranks[site] = pos + 1;
    }
    ranks
}

pub fn topk_mask(r: &RankingVector, k: usize) -> Result<TopKMask> {
    Ok(topk_ids(r, k)?.to_mask(r.len()))
}

pub fn topk_ids(r: &RankingVector, k: usize) -> Result<TopKIds> {
    check_k(k, r.len())?;
    let mut scratch = Vec::with_capacity(r.len());
    let mut ids = select_top_k(r.as_slice(), k, &mut scratch).to_vec();
    ids.sort_unstable();
    Ok(TopKIds(ids))
}

/// Top-K of a plain slice, validating as [`RankingVector::new`] would.
pub fn topk_ids_of(scores: &[f64], k: usize) -> Result<TopKIds> {
    topk_ids(&RankingVector::new(scores.to_vec())?, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rv(v: &[f64]) -> RankingVector {
        RankingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&rv(&[3.0, 1.0, 2.0])), vec![1, 3, 2]);
        assert_eq!(rank(&rv(&[5.0, 5.0, 1.0])), vec![1, 2, 3]);
        let abc = [0.1476, 0.1476, 0.1476, 0.13, 0.13, 0.13, 0.04, 0.04, 0.04];
        assert_eq!(rank(&rv(&abc)), (1..=9).collect::<Vec<_>>());
    }

    #[test]
    fn mask_examples() {
        assert_eq!(topk_mask(&rv(&[3.0, 1.0, 2.0]), 2).unwrap().as_slice(), &[1, 0, 1]);
        assert_eq!(topk_mask(&rv(&[7.0, 7.0, 7.0]), 3).unwrap().as_slice(), &[1, 1, 1]);
        assert_eq!(topk_mask(&rv(&[0.5, 0.5, 0.1]), 1).unwrap().as_slice(), &[1, 0, 0]);
    }

    #[test]
    fn ids_examples() {
        assert_eq!(topk_ids(&rv(&[3.0, 1.0, 2.0]), 2).unwrap().as_slice(), &[0, 2]);
        assert_eq!(topk_ids(&rv(&[9.0]), 1).unwrap().as_slice(), &[0]);
        assert_eq!(topk_ids(&rv(&[1.0, 2.0, 3.0, 4.0]), 4).unwrap().as_slice(), &[0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RankingVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(RankingVector::new(vec![f64::INFINITY]).is_err());
        assert!(RankingVector::new(vec![]).is_err());
        assert!(topk_mask(&rv(&[1.0, 2.0]), 0).is_err());
        assert!(topk_mask(&rv(&[1.0, 2.0]), 3).is_err());
        assert!(TopKIds::new(vec![0, 0], 3).is_err());
        assert!(TopKIds::new(vec![3], 3).is_err());
    }

    #[test]
    fn negative_zero_ties_with_zero() {
        assert_eq!(topk_ids(&rv(&[0.0, -0.0]), 1).unwrap().as_slice(), &[0]);
        assert_eq!(topk_ids(&rv(&[-0.0, 0.0]), 1).unwrap().as_slice(), &[0]);
    }

    fn scores_and_k() -> impl Strategy<Value = (Vec<f64>, usize)> {
        // Small integer grid so ties are common.
        prop::collection::vec((-5i32..5).prop_map(|v| v as f64 * 0.5), 1..40)
            .prop_flat_map(|v| {
                let n = v.len();
                (Just(v), 1..=n)
            })
    }

    proptest! {
        #[test]
        fn mask_sums_to_k_and_matches_ids((scores, k) in scores_and_k()) {
            let r = rv(&scores);
            let mask = topk_mask(&r, k).unwrap();
            prop_assert_eq!(mask.k(), k);
            prop_assert_eq!(mask.to_ids(), topk_ids(&r, k).unwrap());
            let ranks = rank(&r);
            for (s, &b) in mask.as_slice().iter().enumerate() {
                prop_assert_eq!(b == 1, ranks[s] <= k);
            }
        }

        #[test]
        fn rank_is_permutation((scores, _k) in scores_and_k()) {
            let mut ranks = rank(&rv(&scores));
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..=scores.len()).collect::<Vec<_>>());
        }

        #[test]
        fn monotone_consistency((scores, k) in scores_and_k()) {
            let mask = topk_mask(&rv(&scores), k).unwrap();
            for a in 0..scores.len() {
                for b in 0..scores.len() {
                    if scores[a] > scores[b] && mask.as_slice()[b] == 1 {
                        prop_assert_eq!(mask.as_slice()[a], 1);
                    }
                }
            }
        }

        #[test]
        fn shift_invariant((scores, k) in scores_and_k(), quarters in -400i32..400) {
            // Dyadic shifts keep ties on the half-integer grid exact.
            let c = quarters as f64 / 4.0;
            let shifted: Vec<f64> = scores.iter().map(|v| v + c).collect();
            prop_assert_eq!(
                topk_mask(&rv(&scores), k).unwrap(),
                topk_mask(&rv(&shifted), k).unwrap()
            );
        }

        #[test]
        fn permutation_equivariant(
            raw in prop::collection::hash_set(-1000i32..1000, 1..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let scores: Vec<f64> = raw.into_iter().map(|v| v as f64).collect();
            let n = scores.len();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&p| scores[p]).collect();
            for k in 1..=n {
                let base = topk_mask(&rv(&scores), k).unwrap();
                let moved = topk_mask(&rv(&permuted), k).unwrap();
                for (i, &p) in perm.iter().enumerate() {
                    prop_assert_eq!(moved.as_slice()[i], base.as_slice()[p]);
                }
            }
        }
    }
}
