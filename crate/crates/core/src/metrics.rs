//! Fraction of best possible reach (BPR) and the pieces of the penalized
//! decision loss built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topk::{self, check_k, RankingVector, TopKIds};

/// Realized non-negative outcome per site (event counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome(Vec<f64>);

impl Outcome {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::invalid("outcome must have at least one site"));
        }
        if let Some(i) = y.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!(
                "outcome at site {i} must be finite and non-negative, got {}",
                y[i]
            )));
        }
        Ok(Outcome(y))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for Outcome {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BprConfig {
    pub k: usize,
    pub epsilon: f64,
    pub lambda: f64,
}

impl BprConfig {
    pub fn validate(&self, n_sites: usize) -> Result<()> {
        check_k(self.k, n_sites)?;
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!("epsilon = {} must lie in [0, 1]", self.epsilon)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda = {} must be positive", self.lambda)));
        }
        Ok(())
    }
}

/// Sum of the K largest outcomes: the reach of a hindsight-perfect selection.
pub fn oracle_reach(y: &[f64], k: usize) -> f64 {
    let mut scratch = Vec::with_capacity(y.len());
    topk::select_top_k(y, k, &mut scratch).iter().map(|&i| y[i]).sum()
}

fn checked_denominator(y: &[f64], k: usize) -> Result<f64> {
    check_k(k, y.len())?;
    let den = oracle_reach(y, k);
    if den > 0.0 {
        Ok(den)
    } else {
        Err(Error::DegenerateOutcome { k })
    }
}

pub fn bpr(selection: &TopKIds, y: &Outcome, k: usize) -> Result<f64> {
    if selection.len() != k {
        return Err(Error::invalid(format!(
            "selection has {} sites, expected K = {k}",
            selection.len()
        )));
    }
    if let Some(&bad) = selection.as_slice().iter().find(|&&i| i >= y.len()) {
        return Err(Error::invalid(format!("selected site {bad} out of range")));
    }
    let den = checked_denominator(y.as_slice(), k)?;
    let num: f64 = selection.as_slice().iter().map(|&i| y.as_slice()[i]).sum();
    Ok(num / den)
}

/// BPR of a selection, treating a period with no events as fully reached.
pub fn bpr_or_one(selection: &TopKIds, y: &Outcome, k: usize) -> Result<f64> {
    match bpr(selection, y, k) {
        Err(Error::DegenerateOutcome { .. }) => {
            log::warn!("period has no events in the oracle top-{k}; BPR defined as 1");
            Ok(1.0)
        }
        other => other,
    }
}

/// BPR of the top-K of raw `scores`, 1 when the period has no events in
/// its oracle top-K. Caller guarantees matching lengths, finite scores and
/// a valid K.
pub(crate) fn hard_bpr(scores: &[f64], y: &[f64], k: usize, scratch: &mut Vec<usize>) -> f64 {
    let reach = oracle_reach(y, k);
    if reach > 0.0 {
        topk::select_top_k(scores, k, scratch).iter().map(|&i| y[i]).sum::<f64>() / reach
    } else {
        1.0
    }
}

/// Negative BPR of the top-K selection of `r`.
pub fn loss_bpr(r: &RankingVector, y: &Outcome, k: usize) -> Result<f64> {
    if r.len() != y.len() {
        return Err(Error::shape(format!("ranking has {} sites, outcome {}", r.len(), y.len())));
    }
    let den = checked_denominator(y.as_slice(), k)?;
    let mask = topk::topk_mask(r, k)?;
    let num: f64 = mask
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(&b, &v)| b as f64 * v)
        .sum();
    Ok(-(num / den))
}

/// Constraint value; non-positive iff BPR >= epsilon.
pub fn constraint_g(loss: f64, epsilon: f64) -> f64 {
    epsilon + loss
}

pub fn penalty_term(g: f64, lambda: f64) -> f64 {
    lambda * g.max(0.0)
}

/// Gradient of `lambda * max(epsilon - y.b / den, 0)` with respect to the
/// mask `b`. Zero unless the constraint is strictly violated.
pub fn grad_penalty_wrt_mask(y: &Outcome, k: usize, g: f64, lambda: f64) -> Result<Vec<f64>> {
    let den = checked_denominator(y.as_slice(), k)?;
    if g > 0.0 {
        Ok(y.as_slice().iter().map(|v| -lambda * v / den).collect())
    } else {
        Ok(vec![0.0; y.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn out(v: &[f64]) -> Outcome {
        Outcome::new(v.to_vec()).unwrap()
    }

    fn rv(v: &[f64]) -> RankingVector {
        RankingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn bpr_examples() {
        let y = out(&[5.0, 0.0, 3.0, 1.0]);
        let sel = TopKIds::new(vec![0, 3], 4).unwrap();
        assert_eq!(bpr(&sel, &y, 2).unwrap(), 0.75);
        let oracle = topk::topk_ids(&rv(y.as_slice()), 2).unwrap();
        assert_eq!(bpr(&oracle, &y, 2).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_outcome() {
        let y = out(&[0.0, 0.0, 0.0]);
        let sel = TopKIds::new(vec![1], 3).unwrap();
        assert!(matches!(bpr(&sel, &y, 1), Err(Error::DegenerateOutcome { k: 1 })));
        assert_eq!(bpr_or_one(&sel, &y, 1).unwrap(), 1.0);
        assert!(grad_penalty_wrt_mask(&y, 1, 0.5, 1.0).is_err());
        assert!(Outcome::new(vec![-1.0]).is_err());
        assert!(bpr(&sel, &out(&[1.0, 2.0, 3.0]), 2).is_err());
    }

    #[test]
    fn loss_examples() {
        let y = out(&[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(loss_bpr(&rv(y.as_slice()), &y, 2).unwrap(), -1.0);
        assert_eq!(loss_bpr(&rv(&[1.0, 2.0, 3.0, 4.0]), &y, 1).unwrap(), -0.25);
        assert_eq!(loss_bpr(&rv(&[0.0, 0.0, 0.0]), &out(&[10.0, 0.0, 0.0]), 1).unwrap(), -1.0);
    }

    #[test]
    fn constraint_and_penalty() {
        assert_relative_eq!(constraint_g(-0.8, 0.6), -0.2, epsilon = 1e-15);
        assert_relative_eq!(constraint_g(-0.5, 0.6), 0.1, epsilon = 1e-15);
        assert_eq!(constraint_g(-1.0, 1.0), 0.0);
        assert_eq!(penalty_term(-0.2, 30.0), 0.0);
        assert_relative_eq!(penalty_term(0.1, 30.0), 3.0, epsilon = 1e-14);
        assert_eq!(penalty_term(0.0, 30.0), 0.0);
    }

    #[test]
    fn penalty_gradient_examples() {
        let zero = grad_penalty_wrt_mask(&out(&[4.0, 1.0]), 1, -0.1, 30.0).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
        let g = grad_penalty_wrt_mask(&out(&[4.0, 0.0, 0.0, 0.0]), 1, 0.2, 1.0).unwrap();
        assert_eq!(g, vec![-1.0, 0.0, 0.0, 0.0]);
        let g = grad_penalty_wrt_mask(&out(&[2.0, 2.0]), 1, 0.5, 30.0).unwrap();
        assert_eq!(g, vec![-30.0, -30.0]);
        // boundary g = 0 counts as satisfied
        let g = grad_penalty_wrt_mask(&out(&[2.0, 2.0]), 1, 0.0, 30.0).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    fn outcome_and_k() -> impl Strategy<Value = (Vec<f64>, usize)> {
        prop::collection::vec(0u32..50, 1..25)
            .prop_filter("needs an event", |v| v.iter().any(|&x| x > 0))
            .prop_flat_map(|v| {
                let n = v.len();
                (Just(v.into_iter().map(f64::from).collect::<Vec<_>>()), 1..=n)
            })
    }

    proptest! {
        #[test]
        fn bpr_in_unit_interval_and_loss_identity(
            (y, k) in outcome_and_k(),
            scores in prop::collection::vec(-3i32..3, 25),
        ) {
            let y = out(&y);
            let r = rv(&scores[..y.len()].iter().map(|&v| v as f64).collect::<Vec<_>>());
            let ids = topk::topk_ids(&r, k).unwrap();
            let b = bpr(&ids, &y, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
            prop_assert_eq!(loss_bpr(&r, &y, k).unwrap(), -b);
            let num: f64 = ids.as_slice().iter().map(|&i| y.as_slice()[i]).sum();
            prop_assert_eq!(b == 1.0, num == oracle_reach(y.as_slice(), k));
        }

        #[test]
        fn bpr_scale_invariant((y, k) in outcome_and_k(), c in 0.01f64..100.0) {
            let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
            let ids = topk::topk_ids(&rv(&vec![0.0; y.len()]), k).unwrap();
            let a = bpr(&ids, &out(&y), k).unwrap();
            let b = bpr(&ids, &out(&scaled), k).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn penalty_nonnegative(g in -2.0f64..2.0, lambda in 0.1f64..100.0) {
            let p = penalty_term(g, lambda);
            prop_assert!(p >= 0.0);
            prop_assert_eq!(p == 0.0, g <= 0.0);
        }

        #[test]
        fn penalty_gradient_matches_finite_differences(
            (y, k) in outcome_and_k(),
            mask_raw in prop::collection::vec(0.0f64..1.0, 25),
            lambda in 0.5f64..50.0,
        ) {
            let y_out = out(&y);
            let den = oracle_reach(&y, k);
            let b = &mask_raw[..y.len()];
            // Large epsilon keeps the constraint violated in a neighbourhood of b.
            let eps = 1.0 + 0.1 * b.len() as f64;
            let pen = |b: &[f64]| {
                let loss = -b.iter().zip(&y).map(|(bi, yi)| bi * yi).sum::<f64>() / den;
                penalty_term(constraint_g(loss, eps), lambda)
            };
            let g = constraint_g(-b.iter().zip(&y).map(|(bi, yi)| bi * yi).sum::<f64>() / den, eps);
            prop_assume!(g > 1e-3);
            let grad = grad_penalty_wrt_mask(&y_out, k, g, lambda).unwrap();
            let h = 1e-6;
            for i in 0..b.len() {
                let mut up = b.to_vec();
                let mut dn = b.to_vec();
                up[i] += h;
                dn[i] -= h;
                let fd = (pen(&up) - pen(&dn)) / (2.0 * h);
                prop_assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + grad[i].abs()), "{} vs {}", fd, grad[i]);
            }
        }
    }
}
