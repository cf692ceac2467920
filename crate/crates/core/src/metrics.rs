//! Metric kernels: binary entropy, boundary margin, ROC-AUC, F1 and
//! per-class before/after bookkeeping.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_prob<T: Scalar>(p: T) -> Result<()> {
    if p >= T::zero() && p <= T::one() {
        Ok(())
    } else {
        Err(Error::Domain { what: "p", value: p.to_f64().unwrap_or(f64::NAN) })
    }
}

/// Binary entropy in nats.
///
/// `p` is clamped away from 0 and 1 before taking logs, so the endpoints
/// evaluate to (nearly) zero instead of NaN.
pub fn binary_entropy<T: Scalar>(p: T) -> Result<T> {
    check_prob(p)?;
    Ok(entropy_unchecked(p))
}

pub(crate) fn entropy_unchecked<T: Scalar>(p: T) -> T {
    let eps = T::log_clamp();
    let p = p.max(eps).min(T::one() - eps);
    let q = T::one() - p;
    -(p * p.ln()) - q * q.ln()
}

/// Distance from the decision boundary, `|p - theta|`.
pub fn margin<T: Scalar>(p: T, theta: T) -> Result<T> {
    check_prob(p)?;
    if !(theta > T::zero() && theta < T::one()) {
        return Err(Error::Domain { what: "theta", value: theta.to_f64().unwrap_or(f64::NAN) });
    }
    Ok((p - theta).abs())
}

fn cmp_scores<T: Scalar>(a: T, b: T) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Score order of one column, reusable across many retained subsets.
#[derive(Debug, Clone)]
pub struct RankedScores<T> {
    scores: Vec<T>,
    order: Vec<usize>,
}

impl<T: Scalar> RankedScores<T> {
    pub fn new(scores: &[T]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| cmp_scores(scores[a], scores[b]));
        Self { scores: scores.to_vec(), order }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Mann-Whitney AUC over the rows where `keep(row)` holds.
    ///
    /// Counts are kept as doubled integers so ties contribute exactly half.
    pub fn auc_where(&self, labels: &[bool], keep: impl Fn(usize) -> bool) -> Option<T> {
        let mut neg_below: u64 = 0;
        let mut n_pos: u64 = 0;
        let mut doubled_u: u128 = 0;
        let mut i = 0;
        while i < self.order.len() {
            let score = self.scores[self.order[i]];
            let (mut pos, mut neg) = (0u64, 0u64);
            let mut j = i;
            while j < self.order.len() && self.scores[self.order[j]] == score {
                let row = self.order[j];
                if keep(row) {
                    if labels[row] {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                }
                j += 1;
            }
            doubled_u += 2 * pos as u128 * neg_below as u128 + pos as u128 * neg as u128;
            neg_below += neg;
            n_pos += pos;
            i = j;
        }
        let n_neg = neg_below;
        if n_pos == 0 || n_neg == 0 {
            return None;
        }
        let pairs = 2 * n_pos as u128 * n_neg as u128;
        Some(T::lit(doubled_u as f64) / T::lit(pairs as f64))
    }
}

/// ROC-AUC as the Mann-Whitney statistic; `None` without both classes present.
pub fn auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<Option<T>> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: labels.len() });
    }
    Ok(RankedScores::new(scores).auc_where(labels, |_| true))
}

/// Confusion counts at a fixed boundary, predicting positive when `p >= theta`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add<T: Scalar>(&mut self, p: T, label: bool, theta: T) {
        match (p >= theta, label) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// `2TP / (2TP + FP + FN)`; `None` when all three are zero.
    pub fn f1<T: Scalar>(&self) -> Option<T> {
        let den = 2 * self.tp + self.fp + self.fn_;
        (den > 0).then(|| T::lit((2 * self.tp) as f64) / T::lit(den as f64))
    }
}

/// F1 of the thresholded prediction `p >= theta`.
pub fn f1_at_boundary<T: Scalar>(probs: &[T], labels: &[bool], theta: T) -> Result<Option<T>> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch { left: probs.len(), right: labels.len() });
    }
    let mut cm = Confusion::default();
    for (&p, &l) in probs.iter().zip(labels) {
        cm.add(p, l, theta);
    }
    Ok(cm.f1())
}

/// AUC, F1 and coverage of one class on a retained subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct ClassMetrics<T: Scalar> {
    pub auc: Option<T>,
    pub f1: Option<T>,
    pub n_retained: usize,
    pub n_total: usize,
    pub rejection_rate: T,
}

impl<T: Scalar> ClassMetrics<T> {
    /// Metrics over the rows of `probs`/`labels` for which `accepted` is true.
    pub fn compute(probs: &[T], labels: &[bool], accepted: &[bool], theta: T) -> Result<Self> {
        if probs.len() != labels.len() || probs.len() != accepted.len() {
            return Err(Error::LengthMismatch { left: probs.len(), right: accepted.len() });
        }
        let ranked = RankedScores::new(probs);
        Ok(Self::from_ranked(&ranked, labels, theta, |i| accepted[i]))
    }

    pub(crate) fn from_ranked(
        ranked: &RankedScores<T>,
        labels: &[bool],
        theta: T,
        keep: impl Fn(usize) -> bool,
    ) -> Self {
        let n_total = ranked.len();
        let mut cm = Confusion::default();
        let mut n_retained = 0;
        for (i, (&p, &label)) in ranked.scores.iter().zip(labels).enumerate() {
            if keep(i) {
                n_retained += 1;
                cm.add(p, label, theta);
            }
        }
        let rejection_rate = if n_total == 0 { T::zero() } else { T::ratio(n_total - n_retained, n_total) };
        Self { auc: ranked.auc_where(labels, &keep), f1: cm.f1(), n_retained, n_total, rejection_rate }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_count_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let mut num = 0.0;
        let (mut np, mut nn) = (0usize, 0usize);
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                nn += 1;
                continue;
            }
            np += 1;
            for (j, &lj) in labels.iter().enumerate() {
                if !lj {
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (np > 0 && nn > 0).then(|| num / (np * nn) as f64)
    }

    #[test]
    fn entropy_examples() {
        assert!((binary_entropy(0.5f64).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(binary_entropy(0.0f64).unwrap().abs() < 1e-10);
        assert!(binary_entropy(1.0f64).unwrap().abs() < 1e-10);
        // -0.9 ln 0.9 - 0.1 ln 0.1 = 0.325082973391448...
        assert!((binary_entropy(0.9f64).unwrap() - 0.325_082_973_391_448_2).abs() < 1e-12);
        assert_eq!(binary_entropy(1.5f64).unwrap_err().code(), "DOMAIN");
        assert_eq!(binary_entropy(-0.1f64).unwrap_err().code(), "DOMAIN");
    }

    #[test]
    fn entropy_single_precision() {
        let h = binary_entropy(0.5f32).unwrap();
        assert!((h - std::f32::consts::LN_2).abs() < 1e-6);
        assert!(binary_entropy(0.0f32).unwrap().is_finite());
    }

    #[test]
    fn entropy_symmetric_and_increasing_on_grid() {
        let mut prev = -1.0;
        for k in 0..=1000 {
            let p = k as f64 / 1000.0;
            let h = binary_entropy(p).unwrap();
            assert!((h - binary_entropy(1.0 - p).unwrap()).abs() < 1e-12);
            if p <= 0.5 {
                assert!(h > prev, "not increasing at {p}");
                prev = h;
            }
        }
    }

    #[test]
    fn margin_examples() {
        assert_eq!(margin(0.5f64, 0.5).unwrap(), 0.0);
        assert!((margin(0.9f64, 0.5).unwrap() - 0.4).abs() < 1e-15);
        assert!((margin(0.2f64, 0.5).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(margin(1.2f64, 0.5).unwrap_err().code(), "DOMAIN");
        assert_eq!(margin(0.2f64, 1.0).unwrap_err().code(), "DOMAIN");
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap(), Some(1.0));
        assert_eq!(auc(&[0.1, 0.9], &[true, false]).unwrap(), Some(0.0));
        let (s, l) = ([0.5, 0.5, 0.7], [true, false, false]);
        assert_eq!(pair_count_auc(&s, &l), Some(0.25));
        assert_eq!(auc(&s, &l).unwrap(), Some(0.25));
        assert_eq!(auc(&[0.3, 0.4], &[true, true]).unwrap(), None);
        assert_eq!(auc(&[0.3], &[true, false]).unwrap_err().code(), "LENGTH_MISMATCH");
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_at_boundary(&[0.9], &[true], 0.5).unwrap(), Some(1.0));
        let (tp, fp, fn_) = (1.0, 1.0, 0.0);
        let oracle = 2.0 * tp / (2.0 * tp + fp + fn_);
        assert_eq!(f1_at_boundary(&[0.9, 0.9], &[true, false], 0.5).unwrap(), Some(oracle));
        assert_eq!(f1_at_boundary(&[0.1], &[false], 0.5).unwrap(), None);
        // boundary counts as positive
        assert_eq!(f1_at_boundary(&[0.5], &[true], 0.5).unwrap(), Some(1.0));
        // no true positives but errors present
        assert_eq!(f1_at_boundary(&[0.9], &[false], 0.5).unwrap(), Some(0.0));
    }

    #[test]
    fn class_metrics_rates() {
        let m =
            ClassMetrics::compute(&[0.9, 0.2, 0.8, 0.4], &[true, false, true, false], &[true, true, false, false], 0.5)
                .unwrap();
        assert_eq!((m.n_retained, m.n_total), (2, 4));
        assert_eq!(m.rejection_rate, 0.5);
        assert_eq!(m.auc, Some(1.0));
        let none = ClassMetrics::compute(&[0.9, 0.2], &[true, false], &[false, false], 0.5).unwrap();
        assert_eq!((none.auc, none.f1, none.rejection_rate), (None, None, 1.0));
    }

    fn scores_with_ties() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (1usize..=200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u32..=40).prop_map(|k| k as f64 / 40.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count((s, l) in scores_with_ties()) {
            let fast = auc(&s, &l).unwrap();
            let slow = pair_count_auc(&s, &l);
            match (fast, slow) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "{:?}", other),
            }
        }

        #[test]
        fn auc_flip_symmetry((s, l) in scores_with_ties()) {
            let flipped: Vec<bool> = l.iter().map(|b| !b).collect();
            if let (Some(a), Some(b)) = (auc(&s, &l).unwrap(), auc(&s, &flipped).unwrap()) {
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn auc_monotone_invariance(
            l in prop::collection::vec(any::<bool>(), 2..100),
            seed in any::<u64>(),
        ) {
            // distinct scores
            let n = l.len();
            let s: Vec<f64> = (0..n)
                .map(|i| ((i as u64).wrapping_mul(2654435761).wrapping_add(seed) % 1_000_003) as f64 / 1_000_003.0)
                .collect();
            let sq: Vec<f64> = s.iter().map(|p| p * p).collect();
            let squash: Vec<f64> = s.iter().map(|p| 1.0 / (1.0 + (-(8.0 * p - 4.0)).exp())).collect();
            let base = auc(&s, &l).unwrap();
            prop_assert_eq!(base, auc(&sq, &l).unwrap());
            prop_assert_eq!(base, auc(&squash, &l).unwrap());
        }

        #[test]
        fn f1_permutation_invariant((s, l) in scores_with_ties(), rot in 0usize..200) {
            let k = rot % s.len();
            let mut s2 = s.clone();
            let mut l2 = l.clone();
            s2.rotate_left(k);
            l2.rotate_left(k);
            s2.reverse();
            l2.reverse();
            prop_assert_eq!(f1_at_boundary(&s, &l, 0.5).unwrap(), f1_at_boundary(&s2, &l2, 0.5).unwrap());
        }
    }
}
