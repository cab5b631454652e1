//! Training objectives and the per-group clean-rate estimator.
//!
//! Three losses drive training:
//! - [`class_cross_entropy`]: cross entropy between class predictions and
//!   verified labels, over alignment points.
//! - [`confidence_cross_entropy`]: cross entropy between predicted label
//!   confidence and the actual observed/verified agreement, over alignment
//!   points.
//! - [`weighted_noisy_cross_entropy`]: cross entropy against the observed
//!   (possibly wrong) labels over non-alignment points, where each term is
//!   scaled by the predicted label confidence and by the inverse of its
//!   group's estimated clean rate. The group weighting keeps soft filtering
//!   from de-emphasizing groups with higher noise rates.
//!
//! All losses are means over their batch, so the scalar hyperparameters that
//! mix them are independent of batch size.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::clamp_prob;

/// Floor on the estimated clean rate before inversion, so group weights stay
/// finite even if every confidence in a group collapses toward zero.
pub const EPS_RATE: f64 = 1e-3;

/// Estimated noise rate and clean weight for one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRate {
    /// Mean of `1 - confidence` over the group's instances.
    pub noise_rate: f64,
    /// `1 / max(1 - noise_rate, EPS_RATE)`; always >= 1 and finite.
    pub clean_weight: f64,
}

/// Per-group noise-rate estimates keyed by group id.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRates {
    rates: BTreeMap<usize, GroupRate>,
}

impl GroupRates {
    pub fn get(&self, group: usize) -> Option<&GroupRate> {
        self.rates.get(&group)
    }

    pub fn weight(&self, group: usize) -> Result<f64> {
        self.rates
            .get(&group)
            .map(|r| r.clean_weight)
            .ok_or(Error::UnknownGroup(group))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &GroupRate)> {
        self.rates.iter().map(|(k, v)| (*k, v))
    }

    /// Builds rates directly; primarily for tests and diagnostics.
    pub fn from_noise_rates(noise_rates: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let rates = noise_rates
            .into_iter()
            .map(|(g, r)| {
                (
                    g,
                    GroupRate {
                        noise_rate: r,
                        clean_weight: 1.0 / (1.0 - r).max(EPS_RATE),
                    },
                )
            })
            .collect();
        GroupRates { rates }
    }
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "{what}: lengths {a} and {b} differ"
        )));
    }
    Ok(())
}

/// Mean binary cross entropy of probabilities against 0/1 targets.
fn binary_cross_entropy(probs: &[f64], targets: &[u8], what: &str) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyBatch(what.into()));
    }
    check_lengths(probs.len(), targets.len(), what)?;
    let mut total = 0.0;
    for (&p, &t) in probs.iter().zip(targets) {
        let p = clamp_prob(p);
        total -= if t == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / probs.len() as f64)
}

/// Cross entropy between class predictions and verified labels.
pub fn class_cross_entropy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    binary_cross_entropy(probs, labels, "class cross entropy")
}

/// Cross entropy between predicted label confidence and the 0/1 indicator of
/// whether the observed label agrees with the verified label.
pub fn confidence_cross_entropy(confidences: &[f64], agree: &[u8]) -> Result<f64> {
    binary_cross_entropy(confidences, agree, "confidence cross entropy")
}

/// Per-group noise rates from predicted confidences: within each group the
/// noise rate is the mean of `1 - confidence`, and the clean weight is the
/// inverse of the floored clean rate.
pub fn estimate_group_rates(confidences: &[f64], groups: &[usize]) -> Result<GroupRates> {
    if confidences.is_empty() {
        return Err(Error::EmptyBatch("group rate estimation".into()));
    }
    check_lengths(confidences.len(), groups.len(), "group rate estimation")?;
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&c, &g) in confidences.iter().zip(groups) {
        let entry = sums.entry(g).or_insert((0.0, 0));
        entry.0 += 1.0 - c;
        entry.1 += 1;
    }
    let rates = sums
        .into_iter()
        .map(|(g, (sum, count))| {
            let noise_rate = sum / count as f64;
            let clean_weight = 1.0 / (1.0 - noise_rate).max(EPS_RATE);
            (g, GroupRate { noise_rate, clean_weight })
        })
        .collect();
    Ok(GroupRates { rates })
}

/// Log-likelihood of the observed label under prediction `p`:
/// `ln p` if the observed label is 1, else `ln (1 - p)`.
#[inline]
pub fn observed_log_likelihood(p: f64, y_obs: u8) -> f64 {
    let p = clamp_prob(p);
    if y_obs == 1 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Confidence-weighted, group-reweighted cross entropy over the observed
/// labels of non-alignment points.
///
/// Each instance contributes `-weight(group) * confidence * ln p(observed)`,
/// averaged over the batch. An instance with zero confidence contributes
/// exactly zero. Fails on a group id without an estimated rate.
pub fn weighted_noisy_cross_entropy(
    probs: &[f64],
    observed: &[u8],
    confidences: &[f64],
    groups: &[usize],
    rates: &GroupRates,
) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyBatch("weighted noisy cross entropy".into()));
    }
    check_lengths(probs.len(), observed.len(), "weighted noisy cross entropy")?;
    check_lengths(probs.len(), confidences.len(), "weighted noisy cross entropy")?;
    check_lengths(probs.len(), groups.len(), "weighted noisy cross entropy")?;
    let mut total = 0.0;
    for i in 0..probs.len() {
        let weight = rates.weight(groups[i])?;
        total -= weight * confidences[i] * observed_log_likelihood(probs[i], observed[i]);
    }
    Ok(total / probs.len() as f64)
}

/// d(per-example binary CE)/d(probability) for targets in {0, 1}.
#[inline]
pub fn binary_ce_grad(p: f64, target: u8) -> f64 {
    let p = clamp_prob(p);
    if target == 1 {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// d(per-example weighted noisy CE)/d(class probability).
#[inline]
pub fn weighted_noisy_grad_prob(p: f64, y_obs: u8, confidence: f64, weight: f64) -> f64 {
    weight * confidence * binary_ce_grad(p, y_obs)
}

/// d(per-example weighted noisy CE)/d(confidence).
#[inline]
pub fn weighted_noisy_grad_confidence(p: f64, y_obs: u8, weight: f64) -> f64 {
    -weight * observed_log_likelihood(p, y_obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn class_ce_examples() {
        // Chance predictions: ln 2.
        let v = class_cross_entropy(&[0.5, 0.5, 0.5], &[1, 0, 1]).unwrap();
        assert!((v - 2.0f64.ln()).abs() < TOL);
        assert!((v - 0.6931).abs() < 1e-4);

        // Perfect clamped predictions: -ln(1 - eps) ~ 1e-7.
        let v = class_cross_entropy(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!(v > 0.0 && v < 2e-7);

        // Singleton: -ln 0.25.
        let v = class_cross_entropy(&[0.25], &[1]).unwrap();
        assert!((v - (-0.25f64.ln())).abs() < TOL);
        assert!((v - 1.3863).abs() < 1e-4);

        assert!(matches!(
            class_cross_entropy(&[], &[]),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn confidence_ce_examples() {
        let v = confidence_cross_entropy(&[0.5, 0.5], &[1, 0]).unwrap();
        assert!((v - 2.0f64.ln()).abs() < TOL);

        let v = confidence_cross_entropy(&[1.0, 1.0], &[1, 1]).unwrap();
        assert!(v < 2e-7);

        // Singleton disagreement with confidence 0.2: -ln 0.8.
        let v = confidence_cross_entropy(&[0.2], &[0]).unwrap();
        assert!((v - (-0.8f64.ln())).abs() < TOL);
        assert!((v - 0.2231).abs() < 1e-4);
    }

    #[test]
    fn group_rate_examples() {
        let r = estimate_group_rates(&[1.0, 1.0], &[0, 0]).unwrap();
        assert_eq!(r.get(0).unwrap().noise_rate, 0.0);
        assert_eq!(r.get(0).unwrap().clean_weight, 1.0);

        let r = estimate_group_rates(&[0.5, 0.5], &[0, 0]).unwrap();
        assert!((r.get(0).unwrap().clean_weight - 2.0).abs() < TOL);

        // Group 0: mean confidence 0.8 -> weight 1.25; group 1: 0.4 -> 2.5.
        let r = estimate_group_rates(&[0.9, 0.7, 0.4], &[0, 0, 1]).unwrap();
        assert!((r.weight(0).unwrap() - 1.25).abs() < TOL);
        assert!((r.weight(1).unwrap() - 2.5).abs() < TOL);

        assert!(estimate_group_rates(&[], &[]).is_err());
    }

    #[test]
    fn group_weight_is_floored() {
        let r = estimate_group_rates(&[0.0, 0.0], &[0, 0]).unwrap();
        assert!((r.weight(0).unwrap() - 1.0 / EPS_RATE).abs() < TOL);
    }

    #[test]
    fn weighted_loss_reduces_to_plain_ce_at_full_confidence() {
        let probs = [0.8, 0.3, 0.6];
        let observed = [1, 0, 1];
        let conf = [1.0, 1.0, 1.0];
        let groups = [0, 0, 0];
        let rates = estimate_group_rates(&conf, &groups).unwrap();
        let weighted =
            weighted_noisy_cross_entropy(&probs, &observed, &conf, &groups, &rates).unwrap();
        let plain = class_cross_entropy(&probs, &observed).unwrap();
        assert!((weighted - plain).abs() < TOL);
    }

    #[test]
    fn zero_confidence_contributes_nothing() {
        let rates = GroupRates::from_noise_rates([(0, 0.5)]);
        let with = weighted_noisy_cross_entropy(
            &[0.9, 0.2],
            &[1, 1],
            &[0.7, 0.0],
            &[0, 0],
            &rates,
        )
        .unwrap();
        let without =
            weighted_noisy_cross_entropy(&[0.9], &[1], &[0.7], &[0], &rates).unwrap();
        // Same sum, different denominators (2 vs 1).
        assert!((with * 2.0 - without).abs() < TOL);
    }

    #[test]
    fn weighted_loss_worked_example() {
        // Two instances, one group, confidences {1, 0.5} -> clean rate 0.75,
        // weight 1/0.75; observed {1,1}; predictions {0.8, 0.6}.
        let conf = [1.0, 0.5];
        let groups = [0, 0];
        let rates = estimate_group_rates(&conf, &groups).unwrap();
        let v = weighted_noisy_cross_entropy(&[0.8, 0.6], &[1, 1], &conf, &groups, &rates)
            .unwrap();
        let expect = -(0.5) * (1.0 / 0.75) * (1.0 * 0.8f64.ln() + 0.5 * 0.6f64.ln());
        assert!((v - expect).abs() < TOL);
        assert!((v - 0.3191).abs() < 1e-4);
    }

    #[test]
    fn unknown_group_is_an_error() {
        let rates = GroupRates::from_noise_rates([(0, 0.1)]);
        assert!(matches!(
            weighted_noisy_cross_entropy(&[0.5], &[1], &[0.5], &[3], &rates),
            Err(Error::UnknownGroup(3))
        ));
    }

    /// Exact expectation of the weighted loss over every flip pattern.
    ///
    /// Enumerates all `2^n` observed-label patterns. Instance `i` keeps its
    /// clean label with probability `p[i]`. In each pattern the confidence
    /// fed to the loss is the exact correctness indicator (1 if the observed
    /// label kept the clean value, 0 if it flipped), while the group rates
    /// are held fixed at the marginal rates implied by `p`. The expectation
    /// must equal the clean-label cross entropy when `p` is constant within
    /// each group.
    fn enumerate_expected_loss(
        probs: &[f64],
        clean: &[u8],
        p_correct: &[f64],
        groups: &[usize],
    ) -> f64 {
        let n = probs.len();
        let rates = estimate_group_rates(p_correct, groups).unwrap();
        let mut expectation = 0.0;
        for pattern in 0u32..(1 << n) {
            let mut prob_pattern = 1.0;
            let mut observed = vec![0u8; n];
            let mut confidence = vec![0.0; n];
            for i in 0..n {
                let flipped = (pattern >> i) & 1 == 1;
                if flipped {
                    prob_pattern *= 1.0 - p_correct[i];
                    observed[i] = 1 - clean[i];
                    confidence[i] = 0.0;
                } else {
                    prob_pattern *= p_correct[i];
                    observed[i] = clean[i];
                    confidence[i] = 1.0;
                }
            }
            let loss =
                weighted_noisy_cross_entropy(probs, &observed, &confidence, groups, &rates)
                    .unwrap();
            expectation += prob_pattern * loss;
        }
        expectation
    }

    #[test]
    fn expectation_identity_matches_clean_cross_entropy() {
        // Groupwise-constant correctness probabilities, n = 8, 2 groups.
        let probs = [0.8, 0.3, 0.55, 0.9, 0.15, 0.6, 0.7, 0.45];
        let clean = [1, 0, 1, 1, 0, 0, 1, 0];
        let groups = [0, 0, 0, 0, 1, 1, 1, 1];
        let p_correct = [0.8, 0.8, 0.8, 0.8, 0.55, 0.55, 0.55, 0.55];

        let expectation = enumerate_expected_loss(&probs, &clean, &p_correct, &groups);
        let clean_ce = class_cross_entropy(&probs, &clean).unwrap();
        assert!(
            (expectation - clean_ce).abs() < 1e-9,
            "expectation {expectation} vs clean CE {clean_ce}"
        );
    }

    #[test]
    fn expectation_identity_smaller_case() {
        let probs = [0.62, 0.21, 0.88, 0.4, 0.5, 0.75];
        let clean = [1, 1, 0, 0, 1, 0];
        let groups = [0, 0, 0, 1, 1, 1];
        let p_correct = [0.9, 0.9, 0.9, 0.35, 0.35, 0.35];
        let expectation = enumerate_expected_loss(&probs, &clean, &p_correct, &groups);
        let clean_ce = class_cross_entropy(&probs, &clean).unwrap();
        assert!((expectation - clean_ce).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_loss_finite_differences() {
        // The gradient helpers must be exact derivatives of the loss values.
        let h = 1e-6;
        let p = 0.37;
        let w = 1.4;
        let c = 0.8;
        for y in [0u8, 1u8] {
            let f = |p: f64| -w * c * observed_log_likelihood(p, y);
            let numeric = (f(p + h) - f(p - h)) / (2.0 * h);
            let analytic = weighted_noisy_grad_prob(p, y, c, w);
            assert!((numeric - analytic).abs() < 1e-6);

            let g = |c: f64| -w * c * observed_log_likelihood(p, y);
            let numeric = (g(c + h) - g(c - h)) / (2.0 * h);
            let analytic = weighted_noisy_grad_confidence(p, y, w);
            assert!((numeric - analytic).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn losses_are_non_negative_and_finite(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..40),
            seed in 0u64..1000,
        ) {
            let labels: Vec<u8> = probs.iter().enumerate().map(|(i, _)| ((i + seed as usize) % 2) as u8).collect();
            let v = class_cross_entropy(&probs, &labels).unwrap();
            prop_assert!(v.is_finite() && v >= 0.0);
        }

        #[test]
        fn weighted_loss_is_permutation_invariant_within_group(
            values in proptest::collection::vec((0.01f64..0.99, 0.01f64..0.99), 2..12),
        ) {
            let n = values.len();
            let probs: Vec<f64> = values.iter().map(|v| v.0).collect();
            let conf: Vec<f64> = values.iter().map(|v| v.1).collect();
            let observed: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let groups = vec![0usize; n];
            let rates = estimate_group_rates(&conf, &groups).unwrap();
            let base = weighted_noisy_cross_entropy(&probs, &observed, &conf, &groups, &rates).unwrap();

            // Reverse the instances (a permutation within the single group).
            let probs_r: Vec<f64> = probs.iter().rev().copied().collect();
            let conf_r: Vec<f64> = conf.iter().rev().copied().collect();
            let observed_r: Vec<u8> = observed.iter().rev().copied().collect();
            let permuted = weighted_noisy_cross_entropy(&probs_r, &observed_r, &conf_r, &groups, &rates).unwrap();
            prop_assert!((base - permuted).abs() < 1e-12);
        }
    }
}
