//! Discrimination and bias metrics: AUROC, equalized odds, AUEOC, and their
//! harmonic mean.
//!
//! AUROC is the exact Mann-Whitney statistic (ties credited one half).
//! Equalized odds at a threshold compares the two groups' true- and
//! false-positive rates; the area under that curve integrates the resulting
//! step function of the threshold exactly over `[0, 1]`. The harmonic mean
//! combines AUROC and AUEOC so the weaker metric dominates.

use crate::error::{Error, Result};

/// Scores with ground-truth labels and group ids.
///
/// Equalized-odds metrics require exactly two distinct group ids.
#[derive(Debug, Clone)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
    groups: Vec<usize>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, groups: Vec<usize>) -> Result<Self> {
        if scores.len() != labels.len() || scores.len() != groups.len() {
            return Err(Error::ShapeMismatch(format!(
                "scores/labels/groups lengths differ: {}/{}/{}",
                scores.len(),
                labels.len(),
                groups.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::EmptyBatch("scored set".into()));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Data("scores must lie in [0, 1]".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        Ok(ScoredSet {
            scores,
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    fn distinct_groups(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.groups.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Area under the ROC curve as the exact pairwise statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counted one half.
///
/// Computed via rank sums with average ranks for tie blocks, which equals the
/// brute-force pair count exactly. Errors if either class is absent.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "scores/labels lengths differ: {}/{}",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));

    // Average ranks (1-based) within tie blocks, summed over positives.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// True- and false-positive rates of one group at a threshold, `None` when
/// the group has no positives (respectively negatives).
fn group_rates_at(set: &ScoredSet, group: usize, tau: f64) -> (Option<f64>, Option<f64>) {
    let mut pos = 0usize;
    let mut neg = 0usize;
    let mut tp = 0usize;
    let mut fp = 0usize;
    for i in 0..set.len() {
        if set.groups[i] != group {
            continue;
        }
        let predicted_pos = set.scores[i] >= tau;
        if set.labels[i] == 1 {
            pos += 1;
            if predicted_pos {
                tp += 1;
            }
        } else {
            neg += 1;
            if predicted_pos {
                fp += 1;
            }
        }
    }
    let tpr = (pos > 0).then(|| tp as f64 / pos as f64);
    let fpr = (neg > 0).then(|| fp as f64 / neg as f64);
    (tpr, fpr)
}

/// Equalized odds between the two groups at threshold `tau`: one minus half
/// the sum of the absolute between-group gaps in true- and false-positive
/// rates. Predictions are positive when `score >= tau`.
///
/// If one group lacks positives (or negatives), the corresponding gap term is
/// dropped and the denominator reduced to the number of defined terms.
pub fn eo_at_threshold(set: &ScoredSet, tau: f64) -> Result<f64> {
    let groups = set.distinct_groups();
    if groups.len() != 2 {
        return Err(Error::UndefinedMetric(format!(
            "equalized odds requires exactly 2 groups, found {}",
            groups.len()
        )));
    }
    let (tp1, fp1) = group_rates_at(set, groups[0], tau);
    let (tp2, fp2) = group_rates_at(set, groups[1], tau);
    let mut defined = 0.0;
    let mut gap = 0.0;
    match (tp1, tp2) {
        (Some(a), Some(b)) => {
            defined += 1.0;
            gap += (a - b).abs();
        }
        _ => log::warn!("equalized odds: a group has no positives; TP term dropped"),
    }
    match (fp1, fp2) {
        (Some(a), Some(b)) => {
            defined += 1.0;
            gap += (a - b).abs();
        }
        _ => log::warn!("equalized odds: a group has no negatives; FP term dropped"),
    }
    if defined == 0.0 {
        return Err(Error::UndefinedMetric(
            "equalized odds: neither TP nor FP gap is defined".into(),
        ));
    }
    Ok((defined - gap) / defined)
}

/// Thresholds where the classification can change: 0, 1, and every distinct
/// score, ascending.
fn threshold_grid(set: &ScoredSet) -> Vec<f64> {
    let mut ts: Vec<f64> = set.scores.clone();
    ts.push(0.0);
    ts.push(1.0);
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    ts
}

/// The equalized-odds curve sampled at every threshold in the grid.
pub fn eo_curve(set: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    threshold_grid(set)
        .into_iter()
        .map(|t| eo_at_threshold(set, t).map(|eo| (t, eo)))
        .collect()
}

/// Area under the equalized-odds curve over thresholds in `[0, 1]`.
///
/// With `score >= tau` semantics, EO is constant on each interval between
/// consecutive distinct scores and equals its value at the interval's right
/// endpoint, so the integral of the step function is computed exactly.
pub fn aueoc(set: &ScoredSet) -> Result<f64> {
    let ts = threshold_grid(set);
    let mut area = 0.0;
    for w in ts.windows(2) {
        let width = w[1] - w[0];
        if width > 0.0 {
            area += width * eo_at_threshold(set, w[1])?;
        }
    }
    Ok(area)
}

/// Harmonic mean `2ab / (a + b)`, zero if either input is zero.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// ROC polyline as (false-positive rate, true-positive rate) points, one per
/// distinct threshold from high to low, with the (0,0) and (1,1) endpoints.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "scores/labels lengths differ: {}/{}",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j + 1;
    }
    Ok(points)
}

#[cfg(test)]
pub(crate) mod oracles {
    //! Independent reference implementations used only to check the fast paths.

    use super::ScoredSet;

    /// Brute-force pairwise AUROC: every (positive, negative) pair counted
    /// directly, ties worth one half.
    pub fn auroc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            if labels[i] != 1 {
                continue;
            }
            for j in 0..scores.len() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / pairs
    }

    /// Dense-grid AUEOC: midpoint rule over `m` thresholds spanning [0, 1].
    pub fn aueoc_dense_grid(set: &ScoredSet, m: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..m {
            let tau = (i as f64 + 0.5) / m as f64;
            total += super::eo_at_threshold(set, tau).unwrap();
        }
        total / m as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn auroc_examples() {
        // Perfect separation.
        let v = auroc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(v, 1.0);

        // All scores equal: pure chance.
        let v = auroc(&[0.4, 0.4, 0.4, 0.4], &[1, 0, 1, 0]).unwrap();
        assert_eq!(v, 0.5);

        // Worked pairwise example.
        let v = auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(v, 0.75);
    }

    #[test]
    fn auroc_single_class_is_undefined() {
        assert!(matches!(
            auroc(&[0.1, 0.9], &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn auroc_equals_pairwise_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..100 {
            let n = rng.random_range(2..=50);
            let mut scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            // Bin some scores to force ties.
            for s in scores.iter_mut() {
                if rng.random_range(0..3) == 0 {
                    *s = (*s * 4.0).round() / 4.0;
                }
            }
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 1;
            if n > 1 {
                labels[1] = 0;
            }
            let fast = auroc(&scores, &labels).unwrap();
            let slow = oracles::auroc_pairwise(&scores, &labels);
            assert_eq!(fast, slow, "scores {scores:?} labels {labels:?}");
        }
    }

    fn two_group_set(scores: &[f64], labels: &[u8], groups: &[usize]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec(), groups.to_vec()).unwrap()
    }

    #[test]
    fn eo_identical_group_rates_is_one() {
        let set = two_group_set(
            &[0.9, 0.1, 0.9, 0.1],
            &[1, 0, 1, 0],
            &[0, 0, 1, 1],
        );
        for tau in [0.0, 0.3, 0.5, 0.95, 1.0] {
            assert_eq!(eo_at_threshold(&set, tau).unwrap(), 1.0);
        }
    }

    #[test]
    fn eo_extremal_case_is_zero() {
        // TP gap 1 and FP gap 1: group 0 catches its positive and not its
        // negative, group 1 the reverse.
        let set = two_group_set(
            &[0.9, 0.1, 0.2, 0.8],
            &[1, 0, 1, 0],
            &[0, 0, 1, 1],
        );
        assert_eq!(eo_at_threshold(&set, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn eo_direct_formula_example() {
        // TP rates {0.8, 0.6}, FP rates {0.3, 0.1} -> (2 - 0.2 - 0.2)/2 = 0.8.
        // Group 0: 5 positives (4 above), 10 negatives (3 above).
        // Group 1: 5 positives (3 above), 10 negatives (1 above).
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        let mut push = |s: f64, l: u8, g: usize| {
            scores.push(s);
            labels.push(l);
            groups.push(g);
        };
        for i in 0..5 {
            push(if i < 4 { 0.9 } else { 0.1 }, 1, 0);
        }
        for i in 0..10 {
            push(if i < 3 { 0.9 } else { 0.1 }, 0, 0);
        }
        for i in 0..5 {
            push(if i < 3 { 0.9 } else { 0.1 }, 1, 1);
        }
        for i in 0..10 {
            push(if i < 1 { 0.9 } else { 0.1 }, 0, 1);
        }
        let set = two_group_set(&scores, &labels, &groups);
        let v = eo_at_threshold(&set, 0.5).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
    }

    #[test]
    fn eo_rejects_more_than_two_groups() {
        let set = two_group_set(&[0.5, 0.5, 0.5], &[1, 0, 1], &[0, 1, 2]);
        assert!(matches!(
            eo_at_threshold(&set, 0.5),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn eo_drops_undefined_terms() {
        // Group 1 has no negatives: only the TP gap counts.
        let set = two_group_set(
            &[0.9, 0.2, 0.8, 0.7],
            &[1, 0, 1, 1],
            &[0, 0, 1, 1],
        );
        // At tau 0.5: TP0 = 1, TP1 = 1 -> gap 0 over one defined term.
        assert_eq!(eo_at_threshold(&set, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn aueoc_identical_groups_is_one() {
        let set = two_group_set(
            &[0.9, 0.4, 0.2, 0.9, 0.4, 0.2],
            &[1, 1, 0, 1, 1, 0],
            &[0, 0, 0, 1, 1, 1],
        );
        let v = aueoc(&set).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn aueoc_of_constant_eo_equals_that_constant() {
        // The integral of a constant step function over [0, 1] is the constant;
        // exercised through the same windowed accumulation as `aueoc`.
        let ts = [0.0f64, 0.15, 0.4, 0.85, 1.0];
        let c = 0.73f64;
        let mut area = 0.0f64;
        for w in ts.windows(2) {
            area += (w[1] - w[0]) * c;
        }
        assert!((area - c).abs() < 1e-12);
    }

    #[test]
    fn aueoc_matches_dense_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(777);
        for round in 0..20 {
            let n = rng.random_range(6..=20);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            let mut groups: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            // Guarantee both groups and both labels per group.
            labels[0] = 1;
            labels[1] = 0;
            labels[2] = 1;
            labels[3] = 0;
            groups[0] = 0;
            groups[1] = 0;
            groups[2] = 1;
            groups[3] = 1;
            let set = two_group_set(&scores, &labels, &groups);
            let exact = aueoc(&set).unwrap();
            let grid = oracles::aueoc_dense_grid(&set, 10_000);
            assert!(
                (exact - grid).abs() < 1e-3,
                "round {round}: exact {exact} grid {grid}"
            );
        }
    }

    #[test]
    fn harmonic_mean_examples() {
        assert_eq!(harmonic_mean(0.7, 0.7), 0.7);
        assert!((harmonic_mean(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(harmonic_mean(0.0, 0.9), 0.0);
    }

    #[test]
    fn roc_points_endpoints() {
        let pts = roc_points(&[0.9, 0.8, 0.3, 0.1], &[1, 0, 1, 0]).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_strictly_increasing_transform(
            raw in proptest::collection::vec((0.0f64..=1.0, 0..2u8), 4..30),
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let mut labels: Vec<u8> = raw.iter().map(|r| r.1).collect();
            labels[0] = 1;
            labels[1] = 0;
            // x^3 and 0.5 + atan(x)/pi are strictly increasing on [0, 1].
            let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
            let a = auroc(&scores, &labels).unwrap();
            let b = auroc(&cubed, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn eo_symmetric_under_group_swap(
            raw in proptest::collection::vec((0.0f64..=1.0, 0..2u8, 0..2usize), 6..24),
            tau in 0.0f64..=1.0,
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let mut labels: Vec<u8> = raw.iter().map(|r| r.1).collect();
            let mut groups: Vec<usize> = raw.iter().map(|r| r.2).collect();
            labels[0] = 1; labels[1] = 0; labels[2] = 1; labels[3] = 0;
            groups[0] = 0; groups[1] = 0; groups[2] = 1; groups[3] = 1;
            let set = ScoredSet::new(scores.clone(), labels.clone(), groups.clone()).unwrap();
            let swapped: Vec<usize> = groups.iter().map(|&g| 1 - g).collect();
            let set_swapped = ScoredSet::new(scores, labels, swapped).unwrap();
            let a = eo_at_threshold(&set, tau).unwrap();
            let b = eo_at_threshold(&set_swapped, tau).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn harmonic_mean_bounds(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let hm = harmonic_mean(a, b);
            prop_assert!(hm <= (a + b) / 2.0 + 1e-12);
            prop_assert!((hm - a.min(b)).abs() <= (a - b).abs() + 1e-12);
            prop_assert!((0.0..=1.0).contains(&hm));
        }
    }
}
