//! Datasets: synthetic generation, CSV ingestion, normalization, splitting,
//! and alignment-set selection.
//!
//! A dataset is immutable after construction; every transformation returns a
//! new value. Each instance carries features, a ground-truth label, an
//! observed (possibly noisy) label, a group id, and a role. Roles partition
//! the data into ordinary training points, alignment points (observed and
//! verified labels both known) split into a training and a validation half,
//! and the held-out test set.
//!
//! CSV schema (versioned by the header): `f0,...,f{d-1},group,y_true,y_obs,role`
//! with `role` one of `train`, `alignment_train`, `alignment_val`, `test`.
//! Floats are written with 12 significant digits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Feature dimension of the synthetic generator.
pub const SYNTHETIC_FEATURE_DIM: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    AlignmentTrain,
    AlignmentVal,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Train => "train",
            Role::AlignmentTrain => "alignment_train",
            Role::AlignmentVal => "alignment_val",
            Role::Test => "test",
        };
        f.write_str(s)
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "alignment_train" => Ok(Role::AlignmentTrain),
            "alignment_val" => Ok(Role::AlignmentVal),
            "test" => Ok(Role::Test),
            other => Err(Error::Data(format!("unknown role '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_dim: usize,
    /// Row-major `n x d`.
    features: Vec<f64>,
    y_true: Vec<u8>,
    y_obs: Vec<u8>,
    group: Vec<usize>,
    role: Vec<Role>,
}

impl Dataset {
    pub fn new(
        feature_dim: usize,
        features: Vec<f64>,
        y_true: Vec<u8>,
        y_obs: Vec<u8>,
        group: Vec<usize>,
        role: Vec<Role>,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Data("feature dimension must be positive".into()));
        }
        if features.len() % feature_dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature buffer of length {} is not a multiple of dim {}",
                features.len(),
                feature_dim
            )));
        }
        let n = features.len() / feature_dim;
        if y_true.len() != n || y_obs.len() != n || group.len() != n || role.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "column lengths disagree: {n} rows vs {}/{}/{}/{}",
                y_true.len(),
                y_obs.len(),
                group.len(),
                role.len()
            )));
        }
        if y_true.iter().chain(y_obs.iter()).any(|&l| l > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        Ok(Dataset {
            feature_dim,
            features,
            y_true,
            y_obs,
            group,
            role,
        })
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn y_true(&self, i: usize) -> u8 {
        self.y_true[i]
    }

    pub fn y_obs(&self, i: usize) -> u8 {
        self.y_obs[i]
    }

    pub fn group(&self, i: usize) -> usize {
        self.group[i]
    }

    pub fn role(&self, i: usize) -> Role {
        self.role[i]
    }

    /// Number of groups, assuming dense ids `0..g`.
    pub fn group_count(&self) -> usize {
        self.group.iter().copied().max().map_or(0, |g| g + 1)
    }

    pub fn indices_with_role(&self, role: Role) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.role[i] == role).collect()
    }

    /// Indices of training-side instances: ordinary train plus alignment-train.
    pub fn training_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| matches!(self.role[i], Role::Train | Role::AlignmentTrain))
            .collect()
    }

    pub(crate) fn with_roles(&self, role: Vec<Role>) -> Dataset {
        let mut out = self.clone();
        out.role = role;
        out
    }

    pub(crate) fn roles(&self) -> &[Role] {
        &self.role
    }

    pub(crate) fn flip_observed(&mut self, i: usize) {
        self.y_obs[i] = 1 - self.y_obs[i];
    }

    pub(crate) fn set_features(&mut self, features: Vec<f64>) {
        debug_assert_eq!(features.len(), self.features.len());
        self.features = features;
    }
}

/// Stable ascending order of `indices` by `values`, ties broken by index.
fn rank_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    order
}

/// Synthetic two-group dataset with a planted linear decision rule.
///
/// Features are standard normal in 30 dimensions. A random linear score
/// splits labels at its median (top half positive). The bottom 20% of
/// feature 0 forms group 1 (the minority); the rest is group 0. After label
/// assignment, features 10-19 are zeroed for the majority and features 20-29
/// for the minority, giving the groups disjoint active blocks. All roles
/// start as `train`; observed labels start equal to the ground truth.
pub fn generate_synthetic<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 instances, got {n}")));
    }
    let d = SYNTHETIC_FEATURE_DIM;
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut features: Vec<f64> = (0..n * d).map(|_| std_normal.sample(rng)).collect();
    let w: Vec<f64> = (0..d).map(|_| std_normal.sample(rng)).collect();

    let scores: Vec<f64> = (0..n)
        .map(|i| {
            features[i * d..(i + 1) * d]
                .iter()
                .zip(&w)
                .map(|(x, w)| x * w)
                .sum()
        })
        .collect();

    // Labels: instances strictly above the median score. With the stable
    // rank order this is exactly the top floor(n/2).
    let mut y_true = vec![0u8; n];
    let score_order = rank_order(&scores);
    for &i in &score_order[n - n / 2..] {
        y_true[i] = 1;
    }

    // Minority: the bottom 20% of feature 0 by rank, exactly floor(n/5).
    let x0: Vec<f64> = (0..n).map(|i| features[i * d]).collect();
    let mut group = vec![0usize; n];
    let x0_order = rank_order(&x0);
    for &i in &x0_order[..n * 20 / 100] {
        group[i] = 1;
    }

    // Zero the group-specific blocks after labels are fixed.
    for i in 0..n {
        let block = if group[i] == 0 { 10..20 } else { 20..30 };
        for j in block {
            features[i * d + j] = 0.0;
        }
    }

    let y_obs = y_true.clone();
    Dataset::new(d, features, y_true, y_obs, group, vec![Role::Train; n])
}

/// Largest-remainder apportionment of `total` across groups proportional to
/// `sizes`. Every share is within one of its exact quota and the shares sum
/// to `total`.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    if sum == 0 {
        return vec![0; sizes.len()];
    }
    let quotas: Vec<f64> = sizes
        .iter()
        .map(|&s| total as f64 * s as f64 / sum as f64)
        .collect();
    let mut shares: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = shares.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &g in order.iter().take(total.saturating_sub(assigned)) {
        shares[g] += 1;
    }
    shares
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Group-stratified random train/test split. The test set gets
/// `round(test_fraction * n)` instances, apportioned across groups so each
/// group's share is within one of exact proportionality.
pub fn split_dataset<R: Rng + ?Sized>(
    data: &Dataset,
    test_fraction: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if data.len() < 10 {
        return Err(Error::Data(format!(
            "need at least 10 instances to split, got {}",
            data.len()
        )));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let g = data.group_count();
    let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); g];
    for i in 0..data.len() {
        by_group[data.group(i)].push(i);
    }
    let sizes: Vec<usize> = by_group.iter().map(|v| v.len()).collect();
    let total_test = round_half_up(test_fraction * data.len() as f64);
    let shares = apportion(&sizes, total_test);

    let mut roles = vec![Role::Train; data.len()];
    for (k, members) in by_group.iter_mut().enumerate() {
        members.shuffle(rng);
        for &i in members.iter().take(shares[k]) {
            roles[i] = Role::Test;
        }
        if !members.is_empty() && (shares[k] == 0 || shares[k] == members.len()) {
            log::warn!(
                "group {k} is absent from the {} split",
                if shares[k] == 0 { "test" } else { "train" }
            );
        }
    }
    Ok(data.with_roles(roles))
}

/// Selects alignment points from the training portion and splits them into
/// training and validation halves.
///
/// The alignment set has `round(fraction * |train|)` instances. Without a
/// minority proportion, selection is stratified per group (representative).
/// With one, the dataset must have exactly two groups; the minority group
/// (the one with fewer training instances) contributes
/// `round(minority_proportion * |A|)` instances. Half of the alignment set
/// (rounded down) becomes the validation half. Observed labels are untouched.
pub fn select_alignment<R: Rng + ?Sized>(
    data: &Dataset,
    fraction: f64,
    minority_proportion: Option<f64>,
    rng: &mut R,
) -> Result<Dataset> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "alignment fraction must be in (0, 1), got {fraction}"
        )));
    }
    let train: Vec<usize> = data.indices_with_role(Role::Train);
    if train.is_empty() {
        return Err(Error::Data("no training instances to select from".into()));
    }
    let total = round_half_up(fraction * train.len() as f64);
    if total == 0 {
        return Err(Error::Data(format!(
            "alignment fraction {fraction} selects zero of {} training instances",
            train.len()
        )));
    }

    let g = data.group_count();
    let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); g];
    for &i in &train {
        by_group[data.group(i)].push(i);
    }
    let sizes: Vec<usize> = by_group.iter().map(|v| v.len()).collect();

    let wanted: Vec<usize> = match minority_proportion {
        None => apportion(&sizes, total),
        Some(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "minority proportion must be in [0, 1], got {p}"
                )));
            }
            let present: Vec<usize> = (0..g).filter(|&k| sizes[k] > 0).collect();
            if present.len() != 2 {
                return Err(Error::Data(format!(
                    "alignment bias requires exactly 2 groups, found {}",
                    present.len()
                )));
            }
            // Minority = fewer training instances; ties go to the higher id.
            let (a, b) = (present[0], present[1]);
            let minority = if sizes[a] < sizes[b] { a } else { b };
            let majority = if minority == a { b } else { a };
            let minority_count = round_half_up(p * total as f64);
            let mut wanted = vec![0usize; g];
            wanted[minority] = minority_count;
            wanted[majority] = total - minority_count;
            wanted
        }
    };

    for k in 0..g {
        if wanted[k] > sizes[k] {
            return Err(Error::Data(format!(
                "group {k} has {} training instances but {} alignment points were requested",
                sizes[k], wanted[k]
            )));
        }
    }

    let mut selected = Vec::with_capacity(total);
    for (k, members) in by_group.iter_mut().enumerate() {
        members.shuffle(rng);
        selected.extend_from_slice(&members[..wanted[k]]);
    }
    // Random half (rounded down) goes to validation.
    selected.shuffle(rng);
    let val_count = selected.len() / 2;

    let mut roles = data.roles().to_vec();
    for (pos, &i) in selected.iter().enumerate() {
        roles[i] = if pos < val_count {
            Role::AlignmentVal
        } else {
            Role::AlignmentTrain
        };
    }
    Ok(data.with_roles(roles))
}

/// Min-max normalization per feature using non-test statistics.
///
/// Each feature is mapped through `(x - min) / (max - min)` where min and max
/// are taken over every instance not in the test role. Constant features map
/// to zero everywhere.
pub fn normalize_minmax(data: &Dataset) -> Result<Dataset> {
    let d = data.feature_dim();
    let fit: Vec<usize> = (0..data.len())
        .filter(|&i| data.role(i) != Role::Test)
        .collect();
    if fit.is_empty() {
        return Err(Error::Data(
            "normalization needs at least one non-test instance".into(),
        ));
    }
    let mut mins = vec![f64::INFINITY; d];
    let mut maxs = vec![f64::NEG_INFINITY; d];
    for &i in &fit {
        for (j, &v) in data.row(i).iter().enumerate() {
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    let mut features = Vec::with_capacity(data.len() * d);
    for i in 0..data.len() {
        for (j, &v) in data.row(i).iter().enumerate() {
            let range = maxs[j] - mins[j];
            features.push(if range > 0.0 { (v - mins[j]) / range } else { 0.0 });
        }
    }
    let mut out = data.clone();
    out.set_features(features);
    Ok(out)
}

fn expected_header(d: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    h.extend(["group", "y_true", "y_obs", "role"].map(String::from));
    h
}

/// Writes the dataset in the documented CSV schema, floats with 12
/// significant digits.
pub fn save_csv<P: AsRef<Path>>(data: &Dataset, path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(e.to_string()))?;
    w.write_record(expected_header(data.feature_dim()))
        .map_err(|e| Error::Data(e.to_string()))?;
    for i in 0..data.len() {
        let mut record: Vec<String> = data.row(i).iter().map(|v| format!("{v:.11e}")).collect();
        record.push(data.group(i).to_string());
        record.push(data.y_true(i).to_string());
        record.push(data.y_obs(i).to_string());
        record.push(data.role(i).to_string());
        w.write_record(&record).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_cell<T: FromStr>(cell: &str, line: usize, what: &str) -> Result<T> {
    cell.trim().parse().map_err(|_| Error::Csv {
        line,
        msg: format!("cannot parse {what} from '{cell}'"),
    })
}

fn parse_label(cell: &str, line: usize, what: &str) -> Result<u8> {
    let v: i64 = parse_cell(cell, line, what)?;
    match v {
        0 => Ok(0),
        1 => Ok(1),
        other => Err(Error::Csv {
            line,
            msg: format!("{what} must be 0 or 1, got {other}"),
        }),
    }
}

/// Loads a dataset from the documented CSV schema, reporting the offending
/// file line on any malformed cell.
pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.as_ref().display())))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Data(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.len() < 5 {
        return Err(Error::Csv {
            line: 1,
            msg: format!("header has {} columns, need at least 5", header.len()),
        });
    }
    let d = header.len() - 4;
    let expected = expected_header(d);
    if header != expected {
        return Err(Error::Csv {
            line: 1,
            msg: format!(
                "header mismatch: expected '{}', found '{}'",
                expected.join(","),
                header.join(",")
            ),
        });
    }

    let mut features = Vec::new();
    let mut y_true = Vec::new();
    let mut y_obs = Vec::new();
    let mut group = Vec::new();
    let mut role = Vec::new();
    for (rec_idx, record) in r.records().enumerate() {
        let line = rec_idx + 2; // header is line 1
        let record = record.map_err(|e| Error::Csv {
            line,
            msg: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Csv {
                line,
                msg: format!("expected {} columns, found {}", header.len(), record.len()),
            });
        }
        for j in 0..d {
            let v: f64 = parse_cell(&record[j], line, &format!("feature f{j}"))?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    line,
                    msg: format!("feature f{j} is not finite"),
                });
            }
            features.push(v);
        }
        group.push(parse_cell::<usize>(&record[d], line, "group")?);
        y_true.push(parse_label(&record[d + 1], line, "y_true")?);
        y_obs.push(parse_label(&record[d + 2], line, "y_obs")?);
        role.push(record[d + 3].trim().parse::<Role>().map_err(|e| Error::Csv {
            line,
            msg: e.to_string(),
        })?);
    }
    Dataset::new(d, features, y_true, y_obs, group, role)
}
