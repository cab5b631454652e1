//! Synthetic label-noise injection with per-group target rates.
//!
//! Feature-dependent mode draws one random direction, scores every instance
//! with a sigmoid of the projection, and flips the observed labels of the
//! highest-scoring instances within each group until the group hits its
//! target rate. Uniform mode flips a random subset of the same size instead.
//! Alignment points are never flipped, and ground-truth labels are never
//! touched, so evaluation stays clean regardless of scope.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Role};
use crate::error::{Error, Result};
use crate::nn::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Flip the top instances by mislabeling score within each group.
    FeatureDependent,
    /// Flip a uniformly random subset within each group.
    UniformRandom,
}

/// Which roles are eligible for flipping. Alignment roles never are.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseScope {
    TrainOnly,
    TrainAndTest,
}

#[derive(Debug, Clone)]
pub struct NoiseSpec {
    /// Target noise rate per group id.
    pub rates: Vec<f64>,
    pub mode: NoiseMode,
    /// Spread of the mislabeling direction, standard deviation by default.
    pub sigma_w: f64,
    /// Read `sigma_w` as a variance instead of a standard deviation.
    pub sigma_is_variance: bool,
    pub scope: NoiseScope,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn feature_dependent(rates: Vec<f64>, seed: u64) -> Self {
        NoiseSpec {
            rates,
            mode: NoiseMode::FeatureDependent,
            sigma_w: 0.33,
            sigma_is_variance: false,
            scope: NoiseScope::TrainAndTest,
            seed,
        }
    }

    pub fn uniform_random(rates: Vec<f64>, seed: u64) -> Self {
        NoiseSpec {
            mode: NoiseMode::UniformRandom,
            ..NoiseSpec::feature_dependent(rates, seed)
        }
    }

    pub fn validate(&self, group_count: usize) -> Result<()> {
        if self.rates.len() < group_count {
            return Err(Error::InvalidConfig(format!(
                "noise spec covers {} groups but the dataset has {group_count}",
                self.rates.len()
            )));
        }
        if self.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidConfig(format!(
                "noise rates must lie in [0, 1], got {:?}",
                self.rates
            )));
        }
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_w must be positive, got {}",
                self.sigma_w
            )));
        }
        Ok(())
    }

    fn sd(&self) -> f64 {
        if self.sigma_is_variance {
            self.sigma_w.sqrt()
        } else {
            self.sigma_w
        }
    }
}

/// One audit row per instance: its mislabeling score and whether its
/// observed label was flipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub index: usize,
    pub group: usize,
    pub z_m: f64,
    pub flipped: bool,
}

#[derive(Debug, Clone)]
pub struct NoiseOutcome {
    pub dataset: Dataset,
    pub manifest: Vec<ManifestRow>,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn flippable(data: &Dataset, scope: NoiseScope, i: usize) -> bool {
    match data.role(i) {
        Role::Train => true,
        Role::Test => scope == NoiseScope::TrainAndTest,
        Role::AlignmentTrain | Role::AlignmentVal => false,
    }
}

/// Injects label noise according to the spec. Returns the noised dataset and
/// a per-instance manifest. The same seed always produces the same flips.
pub fn inject(data: &Dataset, spec: &NoiseSpec) -> Result<NoiseOutcome> {
    spec.validate(data.group_count())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // The mislabeling direction is drawn in both modes so the manifest always
    // carries scores; uniform mode simply ignores them when choosing flips.
    let normal = Normal::new(0.0, spec.sd())
        .map_err(|e| Error::InvalidConfig(format!("bad noise distribution: {e}")))?;
    let w: Vec<f64> = (0..data.feature_dim()).map(|_| normal.sample(&mut rng)).collect();
    let z: Vec<f64> = (0..data.len())
        .map(|i| sigmoid(data.row(i).iter().zip(&w).map(|(x, w)| x * w).sum()))
        .collect();

    let mut flipped = vec![false; data.len()];
    let mut out = data.clone();
    for k in 0..data.group_count() {
        let mut members: Vec<usize> = (0..data.len())
            .filter(|&i| data.group(i) == k && flippable(data, spec.scope, i))
            .collect();
        let count = round_half_up(spec.rates[k] * members.len() as f64);
        if count > members.len() {
            return Err(Error::Data(format!(
                "group {k}: cannot flip {count} of {} eligible instances",
                members.len()
            )));
        }
        match spec.mode {
            NoiseMode::FeatureDependent => {
                // Highest mislabeling score first; ties broken by index.
                members.sort_by(|&a, &b| {
                    z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b))
                });
            }
            NoiseMode::UniformRandom => {
                members.shuffle(&mut rng);
            }
        }
        for &i in members.iter().take(count) {
            out.flip_observed(i);
            flipped[i] = true;
        }
    }

    let manifest = (0..data.len())
        .map(|i| ManifestRow {
            index: i,
            group: data.group(i),
            z_m: z[i],
            flipped: flipped[i],
        })
        .collect();
    Ok(NoiseOutcome {
        dataset: out,
        manifest,
    })
}

/// Writes the audit manifest as `id,group,z_m,flipped` CSV.
pub fn write_manifest<P: AsRef<Path>>(manifest: &[ManifestRow], path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(e.to_string()))?;
    w.write_record(["id", "group", "z_m", "flipped"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for row in manifest {
        w.write_record(&[
            row.index.to_string(),
            row.group.to_string(),
            format!("{:.11e}", row.z_m),
            (row.flipped as u8).to_string(),
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
