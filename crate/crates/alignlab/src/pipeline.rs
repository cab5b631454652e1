//! Two-stage training, validation with early stopping, baselines, and random
//! hyperparameter search.
//!
//! Stage one pre-trains both networks jointly on the alignment-train points:
//! the classifier against verified labels, the confidence net against the
//! observed/verified agreement. Stage two fine-tunes on the complete training
//! data, alternating epochs between updating the classifier (confidence net
//! frozen) and updating the confidence net (classifier frozen). The
//! confidence-weighted loss over non-alignment points uses group clean rates
//! refreshed once per epoch and held fixed within it.
//!
//! Every run validates once per epoch on the alignment-validation half using
//! the harmonic mean of AUROC and AUEOC, stops after `patience` epochs
//! without improvement, and reports the parameters from the best epoch.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Role};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{confidence_input, DualModel, Phase};
use crate::nn::{AdamState, Gradients};
use crate::objective::{
    self, binary_ce_grad, class_cross_entropy, confidence_cross_entropy, estimate_group_rates,
    weighted_noisy_cross_entropy, GroupRates,
};

/// Minimum absolute improvement in validation HM that resets patience.
pub const HM_IMPROVEMENT: f64 = 1e-6;

/// All training hyperparameters. The three loss scalars weight the
/// confidence loss during pre-training (`alpha1`), the continued clean
/// supervision of the classifier (`gamma`), and the confidence anchor during
/// fine-tuning (`alpha2`). Zeroing a scalar drops its term, which the
/// ablation arms rely on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layer_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub alpha1: f64,
    pub gamma: f64,
    pub alpha2: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_count: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layer_size: 10,
            learning_rate: 1e-3,
            l2: 1e-4,
            alpha1: 1.0,
            gamma: 1.0,
            alpha2: 1.0,
            patience: 10,
            max_epochs: 500,
            batch_count: 5,
            seed: 123_456_789,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("learning_rate", self.learning_rate)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let non_negative = [
            ("l2", self.l2),
            ("alpha1", self.alpha1),
            ("gamma", self.gamma),
            ("alpha2", self.alpha2),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("layer_size", self.layer_size),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("batch_count", self.batch_count),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Validation or test metrics. Undefined components are NaN; the harmonic
/// mean falls back to whichever component is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValMetrics {
    pub auroc: f64,
    pub aueoc: f64,
    pub hm: f64,
}

/// One history row per epoch. Loss columns are epoch means over batches; a
/// column is NaN when the phase does not compute that loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: &'static str,
    pub class_loss: f64,
    pub confidence_loss: f64,
    pub weighted_loss: f64,
    pub val: ValMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainedOutcome {
    pub model: DualModel,
    pub best_val_hm: f64,
    /// Epoch index of the best validation HM within the stage that produced
    /// it (history rows carry the phase).
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainedOutcome {
    /// Writes the history as CSV:
    /// `epoch,phase,class_loss,confidence_loss,weighted_loss,val_auroc,val_aueoc,val_hm`.
    pub fn write_history_csv<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(e.to_string()))?;
        w.write_record([
            "epoch",
            "phase",
            "class_loss",
            "confidence_loss",
            "weighted_loss",
            "val_auroc",
            "val_aueoc",
            "val_hm",
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
        for r in &self.history {
            w.write_record(&[
                r.epoch.to_string(),
                r.phase.to_string(),
                r.class_loss.to_string(),
                r.confidence_loss.to_string(),
                r.weighted_loss.to_string(),
                r.val.auroc.to_string(),
                r.val.aueoc.to_string(),
                r.val.hm.to_string(),
            ])
            .map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores the instances with a given role and computes AUROC, AUEOC, and
/// their harmonic mean against ground-truth labels.
///
/// Degenerate inputs degrade gracefully: with a single class AUROC is NaN
/// and the run is scored by AUEOC alone (and vice versa when the group
/// structure does not support equalized odds); both undefined is an error.
pub fn evaluate(model: &DualModel, data: &Dataset, role: Role) -> Result<ValMetrics> {
    let idx = data.indices_with_role(role);
    if idx.is_empty() {
        return Err(Error::EmptyBatch(format!("no instances with role {role}")));
    }
    let mut scores = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    let mut groups = Vec::with_capacity(idx.len());
    for &i in &idx {
        scores.push(model.predict_class_proba(data.row(i))?);
        labels.push(data.y_true(i));
        groups.push(data.group(i));
    }
    score_set(&scores, &labels, &groups)
}

/// Metric computation on raw scores; shared by validation and test paths.
pub fn score_set(scores: &[f64], labels: &[u8], groups: &[usize]) -> Result<ValMetrics> {
    let has_both_classes =
        labels.iter().any(|&l| l == 1) && labels.iter().any(|&l| l == 0);
    let auroc = if has_both_classes {
        metrics::auroc(scores, labels)?
    } else {
        log::warn!("single-class evaluation set; scoring by AUEOC alone");
        f64::NAN
    };

    let mut distinct = groups.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let aueoc = if distinct.len() == 2 {
        let set = metrics::ScoredSet::new(scores.to_vec(), labels.to_vec(), groups.to_vec())?;
        match metrics::aueoc(&set) {
            Ok(v) => v,
            Err(Error::UndefinedMetric(msg)) => {
                log::warn!("AUEOC undefined ({msg}); scoring by AUROC alone");
                f64::NAN
            }
            Err(e) => return Err(e),
        }
    } else {
        log::warn!(
            "evaluation set has {} group(s); equalized odds needs 2, scoring by AUROC alone",
            distinct.len()
        );
        f64::NAN
    };

    let hm = match (auroc.is_nan(), aueoc.is_nan()) {
        (false, false) => metrics::harmonic_mean(auroc, aueoc),
        (false, true) => auroc,
        (true, false) => aueoc,
        (true, true) => {
            return Err(Error::UndefinedMetric(
                "neither AUROC nor AUEOC is defined on this set".into(),
            ))
        }
    };
    Ok(ValMetrics { auroc, aueoc, hm })
}

/// Early stopping on validation HM with parameter snapshots of the best epoch.
struct EarlyStopper {
    patience: usize,
    best_hm: f64,
    best_epoch: usize,
    best_model: Option<DualModel>,
    stale: usize,
}

impl EarlyStopper {
    fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_hm: f64::NEG_INFINITY,
            best_epoch: 0,
            best_model: None,
            stale: 0,
        }
    }

    /// Records this epoch; returns true when patience is exhausted.
    fn observe(&mut self, epoch: usize, hm: f64, model: &DualModel) -> bool {
        if hm > self.best_hm + HM_IMPROVEMENT || self.best_model.is_none() {
            if hm > self.best_hm {
                self.best_hm = hm;
                self.best_epoch = epoch;
                self.best_model = Some(model.clone());
            }
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    fn restore(self, model: &mut DualModel) -> (f64, usize) {
        if let Some(best) = self.best_model {
            *model = best;
        }
        (self.best_hm, self.best_epoch)
    }
}

/// Random partition of `indices` into `batch_count` near-equal batches.
/// Empty batches (more batches than instances) are dropped.
fn make_batches<R: Rng + ?Sized>(
    indices: &[usize],
    batch_count: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(rng);
    let n = shuffled.len();
    (0..batch_count)
        .map(|b| shuffled[b * n / batch_count..(b + 1) * n / batch_count].to_vec())
        .filter(|batch| !batch.is_empty())
        .collect()
}

fn rows<'d>(data: &'d Dataset, idx: &[usize]) -> Vec<&'d [f64]> {
    idx.iter().map(|&i| data.row(i)).collect()
}

fn confidence_rows(data: &Dataset, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| confidence_input(data.row(i), data.y_obs(i)))
        .collect()
}

fn as_refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|r| r.as_slice()).collect()
}

fn mean_or_nan(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Stage one: joint pre-training on the alignment-train points.
///
/// The classifier minimizes cross entropy against verified labels; the
/// confidence net minimizes `alpha1` times the agreement cross entropy. An
/// all-agree or all-disagree alignment set degrades the confidence loss to a
/// constant target and is reported as a warning, not an error.
pub fn pretrain<R: Rng + ?Sized>(
    model: &mut DualModel,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainedOutcome> {
    cfg.validate()?;
    let align_train = data.indices_with_role(Role::AlignmentTrain);
    if align_train.is_empty() {
        return Err(Error::Data("pre-training needs alignment-train points".into()));
    }
    let agree: Vec<u8> = align_train
        .iter()
        .map(|&i| (data.y_obs(i) == data.y_true(i)) as u8)
        .collect();
    if agree.iter().all(|&a| a == 1) || agree.iter().all(|&a| a == 0) {
        log::warn!(
            "alignment set is all-{}: the confidence loss has a constant target",
            if agree[0] == 1 { "agree" } else { "disagree" }
        );
    }

    model.set_phase(Phase::Joint);
    let mut adam_class = AdamState::new(model.classifier(), cfg.learning_rate, cfg.l2)?;
    let mut adam_conf = AdamState::new(model.confidence(), cfg.learning_rate, cfg.l2)?;
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let mut class_losses = Vec::new();
        let mut conf_losses = Vec::new();
        for batch in make_batches(&align_train, cfg.batch_count, rng) {
            let x = rows(data, &batch);
            let labels: Vec<u8> = batch.iter().map(|&i| data.y_true(i)).collect();
            let probs = model.classifier().forward_batch(&x)?;
            class_losses.push(class_cross_entropy(&probs, &labels)?);
            let grads_out: Vec<f64> = probs
                .iter()
                .zip(&labels)
                .map(|(&p, &y)| binary_ce_grad(p, y))
                .collect();
            let grads = model.classifier().backward(&x, &grads_out)?;
            adam_class.apply(model.classifier_mut(), &grads)?;

            let phi_x = confidence_rows(data, &batch);
            let phi_refs = as_refs(&phi_x);
            let batch_agree: Vec<u8> = batch
                .iter()
                .map(|&i| (data.y_obs(i) == data.y_true(i)) as u8)
                .collect();
            let conf = model.confidence().forward_batch(&phi_refs)?;
            conf_losses.push(confidence_cross_entropy(&conf, &batch_agree)?);
            let grads_out: Vec<f64> = conf
                .iter()
                .zip(&batch_agree)
                .map(|(&c, &a)| cfg.alpha1 * binary_ce_grad(c, a))
                .collect();
            let grads = model.confidence().backward(&phi_refs, &grads_out)?;
            adam_conf.apply(model.confidence_mut(), &grads)?;
        }
        let val = evaluate(model, data, Role::AlignmentVal)?;
        history.push(EpochRecord {
            epoch,
            phase: "pretrain",
            class_loss: mean_or_nan(&class_losses),
            confidence_loss: mean_or_nan(&conf_losses),
            weighted_loss: f64::NAN,
            val,
        });
        if stopper.observe(epoch, val.hm, model) {
            break;
        }
    }
    let (best_val_hm, best_epoch) = stopper.restore(model);
    Ok(TrainedOutcome {
        model: model.clone(),
        best_val_hm,
        best_epoch,
        history,
    })
}

/// Output gradients for the confidence net from the weighted noisy loss,
/// with the group weights held fixed at their per-epoch values.
fn confidence_output_grads(
    probs: &[f64],
    observed: &[u8],
    _confidences: &[f64],
    epoch_weights: &[f64],
    _groups: &[usize],
) -> Vec<f64> {
    (0..probs.len())
        .map(|i| objective::weighted_noisy_grad_confidence(probs[i], observed[i], epoch_weights[i]))
        .collect()
}

/// Per-epoch refresh of group clean rates over the non-alignment training
/// points, using the current confidence net.
fn refresh_rates(model: &DualModel, data: &Dataset, train_idx: &[usize]) -> Result<GroupRates> {
    let phi_x = confidence_rows(data, train_idx);
    let conf = model.confidence().forward_batch(&as_refs(&phi_x))?;
    let groups: Vec<usize> = train_idx.iter().map(|&i| data.group(i)).collect();
    estimate_group_rates(&conf, &groups)
}

/// Stage two: alternating fine-tuning on the complete training data.
///
/// Even epochs update the classifier (confidence net frozen) on the
/// confidence-weighted observed-label loss plus `gamma` times the clean
/// alignment loss. Odd epochs update the confidence net (classifier frozen)
/// on the same weighted loss plus `alpha2` times the agreement loss. One
/// patience counter spans both phases.
pub fn finetune<R: Rng + ?Sized>(
    model: &mut DualModel,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainedOutcome> {
    cfg.validate()?;
    let train_idx = data.indices_with_role(Role::Train);
    if train_idx.is_empty() {
        return Err(Error::Data(
            "fine-tuning needs non-alignment training points".into(),
        ));
    }
    let all_train = data.training_indices();

    let mut adam_class = AdamState::new(model.classifier(), cfg.learning_rate, cfg.l2)?;
    let mut adam_conf = AdamState::new(model.confidence(), cfg.learning_rate, cfg.l2)?;
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let classifier_phase = epoch % 2 == 0;
        model.set_phase(if classifier_phase {
            Phase::ClassifierOnly
        } else {
            Phase::ConfidenceOnly
        });
        let rates = refresh_rates(model, data, &train_idx)?;

        let mut class_losses = Vec::new();
        let mut conf_losses = Vec::new();
        let mut weighted_losses = Vec::new();

        for batch in make_batches(&all_train, cfg.batch_count, rng) {
            let noisy: Vec<usize> = batch
                .iter()
                .copied()
                .filter(|&i| data.role(i) == Role::Train)
                .collect();
            let aligned: Vec<usize> = batch
                .iter()
                .copied()
                .filter(|&i| data.role(i) == Role::AlignmentTrain)
                .collect();

            // Shared evaluations over the noisy members.
            let (probs_n, conf_n, obs_n, weights_n, x_n, phi_n) = if noisy.is_empty() {
                (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new())
            } else {
                let x_n = rows(data, &noisy);
                let phi_n = confidence_rows(data, &noisy);
                let probs = model.classifier().forward_batch(&x_n)?;
                let conf = model.confidence().forward_batch(&as_refs(&phi_n))?;
                let obs: Vec<u8> = noisy.iter().map(|&i| data.y_obs(i)).collect();
                let groups: Vec<usize> = noisy.iter().map(|&i| data.group(i)).collect();
                let weights: Vec<f64> = groups
                    .iter()
                    .map(|&g| rates.weight(g))
                    .collect::<Result<_>>()?;
                weighted_losses.push(weighted_noisy_cross_entropy(
                    &probs, &obs, &conf, &groups, &rates,
                )?);
                (probs, conf, obs, weights, x_n, phi_n)
            };

            // Alignment losses are recorded every epoch for the history even
            // when their scalar is zero.
            if !aligned.is_empty() {
                let x_a = rows(data, &aligned);
                let labels_a: Vec<u8> = aligned.iter().map(|&i| data.y_true(i)).collect();
                let probs_a = model.classifier().forward_batch(&x_a)?;
                class_losses.push(class_cross_entropy(&probs_a, &labels_a)?);
                let phi_a = confidence_rows(data, &aligned);
                let agree_a: Vec<u8> = aligned
                    .iter()
                    .map(|&i| (data.y_obs(i) == data.y_true(i)) as u8)
                    .collect();
                let conf_a = model.confidence().forward_batch(&as_refs(&phi_a))?;
                conf_losses.push(confidence_cross_entropy(&conf_a, &agree_a)?);

                if classifier_phase {
                    let mut grads = if noisy.is_empty() {
                        Gradients::zeros_like(model.classifier())
                    } else {
                        let g_out: Vec<f64> = (0..noisy.len())
                            .map(|i| {
                                objective::weighted_noisy_grad_prob(
                                    probs_n[i], obs_n[i], conf_n[i], weights_n[i],
                                )
                            })
                            .collect();
                        model.classifier().backward(&x_n, &g_out)?
                    };
                    if cfg.gamma != 0.0 {
                        let g_out: Vec<f64> = probs_a
                            .iter()
                            .zip(&labels_a)
                            .map(|(&p, &y)| binary_ce_grad(p, y))
                            .collect();
                        let clean = model.classifier().backward(&x_a, &g_out)?;
                        grads.add_scaled(&clean, cfg.gamma)?;
                    }
                    adam_class.apply(model.classifier_mut(), &grads)?;
                } else {
                    let mut grads = if noisy.is_empty() {
                        Gradients::zeros_like(model.confidence())
                    } else {
                        let g_out = confidence_output_grads(
                            &probs_n, &obs_n, &conf_n, &weights_n,
                            &noisy.iter().map(|&i| data.group(i)).collect::<Vec<_>>(),
                        );
                        model.confidence().backward(&as_refs(&phi_n), &g_out)?
                    };
                    if cfg.alpha2 != 0.0 {
                        let g_out: Vec<f64> = conf_a
                            .iter()
                            .zip(&agree_a)
                            .map(|(&c, &a)| binary_ce_grad(c, a))
                            .collect();
                        let anchor = model.confidence().backward(&as_refs(&phi_a), &g_out)?;
                        grads.add_scaled(&anchor, cfg.alpha2)?;
                    }
                    adam_conf.apply(model.confidence_mut(), &grads)?;
                }
            } else if !noisy.is_empty() {
                // No alignment members in this batch: only the weighted term.
                if classifier_phase {
                    let g_out: Vec<f64> = (0..noisy.len())
                        .map(|i| {
                            objective::weighted_noisy_grad_prob(
                                probs_n[i], obs_n[i], conf_n[i], weights_n[i],
                            )
                        })
                        .collect();
                    let grads = model.classifier().backward(&x_n, &g_out)?;
                    adam_class.apply(model.classifier_mut(), &grads)?;
                } else {
                    let g_out = confidence_output_grads(
                        &probs_n, &obs_n, &conf_n, &weights_n,
                        &noisy.iter().map(|&i| data.group(i)).collect::<Vec<_>>(),
                    );
                    let grads = model.confidence().backward(&as_refs(&phi_n), &g_out)?;
                    adam_conf.apply(model.confidence_mut(), &grads)?;
                }
            }
        }

        let val = evaluate(model, data, Role::AlignmentVal)?;
        history.push(EpochRecord {
            epoch,
            phase: if classifier_phase { "finetune_classifier" } else { "finetune_confidence" },
            class_loss: mean_or_nan(&class_losses),
            confidence_loss: mean_or_nan(&conf_losses),
            weighted_loss: mean_or_nan(&weighted_losses),
            val,
        });
        if stopper.observe(epoch, val.hm, model) {
            break;
        }
    }
    let (best_val_hm, best_epoch) = stopper.restore(model);
    model.set_phase(Phase::Joint);
    Ok(TrainedOutcome {
        model: model.clone(),
        best_val_hm,
        best_epoch,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LabelSource {
    Observed,
    GroundTruth,
}

/// Classifier-only training over all training points (the Standard and
/// Clean-Labels baselines). Alignment-train points always contribute their
/// verified labels, in both baselines.
fn train_labels(data: &Dataset, cfg: &TrainConfig, source: LabelSource) -> Result<TrainedOutcome> {
    cfg.validate()?;
    let all_train = data.training_indices();
    if all_train.is_empty() {
        return Err(Error::Data("no training points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DualModel::new(data.feature_dim(), cfg.layer_size, &mut rng)?;
    let mut adam_class = AdamState::new(model.classifier(), cfg.learning_rate, cfg.l2)?;
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history = Vec::new();
    let phase = match source {
        LabelSource::Observed => "standard",
        LabelSource::GroundTruth => "clean",
    };
    let label_of = |i: usize| match source {
        LabelSource::GroundTruth => data.y_true(i),
        LabelSource::Observed => {
            if data.role(i) == Role::AlignmentTrain {
                data.y_true(i)
            } else {
                data.y_obs(i)
            }
        }
    };

    for epoch in 0..cfg.max_epochs {
        let mut class_losses = Vec::new();
        for batch in make_batches(&all_train, cfg.batch_count, &mut rng) {
            let x = rows(data, &batch);
            let labels: Vec<u8> = batch.iter().map(|&i| label_of(i)).collect();
            let probs = model.classifier().forward_batch(&x)?;
            class_losses.push(class_cross_entropy(&probs, &labels)?);
            let g_out: Vec<f64> = probs
                .iter()
                .zip(&labels)
                .map(|(&p, &y)| binary_ce_grad(p, y))
                .collect();
            let grads = model.classifier().backward(&x, &g_out)?;
            adam_class.apply(model.classifier_mut(), &grads)?;
        }
        let val = evaluate(&model, data, Role::AlignmentVal)?;
        history.push(EpochRecord {
            epoch,
            phase,
            class_loss: mean_or_nan(&class_losses),
            confidence_loss: f64::NAN,
            weighted_loss: f64::NAN,
            val,
        });
        if stopper.observe(epoch, val.hm, &model) {
            break;
        }
    }
    let (best_val_hm, best_epoch) = stopper.restore(&mut model);
    Ok(TrainedOutcome {
        model,
        best_val_hm,
        best_epoch,
        history,
    })
}

/// Baseline trained on observed labels as if they were correct.
pub fn train_standard(data: &Dataset, cfg: &TrainConfig) -> Result<TrainedOutcome> {
    train_labels(data, cfg, LabelSource::Observed)
}

/// Empirical upper bound trained on ground-truth labels.
pub fn train_clean(data: &Dataset, cfg: &TrainConfig) -> Result<TrainedOutcome> {
    train_labels(data, cfg, LabelSource::GroundTruth)
}

/// Full two-stage run: pre-train on alignment points, then alternate
/// fine-tuning on everything. The returned history concatenates both stages.
pub fn train_proposed(data: &Dataset, cfg: &TrainConfig) -> Result<TrainedOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DualModel::new(data.feature_dim(), cfg.layer_size, &mut rng)?;
    let stage1 = pretrain(&mut model, data, cfg, &mut rng)?;
    let mut outcome = finetune(&mut model, data, cfg, &mut rng)?;
    let mut history = stage1.history;
    history.extend(outcome.history);
    outcome.history = history;
    Ok(outcome)
}

/// Training arms: the proposed method, the two reference baselines, and the
/// ablation ladder. `Full` is the proposed method under its ablation label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Proposed,
    Standard,
    Clean,
    /// Pre-training only.
    Step1Only,
    /// Fine-tune with the weighted loss alone (`gamma = alpha2 = 0`).
    WeightedOnly,
    /// Weighted loss plus continued clean supervision (`alpha2 = 0`).
    WeightedPlusClass,
    /// Weighted loss plus the confidence anchor (`gamma = 0`).
    WeightedPlusConfidence,
    Full,
}

pub const ABLATION_ARMS: [Arm; 5] = [
    Arm::Step1Only,
    Arm::WeightedOnly,
    Arm::WeightedPlusClass,
    Arm::WeightedPlusConfidence,
    Arm::Full,
];

impl Arm {
    pub fn label(&self) -> &'static str {
        match self {
            Arm::Proposed => "proposed",
            Arm::Standard => "standard",
            Arm::Clean => "clean",
            Arm::Step1Only => "step1_only",
            Arm::WeightedOnly => "weighted_only",
            Arm::WeightedPlusClass => "weighted_plus_class",
            Arm::WeightedPlusConfidence => "weighted_plus_confidence",
            Arm::Full => "full",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Arm::Proposed),
            "standard" => Ok(Arm::Standard),
            "clean" => Ok(Arm::Clean),
            "step1_only" => Ok(Arm::Step1Only),
            "weighted_only" => Ok(Arm::WeightedOnly),
            "weighted_plus_class" => Ok(Arm::WeightedPlusClass),
            "weighted_plus_confidence" => Ok(Arm::WeightedPlusConfidence),
            "full" => Ok(Arm::Full),
            other => Err(Error::InvalidConfig(format!("unknown arm '{other}'"))),
        }
    }
}

/// Trains one arm. Ablation arms reuse the proposed pipeline with the
/// corresponding loss scalars zeroed.
pub fn train_arm(data: &Dataset, cfg: &TrainConfig, arm: Arm) -> Result<TrainedOutcome> {
    match arm {
        Arm::Standard => train_standard(data, cfg),
        Arm::Clean => train_clean(data, cfg),
        Arm::Proposed | Arm::Full => train_proposed(data, cfg),
        Arm::Step1Only => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut model = DualModel::new(data.feature_dim(), cfg.layer_size, &mut rng)?;
            pretrain(&mut model, data, cfg, &mut rng)
        }
        Arm::WeightedOnly => {
            let cfg = TrainConfig { gamma: 0.0, alpha2: 0.0, ..cfg.clone() };
            train_proposed(data, &cfg)
        }
        Arm::WeightedPlusClass => {
            let cfg = TrainConfig { alpha2: 0.0, ..cfg.clone() };
            train_proposed(data, &cfg)
        }
        Arm::WeightedPlusConfidence => {
            let cfg = TrainConfig { gamma: 0.0, ..cfg.clone() };
            train_proposed(data, &cfg)
        }
    }
}

/// Log-uniform sampling bounds for the tunable hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub l2: (f64, f64),
    pub alpha1: (f64, f64),
    pub gamma: (f64, f64),
    pub alpha2: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (1e-5, 1e-2),
            l2: (1e-4, 1e-1),
            alpha1: (0.1, 10.0),
            gamma: (0.1, 10.0),
            alpha2: (0.1, 10.0),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("learning_rate", self.learning_rate),
            ("l2", self.l2),
            ("alpha1", self.alpha1),
            ("gamma", self.gamma),
            ("alpha2", self.alpha2),
        ] {
            if !(lo > 0.0 && lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} bounds must be positive and finite, got ({lo}, {hi})"
                )));
            }
            if lo > hi {
                return Err(Error::InvalidConfig(format!(
                    "{name} lower bound {lo} exceeds upper bound {hi}"
                )));
            }
        }
        Ok(())
    }
}

fn sample_log_uniform<R: Rng + ?Sized>(rng: &mut R, bounds: (f64, f64)) -> f64 {
    if bounds.0 == bounds.1 {
        bounds.0
    } else {
        rng.random_range(bounds.0.ln()..bounds.1.ln()).exp()
    }
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub index: usize,
    pub config: TrainConfig,
    pub val_hm: f64,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub best_index: usize,
    pub best_config: TrainConfig,
    pub best_outcome: TrainedOutcome,
    pub trials: Vec<TrialRecord>,
}

/// Random search over the tunable hyperparameters.
///
/// Each trial samples learning rate, L2, and the three loss scalars
/// log-uniformly (in that order, so a shorter budget sees a prefix of a
/// longer one's trials), trains the arm, and scores it by best validation
/// HM. Ties keep the earliest trial.
pub fn random_search<R: Rng + ?Sized>(
    data: &Dataset,
    base: &TrainConfig,
    space: &SearchSpace,
    arm: Arm,
    budget: usize,
    rng: &mut R,
) -> Result<SearchOutcome> {
    if budget == 0 {
        return Err(Error::InvalidConfig("search budget must be at least 1".into()));
    }
    space.validate()?;
    let mut best: Option<(usize, TrainConfig, TrainedOutcome)> = None;
    let mut trials = Vec::with_capacity(budget);
    for index in 0..budget {
        let cfg = TrainConfig {
            learning_rate: sample_log_uniform(rng, space.learning_rate),
            l2: sample_log_uniform(rng, space.l2),
            alpha1: sample_log_uniform(rng, space.alpha1),
            gamma: sample_log_uniform(rng, space.gamma),
            alpha2: sample_log_uniform(rng, space.alpha2),
            ..base.clone()
        };
        let outcome = train_arm(data, &cfg, arm)?;
        trials.push(TrialRecord {
            index,
            config: cfg.clone(),
            val_hm: outcome.best_val_hm,
        });
        let better = match &best {
            None => true,
            Some((_, _, b)) => outcome.best_val_hm > b.best_val_hm,
        };
        if better {
            best = Some((index, cfg, outcome));
        }
    }
    let (best_index, best_config, best_outcome) = best.expect("budget >= 1");
    Ok(SearchOutcome {
        best_index,
        best_config,
        best_outcome,
        trials,
    })
}
