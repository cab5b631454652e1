//! Dual-headed model: a class predictor plus a label-confidence predictor.
//!
//! The classifier maps features to the positive-class probability and is the
//! only part consulted at inference time. The confidence network takes the
//! same features with the observed label appended (as a 0/1 real) and
//! predicts the probability that the observed label is correct. The two
//! networks share no parameters. Training phases freeze one side or neither.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;

/// Which parameters may be updated.
///
/// `Joint` is the pre-training setting (both trainable). `ClassifierOnly`
/// freezes the confidence net; `ConfidenceOnly` freezes the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Joint,
    ClassifierOnly,
    ConfidenceOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualModel {
    classifier: Mlp,
    confidence: Mlp,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Flat, versioned serialization of both networks. JSON floats round-trip
/// exactly, so save/load is bit-faithful.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    classifier: Mlp,
    confidence: Mlp,
}

impl DualModel {
    /// Fresh model with He-initialized weights. Both networks use two hidden
    /// layers of `hidden` units; the confidence net takes one extra input for
    /// the observed label.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let classifier = Mlp::he_init(&[input_dim, hidden, hidden, 1], rng)?;
        let confidence = Mlp::he_init(&[input_dim + 1, hidden, hidden, 1], rng)?;
        Ok(DualModel {
            classifier,
            confidence,
        })
    }

    pub fn from_parts(classifier: Mlp, confidence: Mlp) -> Result<Self> {
        if confidence.input_dim() != classifier.input_dim() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "confidence input dim {} must be classifier input dim {} + 1",
                confidence.input_dim(),
                classifier.input_dim()
            )));
        }
        Ok(DualModel {
            classifier,
            confidence,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.classifier.input_dim()
    }

    pub fn classifier(&self) -> &Mlp {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Mlp {
        &mut self.classifier
    }

    pub fn confidence(&self) -> &Mlp {
        &self.confidence
    }

    pub fn confidence_mut(&mut self) -> &mut Mlp {
        &mut self.confidence
    }

    /// Positive-class probability from the classifier alone. The observed
    /// label and the confidence network are never consulted here.
    pub fn predict_class_proba(&self, x: &[f64]) -> Result<f64> {
        self.classifier.forward(x)
    }

    /// Confidence that the observed label `y_obs` is correct for `x`.
    pub fn predict_label_confidence(&self, x: &[f64], y_obs: u8) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} does not match model input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        self.confidence.forward(&confidence_input(x, y_obs))
    }

    pub fn set_phase(&mut self, phase: Phase) {
        match phase {
            Phase::Joint => {
                self.classifier.set_trainable(true);
                self.confidence.set_trainable(true);
            }
            Phase::ClassifierOnly => {
                self.classifier.set_trainable(true);
                self.confidence.set_trainable(false);
            }
            Phase::ConfidenceOnly => {
                self.classifier.set_trainable(false);
                self.confidence.set_trainable(true);
            }
        }
    }

    pub fn save_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            classifier: self.classifier.clone(),
            confidence: self.confidence.clone(),
        };
        let json = serde_json::to_string_pretty(&ckpt)
            .map_err(|e| Error::Data(format!("checkpoint serialization failed: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = fs::read_to_string(&path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| {
            Error::Data(format!(
                "failed to parse checkpoint {}: {e}",
                path.as_ref().display()
            ))
        })?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {} (expected {})",
                ckpt.format_version, CHECKPOINT_VERSION
            )));
        }
        // Revalidate shapes through the checked constructors.
        let classifier = Mlp::from_parts(
            ckpt.classifier.layer_sizes().to_vec(),
            ckpt.classifier.weights().to_vec(),
            ckpt.classifier.biases().to_vec(),
        )?;
        let confidence = Mlp::from_parts(
            ckpt.confidence.layer_sizes().to_vec(),
            ckpt.confidence.weights().to_vec(),
            ckpt.confidence.biases().to_vec(),
        )?;
        DualModel::from_parts(classifier, confidence)
    }
}

/// Features with the observed label appended as a single 0/1 real.
pub fn confidence_input(x: &[f64], y_obs: u8) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(y_obs as f64);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AdamState, Gradients};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_model(d: usize, hidden: usize) -> DualModel {
        DualModel::from_parts(
            Mlp::zeroed(&[d, hidden, hidden, 1]).unwrap(),
            Mlp::zeroed(&[d + 1, hidden, hidden, 1]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weight_model_predicts_half() {
        let model = zero_model(4, 3);
        assert_eq!(model.predict_class_proba(&[1.0, -2.0, 0.0, 3.0]).unwrap(), 0.5);
        assert_eq!(
            model.predict_label_confidence(&[1.0, -2.0, 0.0, 3.0], 1).unwrap(),
            0.5
        );
        assert_eq!(
            model.predict_label_confidence(&[1.0, -2.0, 0.0, 3.0], 0).unwrap(),
            0.5
        );
    }

    #[test]
    fn class_prediction_ignores_freeze_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut model = DualModel::new(5, 4, &mut rng).unwrap();
        let x = [0.1, -0.4, 0.9, 0.0, 2.0];
        let before = model.predict_class_proba(&x).unwrap();
        model.set_phase(Phase::ConfidenceOnly);
        assert_eq!(model.predict_class_proba(&x).unwrap(), before);
        model.set_phase(Phase::ClassifierOnly);
        assert_eq!(model.predict_class_proba(&x).unwrap(), before);
    }

    #[test]
    fn confidence_predictions_are_free_probabilities() {
        // The two conditionals are separate predictions; both must be valid
        // probabilities but nothing forces them to sum to 1.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let model = DualModel::new(3, 4, &mut rng).unwrap();
        let x = [0.5, -1.0, 0.25];
        let b1 = model.predict_label_confidence(&x, 1).unwrap();
        let b0 = model.predict_label_confidence(&x, 0).unwrap();
        assert!(b1 > 0.0 && b1 < 1.0);
        assert!(b0 > 0.0 && b0 < 1.0);
    }

    #[test]
    fn phase_controls_which_network_accepts_updates() {
        let mut model = zero_model(3, 2);
        model.set_phase(Phase::ClassifierOnly);
        let grads = Gradients::zeros_like(model.confidence());
        let mut adam = AdamState::new(model.confidence(), 0.01, 0.0).unwrap();
        assert!(adam.apply(model.confidence_mut(), &grads).is_err());

        // Round trip restores trainability.
        model.set_phase(Phase::ConfidenceOnly);
        model.set_phase(Phase::ClassifierOnly);
        assert!(model.classifier().trainable());
        assert!(!model.confidence().trainable());
        model.set_phase(Phase::Joint);
        assert!(model.classifier().trainable() && model.confidence().trainable());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let model = zero_model(4, 2);
        assert!(model.predict_class_proba(&[1.0, 2.0]).is_err());
        assert!(model.predict_label_confidence(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn from_parts_checks_input_dims() {
        let c = Mlp::zeroed(&[4, 2, 2, 1]).unwrap();
        let f = Mlp::zeroed(&[4, 2, 2, 1]).unwrap(); // should be 5 inputs
        assert!(DualModel::from_parts(c, f).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let model = DualModel::new(6, 5, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save_checkpoint(&path).unwrap();
        let restored = DualModel::load_checkpoint(&path).unwrap();
        assert_eq!(model.classifier().flat_params(), restored.classifier().flat_params());
        assert_eq!(model.confidence().flat_params(), restored.confidence().flat_params());
    }

    #[test]
    fn checkpoint_rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = DualModel::new(2, 2, &mut rng).unwrap();
        model.save_checkpoint(&path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 999");
        std::fs::write(&path, text).unwrap();
        assert!(DualModel::load_checkpoint(&path).is_err());
    }
}
