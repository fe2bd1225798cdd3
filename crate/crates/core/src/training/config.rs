use serde::{Deserialize, Serialize};

use crate::error::{NrkgError, Result};
use crate::projection::PplEstimator;

/// Decoder input: GCN output, or the projected embeddings directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Gcn,
    Mlp,
}

/// `plateau` halves the rate after `lr_decay_step` non-improving epochs;
/// `step` halves it every `lr_decay_step` epochs regardless.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Plateau,
    Step,
}

/// How the translation and projection losses combine their terms.
///
/// `Mean` keeps them on the scale of the mean squared error, so the loss
/// weights do not depend on the triple count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub gcn_layers: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_gamma: f64,
    pub lr_decay_step: usize,
    pub lr_schedule: LrSchedule,
    pub early_stop_patience: usize,
    /// Margin of the translation loss.
    pub margin: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub aux_reduction: Reduction,
    pub seed: u64,
    pub negatives_per_positive: usize,
    pub gcn_directed: bool,
    pub ppl_bidirectional: bool,
    pub ppl_estimator: PplEstimator,
    pub variant: Variant,
    /// Share of proxy semantic edges hidden from the model.
    pub mask_fraction: f64,
    /// Drops the regression term from the objective.
    pub disable_regression: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            gcn_layers: 2,
            dropout: 0.5,
            epochs: 2000,
            lr: 0.005,
            lr_decay_gamma: 0.5,
            lr_decay_step: 25,
            lr_schedule: LrSchedule::Plateau,
            early_stop_patience: 50,
            margin: 1.0,
            gamma_a: 0.16,
            gamma_b: 0.04,
            aux_reduction: Reduction::Mean,
            seed: 0,
            negatives_per_positive: 1,
            gcn_directed: false,
            ppl_bidirectional: false,
            ppl_estimator: PplEstimator::Mean,
            variant: Variant::Gcn,
            mask_fraction: 0.0,
            disable_regression: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NrkgError::Config(m));
        if self.hidden < 2 {
            return bad(format!("hidden = {} must be at least 2", self.hidden));
        }
        if self.variant == Variant::Gcn && self.gcn_layers == 0 {
            return bad("gcn variant needs gcn_layers >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout = {} outside [0, 1)", self.dropout));
        }
        if self.epochs == 0
            || self.lr_decay_step == 0
            || self.early_stop_patience == 0
            || self.negatives_per_positive == 0
        {
            return bad(
                "epochs, lr_decay_step, early_stop_patience and negatives_per_positive must be positive".into(),
            );
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if !(self.lr_decay_gamma > 0.0 && self.lr_decay_gamma <= 1.0) {
            return bad(format!("lr_decay_gamma = {} outside (0, 1]", self.lr_decay_gamma));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin = {} must be positive", self.margin));
        }
        if !(self.gamma_a >= 0.0 && self.gamma_b >= 0.0 && self.gamma_a.is_finite() && self.gamma_b.is_finite()) {
            return bad("loss weights must be finite and nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return bad(format!("mask_fraction = {} outside [0, 1]", self.mask_fraction));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let cases = [
            TrainConfig {
                dropout: 1.0,
                ..Default::default()
            },
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                gcn_layers: 0,
                ..Default::default()
            },
            TrainConfig {
                mask_fraction: 1.5,
                ..Default::default()
            },
            TrainConfig {
                gamma_a: -0.1,
                ..Default::default()
            },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(NrkgError::Config(_))), "{c:?}");
        }
        TrainConfig {
            gcn_layers: 0,
            variant: Variant::Mlp,
            ..Default::default()
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"hiden": 3}"#).unwrap_err();
        assert!(err.to_string().contains("hiden"));
        let c: TrainConfig = serde_json::from_str(r#"{"variant": "mlp", "gamma_a": 0}"#).unwrap();
        assert_eq!(c.variant, Variant::Mlp);
        assert_eq!(c.hidden, 128);
    }
}
