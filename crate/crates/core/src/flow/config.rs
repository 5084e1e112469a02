use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Which generative model to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Acf,
    Cfm,
    Otcfm,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Acf => "acf",
            ModelKind::Cfm => "cfm",
            ModelKind::Otcfm => "otcfm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "acf" => Ok(ModelKind::Acf),
            "cfm" => Ok(ModelKind::Cfm),
            "otcfm" | "ot-cfm" => Ok(ModelKind::Otcfm),
            other => Err(invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Training hyperparameters.
///
/// `layers` counts linear layers, so `layers = 3` means two hidden layers of
/// `hidden_width` neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub hidden_width: usize,
    pub layers: usize,
    /// Coupling blocks (affine coupling flows only).
    pub coupling_blocks: usize,
    /// Noise level of the Gaussian probability paths.
    pub cfm_sigma: f64,
    /// Pair minibatches by optimal transport.
    pub ot_enabled: bool,
    /// Fixed RK4 steps used when generating from a vector field.
    pub rk4_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(ModelKind::Cfm)
    }
}

impl TrainConfig {
    /// Reduced settings that train in minutes on a laptop.
    pub fn desk(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Acf => Self {
                epochs: 300,
                batch_size: 200,
                learning_rate: 1e-3,
                lr_decay_epochs: vec![100, 200],
                lr_decay_factor: 0.1,
                hidden_width: 20,
                layers: 3,
                coupling_blocks: 4,
                ot_enabled: false,
                ..Self::base()
            },
            ModelKind::Cfm | ModelKind::Otcfm => Self {
                epochs: 100,
                batch_size: 50,
                learning_rate: 1e-3,
                hidden_width: 50,
                layers: 6,
                ot_enabled: kind == ModelKind::Otcfm,
                ..Self::base()
            },
        }
    }

    /// Full-size architecture and schedule.
    pub fn full(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Acf => Self {
                epochs: 3000,
                lr_decay_epochs: vec![1000, 2000],
                hidden_width: 200,
                ..Self::desk(kind)
            },
            ModelKind::Cfm | ModelKind::Otcfm => Self { epochs: 1000, hidden_width: 500, ..Self::desk(kind) },
        }
    }

    fn base() -> Self {
        Self {
            epochs: 100,
            batch_size: 50,
            learning_rate: 1e-3,
            lr_decay_epochs: Vec::new(),
            lr_decay_factor: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            hidden_width: 50,
            layers: 6,
            coupling_blocks: 4,
            cfm_sigma: 0.01,
            ot_enabled: false,
            rk4_steps: 100,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("hidden_width", self.hidden_width),
            ("layers", self.layers),
            ("coupling_blocks", self.coupling_blocks),
            ("rk4_steps", self.rk4_steps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        let rates = [
            ("learning_rate", self.learning_rate),
            ("lr_decay_factor", self.lr_decay_factor),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.cfm_sigma >= 0.0 && self.cfm_sigma.is_finite()) {
            return Err(invalid("cfm_sigma must be non-negative"));
        }
        if self.layers < 2 {
            return Err(invalid("networks need at least 2 layers"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.learning_rate * self.lr_decay_factor.powi(drops as i32)
    }

    pub(crate) fn hidden_widths(&self, n_in: usize, n_out: usize) -> Vec<usize> {
        let mut w = vec![n_in];
        w.extend(std::iter::repeat_n(self.hidden_width, self.layers - 1));
        w.push(n_out);
        w
    }
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
}

impl TrainingLog {
    pub fn first(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// CSV `epoch,loss`, epochs counted from 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,loss")?;
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(out, "{},{:.16e}", i + 1, l)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for k in [ModelKind::Acf, ModelKind::Cfm, ModelKind::Otcfm] {
            TrainConfig::desk(k).validate().unwrap();
            TrainConfig::full(k).validate().unwrap();
        }
        assert_eq!(TrainConfig::full(ModelKind::Cfm).hidden_width, 500);
        assert_eq!(TrainConfig::full(ModelKind::Acf).epochs, 3000);
        assert!(TrainConfig::desk(ModelKind::Otcfm).ot_enabled);
    }

    #[test]
    fn schedule_drops() {
        let c = TrainConfig::full(ModelKind::Acf);
        assert_eq!(c.learning_rate_at(0), 1e-3);
        assert!((c.learning_rate_at(1000) - 1e-4).abs() < 1e-18);
        assert!((c.learning_rate_at(2500) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn widths() {
        let c = TrainConfig { layers: 3, hidden_width: 7, ..TrainConfig::default() };
        assert_eq!(c.hidden_widths(4, 5), vec![4, 7, 7, 5]);
    }

    #[test]
    fn invalid_values() {
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { cfm_sigma: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!("gan".parse::<ModelKind>().is_err());
        assert_eq!("OT-CFM".parse::<ModelKind>().unwrap(), ModelKind::Otcfm);
    }
}
