use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::losses::LossConfig;
use crate::metrics::DiceMode;
use crate::model::MNetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Which views a run trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Shuffled view, then the ordered view.
    Tps,
    Ordered,
    Shuffled,
}

impl FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tps" => Ok(Schedule::Tps),
            "ordered" => Ok(Schedule::Ordered),
            "shuffled" => Ok(Schedule::Shuffled),
            _ => Err(format!("unknown phase `{s}` (expected tps, ordered or shuffled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub max_epochs: usize,
    /// Epochs without a better validation mean Dice before a phase ends.
    pub early_stop_patience: usize,
    pub optimizer: OptimizerConfig,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: MNetConfig,
    /// Stop as soon as the training-set WT Dice reaches this value.
    pub stop_at_train_wt_dice: Option<f64>,
    /// Dice pooling for validation and evaluation.
    pub dice_mode: DiceMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase1_epochs: 150,
            phase2_epochs: 150,
            max_epochs: 300,
            early_stop_patience: 30,
            optimizer: OptimizerConfig::default(),
            batch_size: 1,
            seed: 0,
            loss: LossConfig::default(),
            model: MNetConfig::default(),
            stop_at_train_wt_dice: None,
            dice_mode: DiceMode::Volume,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.phase1_epochs + self.phase2_epochs > self.max_epochs {
            return Err(config(format!(
                "phase1_epochs + phase2_epochs = {} exceeds max_epochs = {}",
                self.phase1_epochs + self.phase2_epochs,
                self.max_epochs
            )));
        }
        if self.phase1_epochs + self.phase2_epochs == 0 {
            return Err(config("at least one training epoch is required"));
        }
        if self.early_stop_patience == 0 {
            return Err(config("early_stop_patience must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config("batch_size must be at least 1"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(config(format!("invalid optimizer settings {o:?}")));
        }
        if let Some(t) = self.stop_at_train_wt_dice {
            if !(0.0..=1.0).contains(&t) {
                return Err(config(format!("stop_at_train_wt_dice must be in [0, 1], got {t}")));
            }
        }
        Ok(())
    }

    /// Strict JSON: unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Moves the whole epoch budget into the phases `s` uses.
    pub fn with_schedule(mut self, s: Schedule) -> Self {
        let total = self.phase1_epochs + self.phase2_epochs;
        (self.phase1_epochs, self.phase2_epochs) = match s {
            Schedule::Tps => (self.phase1_epochs, self.phase2_epochs),
            Schedule::Ordered => (0, total),
            Schedule::Shuffled => (total, 0),
        };
        self
    }
}
