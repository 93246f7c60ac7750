use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    Cosine,
    Step,
}

/// Optimization schedule for one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub decay: Decay,
    /// Epochs between ×0.1 drops in step mode; defaults to `epochs / 3`.
    #[serde(default)]
    pub step_size: Option<usize>,
}

impl TrainSchedule {
    /// 120 epochs, lr 0.01 with cosine decay, weight decay 0.1, batch 32.
    pub fn pretrain_default() -> Self {
        Self {
            epochs: 120,
            lr_init: 0.01,
            lr_final: 0.0,
            weight_decay: 0.1,
            batch_size: 32,
            momentum: crate::tensor::DEFAULT_MOMENTUM,
            decay: Decay::Cosine,
            step_size: None,
        }
    }

    /// 30 epochs decaying 0.001 → 0.0001; otherwise as pretraining.
    pub fn finetune_default() -> Self {
        Self {
            epochs: 30,
            lr_init: 0.001,
            lr_final: 0.0001,
            ..Self::pretrain_default()
        }
    }

    /// Desk-scale pretraining for the synthetic motion dataset.
    pub fn desk_pretrain() -> Self {
        Self {
            epochs: 60,
            lr_init: 0.01,
            lr_final: 0.0,
            weight_decay: 1e-4,
            batch_size: 8,
            momentum: crate::tensor::DEFAULT_MOMENTUM,
            decay: Decay::Cosine,
            step_size: None,
        }
    }

    /// Desk-scale cross-modal fine-tuning.
    pub fn desk_finetune() -> Self {
        Self {
            epochs: 20,
            lr_init: 0.001,
            lr_final: 0.0001,
            ..Self::desk_pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr_init >= self.lr_final && self.lr_final >= 0.0) {
            return Err(Error::Config(format!(
                "need lr_init >= lr_final >= 0, got {} and {}",
                self.lr_init, self.lr_final
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("weight_decay must be >= 0 and momentum in [0, 1)".into()));
        }
        if self.step_size == Some(0) {
            return Err(Error::Config("step_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_step_size(&self) -> usize {
        self.step_size.unwrap_or((self.epochs / 3).max(1))
    }
}

/// Learning rate at `epoch` in `0..=epochs`.
pub fn lr_at(schedule: &TrainSchedule, epoch: usize) -> Result<f64> {
    if epoch > schedule.epochs {
        return Err(Error::Argument(format!(
            "epoch {epoch} beyond schedule of {} epochs",
            schedule.epochs
        )));
    }
    Ok(match schedule.decay {
        Decay::Cosine => {
            let frac = epoch as f64 / schedule.epochs as f64;
            schedule.lr_final
                + 0.5 * (schedule.lr_init - schedule.lr_final) * (1.0 + (std::f64::consts::PI * frac).cos())
        }
        Decay::Step => schedule.lr_init * 0.1f64.powi((epoch / schedule.effective_step_size()) as i32),
    })
}
