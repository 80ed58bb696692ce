use serde::{Deserialize, Serialize};

use super::optim::OptimizerKind;
use super::schedule::ScheduleConfig;
use crate::corruptions::CorruptionKind;
use crate::data::AugmentationPolicy;
use crate::{Error, Result};

/// Optimizer, initial learning rate and plateau reduction factor of a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskOptim {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_factor: f64,
}

/// Neural batches and classification batches accumulated per update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRatio {
    pub neural: usize,
    pub classification: usize,
}

impl BatchRatio {
    pub const ONE_TO_ONE: BatchRatio = BatchRatio {
        neural: 1,
        classification: 1,
    };

    /// The 12 ratios of the robustness/brain-likeness correlation study.
    pub fn study_pool() -> Vec<BatchRatio> {
        [
            (8, 1),
            (6, 1),
            (4, 1),
            (3, 1),
            (2, 1),
            (3, 2),
            (1, 1),
            (2, 3),
            (1, 2),
            (1, 3),
            (1, 4),
            (1, 8),
        ]
        .iter()
        .map(|&(neural, classification)| BatchRatio {
            neural,
            classification,
        })
        .collect()
    }
}

impl std::fmt::Display for BatchRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.neural, self.classification)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Classification, MTL and Oracle runs.
    pub classification: TaskOptim,
    /// Single-task neural prediction and readout fitting.
    pub neural: TaskOptim,
    pub schedule: ScheduleConfig,
    pub batch_ratio: BatchRatio,
    pub augmentation: AugmentationPolicy,
    /// Weight of the Oracle's tap-consistency penalty.
    pub consistency_weight: f64,
    /// Corruption pool seen by the Oracle in its first phase.
    pub oracle_corruptions: Vec<CorruptionKind>,
    pub readout_epochs: usize,
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            weight_decay: 5e-4,
            classification: TaskOptim {
                optimizer: OptimizerKind::sgd(),
                lr: 0.05,
                lr_factor: 0.3,
            },
            neural: TaskOptim {
                optimizer: OptimizerKind::adam(),
                lr: 3e-3,
                lr_factor: 0.3,
            },
            schedule: ScheduleConfig::default(),
            batch_ratio: BatchRatio::ONE_TO_ONE,
            augmentation: AugmentationPolicy::default(),
            consistency_weight: 1.0,
            oracle_corruptions: CorruptionKind::ALL.to_vec(),
            readout_epochs: 10,
            eval_batch: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch size must be at least 2"));
        }
        if self.batch_ratio.neural == 0 || self.batch_ratio.classification == 0 {
            return Err(Error::config("batch ratio components must be at least 1"));
        }
        if self.schedule.patience == 0 {
            return Err(Error::config("schedule patience must be at least 1"));
        }
        for t in [&self.classification, &self.neural] {
            if !(t.lr > 0.0 && t.lr.is_finite()) || !(t.lr_factor > 0.0 && t.lr_factor < 1.0) {
                return Err(Error::config("learning rates must be positive, factors in (0, 1)"));
            }
        }
        if self.weight_decay < 0.0 || self.consistency_weight < 0.0 {
            return Err(Error::config("weight decay and consistency weight must be nonnegative"));
        }
        if self.augmentation.rotation_range_deg < 0.0
            || !(0.0..=1.0).contains(&self.augmentation.hflip_prob)
        {
            return Err(Error::config("invalid augmentation policy"));
        }
        if self.oracle_corruptions.is_empty() {
            return Err(Error::config("Oracle corruption pool is empty"));
        }
        Ok(())
    }

    pub fn schedule_for(&self, task: &TaskOptim) -> ScheduleConfig {
        ScheduleConfig {
            factor: task.lr_factor,
            ..self.schedule
        }
    }
}
