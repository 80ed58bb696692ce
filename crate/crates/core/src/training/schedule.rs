use serde::{Deserialize, Serialize};

/// Reduce-on-plateau rule: the learning rate is multiplied by `factor`
/// whenever the validation metric has not improved by more than
/// `threshold` for `patience` consecutive epochs; training stops after
/// `max_reductions` reductions or `max_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub threshold: f64,
    pub patience: usize,
    pub max_reductions: usize,
    pub factor: f64,
    pub max_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            threshold: 1e-4,
            patience: 5,
            max_reductions: 5,
            factor: 0.3,
            max_epochs: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub lr: f64,
    pub best: f64,
    pub stale_epochs: usize,
    pub reductions: usize,
    pub epochs: usize,
}

impl ScheduleState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            best: f64::NEG_INFINITY,
            stale_epochs: 0,
            reductions: 0,
            epochs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleAction {
    Continue,
    Reduce,
    Stop,
}

/// Advance the schedule by one epoch given a higher-is-better metric.
pub fn lr_schedule_step(
    state: &ScheduleState,
    val_metric: f64,
    cfg: &ScheduleConfig,
) -> (ScheduleState, ScheduleAction) {
    let mut s = *state;
    s.epochs += 1;
    if val_metric > s.best + cfg.threshold {
        s.best = val_metric;
        s.stale_epochs = 0;
    } else {
        s.stale_epochs += 1;
    }
    let mut action = ScheduleAction::Continue;
    if s.stale_epochs >= cfg.patience {
        s.stale_epochs = 0;
        s.reductions += 1;
        s.lr *= cfg.factor;
        action = if s.reductions >= cfg.max_reductions {
            ScheduleAction::Stop
        } else {
            ScheduleAction::Reduce
        };
    }
    if s.epochs >= cfg.max_epochs {
        action = ScheduleAction::Stop;
    }
    (s, action)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_above_threshold_resets_the_counter() {
        let cfg = ScheduleConfig::default();
        let mut s = ScheduleState::new(0.1);
        s.best = 0.5;
        s.stale_epochs = 3;
        let (s, a) = lr_schedule_step(&s, 0.5002, &cfg);
        assert_eq!(a, ScheduleAction::Continue);
        assert_eq!(s.stale_epochs, 0);
        assert_eq!(s.best, 0.5002);
    }

    #[test]
    fn five_flat_epochs_reduce_then_fifth_reduction_stops() {
        let cfg = ScheduleConfig::default();
        let mut s = ScheduleState::new(1.0);
        s.best = 0.5;
        let mut actions = Vec::new();
        for _ in 0..25 {
            let (n, a) = lr_schedule_step(&s, 0.5 + 1e-4, &cfg);
            s = n;
            actions.push(a);
        }
        assert_eq!(actions[3], ScheduleAction::Continue);
        assert_eq!(actions[4], ScheduleAction::Reduce);
        assert!((s.lr - 0.3f64.powi(5)).abs() < 1e-15);
        assert_eq!(actions[24], ScheduleAction::Stop);
        assert_eq!(actions.iter().filter(|&&a| a == ScheduleAction::Reduce).count(), 4);
    }

    #[test]
    fn max_epochs_stops() {
        let cfg = ScheduleConfig {
            max_epochs: 2,
            ..ScheduleConfig::default()
        };
        let s = ScheduleState::new(1.0);
        let (s, a) = lr_schedule_step(&s, 1.0, &cfg);
        assert_eq!(a, ScheduleAction::Continue);
        let (_, a) = lr_schedule_step(&s, 2.0, &cfg);
        assert_eq!(a, ScheduleAction::Stop);
    }
}
