use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AccuracyTable;
use crate::corruptions::{CorruptionGroup, CorruptionKind};
use crate::stats::percentile;
use crate::{seed, Error, Result};

pub const DEFAULT_BOOTSTRAP_REPS: usize = 250;

/// Robustness of one model relative to a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub score: f64,
    pub per_corruption: BTreeMap<CorruptionKind, f64>,
    pub groups: BTreeMap<CorruptionGroup, f64>,
    /// Score computed from each model seed alone against the full baseline.
    pub per_seed: BTreeMap<u64, f64>,
    /// 95% percentile interval over resampled seeds, when there are at
    /// least two.
    pub interval: Option<(f64, f64)>,
    pub severity_version: String,
    pub model_lineage: String,
    pub baseline_lineage: String,
}

impl RobustnessReport {
    pub fn group(&self, group: CorruptionGroup) -> Option<f64> {
        self.groups.get(&group).copied()
    }

    pub fn with_provenance(
        mut self,
        severity_version: &str,
        model_lineage: &str,
        baseline_lineage: &str,
    ) -> Self {
        self.severity_version = severity_version.to_string();
        self.model_lineage = model_lineage.to_string();
        self.baseline_lineage = baseline_lineage.to_string();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Mean over corruptions of `Ā_c(model) / Ā_c(baseline)`, where `Ā_c`
/// averages over levels and seeds first.
pub fn robustness_score(model: &AccuracyTable, baseline: &AccuracyTable) -> Result<RobustnessReport> {
    if model.is_empty() {
        return Err(Error::eval("model accuracy table is empty"));
    }
    model.check_complete()?;
    baseline.check_complete()?;
    if model.kinds() != baseline.kinds() || model.levels() != baseline.levels() {
        return Err(Error::eval(
            "model and baseline tables cover different corruptions or levels",
        ));
    }
    let mut base = BTreeMap::new();
    for kind in model.kinds() {
        let b = baseline.mean_for(kind).expect("kinds match");
        if b <= 0.0 {
            return Err(Error::eval(format!(
                "baseline accuracy on {kind} is zero; ratio undefined"
            )));
        }
        base.insert(kind, b);
    }
    let ratios = |mean: &dyn Fn(CorruptionKind) -> f64| -> BTreeMap<CorruptionKind, f64> {
        base.iter().map(|(&k, &b)| (k, mean(k) / b)).collect()
    };
    let per_corruption = ratios(&|k| model.mean_for(k).expect("kind present"));
    let score = mean(per_corruption.values().copied());
    let groups = CorruptionGroup::ALL
        .into_iter()
        .filter_map(|g| {
            let members: Vec<f64> = g.members().filter_map(|k| per_corruption.get(&k).copied()).collect();
            (!members.is_empty()).then(|| (g, mean(members.into_iter())))
        })
        .collect();
    let per_seed: BTreeMap<u64, f64> = model
        .seeds()
        .into_iter()
        .filter_map(|s| {
            let r = ratios(&|k| model.mean_for_seed(k, s).unwrap_or(f64::NAN));
            let v = mean(r.values().copied());
            v.is_finite().then_some((s, v))
        })
        .collect();
    let seed_scores: Vec<f64> = per_seed.values().copied().collect();
    let interval = if seed_scores.len() >= 2 {
        Some(bootstrap_ci(&seed_scores, DEFAULT_BOOTSTRAP_REPS, 0)?)
    } else {
        None
    };
    Ok(RobustnessReport {
        score,
        per_corruption,
        groups,
        per_seed,
        interval,
        severity_version: String::new(),
        model_lineage: String::new(),
        baseline_lineage: String::new(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// 2.5/97.5 percentile interval of the mean over `reps` resamples (with
/// replacement) of `values`.
pub fn bootstrap_ci(values: &[f64], reps: usize, seed: u64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::eval("bootstrap needs at least two values"));
    }
    if reps == 0 {
        return Err(Error::eval("bootstrap needs at least one repetition"));
    }
    let mut rng = seed::rng(seed::derive(seed, &[seed::label("bootstrap")]));
    let n = values.len();
    let means: Vec<f64> = (0..reps)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    // Resampled means of identical values are bitwise equal to the value.
    let lo = percentile(&means, 2.5);
    let hi = percentile(&means, 97.5);
    Ok((lo, hi))
}

/// Per-image alternative to the seed bootstrap: resample the evaluation
/// images of one accuracy measurement.
pub fn bootstrap_accuracy_ci(hits: &[bool], reps: usize, seed: u64) -> Result<(f64, f64)> {
    let values: Vec<f64> = hits.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect();
    bootstrap_ci(&values, reps, seed)
}
