use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::{seed, Error, Result};

/// The nine norm constraints of the standard sweep.
pub const DEFAULT_NORM_LADDER: [f64; 9] = [2.5, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 60.0, 80.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReconAlgorithm {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconOptimizer {
    pub algorithm: ReconAlgorithm,
    pub lr: f64,
    pub steps: usize,
    /// Standard deviation of the Gaussian initialization around zero.
    pub init_noise: f64,
    /// Keep every n-th loss in the trace.
    pub trace_every: usize,
}

impl ReconOptimizer {
    /// Plain gradient steps, used for co-trained models.
    pub fn plain() -> Self {
        Self {
            algorithm: ReconAlgorithm::Sgd,
            lr: 5.0,
            steps: 8000,
            init_noise: 1e-3,
            trace_every: 100,
        }
    }

    /// Adaptive steps, used for single-task and Oracle models.
    pub fn adaptive() -> Self {
        Self {
            algorithm: ReconAlgorithm::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr: 0.01,
            ..Self::plain()
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
}

pub struct ReconstructionTask<'a> {
    pub map: &'a dyn FeatureMap,
    /// Target input `x₀` (standardized pixels for image models).
    pub target: Vec<f64>,
    pub radius: f64,
    pub optimizer: ReconOptimizer,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    #[serde(skip)]
    pub x: Vec<f64>,
    pub loss: f64,
    pub norm: f64,
    pub radius: f64,
    /// `(step, loss)` pairs, subsampled.
    pub trace: Vec<(usize, f64)>,
    pub optimizer: ReconOptimizer,
    pub seed: u64,
}

/// Euclidean norm, scaled so that large iterates do not overflow to `inf`.
pub fn l2_norm(x: &[f64]) -> f64 {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return peak;
    }
    peak * x.iter().map(|v| (v / peak).powi(2)).sum::<f64>().sqrt()
}

fn project(x: &mut [f64], r: f64) {
    let n = l2_norm(x);
    if n > r {
        let k = r / n;
        x.iter_mut().for_each(|v| *v *= k);
    }
}

/// Minimize `‖f(x) − f(x₀)‖²` over the ball `‖x‖ ≤ r` by projected
/// first-order steps, returning the best iterate seen.
pub fn reconstruct(task: &ReconstructionTask<'_>) -> Result<ReconstructionResult> {
    let opt = &task.optimizer;
    if !(task.radius > 0.0) || !task.radius.is_finite() {
        return Err(Error::config(format!("norm constraint must be positive, got {}", task.radius)));
    }
    if opt.steps == 0 {
        return Err(Error::config("reconstruction needs at least one step"));
    }
    let n = task.map.input_dim();
    if task.target.len() != n {
        return Err(Error::config(format!(
            "target has {} values, map expects {n}",
            task.target.len()
        )));
    }
    let target_features = task.map.features(&task.target)?;

    let mut rng = seed::rng(seed::derive(task.seed, &[seed::label("recon-init")]));
    let normal = Normal::new(0.0, opt.init_noise.max(0.0)).map_err(|e| Error::config(e.to_string()))?;
    let mut x: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    project(&mut x, task.radius);

    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut trace = Vec::new();
    let every = opt.trace_every.max(1);
    for step in 0..=opt.steps {
        let (loss, grad) = task.map.loss_and_grad(&x, &target_features)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Optimization {
                step,
                message: format!("non-finite loss {loss}"),
            });
        }
        if step % every == 0 || step == opt.steps {
            trace.push((step, loss));
        }
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, x.clone()));
        }
        if step == opt.steps {
            break;
        }
        match opt.algorithm {
            ReconAlgorithm::Sgd => {
                x.iter_mut().zip(&grad).for_each(|(xi, g)| *xi -= opt.lr * g);
            }
            ReconAlgorithm::Adam { beta1, beta2, eps } => {
                let t = (step + 1) as i32;
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                for i in 0..n {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    x[i] -= opt.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
        project(&mut x, task.radius);
    }
    let (loss, x) = best.expect("at least one evaluation");
    Ok(ReconstructionResult {
        norm: l2_norm(&x),
        x,
        loss,
        radius: task.radius,
        trace,
        optimizer: *opt,
        seed: task.seed,
    })
}

/// One reconstruction per norm constraint, in ascending order.
pub fn norm_sweep(base: &ReconstructionTask<'_>, radii: &[f64]) -> Result<Vec<ReconstructionResult>> {
    if radii.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("norm constraints must be sorted ascending"));
    }
    radii
        .iter()
        .map(|&radius| {
            reconstruct(&ReconstructionTask {
                map: base.map,
                target: base.target.clone(),
                radius,
                optimizer: base.optimizer,
                seed: base.seed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::IdentityMap;

    fn task(map: &dyn FeatureMap, target: Vec<f64>, radius: f64) -> ReconstructionTask<'_> {
        ReconstructionTask {
            map,
            target,
            radius,
            optimizer: ReconOptimizer::plain().with_lr(0.1).with_steps(500),
            seed: 3,
        }
    }

    #[test]
    fn identity_recovers_feasible_target() {
        let map = IdentityMap(4);
        let r = reconstruct(&task(&map, vec![1.0, -2.0, 0.5, 0.0], 10.0)).unwrap();
        assert!(r.loss < 1e-6);
    }

    #[test]
    fn tiny_radius_collapses_to_origin() {
        let map = IdentityMap(3);
        let x0 = vec![1.0, 2.0, 2.0];
        let r = reconstruct(&task(&map, x0, 1e-6)).unwrap();
        assert!(r.norm <= 1e-6 * (1.0 + 1e-6));
        assert!((r.loss - 9.0).abs() < 1e-4);
    }

    #[test]
    fn invalid_settings() {
        let map = IdentityMap(2);
        assert!(reconstruct(&task(&map, vec![1.0, 1.0], 0.0)).is_err());
        let mut t = task(&map, vec![1.0, 1.0], 1.0);
        t.optimizer.steps = 0;
        assert!(reconstruct(&t).is_err());
        assert!(norm_sweep(&task(&map, vec![1.0, 1.0], 1.0), &[2.0, 1.0]).is_err());
    }

    #[test]
    fn diverging_steps_report_the_step() {
        let map = IdentityMap(2);
        let mut t = task(&map, vec![1.0, 1.0], 1e300);
        t.optimizer = t.optimizer.with_lr(1e200);
        t.optimizer.init_noise = 1.0;
        match reconstruct(&t) {
            Err(Error::Optimization { step, .. }) => assert!(step > 0),
            other => panic!("expected optimization error, got {other:?}"),
        }
    }

    #[test]
    fn ladder_names_the_standard_constraints() {
        assert_eq!(DEFAULT_NORM_LADDER.len(), 9);
        for r in [5.0, 15.0, 60.0] {
            assert!(DEFAULT_NORM_LADDER.contains(&r));
        }
    }
}
