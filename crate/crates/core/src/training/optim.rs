use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{clamp_readout_positions, is_decayed, ParameterSet};

/// Accumulated gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Vec<f32>>;

pub fn add_grads(into: &mut GradMap, from: GradMap) {
    for (name, g) in from {
        match into.get_mut(&name) {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => {
                into.insert(name, g);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer with coupled (L2) weight decay on `*.weight`
/// entries only.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: BTreeMap<String, Vec<f32>>,
    second: BTreeMap<String, Vec<f32>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            steps: 0,
        }
    }

    /// Update every parameter that has a gradient; others are untouched.
    pub fn step(&mut self, params: &mut ParameterSet<f32>, grads: &GradMap, lr: f64, weight_decay: f64) {
        self.steps += 1;
        for (name, g) in grads {
            let w = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            let wd = if is_decayed(name) { weight_decay as f32 } else { 0.0 };
            let d: Vec<f32> = w.data().iter().zip(g).map(|(&w, &g)| g + wd * w).collect();
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    let m = momentum as f32;
                    let buf = match self.first.get_mut(name) {
                        Some(buf) => {
                            buf.iter_mut().zip(&d).for_each(|(b, &d)| *b = m * *b + d);
                            buf
                        }
                        None => self.first.entry(name.clone()).or_insert(d),
                    };
                    w.data_mut()
                        .iter_mut()
                        .zip(buf.iter())
                        .for_each(|(w, &b)| *w -= lr as f32 * b);
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let n = d.len();
                    let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    let (b1, b2) = (beta1 as f32, beta2 as f32);
                    let t = self.steps as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let step = (lr * c2.sqrt() / c1) as f32;
                    for i in 0..n {
                        m[i] = b1 * m[i] + (1.0 - b1) * d[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * d[i] * d[i];
                        w.data_mut()[i] -= step * m[i] / (v[i].sqrt() + eps as f32);
                    }
                }
            }
        }
        clamp_readout_positions(params);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn setup() -> (ParameterSet<f32>, GradMap) {
        let mut p = ParameterSet::new();
        p.insert("a.weight", Tensor::new(vec![2], vec![1.0, -2.0]));
        p.insert("mtl.log_sigma_c", Tensor::new(vec![1], vec![0.5]));
        let mut g = GradMap::new();
        g.insert("a.weight".into(), vec![0.0, 0.0]);
        g.insert("mtl.log_sigma_c".into(), vec![0.0]);
        (p, g)
    }

    #[test]
    fn weight_decay_touches_weights_only() {
        let (mut p, g) = setup();
        Optimizer::new(OptimizerKind::Sgd { momentum: 0.0 }).step(&mut p, &g, 0.1, 0.5);
        assert_eq!(p.expect("a.weight").data(), &[0.95, -1.9]);
        assert_eq!(p.expect("mtl.log_sigma_c").data(), &[0.5]);

        let (mut q, g) = setup();
        Optimizer::new(OptimizerKind::Sgd { momentum: 0.0 }).step(&mut q, &g, 0.1, 0.0);
        assert_eq!(q.expect("a.weight").data(), &[1.0, -2.0]);
    }

    #[test]
    fn momentum_accumulates() {
        let (mut p, mut g) = setup();
        g.insert("a.weight".into(), vec![1.0, 1.0]);
        let mut opt = Optimizer::new(OptimizerKind::sgd());
        opt.step(&mut p, &g, 0.1, 0.0);
        opt.step(&mut p, &g, 0.1, 0.0);
        // Second step uses buffer 0.9 * 1 + 1 = 1.9.
        let w = p.expect("a.weight").data()[0];
        assert!((w - (1.0 - 0.1 - 0.19)).abs() < 1e-6);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut p, mut g) = setup();
        g.insert("a.weight".into(), vec![3.0, -0.01]);
        Optimizer::new(OptimizerKind::adam()).step(&mut p, &g, 0.01, 0.0);
        let w = p.expect("a.weight").data();
        assert!((w[0] - 0.99).abs() < 1e-5);
        assert!((w[1] + 1.99).abs() < 1e-5);
    }
}
