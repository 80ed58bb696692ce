//! Loss functions, each available on graph nodes (for training) and on
//! plain slices (for evaluation and checks).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Scalar, Var};
use crate::{Error, Result};

/// Guard inside the Poisson log.
pub const POISSON_EPS: f64 = 1e-8;

/// Trainable observation-noise scales of the combined loss, stored as
/// `log σ` so that `σ > 0` by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyWeights {
    pub log_sigma_c: f64,
    pub log_sigma_n: f64,
}

impl Default for UncertaintyWeights {
    fn default() -> Self {
        Self {
            log_sigma_c: 0.0,
            log_sigma_n: 0.0,
        }
    }
}

impl UncertaintyWeights {
    pub fn from_sigmas(sigma_c: f64, sigma_n: f64) -> Self {
        Self {
            log_sigma_c: sigma_c.ln(),
            log_sigma_n: sigma_n.ln(),
        }
    }

    pub fn sigma_c(&self) -> f64 {
        self.log_sigma_c.exp()
    }

    pub fn sigma_n(&self) -> f64 {
        self.log_sigma_n.exp()
    }
}

/// Mean over the batch of `-logp[label]`; `logp` is row-major `[B, K]`.
pub fn cross_entropy(logp: &[f64], k: usize, labels: &[usize]) -> Result<f64> {
    check_labels(labels, k)?;
    if logp.len() != labels.len() * k {
        return Err(Error::data("log-probability rows do not match label count"));
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &l)| -logp[b * k + l])
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean of `pred - count * ln(pred + eps)`.
pub fn poisson_nll(pred: &[f64], counts: &[f64], eps: f64) -> Result<f64> {
    same_len(pred.len(), counts.len())?;
    if let Some(p) = pred.iter().find(|&&p| !(p > 0.0)) {
        return Err(Error::NumericGuard(format!(
            "Poisson rate must be positive, got {p}"
        )));
    }
    let total: f64 = pred
        .iter()
        .zip(counts)
        .map(|(&p, &c)| p - c * (p + eps).ln())
        .sum();
    Ok(total / pred.len() as f64)
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len(pred.len(), target.len())?;
    let total: f64 = pred.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(total / pred.len() as f64)
}

/// `L_CE / σ_c² + L_MSE / (2 σ_n²) + log σ_c + log σ_n`.
pub fn combined_mtl_loss(l_ce: f64, l_mse: f64, w: &UncertaintyWeights) -> f64 {
    classification_term(l_ce, w.log_sigma_c) + neural_term(l_mse, w.log_sigma_n)
}

pub fn classification_term(l_ce: f64, log_sigma_c: f64) -> f64 {
    (-2.0 * log_sigma_c).exp() * l_ce + log_sigma_c
}

pub fn neural_term(l_mse: f64, log_sigma_n: f64) -> f64 {
    0.5 * (-2.0 * log_sigma_n).exp() * l_mse + log_sigma_n
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::data(format!("shape mismatch: {a} vs {b} values")));
    }
    if a == 0 {
        return Err(Error::data("empty loss input"));
    }
    Ok(())
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::data("empty batch"));
    }
    match labels.iter().find(|&&l| l >= k) {
        Some(l) => Err(Error::data(format!("label {l} out of range for {k} classes"))),
        None => Ok(()),
    }
}

/// Graph versions of the losses.
pub mod graph {
    use super::*;

    pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, logp: Var, labels: &[usize]) -> Result<Var> {
        let shape = g.value(logp).shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::data("log-probability rows do not match label count"));
        }
        check_labels(labels, shape[1])?;
        Ok(g.nll(logp, labels))
    }

    pub fn poisson_nll<T: Scalar>(g: &mut Graph<T>, pred: Var, counts: Var, eps: f64) -> Result<Var> {
        if g.value(pred).shape() != g.value(counts).shape() {
            return Err(Error::data("prediction/count shape mismatch"));
        }
        if g.value(pred).data().iter().any(|&p| !(p > T::zero())) {
            return Err(Error::NumericGuard("nonpositive Poisson rate".into()));
        }
        Ok(g.poisson_nll(pred, counts, eps))
    }

    pub fn mse<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
        if g.value(pred).shape() != g.value(target).shape() {
            return Err(Error::data("prediction/target shape mismatch"));
        }
        Ok(g.mse(pred, target))
    }

    /// `exp(-2 log σ_c) L_CE + log σ_c`.
    pub fn classification_term<T: Scalar>(g: &mut Graph<T>, l_ce: Var, log_sigma_c: Var) -> Var {
        let scaled = g.scale(log_sigma_c, T::of(-2.0));
        let precision = g.exp(scaled);
        let weighted = g.mul_scalar(l_ce, precision);
        g.add(weighted, log_sigma_c)
    }

    /// `exp(-2 log σ_n) L_MSE / 2 + log σ_n`.
    pub fn neural_term<T: Scalar>(g: &mut Graph<T>, l_mse: Var, log_sigma_n: Var) -> Var {
        let scaled = g.scale(log_sigma_n, T::of(-2.0));
        let precision = g.exp(scaled);
        let half = g.scale(l_mse, T::of(0.5));
        let weighted = g.mul_scalar(half, precision);
        g.add(weighted, log_sigma_n)
    }

    pub fn combined_mtl_loss<T: Scalar>(
        g: &mut Graph<T>,
        l_ce: Var,
        l_mse: Var,
        log_sigma_c: Var,
        log_sigma_n: Var,
    ) -> Var {
        let c = classification_term(g, l_ce, log_sigma_c);
        let n = neural_term(g, l_mse, log_sigma_n);
        g.add(c, n)
    }
}
