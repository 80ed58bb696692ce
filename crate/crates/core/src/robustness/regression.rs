use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// One trained model in the pooled analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub robustness: f64,
    pub clean_accuracy: f64,
    pub neural_correlation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub estimate: f64,
    pub std_error: f64,
    pub t: f64,
    /// Two-sided.
    pub p: f64,
}

/// `robustness ~ intercept + clean_accuracy + neural_correlation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub intercept: Coefficient,
    pub clean_accuracy: Coefficient,
    pub neural_correlation: Coefficient,
    pub residual_dof: usize,
}

/// Ordinary least squares with intercept, t-tests on each coefficient.
pub fn regress_robustness(pool: &[ModelRecord]) -> Result<RegressionResult> {
    let n = pool.len();
    const P: usize = 3;
    if n < 4 {
        return Err(Error::eval(format!("regression needs at least 4 records, got {n}")));
    }
    if pool
        .iter()
        .any(|r| !(r.robustness.is_finite() && r.clean_accuracy.is_finite() && r.neural_correlation.is_finite()))
    {
        return Err(Error::eval("regression inputs must be finite"));
    }
    let x = DMatrix::from_fn(n, P, |i, j| match j {
        0 => 1.0,
        1 => pool[i].clean_accuracy,
        _ => pool[i].neural_correlation,
    });
    let y = DVector::from_iterator(n, pool.iter().map(|r| r.robustness));

    let svd = x.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let tol = smax * n as f64 * f64::EPSILON * 16.0;
    if s.iter().any(|&v| v <= tol) {
        return Err(Error::eval("design matrix is rank deficient (collinear predictors)"));
    }
    let u = svd.u.as_ref().expect("u computed");
    let vt = svd.v_t.as_ref().expect("v_t computed");
    let uty = u.transpose() * &y;
    let beta = vt.transpose() * DVector::from_fn(P, |i, _| uty[i] / s[i]);

    let resid = &y - &x * &beta;
    let dof = n - P;
    let sigma2 = resid.norm_squared() / dof as f64;
    // (XᵀX)⁻¹ = V diag(1/s²) Vᵀ
    let cov_diag: Vec<f64> = (0..P)
        .map(|j| (0..P).map(|k| (vt[(k, j)] / s[k]).powi(2)).sum::<f64>() * sigma2)
        .collect();
    let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::eval(e.to_string()))?;
    let coef = |j: usize| {
        let estimate = beta[j];
        let std_error = cov_diag[j].sqrt();
        let (t, p) = if std_error > 0.0 {
            let t = estimate / std_error;
            (t, (2.0 * dist.sf(t.abs())).min(1.0))
        } else if estimate != 0.0 {
            (f64::INFINITY.copysign(estimate), 0.0)
        } else {
            (0.0, 1.0)
        };
        Coefficient { estimate, std_error, t, p }
    };
    Ok(RegressionResult {
        intercept: coef(0),
        clean_accuracy: coef(1),
        neural_correlation: coef(2),
        residual_dof: dof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(y: f64, a: f64, b: f64) -> ModelRecord {
        ModelRecord { robustness: y, clean_accuracy: a, neural_correlation: b }
    }

    #[test]
    fn constant_predictor_is_rank_deficient() {
        let pool: Vec<_> = (0..10).map(|i| rec(i as f64, 0.5, i as f64 * 0.3)).collect();
        assert!(matches!(regress_robustness(&pool), Err(Error::Evaluation(_))));
    }

    #[test]
    fn too_few_records() {
        let pool = vec![rec(1.0, 0.1, 0.2), rec(2.0, 0.3, 0.1), rec(0.5, 0.2, 0.9)];
        assert!(regress_robustness(&pool).is_err());
    }

    #[test]
    fn known_noisy_fit() {
        // y = 1 + a - b + e, e alternating ±0.1; hand-checkable via normal equations.
        let pool: Vec<_> = (0..8)
            .map(|i| {
                let a = i as f64;
                let b = ((i * 3) % 5) as f64;
                let e = if i % 2 == 0 { 0.1 } else { -0.1 };
                rec(1.0 + a - b + e, a, b)
            })
            .collect();
        let r = regress_robustness(&pool).unwrap();
        assert!((r.clean_accuracy.estimate - 1.0).abs() < 0.1);
        assert!((r.neural_correlation.estimate + 1.0).abs() < 0.1);
        assert!(r.clean_accuracy.p < 1e-4);
        assert_eq!(r.residual_dof, 5);
    }
}
