use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Quadratic reconstruction problem
/// `min ½ (x − x₀)ᵀ H (x − x₀)  s.t. ‖x‖ ≤ r`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub hessian: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub x: DVector<f64>,
    /// Lagrange multiplier of the norm constraint (0 when inactive).
    pub gamma: f64,
    /// Eigenvalues of `H`, ascending, with matching eigenvector columns.
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl OracleSolution {
    /// Fraction `λ / (λ + γ)` of each eigen-coordinate of `x₀` that survives.
    pub fn preserved_fractions(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| if l + self.gamma > 0.0 { l / (l + self.gamma) } else { 0.0 })
            .collect()
    }
}

/// Closed-form solution `x = (H + γI)⁻¹ H x₀` with `γ ≥ 0` chosen so that
/// `‖x‖ = r` when the constraint binds.
pub fn quadratic_oracle(model: &QuadraticModel) -> Result<OracleSolution> {
    let h = &model.hessian;
    let n = model.x0.len();
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::config("hessian and x0 dimensions differ"));
    }
    if !(model.radius > 0.0) {
        return Err(Error::config("norm constraint must be positive"));
    }
    let scale = h.amax().max(1.0);
    if (h - h.transpose()).amax() > 1e-9 * scale {
        return Err(Error::config("hessian must be symmetric"));
    }
    let eig = SymmetricEigen::new(h.clone());
    let tol = 1e-12 * scale * n as f64;
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return Err(Error::config("hessian must be positive semidefinite"));
    }
    // Ascending order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambdas = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i].max(0.0)));
    let u = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let v0 = u.transpose() * &model.x0;
    let r = model.radius;

    let finish = |v: DVector<f64>, gamma: f64| OracleSolution {
        x: &u * v,
        gamma,
        eigenvalues: lambdas.clone(),
        eigenvectors: u.clone(),
    };

    if model.x0.norm() <= r {
        return Ok(finish(v0, 0.0));
    }
    // Limit γ → 0⁺ keeps only the range of H.
    let at = |gamma: f64| -> DVector<f64> {
        DVector::from_iterator(
            n,
            lambdas.iter().zip(v0.iter()).map(|(&l, &v)| {
                if l + gamma > 0.0 {
                    l * v / (l + gamma)
                } else {
                    0.0
                }
            }),
        )
    };
    let limit = at(0.0);
    if limit.norm() <= r {
        return Ok(finish(limit, 0.0));
    }
    let lmax = lambdas.max();
    let (mut lo, mut hi) = (0.0_f64, lmax * model.x0.norm() / r);
    while at(hi).norm() > r {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).norm() > r {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(finish(at(hi), hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_is_uniform_shrinkage() {
        let x0 = DVector::from_vec(vec![3.0, 4.0]);
        let s = quadratic_oracle(&QuadraticModel {
            hessian: DMatrix::identity(2, 2),
            x0: x0.clone(),
            radius: 1.0,
        })
        .unwrap();
        let expect = &x0 / 5.0;
        assert!((s.x - expect).amax() < 1e-12);
    }

    #[test]
    fn inactive_constraint_returns_x0() {
        let x0 = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let s = quadratic_oracle(&QuadraticModel { hessian: h, x0: x0.clone(), radius: 1.0 }).unwrap();
        assert_eq!(s.gamma, 0.0);
        assert!((s.x - x0).amax() < 1e-12);
    }

    #[test]
    fn singular_hessian_drops_null_space() {
        // Null direction carries most of x₀; the range part fits inside r.
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.0]));
        let x0 = DVector::from_vec(vec![0.5, 10.0]);
        let s = quadratic_oracle(&QuadraticModel { hessian: h, x0, radius: 1.0 }).unwrap();
        assert_eq!(s.gamma, 0.0);
        assert!((s.x[0] - 0.5).abs() < 1e-12 && s.x[1].abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_or_asymmetric() {
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(quadratic_oracle(&QuadraticModel { hessian: bad, x0: x0.clone(), radius: 1.0 }).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(quadratic_oracle(&QuadraticModel { hessian: asym, x0, radius: 1.0 }).is_err());
    }
}
