use nalgebra::{DMatrix, DVector};

use crate::autodiff::{Graph, Tensor};
use crate::model::{forward_trunk, Bound, ForwardOptions, ModelCheckpoint};
use crate::{Error, Result};

/// A differentiable map from a flat input vector to features.
pub trait FeatureMap {
    fn input_dim(&self) -> usize;

    fn features(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// `‖f(x) − target‖²` and its gradient with respect to `x`.
    fn loss_and_grad(&self, x: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)>;
}

fn check_dim(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::config(format!("input has {} values, map expects {n}", x.len())));
    }
    Ok(())
}

pub struct IdentityMap(pub usize);

impl FeatureMap for IdentityMap {
    fn input_dim(&self) -> usize {
        self.0
    }

    fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(x, self.0)?;
        Ok(x.to_vec())
    }

    fn loss_and_grad(&self, x: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(x, self.0)?;
        let d: Vec<f64> = x.iter().zip(target).map(|(a, b)| a - b).collect();
        Ok((d.iter().map(|v| v * v).sum(), d.iter().map(|v| 2.0 * v).collect()))
    }
}

/// `f(x) = A x`.
pub struct LinearMap {
    pub a: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self { a }
    }

    /// Hessian of the reconstruction loss, `2 AᵀA`.
    pub fn hessian(&self) -> DMatrix<f64> {
        self.a.transpose() * &self.a * 2.0
    }
}

impl FeatureMap for LinearMap {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(x, self.a.ncols())?;
        Ok((&self.a * DVector::from_column_slice(x)).as_slice().to_vec())
    }

    fn loss_and_grad(&self, x: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        let fx = DVector::from_vec(self.features(x)?);
        let d = fx - DVector::from_column_slice(target);
        let grad = self.a.transpose() * &d * 2.0;
        Ok((d.norm_squared(), grad.as_slice().to_vec()))
    }
}

/// Tap activations of a trained network (eval mode) for one standardized
/// image, flattened row-major.
pub struct NetworkTap<'a> {
    pub checkpoint: &'a ModelCheckpoint,
}

impl NetworkTap<'_> {
    fn size(&self) -> usize {
        self.checkpoint.config.input_size
    }

    fn run(&self, x: &[f64], target: Option<&[f64]>) -> Result<(Vec<f64>, Option<(f64, Vec<f64>)>)> {
        check_dim(x, self.input_dim())?;
        let cfg = &self.checkpoint.config;
        let params = &self.checkpoint.params;
        let s = self.size();
        let mut g = Graph::<f32>::new();
        let bound = Bound::bind(&mut g, params, |_| false);
        let input = Tensor::new(vec![1, 1, s, s], x.iter().map(|&v| v as f32).collect());
        let xv = if target.is_some() { g.param(input) } else { g.constant(input) };
        let t = forward_trunk(&mut g, cfg, params, &bound, xv, &ForwardOptions::eval(), true)?;
        let feats: Vec<f64> = g.value(t.tap).data().iter().map(|&v| v as f64).collect();
        let Some(target) = target else {
            return Ok((feats, None));
        };
        if target.len() != feats.len() {
            return Err(Error::config("target feature size differs from the tap"));
        }
        let tv = g.constant(Tensor::new(
            g.value(t.tap).shape().to_vec(),
            target.iter().map(|&v| v as f32).collect(),
        ));
        let d = g.sub(t.tap, tv);
        let loss = g.sum_squares(d);
        let l = g.value(loss).item() as f64;
        let grads = g.backward(loss);
        let gx = grads.get(xv).expect("input requires grad");
        Ok((feats, Some((l, gx.data().iter().map(|&v| v as f64).collect()))))
    }
}

impl FeatureMap for NetworkTap<'_> {
    fn input_dim(&self) -> usize {
        self.size() * self.size()
    }

    fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(x, None)?.0)
    }

    fn loss_and_grad(&self, x: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(self.run(x, Some(target))?.1.expect("target given"))
    }
}
