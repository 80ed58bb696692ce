//! Norm-constrained reconstruction from tap activations, its closed-form
//! quadratic counterpart, and the spectral control image.

mod feature;
mod oracle;
mod persist;
mod solve;
mod spectral;

pub use feature::{FeatureMap, IdentityMap, LinearMap, NetworkTap};
pub use oracle::{quadratic_oracle, OracleSolution, QuadraticModel};
pub use persist::{load_reconstruction, save_reconstruction, SavedReconstruction};
pub use solve::{
    l2_norm, norm_sweep, reconstruct, ReconAlgorithm, ReconOptimizer, ReconstructionResult,
    ReconstructionTask, DEFAULT_NORM_LADDER,
};
pub use spectral::{amplitude_spectrum, spectral_control, spectrum};

use crate::image::{ImageArray, ValueSpace};
use crate::model::ModelCheckpoint;
use crate::{Error, Result};

/// Reconstruct a standardized image from a checkpoint's tap activations.
pub fn reconstruct_image(
    checkpoint: &ModelCheckpoint,
    target: &ImageArray,
    radius: f64,
    optimizer: ReconOptimizer,
    seed: u64,
) -> Result<(ImageArray, ReconstructionResult)> {
    if target.space != ValueSpace::Standardized {
        return Err(Error::data("reconstruction targets must be standardized"));
    }
    let map = NetworkTap { checkpoint };
    let result = reconstruct(&ReconstructionTask {
        map: &map,
        target: target.data().iter().map(|&v| v as f64).collect(),
        radius,
        optimizer,
        seed,
    })?;
    let mut img = target.with_data(result.x.iter().map(|&v| v as f32).collect());
    img.provenance = format!("{}|recon(r={radius})", target.provenance);
    Ok((img, result))
}
