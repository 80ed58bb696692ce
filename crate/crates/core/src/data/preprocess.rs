use serde::{Deserialize, Serialize};

use super::LabeledImageSet;
use crate::error::{Error, Result};
use crate::image::{ChannelRaster, ImageArray, ValueSpace};

/// Luma weights for RGB -> gray conversion (sum to 1).
pub const GRAY_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Collapse a decoded raster to one channel. Single-channel input is
/// returned unchanged.
pub fn to_grayscale(raster: &ChannelRaster) -> Result<ImageArray> {
    let n = raster.height * raster.width;
    let data = match raster.channels {
        1 => raster.data.clone(),
        3 => (0..n)
            .map(|i| {
                let v = GRAY_WEIGHTS[0] * raster.data[i]
                    + GRAY_WEIGHTS[1] * raster.data[n + i]
                    + GRAY_WEIGHTS[2] * raster.data[2 * n + i];
                v.clamp(0.0, 1.0)
            })
            .collect(),
        c => return Err(Error::data(format!("unsupported channel count {c}"))),
    };
    ImageArray::new(raster.height, raster.width, data, ValueSpace::Raw)
}

/// Scalar pixel mean and standard deviation of the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: f64,
    pub std: f64,
}

impl StandardizationStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::config(format!(
                "standardization std must be positive and finite, got {std}"
            )));
        }
        Ok(Self { mean, std })
    }

    /// Statistics over all pixels of a raw training split.
    pub fn from_set(set: &LabeledImageSet) -> Result<Self> {
        if set.split != super::Split::Train {
            return Err(Error::config(
                "standardization statistics must come from the training split",
            ));
        }
        let (mut sum, mut count) = (0.0_f64, 0usize);
        for img in &set.images {
            sum += img.data().iter().map(|&v| v as f64).sum::<f64>();
            count += img.data().len();
        }
        if count == 0 {
            return Err(Error::data("cannot compute statistics of an empty set"));
        }
        let mean = sum / count as f64;
        let ss: f64 = set
            .images
            .iter()
            .flat_map(|i| i.data().iter())
            .map(|&v| (v as f64 - mean).powi(2))
            .sum();
        Self::new(mean, (ss / count as f64).sqrt())
    }
}

pub fn standardize(img: &ImageArray, stats: &StandardizationStats) -> Result<ImageArray> {
    let stats = StandardizationStats::new(stats.mean, stats.std)?;
    if img.space != ValueSpace::Raw {
        return Err(Error::data("standardize expects a raw-space image"));
    }
    let (m, s) = (stats.mean, stats.std);
    let mut out = img.map(|v| ((v as f64 - m) / s) as f32);
    out.space = ValueSpace::Standardized;
    Ok(out)
}

pub fn destandardize(img: &ImageArray, stats: &StandardizationStats) -> Result<ImageArray> {
    if img.space != ValueSpace::Standardized {
        return Err(Error::data("destandardize expects a standardized image"));
    }
    let (m, s) = (stats.mean, stats.std);
    let mut out = img.map(|v| (v as f64 * s + m) as f32);
    out.space = ValueSpace::Raw;
    Ok(out)
}

pub fn standardize_set(
    set: &LabeledImageSet,
    stats: &StandardizationStats,
) -> Result<LabeledImageSet> {
    Ok(LabeledImageSet {
        images: set
            .images
            .iter()
            .map(|i| standardize(i, stats))
            .collect::<Result<_>>()?,
        labels: set.labels.clone(),
        class_count: set.class_count,
        split: set.split,
    })
}
