//! Procedural textured-shape dataset for hermetic end-to-end runs.
//!
//! Each class pairs a silhouette with a fine oriented grating filling it, on
//! a smooth random background. Position, scale, polarity and contrast vary
//! per image.

use std::f32::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledImageSet, Split};
use crate::error::{Error, Result};
use crate::image::{ImageArray, ValueSpace};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            image_size: 64,
            train_per_class: 100,
            val_per_class: 20,
            test_per_class: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: LabeledImageSet,
    pub val: LabeledImageSet,
    pub test: LabeledImageSet,
}

const SHAPES: usize = 10;

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    if cfg.classes == 0 || cfg.classes > 2 * SHAPES {
        return Err(Error::config(format!(
            "synthetic class count must be in 1..={}",
            2 * SHAPES
        )));
    }
    if cfg.image_size < 8 {
        return Err(Error::config("synthetic image size must be at least 8"));
    }
    let make = |split: Split, per_class: usize| -> Result<LabeledImageSet> {
        let mut images = Vec::with_capacity(per_class * cfg.classes);
        let mut labels = Vec::with_capacity(per_class * cfg.classes);
        for i in 0..per_class {
            for c in 0..cfg.classes {
                let s = seed::derive(
                    cfg.seed,
                    &[seed::label(split.as_str()), c as u64, i as u64],
                );
                images.push(
                    render(c, cfg.classes, cfg.image_size, s)
                        .with_provenance(format!("synthetic/{split}/{c}/{i}")),
                );
                labels.push(c);
            }
        }
        LabeledImageSet::new(images, labels, cfg.classes, split)
    };
    Ok(SyntheticDataset {
        train: make(Split::Train, cfg.train_per_class)?,
        val: make(Split::Val, cfg.val_per_class)?,
        test: make(Split::Test, cfg.test_per_class)?,
    })
}

/// Render one image of class `class`.
pub fn render(class: usize, classes: usize, size: usize, seed: u64) -> ImageArray {
    let mut rng = seed::rng(seed);
    let n = size as f32;
    let shape = class % SHAPES;
    // Classes beyond the shape count reuse silhouettes with a rotated grating.
    let grating_angle = PI * class as f32 / classes as f32;
    let grating_freq = 0.25_f32;

    let base = rng.random_range(0.3..0.7_f32);
    let waves: Vec<(f32, f32, f32, f32)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.5..2.0_f32) / n,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.03..0.07_f32),
            )
        })
        .collect();
    let cy = n / 2.0 + rng.random_range(-0.12..0.12_f32) * n;
    let cx = n / 2.0 + rng.random_range(-0.12..0.12_f32) * n;
    let radius = rng.random_range(0.26..0.36_f32) * n;
    let tilt = rng.random_range(-0.25..0.25_f32);
    let polarity = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let contrast = rng.random_range(0.2..0.32_f32);
    let texture_amp = rng.random_range(0.08..0.14_f32);
    let phase = rng.random_range(0.0..2.0 * PI);
    let fg = (base + polarity * contrast).clamp(0.1, 0.9);

    let (ts, tc) = tilt.sin_cos();
    let (gs, gc) = grating_angle.sin_cos();
    ImageArray::from_fn(size, size, ValueSpace::Raw, |y, x| {
        let (yf, xf) = (y as f32, x as f32);
        let bg = base
            + waves
                .iter()
                .map(|&(dir, f, ph, a)| {
                    let (s, c) = dir.sin_cos();
                    a * (2.0 * PI * f * (c * xf + s * yf) + ph).cos()
                })
                .sum::<f32>();
        // Shape-local coordinates in units of the radius.
        let dx = (xf - cx) / radius;
        let dy = (yf - cy) / radius;
        let u = tc * dx + ts * dy;
        let v = -ts * dx + tc * dy;
        let d = signed_distance(shape, u, v) * radius;
        let inside = (0.5 - d).clamp(0.0, 1.0);
        let grating =
            texture_amp * (2.0 * PI * grating_freq * (gc * xf + gs * yf) + phase).sin();
        let val = bg * (1.0 - inside) + (fg + grating) * inside;
        val.clamp(0.0, 1.0)
    })
}

/// Approximate signed distance (in radius units) to silhouette `shape`;
/// negative inside.
fn signed_distance(shape: usize, u: f32, v: f32) -> f32 {
    let rect = |u: f32, v: f32, hw: f32, hh: f32| {
        let qx = u.abs() - hw;
        let qy = v.abs() - hh;
        qx.max(0.0).hypot(qy.max(0.0)) + qx.max(qy).min(0.0)
    };
    let r = u.hypot(v);
    match shape {
        0 => r - 0.9,
        1 => rect(u, v, 0.75, 0.75),
        2 => {
            // Upward triangle.
            let k = 3.0_f32.sqrt();
            let (mut px, mut py) = (u.abs() - 0.9, v + 0.9 / k);
            if px + k * py > 0.0 {
                let (nx, ny) = ((px - k * py) / 2.0, (-k * px - py) / 2.0);
                px = nx;
                py = ny;
            }
            px -= px.clamp(-1.8, 0.0);
            -px.hypot(py) * py.signum()
        }
        3 => rect(u, v, 0.9, 0.28).min(rect(u, v, 0.28, 0.9)),
        4 => (r - 0.7).abs() - 0.22,
        5 => rect(u, v, 0.95, 0.3),
        6 => rect(u, v, 0.3, 0.95),
        7 => (u.abs() + v.abs() - 1.0) / std::f32::consts::SQRT_2,
        8 => ((u - 0.45).hypot(v) - 0.45).min((u + 0.45).hypot(v) - 0.45),
        _ => rect(u, v, 0.85, 0.85).max(-rect(u, v, 0.5, 0.5)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_shaped() {
        let cfg = SyntheticConfig {
            train_per_class: 2,
            val_per_class: 1,
            test_per_class: 1,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.train.len(), 20);
        assert_eq!(a.train.class_count, 10);
        assert_eq!(a.train.image_shape(), Some((64, 64)));
        assert_eq!(a.train.images, b.train.images);
        assert_ne!(a.train.images[0], a.val.images[0]);
        for img in &a.train.images {
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn shapes_are_distinct() {
        let imgs: Vec<ImageArray> = (0..10).map(|c| render(c, 10, 32, 3)).collect();
        for i in 0..10 {
            for j in i + 1..10 {
                assert_ne!(imgs[i], imgs[j]);
            }
        }
    }
}
