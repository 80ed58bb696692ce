use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::{reflect_index, ImageArray};
use crate::seed;

/// Classification-time augmentation: reflect-pad-and-crop, horizontal flip
/// and small rotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    /// Reflect padding before a random crop back to the input size.
    pub crop_pad: usize,
    pub hflip_prob: f64,
    /// Rotation angle is drawn uniformly from `[-range, +range]` degrees.
    pub rotation_range_deg: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            crop_pad: 4,
            hflip_prob: 0.5,
            rotation_range_deg: 15.0,
        }
    }
}

impl AugmentationPolicy {
    pub fn identity() -> Self {
        Self {
            crop_pad: 0,
            hflip_prob: 0.0,
            rotation_range_deg: 0.0,
        }
    }
}

/// Apply `policy` to `img`; deterministic in `(img, policy, seed)`. The output
/// keeps the input's shape and value space.
pub fn augment(img: &ImageArray, policy: &AugmentationPolicy, seed: u64) -> ImageArray {
    let mut rng = seed::rng(seed);
    let (h, w) = img.shape();
    let mut out = img.clone();

    if policy.crop_pad > 0 {
        let pad = policy.crop_pad as isize;
        let oy = rng.random_range(0..=2 * pad as i64) as isize - pad;
        let ox = rng.random_range(0..=2 * pad as i64) as isize - pad;
        if oy != 0 || ox != 0 {
            let src = out.clone();
            for y in 0..h {
                for x in 0..w {
                    let sy = reflect_index(y as isize + oy, h);
                    let sx = reflect_index(x as isize + ox, w);
                    out.set(y, x, src.get(sy, sx));
                }
            }
        }
    }

    if policy.hflip_prob > 0.0 && rng.random::<f64>() < policy.hflip_prob {
        out = hflip(&out);
    }

    if policy.rotation_range_deg > 0.0 {
        let r = policy.rotation_range_deg;
        let angle = rng.random_range(-r..=r).to_radians() as f32;
        if angle != 0.0 {
            out = rotate(&out, angle);
        }
    }
    out
}

pub(crate) fn hflip(img: &ImageArray) -> ImageArray {
    let w = img.width();
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..w {
            out.set(y, x, img.get(y, w - 1 - x));
        }
    }
    out
}

/// Rotate about the image center with bilinear resampling and reflected
/// borders.
pub(crate) fn rotate(img: &ImageArray, angle: f32) -> ImageArray {
    let (h, w) = img.shape();
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let (s, c) = angle.sin_cos();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let dy = y as f32 - cy;
            let dx = x as f32 - cx;
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            out.set(y, x, img.sample_reflect(sy, sx));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ValueSpace;

    fn ramp() -> ImageArray {
        ImageArray::from_fn(16, 16, ValueSpace::Raw, |y, x| (y * 16 + x) as f32 / 256.0)
    }

    #[test]
    fn identity_policy_is_identity() {
        let img = ramp();
        assert_eq!(augment(&img, &AugmentationPolicy::identity(), 9), img);
    }

    #[test]
    fn forced_flip_is_an_involution() {
        let img = ramp();
        let p = AugmentationPolicy {
            hflip_prob: 1.0,
            ..AugmentationPolicy::identity()
        };
        let once = augment(&img, &p, 1);
        assert_eq!(once.get(0, 0), img.get(0, 15));
        assert_eq!(augment(&once, &p, 2), img);
    }

    #[test]
    fn seeded_augmentation_is_deterministic() {
        let img = ramp();
        let p = AugmentationPolicy::default();
        assert_eq!(augment(&img, &p, 5), augment(&img, &p, 5));
        assert_eq!(augment(&img, &p, 5).shape(), img.shape());
    }
}
