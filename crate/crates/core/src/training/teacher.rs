//! Gabor-bank surrogate of V1: a population of energy-model complex cells.
//!
//! Each cell filters the image with a quadrature pair of zero-mean,
//! unit-norm Gabor filters at its position, orientation and frequency, and
//! responds with `elu(gain * (even^2 + odd^2) + offset) + 1`. The model is
//! noiseless, so the same image always produces the same response.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::ImageArray;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaborCell {
    /// Preferred orientation of the carrier's wave vector, radians.
    pub orientation: f64,
    /// Cycles per pixel.
    pub frequency: f64,
    pub phase: f64,
    /// Center in pixels `(y, x)`.
    pub center: (f64, f64),
    /// Envelope standard deviation in pixels.
    pub sigma: f64,
    pub gain: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaborBank {
    pub image_size: usize,
    pub seed: u64,
    pub cells: Vec<GaborCell>,
    #[serde(skip)]
    filters: Vec<(Vec<f64>, Vec<f64>)>,
}

impl GaborBank {
    /// `neurons` cells with seeded random tuning for `image_size`-pixel
    /// square images.
    pub fn new(neurons: usize, image_size: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, &[seed::label("gabor-bank")]));
        let s = image_size as f64;
        let cells = (0..neurons)
            .map(|_| {
                let frequency = rng.random_range(0.08..0.25);
                GaborCell {
                    orientation: rng.random_range(0.0..PI),
                    frequency,
                    phase: rng.random_range(0.0..2.0 * PI),
                    center: (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s)),
                    sigma: (0.45 / frequency).min(s / 4.0),
                    gain: rng.random_range(0.5..1.5),
                    offset: rng.random_range(-1.0..0.0),
                }
            })
            .collect();
        Self::from_cells(image_size, seed, cells)
    }

    pub fn from_cells(image_size: usize, seed: u64, cells: Vec<GaborCell>) -> Self {
        let filters = cells.iter().map(|c| quadrature_pair(c, image_size)).collect();
        Self {
            image_size,
            seed,
            cells,
            filters,
        }
    }

    pub fn neurons(&self) -> usize {
        self.cells.len()
    }

    pub fn identity(&self) -> String {
        format!(
            "gabor_bank(n={},size={},seed={})",
            self.cells.len(),
            self.image_size,
            self.seed
        )
    }

    /// Quadrature energy of one cell: `even^2 + odd^2`.
    pub fn energy(&self, cell: usize, img: &ImageArray) -> f64 {
        let (even, odd) = &self.filters[cell];
        let (mut e, mut o) = (0.0, 0.0);
        for ((&v, &fe), &fo) in img.data().iter().zip(even).zip(odd) {
            e += v as f64 * fe;
            o += v as f64 * fo;
        }
        e * e + o * o
    }

    pub fn respond(&self, img: &ImageArray) -> Result<Vec<f32>> {
        if img.shape() != (self.image_size, self.image_size) {
            return Err(Error::data(format!(
                "teacher expects {s}x{s} images, got {:?}",
                img.shape(),
                s = self.image_size
            )));
        }
        Ok(self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| elu_plus_one(c.gain * self.energy(i, img) + c.offset) as f32)
            .collect())
    }
}

pub fn elu_plus_one(z: f64) -> f64 {
    if z > 0.0 {
        z + 1.0
    } else {
        z.exp()
    }
}

fn quadrature_pair(c: &GaborCell, size: usize) -> (Vec<f64>, Vec<f64>) {
    let (sin_t, cos_t) = c.orientation.sin_cos();
    let mut even = Vec::with_capacity(size * size);
    let mut odd = Vec::with_capacity(size * size);
    let mut env = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - c.center.0;
            let dx = x as f64 - c.center.1;
            let g = (-(dx * dx + dy * dy) / (2.0 * c.sigma * c.sigma)).exp();
            let arg = 2.0 * PI * c.frequency * (dx * cos_t + dy * sin_t) + c.phase;
            env.push(g);
            even.push(g * arg.cos());
            odd.push(g * arg.sin());
        }
    }
    (dc_free_unit(even, &env), dc_free_unit(odd, &env))
}

/// Remove the envelope-weighted mean so uniform images give zero output,
/// then normalize to unit L2 norm.
fn dc_free_unit(mut f: Vec<f64>, env: &[f64]) -> Vec<f64> {
    let k = f.iter().sum::<f64>() / env.iter().sum::<f64>();
    f.iter_mut().zip(env).for_each(|(v, &e)| *v -= k * e);
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    f.iter_mut().for_each(|v| *v /= norm);
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ValueSpace;

    fn grating(size: usize, orientation: f64, frequency: f64) -> ImageArray {
        let (s, c) = orientation.sin_cos();
        ImageArray::from_fn(size, size, ValueSpace::Raw, |y, x| {
            let arg = 2.0 * PI * frequency * (x as f64 * c + y as f64 * s);
            (0.5 + 0.4 * arg.cos()) as f32
        })
    }

    #[test]
    fn blank_image_gives_baseline() {
        let bank = GaborBank::new(16, 32, 3);
        let blank = ImageArray::filled(32, 32, 0.5, ValueSpace::Raw);
        let r = bank.respond(&blank).unwrap();
        for (v, c) in r.iter().zip(&bank.cells) {
            assert!((*v as f64 - elu_plus_one(c.offset)).abs() < 1e-5);
        }
    }

    #[test]
    fn wrong_size_is_a_data_error() {
        let bank = GaborBank::new(4, 32, 3);
        let img = ImageArray::filled(16, 16, 0.5, ValueSpace::Raw);
        assert!(matches!(bank.respond(&img), Err(Error::Data(_))));
    }

    #[test]
    fn preferred_orientation_beats_orthogonal() {
        let bank = GaborBank::new(24, 32, 11);
        for (i, c) in bank.cells.iter().enumerate() {
            let pref = grating(32, c.orientation, c.frequency);
            let orth = grating(32, c.orientation + PI / 2.0, c.frequency);
            let (rp, ro) = (bank.respond(&pref).unwrap()[i], bank.respond(&orth).unwrap()[i]);
            assert!(rp > ro, "cell {i}: {rp} <= {ro}");
        }
    }
}
