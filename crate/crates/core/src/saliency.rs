//! Binary saliency masks from ingested density maps and the norm-ratio
//! statistics comparing reconstructions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::to_grayscale;
use crate::image::{decode_image_bytes, decode_raster, ImageArray, ValueSpace};
use crate::{Error, Result};

pub const MASK_MASS: f64 = 0.7;
pub const ANALYSIS_SIZE: usize = 64;

/// Nonnegative map summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyDensity {
    pub height: usize,
    pub width: usize,
    values: Vec<f64>,
    pub lineage: String,
}

impl SaliencyDensity {
    /// Normalize a nonnegative map to unit mass.
    pub fn new(height: usize, width: usize, values: Vec<f64>, lineage: impl Into<String>) -> Result<Self> {
        if values.len() != height * width || values.is_empty() {
            return Err(Error::data("density size does not match its shape"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::data("density values must be finite and nonnegative"));
        }
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Err(Error::data("density has zero mass"));
        }
        Ok(Self {
            height,
            width,
            values: values.into_iter().map(|v| v / total).collect(),
            lineage: lineage.into(),
        })
    }

    pub fn from_image(img: &ImageArray, lineage: impl Into<String>) -> Result<Self> {
        Self::new(
            img.height(),
            img.width(),
            img.data().iter().map(|&v| v as f64).collect(),
            lineage,
        )
    }

    /// Read a PNG/BMP density (any channel count, averaged to luma) or a
    /// float32 raster (`.f32`).
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let raster = path.extension().is_some_and(|e| e == "f32");
        Self::decode(&bytes, raster, path.display().to_string()).map_err(|e| Error::data_file(path, e.to_string()))
    }

    /// Decode an encoded image (`raster = false`) or a float32 raster.
    pub fn decode(bytes: &[u8], raster: bool, lineage: impl Into<String>) -> Result<Self> {
        let img = if raster {
            decode_raster(bytes, ValueSpace::Raw)?
        } else {
            to_grayscale(&decode_image_bytes(bytes)?)?
        };
        Self::from_image(&img, lineage)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Isotropic Gaussian centered in the frame, `sigma` in pixels.
    pub fn center_gaussian(height: usize, width: usize, sigma: f64) -> Result<Self> {
        let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
        let values = (0..height * width)
            .map(|i| {
                let (y, x) = ((i / width) as f64, (i % width) as f64);
                (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        Self::new(height, width, values, format!("center_gaussian(sigma={sigma})"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMask {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
    /// Density mass covered, when built from a density.
    pub mass: f64,
}

impl SaliencyMask {
    pub fn from_bits(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::data("mask size does not match its shape"));
        }
        Ok(Self { height, width, mask, mass: f64::NAN })
    }

    pub fn coverage(&self) -> f64 {
        self.mask.iter().filter(|&&b| b).count() as f64 / self.mask.len() as f64
    }
}

/// Greedily add pixels in descending density until the covered mass first
/// reaches 0.7; equal densities are taken in row-major order.
pub fn binarize_saliency(density: &SaliencyDensity) -> Result<SaliencyMask> {
    binarize_at(density, MASK_MASS)
}

pub fn binarize_at(density: &SaliencyDensity, threshold: f64) -> Result<SaliencyMask> {
    let v = density.values();
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::data("density is all zero"));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    // Stable sort keeps row-major order among ties.
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    let mut mask = vec![false; v.len()];
    let mut mass = 0.0;
    for i in order {
        mask[i] = true;
        mass += v[i];
        if mass >= threshold {
            break;
        }
    }
    Ok(SaliencyMask {
        height: density.height,
        width: density.width,
        mask,
        mass,
    })
}

/// Bilinear image resize and nearest-neighbor mask resize to `size × size`.
pub fn resize_pair(image: &ImageArray, mask: &SaliencyMask, size: usize) -> Result<(ImageArray, SaliencyMask)> {
    if image.shape() != (mask.height, mask.width) {
        return Err(Error::data("image and mask shapes differ"));
    }
    if image.shape() == (size, size) {
        return Ok((image.clone(), mask.clone()));
    }
    let img = image.resize_bilinear(size, size);
    let (h, w) = (mask.height, mask.width);
    let bits = (0..size * size)
        .map(|i| {
            let (y, x) = (i / size, i % size);
            let sy = (((y as f64 + 0.5) * h as f64 / size as f64) as usize).min(h - 1);
            let sx = (((x as f64 + 0.5) * w as f64 / size as f64) as usize).min(w - 1);
            mask.mask[sy * w + sx]
        })
        .collect();
    Ok((img, SaliencyMask { height: size, width: size, mask: bits, mass: mask.mass }))
}

/// `ϱ(I) = ‖I ⊙ M‖² / ‖I‖²`.
pub fn norm_ratio(image: &ImageArray, mask: &SaliencyMask) -> Result<f64> {
    if image.shape() != (mask.height, mask.width) {
        return Err(Error::data("image and mask shapes differ"));
    }
    let (mut inside, mut total) = (0.0_f64, 0.0_f64);
    for (&v, &m) in image.data().iter().zip(&mask.mask) {
        let e = (v as f64).powi(2);
        total += e;
        if m {
            inside += e;
        }
    }
    if total == 0.0 {
        return Err(Error::data("norm ratio of a zero-norm image"));
    }
    Ok(inside / total)
}

/// `(ϱ(I_r) − ϱ(I_o)) / (1 − ϱ(I_o))`.
pub fn normalized_ratio_delta(recon: &ImageArray, original: &ImageArray, mask: &SaliencyMask) -> Result<f64> {
    let rr = norm_ratio(recon, mask)?;
    let ro = norm_ratio(original, mask)?;
    ratio_delta(rr, ro)
}

pub fn ratio_delta(rho_recon: f64, rho_original: f64) -> Result<f64> {
    if rho_original >= 1.0 {
        return Err(Error::data("original image has all its energy in the mask; ratio undefined"));
    }
    Ok((rho_recon - rho_original) / (1.0 - rho_original))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyRatioRecord {
    pub image: String,
    pub model: String,
    pub radius: f64,
    pub rho_recon: f64,
    pub rho_original: f64,
    pub delta: f64,
}

impl SaliencyRatioRecord {
    pub fn new(image: &str, model: &str, radius: f64, recon: &ImageArray, original: &ImageArray, mask: &SaliencyMask) -> Result<Self> {
        let rho_recon = norm_ratio(recon, mask)?;
        let rho_original = norm_ratio(original, mask)?;
        Ok(Self {
            image: image.to_string(),
            model: model.to_string(),
            radius,
            rho_recon,
            rho_original,
            delta: ratio_delta(rho_recon, rho_original)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub image: String,
    pub radius: f64,
    /// `ρ̄` of model A (y-axis) and model B (x-axis).
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyComparison {
    pub model_a: String,
    pub model_b: String,
    pub points: Vec<ScatterPoint>,
    /// Per radius: fraction of images with `a > b`.
    pub above_fraction: Vec<(f64, f64)>,
}

/// Pair records of two models by `(image, r)`.
pub fn saliency_comparison(records: &[SaliencyRatioRecord], model_a: &str, model_b: &str) -> Result<SaliencyComparison> {
    let key = |r: &SaliencyRatioRecord| (r.image.clone(), r.radius.to_bits());
    let collect = |m: &str| -> BTreeMap<(String, u64), f64> {
        records.iter().filter(|r| r.model == m).map(|r| (key(r), r.delta)).collect()
    };
    let (a, b) = (collect(model_a), collect(model_b));
    if a.is_empty() {
        return Err(Error::data(format!("no records for model '{model_a}'")));
    }
    if a.keys().ne(b.keys()) {
        return Err(Error::data(format!(
            "records of '{model_a}' and '{model_b}' cover different images or constraints"
        )));
    }
    let mut points: Vec<ScatterPoint> = a
        .iter()
        .map(|((image, r), &da)| ScatterPoint {
            image: image.clone(),
            radius: f64::from_bits(*r),
            a: da,
            b: b[&(image.clone(), *r)],
        })
        .collect();
    points.sort_by(|p, q| p.radius.total_cmp(&q.radius).then_with(|| p.image.cmp(&q.image)));
    let mut by_r: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for p in &points {
        let e = by_r.entry(p.radius.to_bits()).or_default();
        e.1 += 1;
        if p.a > p.b {
            e.0 += 1;
        }
    }
    let mut above_fraction: Vec<(f64, f64)> = by_r
        .into_iter()
        .map(|(r, (above, n))| (f64::from_bits(r), above as f64 / n as f64))
        .collect();
    above_fraction.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(SaliencyComparison {
        model_a: model_a.to_string(),
        model_b: model_b.to_string(),
        points,
        above_fraction,
    })
}

pub fn records_to_csv(records: &[SaliencyRatioRecord]) -> String {
    let mut out = String::from("image,model,radius,rho_recon,rho_original,delta\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.image, r.model, r.radius, r.rho_recon, r.rho_original, r.delta
        );
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<SaliencyRatioRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("image,model,radius,rho_recon,rho_original,delta") {
        return Err(Error::data("saliency CSV header missing"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::data(format!("saliency CSV line {}: malformed", i + 2));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(SaliencyRatioRecord {
                image: f[0].to_string(),
                model: f[1].to_string(),
                radius: num(f[2])?,
                rho_recon: num(f[3])?,
                rho_original: num(f[4])?,
                delta: num(f[5])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn density(v: &[f64], w: usize) -> SaliencyDensity {
        SaliencyDensity::new(v.len() / w, w, v.to_vec(), "test").unwrap()
    }

    fn count(m: &SaliencyMask) -> usize {
        m.mask.iter().filter(|&&b| b).count()
    }

    #[test]
    fn mask_examples() {
        assert_eq!(count(&binarize_saliency(&density(&[0.25; 4], 2)).unwrap()), 3);
        let one = binarize_saliency(&density(&[0.8, 0.1, 0.05, 0.05], 2)).unwrap();
        assert_eq!(one.mask, vec![true, false, false, false]);
        assert_eq!(count(&binarize_saliency(&density(&[0.5, 0.5], 2)).unwrap()), 2);
    }

    #[test]
    fn ties_break_row_major() {
        let m = binarize_saliency(&density(&[0.25; 4], 2)).unwrap();
        assert_eq!(m.mask, vec![true, true, true, false]);
    }

    #[test]
    fn zero_density_is_rejected() {
        assert!(SaliencyDensity::new(1, 2, vec![0.0, 0.0], "z").is_err());
        assert!(SaliencyDensity::new(1, 2, vec![-1.0, 2.0], "z").is_err());
    }

    #[test]
    fn ratio_examples() {
        let img = ImageArray::filled(2, 2, 1.0, ValueSpace::Standardized);
        let all = SaliencyMask::from_bits(2, 2, vec![true; 4]).unwrap();
        let half = SaliencyMask::from_bits(2, 2, vec![true, true, false, false]).unwrap();
        let none = SaliencyMask::from_bits(2, 2, vec![false; 4]).unwrap();
        assert_eq!(norm_ratio(&img, &all).unwrap(), 1.0);
        assert_eq!(norm_ratio(&img, &half).unwrap(), 0.5);
        assert_eq!(norm_ratio(&img, &none).unwrap(), 0.0);
        let zero = ImageArray::filled(2, 2, 0.0, ValueSpace::Standardized);
        assert!(norm_ratio(&zero, &all).is_err());
    }

    #[test]
    fn delta_examples() {
        assert_eq!(ratio_delta(0.75, 0.5).unwrap(), 0.5);
        assert_eq!(ratio_delta(1.0, 0.3).unwrap(), 1.0);
        assert_eq!(ratio_delta(0.3, 0.3).unwrap(), 0.0);
        assert!(ratio_delta(0.5, 1.0).is_err());
    }

    #[test]
    fn resize_keeps_mask_binary_and_full() {
        let img = ImageArray::filled(10, 10, 0.5, ValueSpace::Raw);
        let full = SaliencyMask::from_bits(10, 10, vec![true; 100]).unwrap();
        let (i, m) = resize_pair(&img, &full, 64).unwrap();
        assert_eq!(i.shape(), (64, 64));
        assert!(m.mask.iter().all(|&b| b));
        let same = resize_pair(&i, &m, 64).unwrap();
        assert_eq!(same.0, i);
    }

    #[test]
    fn records_csv_roundtrip() {
        let img = ImageArray::from_fn(2, 2, ValueSpace::Standardized, |y, x| (y + x) as f32 + 1.0);
        let mask = SaliencyMask::from_bits(2, 2, vec![true, false, false, false]).unwrap();
        let recs = vec![SaliencyRatioRecord::new("im0", "a", 5.0, &img, &img, &mask).unwrap()];
        assert_eq!(records_from_csv(&records_to_csv(&recs)).unwrap(), recs);
    }

    #[test]
    fn unpaired_records_are_rejected() {
        let img = ImageArray::from_fn(2, 2, ValueSpace::Standardized, |y, x| (y + x) as f32 + 1.0);
        let mask = SaliencyMask::from_bits(2, 2, vec![true, false, false, false]).unwrap();
        let a = SaliencyRatioRecord::new("im0", "a", 5.0, &img, &img, &mask).unwrap();
        let b = SaliencyRatioRecord::new("im1", "b", 5.0, &img, &img, &mask).unwrap();
        assert!(saliency_comparison(&[a, b], "a", "b").is_err());
    }
}
