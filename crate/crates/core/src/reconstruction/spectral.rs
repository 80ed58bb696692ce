use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::image::ImageArray;
use crate::{Error, Result};

/// In-place 2-D transform of a row-major `h × w` grid.
fn fft2(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for c in 0..w {
        for (y, v) in column.iter_mut().enumerate() {
            *v = data[y * w + c];
        }
        col.process(&mut column);
        for (y, v) in column.iter().enumerate() {
            data[y * w + c] = *v;
        }
    }
    if inverse {
        let k = 1.0 / (h * w) as f64;
        data.iter_mut().for_each(|v| *v *= k);
    }
}

pub fn spectrum(img: &ImageArray) -> Vec<Complex<f64>> {
    let (h, w) = img.shape();
    let mut d: Vec<Complex<f64>> = img.data().iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    fft2(&mut d, h, w, false);
    d
}

pub fn amplitude_spectrum(img: &ImageArray) -> Vec<f64> {
    spectrum(img).iter().map(|c| c.norm()).collect()
}

/// Amplitude spectrum of `recon` combined with the phase of `target`.
pub fn spectral_control(recon: &ImageArray, target: &ImageArray) -> Result<ImageArray> {
    if recon.shape() != target.shape() {
        return Err(Error::data(format!(
            "spectral control needs equal shapes, got {:?} and {:?}",
            recon.shape(),
            target.shape()
        )));
    }
    let (h, w) = recon.shape();
    let amp = spectrum(recon);
    let phase = spectrum(target);
    let mut mixed: Vec<Complex<f64>> = amp
        .iter()
        .zip(&phase)
        .map(|(a, p)| Complex::from_polar(a.norm(), p.arg()))
        .collect();
    fft2(&mut mixed, h, w, true);
    let mut out = target.with_data(mixed.iter().map(|c| c.re as f32).collect());
    out.space = recon.space;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ValueSpace;

    #[test]
    fn self_control_is_identity() {
        let img = ImageArray::from_fn(8, 6, ValueSpace::Standardized, |y, x| ((y * 7 + x * 3) % 5) as f32 - 2.0);
        let out = spectral_control(&img, &img).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn scaled_cosine_transfers_amplitude() {
        let cos = |k: f32| {
            ImageArray::from_fn(16, 16, ValueSpace::Standardized, move |_, x| {
                k * (2.0 * std::f32::consts::PI * 3.0 * x as f32 / 16.0).cos()
            })
        };
        let out = spectral_control(&cos(2.0), &cos(1.0)).unwrap();
        for (a, b) in out.data().iter().zip(cos(2.0).data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn shape_mismatch() {
        let a = ImageArray::filled(4, 4, 0.0, ValueSpace::Raw);
        let b = ImageArray::filled(4, 5, 0.0, ValueSpace::Raw);
        assert!(matches!(spectral_control(&a, &b), Err(Error::Data(_))));
    }
}
