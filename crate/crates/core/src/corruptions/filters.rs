//! Spatial filters shared by the corruption kernels. All borders reflect.

use crate::image::{reflect_index, ImageArray};

/// Separable Gaussian blur truncated at 4 sigma. `sigma <= 0` is a no-op.
pub(crate) fn gaussian_blur(img: &ImageArray, sigma: f32) -> ImageArray {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (h, w) = img.shape();
    let mut tmp = img.clone();
    for y in 0..h {
        for x in 0..w {
            let acc: f32 = k
                .iter()
                .enumerate()
                .map(|(j, &kv)| kv * img.get(y, reflect_index(x as isize + j as isize - radius, w)))
                .sum();
            tmp.set(y, x, acc);
        }
    }
    let mut out = tmp.clone();
    for y in 0..h {
        for x in 0..w {
            let acc: f32 = k
                .iter()
                .enumerate()
                .map(|(j, &kv)| kv * tmp.get(reflect_index(y as isize + j as isize - radius, h), x))
                .sum();
            out.set(y, x, acc);
        }
    }
    out
}

/// Dense 2-D correlation with an odd square kernel.
pub(crate) fn convolve(img: &ImageArray, kernel: &[f32], ksize: usize) -> ImageArray {
    let r = (ksize / 2) as isize;
    let (h, w) = img.shape();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..ksize {
                let sy = reflect_index(y as isize + ky as isize - r, h);
                for kx in 0..ksize {
                    let kv = kernel[ky * ksize + kx];
                    if kv != 0.0 {
                        acc += kv * img.get(sy, reflect_index(x as isize + kx as isize - r, w));
                    }
                }
            }
            out.set(y, x, acc);
        }
    }
    out
}

/// Anti-aliased disk kernel: binary disk of `radius`, softened by a Gaussian.
pub(crate) fn disk_kernel(radius: f32, alias_blur: f32) -> (Vec<f32>, usize) {
    let half = if radius <= 8.0 { 8 } else { radius.ceil() as usize };
    let size = 2 * half + 1;
    let mut disk = ImageArray::from_fn(size, size, crate::image::ValueSpace::Raw, |y, x| {
        let dy = y as f32 - half as f32;
        let dx = x as f32 - half as f32;
        if dx * dx + dy * dy <= radius * radius {
            1.0
        } else {
            0.0
        }
    });
    let total: f32 = disk.data().iter().sum();
    if total == 0.0 {
        disk.set(half, half, 1.0);
    }
    let disk = gaussian_blur(&disk, alias_blur);
    let s: f32 = disk.data().iter().sum();
    (disk.data().iter().map(|v| v / s).collect(), size)
}

/// Magnify about the image center by `factor`, keeping the size.
pub(crate) fn center_zoom(img: &ImageArray, factor: f32) -> ImageArray {
    let (h, w) = img.shape();
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    ImageArray::from_fn(h, w, img.space, |y, x| {
        img.sample_reflect(cy + (y as f32 - cy) / factor, cx + (x as f32 - cx) / factor)
    })
}

/// One-sided Gaussian-weighted line blur along `angle` (radians), as a
/// motion streak of `radius` pixels.
pub(crate) fn motion_blur(img: &ImageArray, radius: f32, sigma: f32, angle: f32) -> ImageArray {
    let len = radius.round().max(1.0) as usize;
    let sigma = sigma.max(1e-3);
    let weights: Vec<f32> = (0..len)
        .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = weights.iter().sum();
    let (s, c) = angle.sin_cos();
    let (h, w) = img.shape();
    ImageArray::from_fn(h, w, img.space, |y, x| {
        weights
            .iter()
            .enumerate()
            .map(|(i, &wt)| {
                wt * img.sample_reflect(y as f32 - i as f32 * s, x as f32 - i as f32 * c)
            })
            .sum::<f32>()
            / total
    })
}

/// Sample `img` at `(y, x) = map(y_out, x_out)` bilinearly with reflection.
pub(crate) fn warp(img: &ImageArray, map: impl Fn(usize, usize) -> (f32, f32)) -> ImageArray {
    let (h, w) = img.shape();
    ImageArray::from_fn(h, w, img.space, |y, x| {
        let (sy, sx) = map(y, x);
        img.sample_reflect(sy, sx)
    })
}

/// Affine map `(x, y) -> (a x + b y + c, d x + e y + f)` fitted through three
/// point pairs. Returns `None` for degenerate source points.
pub(crate) fn affine_from_points(src: [(f32, f32); 3], dst: [(f32, f32); 3]) -> Option<[f32; 6]> {
    let (x1, y1) = src[0];
    let (x2, y2) = src[1];
    let (x3, y3) = src[2];
    let det = x1 * (y2 - y3) + x2 * (y3 - y1) + x3 * (y1 - y2);
    if det.abs() < 1e-9 {
        return None;
    }
    let solve = |v1: f32, v2: f32, v3: f32| {
        let a = (v1 * (y2 - y3) + v2 * (y3 - y1) + v3 * (y1 - y2)) / det;
        let b = (x1 * (v2 - v3) + x2 * (v3 - v1) + x3 * (v1 - v2)) / det;
        let c = (x1 * (y2 * v3 - y3 * v2) + x2 * (y3 * v1 - y1 * v3) + x3 * (y1 * v2 - y2 * v1))
            / det;
        (a, b, c)
    };
    let (a, b, c) = solve(dst[0].0, dst[1].0, dst[2].0);
    let (d, e, f) = solve(dst[0].1, dst[1].1, dst[2].1);
    Some([a, b, c, d, e, f])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ValueSpace;

    #[test]
    fn blur_preserves_constants() {
        let img = ImageArray::filled(9, 9, 0.3, ValueSpace::Raw);
        let b = gaussian_blur(&img, 1.5);
        assert!(b.data().iter().all(|v| (v - 0.3).abs() < 1e-6));
        let (k, n) = disk_kernel(2.0, 0.5);
        let c = convolve(&img, &k, n);
        assert!(c.data().iter().all(|v| (v - 0.3).abs() < 1e-5));
    }

    #[test]
    fn affine_fit_recovers_translation() {
        let src = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
        let dst = [(2.0, 3.0), (3.0, 3.0), (2.0, 4.0)];
        let m = affine_from_points(src, dst).unwrap();
        let expect = [1.0, 0.0, 2.0, 0.0, 1.0, 3.0];
        for (a, b) in m.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
