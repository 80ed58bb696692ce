use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::filters::{
    affine_from_points, center_zoom, convolve, disk_kernel, gaussian_blur, motion_blur, warp,
};
use super::{frost, jpeg, CorruptionKind};
use crate::image::ImageArray;
use crate::seed;

/// Apply one corruption; `scale` rescales pixel-unit parameters from the
/// table's reference size. The caller clamps the result.
pub(super) fn apply(
    img: &ImageArray,
    kind: CorruptionKind,
    p: &[f64],
    scale: f32,
    seed: u64,
) -> ImageArray {
    let mut rng = seed::rng(seed);
    let p: Vec<f32> = p.iter().map(|&v| v as f32).collect();
    match kind {
        CorruptionKind::GaussianNoise => {
            let normal = Normal::new(0.0, p[0]).expect("finite std");
            img.map(|v| v + normal.sample(&mut rng))
        }
        CorruptionKind::ShotNoise => {
            let lam = p[0] as f64;
            img.map(|v| {
                let rate = (v.clamp(0.0, 1.0) as f64) * lam;
                if rate <= 0.0 {
                    0.0
                } else {
                    (Poisson::new(rate).expect("positive rate").sample(&mut rng) / lam) as f32
                }
            })
        }
        CorruptionKind::ImpulseNoise => {
            let amount = p[0];
            img.map(|v| {
                if rng.random::<f32>() < amount {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                }
            })
        }
        CorruptionKind::DefocusBlur => {
            let (k, n) = disk_kernel(p[0] * scale, p[1] * scale);
            convolve(img, &k, n)
        }
        CorruptionKind::MotionBlur => {
            let angle = rng.random_range(-45.0..45.0_f32).to_radians();
            motion_blur(img, p[0] * scale, p[1] * scale, angle)
        }
        CorruptionKind::ZoomBlur => {
            let (max, step) = (p[0], p[1]);
            let mut acc = img.data().to_vec();
            let mut count = 1.0;
            let mut i = 0;
            loop {
                let z = 1.0 + step * i as f32;
                if z >= max - 1e-6 {
                    break;
                }
                let zoomed = center_zoom(img, z);
                acc.iter_mut().zip(zoomed.data()).for_each(|(a, b)| *a += b);
                count += 1.0;
                i += 1;
            }
            img.with_data(acc.into_iter().map(|v| v / count).collect())
        }
        CorruptionKind::Snow => snow(img, &p, scale, &mut rng),
        CorruptionKind::Frost => {
            let tex_index = rng.random_range(0..frost::FROST_TEXTURE_COUNT);
            let mut tex = frost::frost_texture(tex_index).clone();
            let (h, w) = img.shape();
            if tex.height() < h || tex.width() < w {
                let side = h.max(w);
                tex = tex.resize_bilinear(side, side);
            }
            let oy = rng.random_range(0..=tex.height() - h);
            let ox = rng.random_range(0..=tex.width() - w);
            ImageArray::from_fn(h, w, img.space, |y, x| {
                p[0] * img.get(y, x) + p[1] * tex.get(oy + y, ox + x)
            })
        }
        CorruptionKind::Fog => {
            let (h, w) = img.shape();
            let size = h.max(w).next_power_of_two();
            let fractal = plasma_fractal(size, p[1] as f64, &mut rng);
            let max = img.data().iter().copied().fold(f32::MIN, f32::max);
            ImageArray::from_fn(h, w, img.space, |y, x| {
                let v = img.get(y, x) + p[0] * fractal[y * size + x] as f32;
                v * max / (max + p[0])
            })
        }
        CorruptionKind::Brightness => img.map(|v| v + p[0]),
        CorruptionKind::Contrast => {
            let m = img.mean() as f32;
            img.map(|v| (v - m) * p[0] + m)
        }
        CorruptionKind::ElasticTransform => elastic(img, &p, &mut rng),
        CorruptionKind::Pixelate => pixelate(img, p[0]),
        CorruptionKind::JpegCompression => jpeg::jpeg_roundtrip(img, p[0]),
    }
}

fn snow(img: &ImageArray, p: &[f32], scale: f32, rng: &mut seed::SeedRng) -> ImageArray {
    let (h, w) = img.shape();
    let normal = Normal::new(p[0], p[1]).expect("finite snow parameters");
    let layer = ImageArray::from_fn(h, w, img.space, |_, _| normal.sample(rng));
    let mut layer = center_zoom(&layer, p[2]);
    layer
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v < p[3] { 0.0 } else { v.clamp(0.0, 1.0) });
    let angle = rng.random_range(-135.0..-45.0_f32).to_radians();
    let layer = motion_blur(&layer, p[4] * scale, p[5] * scale, angle);
    let blend = p[6];
    ImageArray::from_fn(h, w, img.space, |y, x| {
        let v = img.get(y, x);
        let base = blend * v + (1.0 - blend) * v.max(v * 1.5 + 0.5);
        base + layer.get(y, x) + layer.get(h - 1 - y, w - 1 - x)
    })
}

/// Diamond-square fractal on a toroidal `size x size` grid, normalized to
/// `[0, 1]`. `size` must be a power of two.
pub(super) fn plasma_fractal(size: usize, decay: f64, rng: &mut seed::SeedRng) -> Vec<f64> {
    let mut map = vec![0.0_f64; size * size];
    let idx = |y: usize, x: usize| (y % size) * size + (x % size);
    let mut step = size;
    let mut wibble = 100.0_f64;
    while step >= 2 {
        let half = step / 2;
        // Squares: centers from the four corners.
        for y in (0..size).step_by(step) {
            for x in (0..size).step_by(step) {
                let s = map[idx(y, x)]
                    + map[idx(y + step, x)]
                    + map[idx(y, x + step)]
                    + map[idx(y + step, x + step)];
                map[idx(y + half, x + half)] = s / 4.0 + wibble * rng.random_range(-wibble..=wibble);
            }
        }
        // Diamonds: edge midpoints from the adjacent corners and centers.
        for y in (0..size).step_by(step) {
            for x in (0..size).step_by(step) {
                let top = map[idx(y, x)]
                    + map[idx(y, x + step)]
                    + map[idx(y + half, x + half)]
                    + map[idx(y + size - half, x + half)];
                map[idx(y, x + half)] = top / 4.0 + wibble * rng.random_range(-wibble..=wibble);
                let left = map[idx(y, x)]
                    + map[idx(y + step, x)]
                    + map[idx(y + half, x + half)]
                    + map[idx(y + half, x + size - half)];
                map[idx(y + half, x)] = left / 4.0 + wibble * rng.random_range(-wibble..=wibble);
            }
        }
        step /= 2;
        wibble /= decay;
    }
    let min = map.iter().copied().fold(f64::INFINITY, f64::min);
    let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    map.iter().map(|v| (v - min) / span).collect()
}

fn elastic(img: &ImageArray, p: &[f32], rng: &mut seed::SeedRng) -> ImageArray {
    let (h, w) = img.shape();
    let side = h.min(w) as f32;
    let (alpha, sigma, jitter) = (p[0] * side, p[1] * side, p[2] * side);
    let (cy, cx) = ((h / 2) as f32, (w / 2) as f32);
    let sq = (h.min(w) / 3) as f32;
    let src = [(cx + sq, cy + sq), (cx - sq, cy + sq), (cx - sq, cy - sq)];
    let mut dst = src;
    for pt in dst.iter_mut() {
        pt.0 += rng.random_range(-jitter..=jitter.max(1e-6));
        pt.1 += rng.random_range(-jitter..=jitter.max(1e-6));
    }
    // Inverse map: output pixel -> source pixel.
    let inv = affine_from_points(dst, src).unwrap_or([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let affined = warp(img, |y, x| {
        let (xf, yf) = (x as f32, y as f32);
        (
            inv[3] * xf + inv[4] * yf + inv[5],
            inv[0] * xf + inv[1] * yf + inv[2],
        )
    });
    let field = |rng: &mut seed::SeedRng| {
        let noise = ImageArray::from_fn(h, w, img.space, |_, _| rng.random_range(-1.0..=1.0_f32));
        gaussian_blur(&noise, sigma).map(|v| v * alpha)
    };
    let dx = field(rng);
    let dy = field(rng);
    warp(&affined, |y, x| (y as f32 + dy.get(y, x), x as f32 + dx.get(y, x)))
}

/// Area-average over a coarse grid of `round(side * fraction)` cells, then
/// nearest-neighbour expansion back to the input size.
pub(super) fn pixelate(img: &ImageArray, fraction: f32) -> ImageArray {
    let (h, w) = img.shape();
    let ch = ((h as f32 * fraction).round() as usize).clamp(1, h);
    let cw = ((w as f32 * fraction).round() as usize).clamp(1, w);
    let cell_y = |y: usize| y * ch / h;
    let cell_x = |x: usize| x * cw / w;
    let mut sums = vec![0.0_f32; ch * cw];
    let mut counts = vec![0u32; ch * cw];
    for y in 0..h {
        for x in 0..w {
            let c = cell_y(y) * cw + cell_x(x);
            sums[c] += img.get(y, x);
            counts[c] += 1;
        }
    }
    ImageArray::from_fn(h, w, img.space, |y, x| {
        let c = cell_y(y) * cw + cell_x(x);
        sums[c] / counts[c] as f32
    })
}
