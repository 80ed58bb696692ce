//! Frost textures. Three procedural ice-crystal patterns are generated once
//! (see `examples/gen_frost.rs`) and shipped as 8-bit PNG assets.

use std::f32::consts::PI;
use std::sync::OnceLock;

use rand::Rng;

use super::filters::gaussian_blur;
use crate::image::{decode_image_bytes, ImageArray, ValueSpace};
use crate::seed;

pub const FROST_TEXTURE_COUNT: usize = 3;
pub const FROST_TEXTURE_SIZE: usize = 96;

const ASSETS: [&[u8]; FROST_TEXTURE_COUNT] = [
    include_bytes!("../../assets/frost/frost1.png"),
    include_bytes!("../../assets/frost/frost2.png"),
    include_bytes!("../../assets/frost/frost3.png"),
];

/// Shipped frost texture `index` (values in `[0, 1]`).
pub fn frost_texture(index: usize) -> &'static ImageArray {
    static CACHE: OnceLock<Vec<ImageArray>> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        ASSETS
            .iter()
            .map(|bytes| {
                let r = decode_image_bytes(bytes).expect("bundled frost texture decodes");
                ImageArray::new(r.height, r.width, r.data, ValueSpace::Raw)
                    .expect("bundled frost texture shape")
            })
            .collect()
    });
    &all[index % FROST_TEXTURE_COUNT]
}

/// Procedural ice crystals: branching bright needles over a faint haze.
pub fn generate_frost_texture(index: usize) -> ImageArray {
    let n = FROST_TEXTURE_SIZE;
    let mut rng = seed::rng(seed::derive(0xF057, &[index as u64]));
    let mut canvas = ImageArray::filled(n, n, 0.0, ValueSpace::Raw);
    let seeds = 14 + 4 * index;
    let mut stack: Vec<(f32, f32, f32, f32, u32)> = (0..seeds)
        .map(|_| {
            (
                rng.random_range(0.0..n as f32),
                rng.random_range(0.0..n as f32),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(10.0..30.0_f32),
                0,
            )
        })
        .collect();
    while let Some((mut y, mut x, angle, len, depth)) = stack.pop() {
        let (s, c) = angle.sin_cos();
        let steps = len.round() as usize;
        for i in 0..steps {
            let yi = y.rem_euclid(n as f32) as usize % n;
            let xi = x.rem_euclid(n as f32) as usize % n;
            let v = canvas.get(yi, xi) + 0.6 * (1.0 - i as f32 / steps as f32 * 0.5);
            canvas.set(yi, xi, v.min(1.0));
            if depth < 3 && rng.random::<f32>() < 0.08 {
                let turn = if rng.random::<bool>() { PI / 3.0 } else { -PI / 3.0 };
                stack.push((y, x, angle + turn, len * 0.5, depth + 1));
            }
            y += s;
            x += c;
        }
    }
    let sharp = canvas.clone();
    let glow = gaussian_blur(&canvas, 1.2);
    let haze = gaussian_blur(
        &ImageArray::from_fn(n, n, ValueSpace::Raw, |_, _| rng.random::<f32>()),
        3.0,
    );
    let mut out = ImageArray::from_fn(n, n, ValueSpace::Raw, |y, x| {
        0.55 * sharp.get(y, x) + 1.4 * glow.get(y, x) + 0.5 * (haze.get(y, x) - 0.3).max(0.0)
    });
    let max = out.data().iter().copied().fold(0.0_f32, f32::max).max(1e-6);
    out.data_mut().iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_textures_match_generator() {
        for i in 0..FROST_TEXTURE_COUNT {
            let shipped = frost_texture(i);
            let fresh = generate_frost_texture(i);
            assert_eq!(shipped.shape(), (FROST_TEXTURE_SIZE, FROST_TEXTURE_SIZE));
            for (a, b) in shipped.data().iter().zip(fresh.data()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }
}
