//! Baseline JPEG quantization round trip on 8x8 luminance blocks.
//!
//! Only the lossy part of the codec is modelled (level shift, DCT, quantize,
//! dequantize, inverse DCT, 8-bit rounding); chroma subsampling and entropy
//! coding do not apply to grayscale or do not change pixel values.

use std::f32::consts::PI;
use std::sync::OnceLock;

use crate::image::ImageArray;

const LUMA_Q: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quality-scaled quantization matrix (libjpeg convention).
pub(crate) fn quant_table(quality: f32) -> [f32; 64] {
    let q = quality.clamp(1.0, 100.0).round() as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut t = [0.0; 64];
    for (o, &b) in t.iter_mut().zip(&LUMA_Q) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f32;
    }
    t
}

fn dct_basis() -> &'static [[f32; 8]; 8] {
    static BASIS: OnceLock<[[f32; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let cu = if u == 0 { (0.125f32).sqrt() } else { 0.5 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = cu * ((2 * x + 1) as f32 * u as f32 * PI / 16.0).cos();
            }
        }
        b
    })
}

fn dct2(block: &[f32; 64]) -> [f32; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct2(coef: &[f32; 64]) -> [f32; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

/// Compress and decompress a `[0, 1]` image at `quality` (1..100).
pub fn jpeg_roundtrip(img: &ImageArray, quality: f32) -> ImageArray {
    let q = quant_table(quality);
    let (h, w) = img.shape();
    let mut out = img.clone();
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    // Edge blocks replicate the last row/column.
                    let v = img.get((by + y).min(h - 1), (bx + x).min(w - 1));
                    block[y * 8 + x] = (v.clamp(0.0, 1.0) * 255.0).round() - 128.0;
                }
            }
            let mut coef = dct2(&block);
            for (c, qv) in coef.iter_mut().zip(&q) {
                *c = (*c / qv).round() * qv;
            }
            let rec = idct2(&coef);
            for y in 0..8.min(h - by) {
                for x in 0..8.min(w - bx) {
                    let v = (rec[y * 8 + x] + 128.0).round().clamp(0.0, 255.0);
                    out.set(by + y, bx + x, v / 255.0);
                }
            }
        }
    }
    out
}
