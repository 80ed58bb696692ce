//! Single-channel float rasters and the small set of file formats the
//! toolkit reads and writes.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel value space of an [`ImageArray`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSpace {
    /// Raw intensities in `[0, 1]`.
    Raw,
    /// `(raw - mean) / std` with training-set statistics.
    Standardized,
}

/// Single-channel 2-D raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageArray {
    height: usize,
    width: usize,
    data: Vec<f32>,
    pub space: ValueSpace,
    pub provenance: String,
}

impl ImageArray {
    pub fn new(height: usize, width: usize, data: Vec<f32>, space: ValueSpace) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::data("image dimensions must be nonzero"));
        }
        if data.len() != height * width {
            return Err(Error::data(format!(
                "image data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            space,
            provenance: String::new(),
        })
    }

    pub fn filled(height: usize, width: usize, value: f32, space: ValueSpace) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
            space,
            provenance: String::new(),
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        space: ValueSpace,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
            space,
            provenance: String::new(),
        }
    }

    pub fn with_provenance(mut self, p: impl Into<String>) -> Self {
        self.provenance = p.into();
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Same shape and metadata with new pixel values.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
            space: self.space,
            provenance: self.provenance.clone(),
        }
    }

    pub fn with_data(&self, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), self.data.len());
        Self {
            height: self.height,
            width: self.width,
            data,
            space: self.space,
            provenance: self.provenance.clone(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data
            .iter()
            .map(|&v| (v as f64 - m).powi(2))
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Euclidean norm of the pixel vector.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Bilinear sample at fractional pixel coordinates with reflected borders.
    pub fn sample_reflect(&self, y: f32, x: f32) -> f32 {
        let y = reflect_coord(y, self.height);
        let x = reflect_coord(x, self.width);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let fy = y - y0 as f32;
        let fx = x - x0 as f32;
        let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
        let bot = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Bilinear resize (pixel-center aligned).
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if (height, width) == self.shape() {
            return self.clone();
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let mut out = Self::from_fn(height, width, self.space, |y, x| {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
            self.sample_reflect(fy, fx)
        });
        out.provenance = self.provenance.clone();
        out
    }
}

/// Reflect a coordinate into `[0, n-1]` (mirror without repeating the edge).
pub(crate) fn reflect_coord(v: f32, n: usize) -> f32 {
    if n == 1 {
        return 0.0;
    }
    let max = (n - 1) as f32;
    let period = 2.0 * max;
    let mut r = v.rem_euclid(period);
    if r > max {
        r = period - r;
    }
    r
}

pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    reflect_coord(i as f32, n).round() as usize
}

const RASTER_MAGIC: &[u8; 4] = b"CTRS";
const RASTER_VERSION: u32 = 1;

/// Encode a raster as the headered float32 container:
/// magic `CTRS`, u32 version, u32 height, u32 width, then `height*width`
/// little-endian f32 values in row-major order.
pub fn encode_raster(img: &ImageArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.data.len() * 4);
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode the float32 raster container. The value space is not stored and
/// must be supplied by the caller.
pub fn decode_raster(bytes: &[u8], space: ValueSpace) -> Result<ImageArray> {
    if bytes.len() < 16 || &bytes[..4] != RASTER_MAGIC {
        return Err(Error::data("not a float32 raster (bad magic)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != RASTER_VERSION {
        return Err(Error::data(format!("unsupported raster version {version}")));
    }
    let (h, w) = (word(8) as usize, word(12) as usize);
    let n = h
        .checked_mul(w)
        .ok_or_else(|| Error::data("raster dimensions overflow"))?;
    if n == 0 {
        return Err(Error::data("raster has zero size"));
    }
    let body = &bytes[16..];
    if body.len() != n.checked_mul(4).ok_or_else(|| Error::data("raster too large"))? {
        return Err(Error::data(format!(
            "raster body has {} bytes, expected {}",
            body.len(),
            n * 4
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImageArray::new(h, w, data, space)
}

/// Multi-channel raster with channel-major planes, as decoded from files.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRaster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `channels` planes of `height*width` values in `[0, 1]`.
    pub data: Vec<f32>,
}

impl ChannelRaster {
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Decode an 8/16-bit grayscale or RGB(A) PNG/BMP into `[0, 1]` planes.
/// Alpha is discarded.
pub fn decode_image_bytes(bytes: &[u8]) -> Result<ChannelRaster> {
    let reader = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::data(e.to_string()))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Bmp) => {}
        other => return Err(Error::data(format!("unsupported image format {other:?}"))),
    }
    let img = reader.decode().map_err(|e| Error::data(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::data("image has zero size"));
    }
    let n = w * h;
    let color = img.color();
    if color.has_color() {
        let rgb = img.to_rgb32f();
        let mut data = vec![0.0; 3 * n];
        for (i, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * n + i] = p.0[c].clamp(0.0, 1.0);
            }
        }
        Ok(ChannelRaster {
            channels: 3,
            height: h,
            width: w,
            data,
        })
    } else {
        let data = if color.bytes_per_pixel() / color.channel_count() as u8 > 1 {
            img.to_luma16()
                .pixels()
                .map(|p| p.0[0] as f32 / 65535.0)
                .collect()
        } else {
            img.to_luma8()
                .pixels()
                .map(|p| p.0[0] as f32 / 255.0)
                .collect()
        };
        Ok(ChannelRaster {
            channels: 1,
            height: h,
            width: w,
            data,
        })
    }
}

pub fn read_image_file(path: &Path) -> Result<ChannelRaster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image_bytes(&bytes).map_err(|e| Error::data_file(path, e.to_string()))
}

/// Write an 8-bit grayscale PNG. Values are mapped linearly from
/// `[lo, hi]` to `[0, 255]` and clamped.
pub fn write_png_preview(img: &ImageArray, lo: f32, hi: f32, path: &Path) -> Result<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::data_file(path, e.to_string()))
}

/// PNG-encode an 8-bit grayscale image from `[0, 1]` values.
pub fn encode_png_gray(img: &ImageArray) -> Vec<u8> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory png encoding");
    out.into_inner()
}
