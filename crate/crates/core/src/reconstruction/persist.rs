use std::path::{Path, PathBuf};

use super::ReconstructionResult;
use crate::image::{decode_raster, encode_raster, write_png_preview, ImageArray, ValueSpace};
use crate::{Error, Result};

/// Paths written by [`save_reconstruction`].
#[derive(Debug, Clone, PartialEq)]
pub struct SavedReconstruction {
    pub raster: PathBuf,
    pub preview: PathBuf,
    pub sidecar: PathBuf,
}

/// Write `<stem>.f32`, `<stem>.png` (min–max scaled) and `<stem>.json`.
pub fn save_reconstruction(
    dir: &Path,
    stem: &str,
    image: &ImageArray,
    result: &ReconstructionResult,
) -> Result<SavedReconstruction> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = SavedReconstruction {
        raster: dir.join(format!("{stem}.f32")),
        preview: dir.join(format!("{stem}.png")),
        sidecar: dir.join(format!("{stem}.json")),
    };
    std::fs::write(&out.raster, encode_raster(image)).map_err(|e| Error::io(&out.raster, e))?;
    let (lo, hi) = image
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    write_png_preview(image, lo, hi, &out.preview)?;
    let json = serde_json::to_string_pretty(result).expect("result serializes");
    std::fs::write(&out.sidecar, json).map_err(|e| Error::io(&out.sidecar, e))?;
    Ok(out)
}

pub fn load_reconstruction(raster: &Path) -> Result<ImageArray> {
    let bytes = std::fs::read(raster).map_err(|e| Error::io(raster, e))?;
    decode_raster(&bytes, ValueSpace::Standardized).map_err(|e| Error::data_file(raster, e.to_string()))
}
