//! Fourteen common image corruptions at five severities, computed on the
//! fly from a versioned parameter table, and the corrupted evaluation sets
//! built from them.

mod filters;
mod frost;
mod jpeg;
mod ops;
mod severity;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::image::{ImageArray, ValueSpace};
use crate::seed;

pub use frost::{frost_texture, generate_frost_texture, FROST_TEXTURE_COUNT, FROST_TEXTURE_SIZE};
pub use jpeg::jpeg_roundtrip;
pub use severity::{SeverityTable, DEFAULT_SEVERITY_TOML};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    MotionBlur,
    ZoomBlur,
    Snow,
    Frost,
    Fog,
    Brightness,
    Contrast,
    ElasticTransform,
    Pixelate,
    JpegCompression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CorruptionGroup {
    Noise,
    Blur,
    Weather,
    Digital,
}

impl CorruptionGroup {
    pub const ALL: [CorruptionGroup; 4] = [
        CorruptionGroup::Noise,
        CorruptionGroup::Blur,
        CorruptionGroup::Weather,
        CorruptionGroup::Digital,
    ];

    pub fn members(self) -> impl Iterator<Item = CorruptionKind> {
        CorruptionKind::ALL
            .into_iter()
            .filter(move |k| k.group() == self)
    }
}

impl fmt::Display for CorruptionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 14] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::ZoomBlur,
        CorruptionKind::Snow,
        CorruptionKind::Frost,
        CorruptionKind::Fog,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::ElasticTransform,
        CorruptionKind::Pixelate,
        CorruptionKind::JpegCompression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::MotionBlur => "motion_blur",
            CorruptionKind::ZoomBlur => "zoom_blur",
            CorruptionKind::Snow => "snow",
            CorruptionKind::Frost => "frost",
            CorruptionKind::Fog => "fog",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::ElasticTransform => "elastic_transform",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::JpegCompression => "jpeg_compression",
        }
    }

    pub fn group(self) -> CorruptionGroup {
        corruption_group(self)
    }

    /// Number of parameters per severity level in the table.
    pub(crate) fn arity(self) -> usize {
        match self {
            CorruptionKind::DefocusBlur
            | CorruptionKind::MotionBlur
            | CorruptionKind::ZoomBlur
            | CorruptionKind::Frost
            | CorruptionKind::Fog => 2,
            CorruptionKind::ElasticTransform => 3,
            CorruptionKind::Snow => 7,
            _ => 1,
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown corruption '{s}'")))
    }
}

pub fn corruption_group(kind: CorruptionKind) -> CorruptionGroup {
    use CorruptionKind::*;
    match kind {
        GaussianNoise | ShotNoise | ImpulseNoise => CorruptionGroup::Noise,
        DefocusBlur | MotionBlur | ZoomBlur => CorruptionGroup::Blur,
        Snow | Frost | Fog | Brightness => CorruptionGroup::Weather,
        Contrast | ElasticTransform | Pixelate | JpegCompression => CorruptionGroup::Digital,
    }
}

/// Corrupt a raw `[0, 1]` image. Output is clamped to `[0, 1]` and depends
/// only on `(img, kind, level, seed)` and the table.
pub fn corrupt(
    img: &ImageArray,
    kind: CorruptionKind,
    level: u8,
    seed: u64,
    table: &SeverityTable,
) -> Result<ImageArray> {
    if img.space != ValueSpace::Raw {
        return Err(Error::data("corruptions apply to raw-space images"));
    }
    let params = table.params(kind, level)?;
    let scale = img.height().min(img.width()) as f32 / table.reference_size as f32;
    let mut out = ops::apply(img, kind, params, scale, seed);
    out.clamp01();
    out.space = ValueSpace::Raw;
    out.provenance = format!("{}|{}:{}", img.provenance, kind, level);
    Ok(out)
}

/// Seed for one image of one corrupted copy.
pub fn image_seed(seed: u64, kind: CorruptionKind, level: u8, index: usize) -> u64 {
    seed::derive(seed, &[kind as u64, level as u64, index as u64])
}

/// Corrupted copies of `eval`, one per `(kind, level)`, produced lazily in
/// `kinds`-major order.
pub fn build_corrupted_eval_set<'a>(
    eval: &'a LabeledImageSet,
    kinds: &'a [CorruptionKind],
    levels: &'a [u8],
    seed: u64,
    table: &'a SeverityTable,
) -> Result<impl Iterator<Item = Result<(CorruptionKind, u8, LabeledImageSet)>> + 'a> {
    if eval.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    if kinds.is_empty() || levels.is_empty() {
        return Err(Error::config("corruption kinds and levels must be nonempty"));
    }
    if let Some(&l) = levels.iter().find(|&&l| !(1..=5).contains(&l)) {
        return Err(Error::config(format!("severity level {l} outside 1..5")));
    }
    Ok(kinds.iter().flat_map(move |&kind| {
        levels.iter().map(move |&level| {
            let images = eval
                .images
                .iter()
                .enumerate()
                .map(|(i, img)| corrupt(img, kind, level, image_seed(seed, kind, level, i), table))
                .collect::<Result<Vec<_>>>()?;
            Ok((
                kind,
                level,
                LabeledImageSet {
                    images,
                    labels: eval.labels.clone(),
                    class_count: eval.class_count,
                    split: eval.split,
                },
            ))
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_group_mapping() {
        assert_eq!(corruption_group(CorruptionKind::GaussianNoise), CorruptionGroup::Noise);
        assert_eq!(corruption_group(CorruptionKind::Fog), CorruptionGroup::Weather);
        assert_eq!(
            corruption_group(CorruptionKind::JpegCompression),
            CorruptionGroup::Digital
        );
        let sizes: Vec<usize> = CorruptionGroup::ALL
            .iter()
            .map(|g| g.members().count())
            .collect();
        assert_eq!(sizes, vec![3, 3, 4, 4]);
    }

    #[test]
    fn names_roundtrip() {
        for k in CorruptionKind::ALL {
            assert_eq!(k.name().parse::<CorruptionKind>().unwrap(), k);
        }
    }
}
