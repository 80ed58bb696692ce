use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::preprocess::to_grayscale;
use crate::error::{Error, Result};
use crate::image::{encode_png_gray, read_image_file, ImageArray, ValueSpace};

/// Environment variable overriding the dataset root.
pub const DATA_ROOT_ENV: &str = "COTRAIN_DATA_ROOT";
pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "cotrain-manifest 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::data(format!("unknown split '{other}'"))),
        }
    }
}

/// Images of one split with their class labels.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    pub images: Vec<ImageArray>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
}

impl LabeledImageSet {
    pub fn new(
        images: Vec<ImageArray>,
        labels: Vec<usize>,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        let set = Self {
            images,
            labels,
            class_count,
            split,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::data("image and label counts differ"));
        }
        if let Some(first) = self.images.first() {
            let shape = first.shape();
            if let Some(i) = self.images.iter().position(|im| im.shape() != shape) {
                return Err(Error::data(format!(
                    "image {i} has shape {:?}, expected {shape:?}",
                    self.images[i].shape()
                )));
            }
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::data(format!(
                "label {l} out of range for {} classes",
                self.class_count
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.images.first().map(|i| i.shape())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            split: self.split,
        }
    }

    /// Content digest over pixel data, shapes and labels.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.images.len() as u64).to_le_bytes());
        for (img, &l) in self.images.iter().zip(&self.labels) {
            h.update((img.height() as u32).to_le_bytes());
            h.update((img.width() as u32).to_le_bytes());
            for v in img.data() {
                h.update(v.to_le_bytes());
            }
            h.update((l as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub class_id: String,
    /// Path relative to the dataset root: `<split>/<class_id>/<file>`.
    pub path: String,
}

/// Canonical listing of a dataset directory.
///
/// Text format, one record per line:
///
/// ```text
/// cotrain-manifest 1
/// class <class_id>                      # in label order
/// image <split> <class_id> <relative path>
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim_end)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, MANIFEST_HEADER)) => {}
            _ => return Err(Error::data("manifest header missing or unsupported")),
        }
        let mut m = Manifest::default();
        for (n, line) in lines {
            let lineno = n + 1;
            let mut parts = line.splitn(4, ' ');
            match parts.next() {
                Some("class") => {
                    let id = parts
                        .next()
                        .filter(|s| valid_component(s))
                        .ok_or_else(|| Error::data(format!("line {lineno}: bad class id")))?;
                    if parts.next().is_some() {
                        return Err(Error::data(format!("line {lineno}: trailing fields")));
                    }
                    if m.classes.iter().any(|c| c == id) {
                        return Err(Error::data(format!("line {lineno}: duplicate class {id}")));
                    }
                    m.classes.push(id.to_string());
                }
                Some("image") => {
                    let (Some(split), Some(class_id), Some(path)) =
                        (parts.next(), parts.next(), parts.next())
                    else {
                        return Err(Error::data(format!("line {lineno}: incomplete image record")));
                    };
                    let split: Split = split.parse()?;
                    let expected = format!("{split}/{class_id}/");
                    let file = path.strip_prefix(&expected).ok_or_else(|| {
                        Error::data(format!(
                            "line {lineno}: path '{path}' is not under '{expected}'"
                        ))
                    })?;
                    if !valid_component(file) {
                        return Err(Error::data(format!("line {lineno}: bad file name '{file}'")));
                    }
                    m.entries.push(ManifestEntry {
                        split,
                        class_id: class_id.to_string(),
                        path: path.to_string(),
                    });
                }
                _ => return Err(Error::data(format!("line {lineno}: unknown record"))),
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for c in &self.classes {
            s.push_str(&format!("class {c}\n"));
        }
        for e in &self.entries {
            s.push_str(&format!("image {} {} {}\n", e.split, e.class_id, e.path));
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::data_file(path, e.to_string()))
    }

    /// Build a manifest by walking `<root>/<split>/<class_id>/*`, with
    /// classes and files in lexicographic order.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut classes = std::collections::BTreeSet::new();
        let mut entries = Vec::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            let dir = root.join(split.as_str());
            if !dir.is_dir() {
                continue;
            }
            for class_dir in sorted_dir(&dir)? {
                if !class_dir.is_dir() {
                    continue;
                }
                let class_id = file_name(&class_dir)?;
                classes.insert(class_id.clone());
                for f in sorted_dir(&class_dir)? {
                    if f.is_file() {
                        entries.push(ManifestEntry {
                            split,
                            class_id: class_id.clone(),
                            path: format!("{split}/{class_id}/{}", file_name(&f)?),
                        });
                    }
                }
            }
        }
        if entries.is_empty() {
            return Err(Error::data_file(root, "no images found in dataset layout"));
        }
        Ok(Self {
            classes: classes.into_iter().collect(),
            entries,
        })
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

fn valid_component(s: &str) -> bool {
    !s.is_empty()
        && !s.contains(['/', '\\'])
        && Path::new(s)
            .components()
            .all(|c| matches!(c, Component::Normal(_)))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

fn file_name(p: &Path) -> Result<String> {
    p.file_name()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::data_file(p, "non-UTF-8 file name"))
}

/// Dataset root, honoring the [`DATA_ROOT_ENV`] override.
pub fn data_root(configured: &Path) -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| configured.to_path_buf())
}

/// Load one split as grayscale `[0, 1]` images in manifest order.
pub fn load_dataset(root: &Path, split: Split, manifest: &Manifest) -> Result<LabeledImageSet> {
    if !root.is_dir() {
        return Err(Error::data_file(root, "dataset root does not exist"));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    for e in manifest.entries.iter().filter(|e| e.split == split) {
        let path = root.join(&e.path);
        let label = manifest
            .classes
            .iter()
            .position(|c| *c == e.class_id)
            .ok_or_else(|| Error::data_file(&path, format!("unknown class '{}'", e.class_id)))?;
        let raster = read_image_file(&path)?;
        let img = to_grayscale(&raster)
            .map_err(|err| Error::data_file(&path, err.to_string()))?
            .with_provenance(e.path.clone());
        match shape {
            None => shape = Some(img.shape()),
            Some(s) if s != img.shape() => {
                return Err(Error::data_file(
                    &path,
                    format!("image is {:?}, dataset images are {s:?}", img.shape()),
                ))
            }
            _ => {}
        }
        images.push(img);
        labels.push(label);
    }
    LabeledImageSet::new(images, labels, manifest.classes.len(), split)
}

/// Write sets as 8-bit grayscale PNGs in the documented layout, plus the
/// manifest. Class ids are `c000`, `c001`, ...
pub fn write_dataset(root: &Path, sets: &[&LabeledImageSet]) -> Result<Manifest> {
    let class_count = sets.iter().map(|s| s.class_count).max().unwrap_or(0);
    let classes: Vec<String> = (0..class_count).map(|c| format!("c{c:03}")).collect();
    let mut entries = Vec::new();
    for set in sets {
        for (i, (img, &l)) in set.images.iter().zip(&set.labels).enumerate() {
            let class_id = &classes[l];
            let rel = format!("{}/{class_id}/img{i:05}.png", set.split);
            let path = root.join(&rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut raw = img.clone();
            if raw.space != ValueSpace::Raw {
                return Err(Error::data("only raw-space images can be written"));
            }
            raw.clamp01();
            std::fs::write(&path, encode_png_gray(&raw)).map_err(|e| Error::io(&path, e))?;
            entries.push(ManifestEntry {
                split: set.split,
                class_id: class_id.clone(),
                path: rel,
            });
        }
    }
    let manifest = Manifest { classes, entries };
    let mpath = root.join(MANIFEST_FILE);
    std::fs::write(&mpath, manifest.to_text()).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}
