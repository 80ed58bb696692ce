//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CTCK" | u32 version | str config_digest | str lineage | str config_json
//! u32 entry_count
//! entry*: str name | u8 dtype (0 = f32) | u32 ndim | u64 dim* | f32 data*
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8.

use std::path::Path;

use super::config::ModelConfig;
use super::network::{batch_tensor, classify, forward_trunk, readout_neural, ForwardOptions};
use super::params::{Bound, ParameterSet};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{standardize, LabeledImageSet};
use crate::image::{ImageArray, ValueSpace};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CTCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const MAX_NDIM: usize = 8;

/// Parameters plus the architecture they belong to and how they were made.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: ParameterSet<f32>,
    /// Training history, one `stage:detail` item per phase, `;`-separated.
    pub lineage: String,
}

impl ModelCheckpoint {
    pub fn new(config: ModelConfig, params: ParameterSet<f32>, lineage: impl Into<String>) -> Self {
        Self {
            config,
            params,
            lineage: lineage.into(),
        }
    }

    pub fn push_lineage(&mut self, item: &str) {
        if !self.lineage.is_empty() {
            self.lineage.push(';');
        }
        self.lineage.push_str(item);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.config.digest());
        put_str(&mut out, &self.lineage);
        put_str(
            &mut out,
            &serde_json::to_string(&self.config).expect("config serializes"),
        );
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::data("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {version}")));
        }
        let digest = r.string()?;
        let lineage = r.string()?;
        let config: ModelConfig = serde_json::from_str(&r.string()?)
            .map_err(|e| Error::data(format!("checkpoint config: {e}")))?;
        if config.digest() != digest {
            return Err(Error::data("checkpoint config digest mismatch"));
        }
        let count = r.u32()? as usize;
        let mut params = ParameterSet::new();
        for _ in 0..count {
            let name = r.string()?;
            if r.take(1)?[0] != DTYPE_F32 {
                return Err(Error::data(format!("entry {name}: unsupported dtype")));
            }
            let ndim = r.u32()? as usize;
            if ndim > MAX_NDIM {
                return Err(Error::data(format!("entry {name}: too many dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut len = 1usize;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| Error::data(format!("entry {name}: dimension overflow")))?;
                len = len
                    .checked_mul(d)
                    .ok_or_else(|| Error::data(format!("entry {name}: size overflow")))?;
                shape.push(d);
            }
            let nbytes = len
                .checked_mul(4)
                .ok_or_else(|| Error::data(format!("entry {name}: size overflow")))?;
            let raw = r.take(nbytes)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if params.contains(&name) {
                return Err(Error::data(format!("duplicate entry {name}")));
            }
            params.insert(name, Tensor::new(shape, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::data("trailing bytes after checkpoint entries"));
        }
        config
            .validate()
            .map_err(|e| Error::data(format!("checkpoint config invalid: {e}")))?;
        Ok(Self {
            config,
            params,
            lineage,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::data_file(path, e.to_string()))
    }

    pub fn prepare(&self, img: &ImageArray) -> Result<ImageArray> {
        prepare_image(&self.params, img)
    }

    /// Eval-mode log-probabilities, row-major `[n, K]`.
    pub fn predict_log_probs(&self, images: &[ImageArray], batch: usize) -> Result<Vec<f32>> {
        eval_log_probs(&self.config, &self.params, images, batch)
    }

    pub fn predict_classes(&self, images: &[ImageArray], batch: usize) -> Result<Vec<usize>> {
        eval_classes(&self.config, &self.params, images, batch)
    }

    pub fn accuracy(&self, set: &LabeledImageSet, batch: usize) -> Result<f64> {
        eval_accuracy(&self.config, &self.params, set, batch)
    }

    pub fn tap_features(&self, images: &[ImageArray], batch: usize) -> Result<Vec<Vec<f32>>> {
        eval_tap(&self.config, &self.params, images, batch)
    }

    pub fn predict_responses(&self, images: &[ImageArray], batch: usize) -> Result<Vec<f32>> {
        eval_responses(&self.config, &self.params, images, batch)
    }
}

/// Bring an image into the model's input space: raw images are
/// standardized with the statistics stored in `params`.
pub fn prepare_image(params: &ParameterSet<f32>, img: &ImageArray) -> Result<ImageArray> {
    match img.space {
        ValueSpace::Standardized => Ok(img.clone()),
        ValueSpace::Raw => {
            let stats = params
                .standardization()
                .ok_or_else(|| Error::config("parameters lack standardization statistics"))?;
            standardize(img, &stats)
        }
    }
}

fn eval_batches<F>(
    params: &ParameterSet<f32>,
    images: &[ImageArray],
    batch: usize,
    mut f: F,
) -> Result<()>
where
    F: FnMut(&mut Graph<f32>, &Bound, Var) -> Result<()>,
{
    for chunk in images.chunks(batch.max(1)) {
        let prepared = chunk
            .iter()
            .map(|i| prepare_image(params, i))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ImageArray> = prepared.iter().collect();
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, params, |_| false);
        let x = g.constant(batch_tensor(&refs));
        f(&mut g, &bound, x)?;
    }
    Ok(())
}

/// Eval-mode log-probabilities, row-major `[n, K]`.
pub fn eval_log_probs(
    cfg: &ModelConfig,
    params: &ParameterSet<f32>,
    images: &[ImageArray],
    batch: usize,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(images.len() * cfg.classes);
    let opts = ForwardOptions::eval();
    eval_batches(params, images, batch, |g, bound, x| {
        let t = forward_trunk(g, cfg, params, bound, x, &opts, false)?;
        let logp = classify(g, cfg, bound, t.out.expect("full pass"), &opts);
        out.extend_from_slice(g.value(logp).data());
        Ok(())
    })?;
    Ok(out)
}

/// Eval-mode arg-max class per image (first maximum wins).
pub fn eval_classes(
    cfg: &ModelConfig,
    params: &ParameterSet<f32>,
    images: &[ImageArray],
    batch: usize,
) -> Result<Vec<usize>> {
    let logp = eval_log_probs(cfg, params, images, batch)?;
    Ok(logp
        .chunks(cfg.classes)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

pub fn eval_accuracy(
    cfg: &ModelConfig,
    params: &ParameterSet<f32>,
    set: &LabeledImageSet,
    batch: usize,
) -> Result<f64> {
    if set.class_count != cfg.classes {
        return Err(Error::config(format!(
            "evaluation set has {} classes, model has {}",
            set.class_count, cfg.classes
        )));
    }
    if set.is_empty() {
        return Err(Error::eval("empty evaluation set"));
    }
    let pred = eval_classes(cfg, params, &set.images, batch)?;
    let hits = pred.iter().zip(&set.labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Eval-mode tap activations, one flattened `[C, h, w]` vector per image.
pub fn eval_tap(
    cfg: &ModelConfig,
    params: &ParameterSet<f32>,
    images: &[ImageArray],
    batch: usize,
) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    let opts = ForwardOptions::eval();
    eval_batches(params, images, batch, |g, bound, x| {
        let t = forward_trunk(g, cfg, params, bound, x, &opts, true)?;
        let v = g.value(t.tap);
        let per = v.len() / v.shape()[0];
        out.extend(v.data().chunks(per).map(<[f32]>::to_vec));
        Ok(())
    })?;
    Ok(out)
}

/// Eval-mode readout predictions, row-major `[n, N]`.
pub fn eval_responses(
    cfg: &ModelConfig,
    params: &ParameterSet<f32>,
    images: &[ImageArray],
    batch: usize,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(images.len() * cfg.readout.neurons);
    let opts = ForwardOptions::eval();
    eval_batches(params, images, batch, |g, bound, x| {
        let t = forward_trunk(g, cfg, params, bound, x, &opts, true)?;
        let r = readout_neural(g, cfg, bound, t.tap, &opts);
        out.extend_from_slice(g.value(r).data());
        Ok(())
    })?;
    Ok(out)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::data("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::data("invalid UTF-8 string"))
    }
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) {
    put_str(out, s)
}
