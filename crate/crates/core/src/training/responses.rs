//! Neural response sets and their file container.
//!
//! ```text
//! "CTNR" | u32 version | u32 neurons | u32 images | str lineage
//! [u8; 32] image digest | f32 responses (row-major images x neurons)
//! ```

use std::path::Path;

use rand::seq::SliceRandom;

use crate::model::{put_string, Reader};
use crate::seed;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CTNR";
pub const RESPONSE_SET_VERSION: u32 = 1;

/// Per-image vectors of nonnegative responses for `neurons` neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralResponseSet {
    pub neurons: usize,
    pub images: usize,
    /// Teacher identity and seed that produced the responses.
    pub lineage: String,
    /// SHA-256 of the image set the responses were generated against.
    pub image_digest: [u8; 32],
    data: Vec<f32>,
}

impl NeuralResponseSet {
    pub fn new(
        neurons: usize,
        data: Vec<f32>,
        lineage: impl Into<String>,
        image_digest: [u8; 32],
    ) -> Result<Self> {
        if neurons == 0 || data.len() % neurons != 0 {
            return Err(Error::data("response matrix is not a whole number of rows"));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::data(format!("responses must be finite and nonnegative, got {v}")));
        }
        Ok(Self {
            neurons,
            images: data.len() / neurons,
            lineage: lineage.into(),
            image_digest,
            data,
        })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, image: usize) -> &[f32] {
        &self.data[image * self.neurons..(image + 1) * self.neurons]
    }

    pub fn column(&self, neuron: usize) -> Vec<f32> {
        (0..self.images).map(|i| self.data[i * self.neurons + neuron]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let data = indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self {
            data,
            images: indices.len(),
            ..self.clone()
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&RESPONSE_SET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.neurons as u32).to_le_bytes());
        out.extend_from_slice(&(self.images as u32).to_le_bytes());
        put_string(&mut out, &self.lineage);
        out.extend_from_slice(&self.image_digest);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::data("not a response set (bad magic)"));
        }
        let version = r.u32()?;
        if version != RESPONSE_SET_VERSION {
            return Err(Error::data(format!("unsupported response set version {version}")));
        }
        let neurons = r.u32()? as usize;
        let images = r.u32()? as usize;
        let lineage = r.string()?;
        let image_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let n = neurons
            .checked_mul(images)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::data("response set size overflow"))?;
        let raw = r.take(n)?;
        if r.pos != bytes.len() {
            return Err(Error::data("trailing bytes after responses"));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let set = Self::new(neurons.max(1), data, lineage, image_digest)?;
        if set.neurons != neurons || set.images != images {
            return Err(Error::data("response set header does not match payload"));
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::data_file(path, e.to_string()))
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.image_digest)
    }
}

pub fn digest_bytes(hex_digest: &str) -> Result<[u8; 32]> {
    hex::decode(hex_digest)
        .ok()
        .and_then(|v| <[u8; 32]>::try_from(v).ok())
        .ok_or_else(|| Error::data("image digest must be 32 hex-encoded bytes"))
}

/// Apply one seeded image permutation to all rows: each neuron keeps its
/// multiset of values but loses the pairing with images.
pub fn shuffle_responses(neural: &NeuralResponseSet, seed: u64) -> Result<NeuralResponseSet> {
    if neural.images == 0 {
        return Err(Error::data("cannot shuffle an empty response set"));
    }
    let mut perm: Vec<usize> = (0..neural.images).collect();
    perm.shuffle(&mut seed::rng(seed::derive(seed, &[seed::label("shuffle")])));
    let mut out = neural.subset(&perm);
    out.lineage = format!("{};shuffled(seed={seed})", neural.lineage);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NeuralResponseSet {
        let data = (0..30).map(|i| (i * 7 % 11) as f32 * 0.5).collect();
        NeuralResponseSet::new(3, data, "test", [7; 32]).unwrap()
    }

    #[test]
    fn file_roundtrip_is_exact() {
        let s = sample();
        assert_eq!(NeuralResponseSet::decode(&s.encode()).unwrap(), s);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = sample().encode();
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(NeuralResponseSet::decode(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn negative_responses_are_rejected() {
        assert!(NeuralResponseSet::new(1, vec![1.0, -0.1], "x", [0; 32]).is_err());
    }

    #[test]
    fn shuffle_permutes_rows() {
        let s = sample();
        let a = shuffle_responses(&s, 4).unwrap();
        assert_eq!(a, shuffle_responses(&s, 4).unwrap());
        for n in 0..s.neurons {
            let mut x = s.column(n);
            let mut y = a.column(n);
            x.sort_by(f32::total_cmp);
            y.sort_by(f32::total_cmp);
            assert_eq!(x, y);
        }
        let one = NeuralResponseSet::new(3, vec![1.0, 2.0, 3.0], "x", [0; 32]).unwrap();
        assert_eq!(shuffle_responses(&one, 9).unwrap().data(), one.data());
    }
}
