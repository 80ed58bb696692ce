use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, TapLayer};
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::data::StandardizationStats;
use crate::seed;

pub const LOG_SIGMA_C: &str = "mtl.log_sigma_c";
pub const LOG_SIGMA_N: &str = "mtl.log_sigma_n";
pub const INPUT_MEAN: &str = "input.mean";
pub const INPUT_STD: &str = "input.std";
pub const READOUT_MU: &str = "readout.mu";
pub const READOUT_WEIGHT: &str = "readout.weight";
pub const READOUT_BIAS: &str = "readout.bias";

pub fn conv_prefix(block: usize, conv: usize) -> String {
    format!("trunk.b{block}.c{conv}")
}

pub fn head_prefix(layer: usize) -> String {
    format!("head.c{layer}")
}

/// Named parameter and buffer arrays, ordered by name.
///
/// Buffers (batchnorm running statistics, input standardization) live in the
/// same map so a checkpoint is a single flat list of entries; they are never
/// bound as trainable leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    /// Panics on a missing name; parameter names are fixed by the config.
    pub fn expect(&self, name: &str) -> &Tensor<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// SHA-256 over the selected entries (name, shape, little-endian f64 bits).
    pub fn digest_where(&self, select: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.tensors.iter().filter(|(n, _)| select(n)) {
            h.update(name.as_bytes());
            h.update([0u8]);
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_f64().unwrap_or(f64::NAN).to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn digest(&self) -> String {
        self.digest_where(|_| true)
    }

    /// Copy every listed entry from `other` (used to splice a frozen trunk
    /// or a fitted readout into another parameter set).
    pub fn copy_from(&mut self, other: &ParameterSet<T>, select: impl Fn(&str) -> bool) {
        for (name, t) in other.iter().filter(|(n, _)| select(n)) {
            self.tensors.insert(name.clone(), t.clone());
        }
    }

    pub fn standardization(&self) -> Option<StandardizationStats> {
        let m = self.get(INPUT_MEAN)?.data()[0].to_f64()?;
        let s = self.get(INPUT_STD)?.data()[0].to_f64()?;
        StandardizationStats::new(m, s).ok()
    }

    pub fn set_standardization(&mut self, stats: &StandardizationStats) {
        self.insert(INPUT_MEAN, Tensor::new(vec![1], vec![T::of(stats.mean)]));
        self.insert(INPUT_STD, Tensor::new(vec![1], vec![T::of(stats.std)]));
    }
}

/// Entries that are state rather than trainable parameters.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var") || name.starts_with("input.")
}

/// Entries subject to weight decay: convolution and affine weights only.
pub fn is_decayed(name: &str) -> bool {
    name.ends_with(".weight")
}

pub fn is_readout(name: &str) -> bool {
    name.starts_with("readout.")
}

pub fn is_head(name: &str) -> bool {
    name.starts_with("head.")
}

pub fn is_trunk(name: &str) -> bool {
    name.starts_with("trunk.")
}

pub fn is_uncertainty(name: &str) -> bool {
    name.starts_with("mtl.")
}

/// `(block, conv)` of a trunk entry name.
pub fn trunk_position(name: &str) -> Option<TapLayer> {
    let rest = name.strip_prefix("trunk.b")?;
    let (block, rest) = rest.split_once(".c")?;
    let conv = rest.split('.').next()?;
    Some(TapLayer {
        block: block.parse().ok()?,
        conv: conv.parse().ok()?,
    })
}

/// Trunk entries at or before the tap convolution.
pub fn is_through_tap(name: &str, tap: TapLayer) -> bool {
    trunk_position(name).is_some_and(|p| p <= tap)
}

/// He-normal convolution weights, unit batchnorm scales, zero biases,
/// readout positions uniform in `[-0.8, 0.8]^2`, unit observation noise.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParameterSet<f32> {
    let mut p = ParameterSet::new();
    let mut counter = 0u64;
    let mut he = |shape: Vec<usize>| {
        counter += 1;
        let fan_in: usize = shape[1..].iter().product();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let mut rng = seed::rng(seed::derive(seed, &[seed::label("init"), counter]));
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
        Tensor::new(shape, data)
    };

    let bn = cfg.trunk.batchnorm;
    let mut in_ch = 1;
    for (b, block) in cfg.trunk.blocks.iter().enumerate() {
        for c in 0..block.convs {
            let pre = conv_prefix(b, c);
            p.insert(format!("{pre}.weight"), he(vec![block.width, in_ch, 3, 3]));
            if bn {
                p.insert(format!("{pre}.bn.gamma"), Tensor::full(vec![block.width], 1.0));
                p.insert(format!("{pre}.bn.beta"), Tensor::zeros(vec![block.width]));
                p.insert(format!("{pre}.bn.running_mean"), Tensor::zeros(vec![block.width]));
                p.insert(format!("{pre}.bn.running_var"), Tensor::full(vec![block.width], 1.0));
            } else {
                p.insert(format!("{pre}.bias"), Tensor::zeros(vec![block.width]));
            }
            in_ch = block.width;
        }
    }

    let head = [
        (cfg.head.widths[0], 3),
        (cfg.head.widths[1], 1),
        (cfg.classes, 1),
    ];
    for (i, &(out, k)) in head.iter().enumerate() {
        let pre = head_prefix(i);
        p.insert(format!("{pre}.weight"), he(vec![out, in_ch, k, k]));
        p.insert(format!("{pre}.bias"), Tensor::zeros(vec![out]));
        in_ch = out;
    }

    let n = cfg.readout.neurons;
    let c = cfg.trunk.tap_channels();
    let mut rng = seed::rng(seed::derive(seed, &[seed::label("readout")]));
    let pos = Uniform::new(-0.8f32, 0.8).expect("valid range");
    p.insert(
        READOUT_MU,
        Tensor::new(vec![n, 2], (0..2 * n).map(|_| pos.sample(&mut rng)).collect()),
    );
    let w = Normal::new(0.0f32, (1.0 / c as f32).sqrt() * 0.1).expect("positive std");
    p.insert(
        READOUT_WEIGHT,
        Tensor::new(vec![n, c], (0..n * c).map(|_| w.sample(&mut rng)).collect()),
    );
    p.insert(READOUT_BIAS, Tensor::zeros(vec![n]));
    p.insert(LOG_SIGMA_C, Tensor::zeros(vec![1]));
    p.insert(LOG_SIGMA_N, Tensor::zeros(vec![1]));
    p.insert(INPUT_MEAN, Tensor::zeros(vec![1]));
    p.insert(INPUT_STD, Tensor::full(vec![1], 1.0));
    p
}

/// Graph leaves for one forward/backward pass, keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Bind every non-buffer entry; entries rejected by `trainable` become
    /// constants and never receive gradients.
    pub fn bind<T: Scalar>(
        g: &mut Graph<T>,
        params: &ParameterSet<T>,
        trainable: impl Fn(&str) -> bool,
    ) -> Self {
        let vars = params
            .iter()
            .filter(|(n, _)| !is_buffer(n))
            .map(|(n, t)| {
                let v = if trainable(n) {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (n.clone(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trunk_names_parse_back_to_positions() {
        assert_eq!(
            trunk_position("trunk.b2.c0.bn.gamma"),
            Some(TapLayer { block: 2, conv: 0 })
        );
        assert_eq!(trunk_position("head.c0.weight"), None);
        let tap = TapLayer::CONV_3_1;
        assert!(is_through_tap("trunk.b1.c1.weight", tap));
        assert!(is_through_tap("trunk.b2.c0.weight", tap));
        assert!(!is_through_tap("trunk.b2.c1.weight", tap));
    }

    #[test]
    fn decay_selects_weights_only() {
        assert!(is_decayed("trunk.b0.c0.weight"));
        assert!(is_decayed(READOUT_WEIGHT));
        assert!(!is_decayed(READOUT_MU));
        assert!(!is_decayed(LOG_SIGMA_C));
        assert!(!is_decayed("trunk.b0.c0.bn.gamma"));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::vgg_mini(32, 10, 4);
        assert_eq!(init_params(&cfg, 1), init_params(&cfg, 1));
        assert_ne!(init_params(&cfg, 1).digest(), init_params(&cfg, 2).digest());
    }
}
