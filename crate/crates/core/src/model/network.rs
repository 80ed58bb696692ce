use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::params::{
    conv_prefix, head_prefix, Bound, ParameterSet, READOUT_BIAS, READOUT_MU, READOUT_WEIGHT,
};
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::seed::{self, SeedRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-pass switches for [`forward_trunk`], [`classify`] and
/// [`readout_neural`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Layers up to and including the tap run batchnorm from stored
    /// statistics even in train mode (they are frozen).
    pub freeze_through_tap: bool,
    /// Seed for dropout masks and readout jitter.
    pub seed: u64,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            freeze_through_tap: false,
            seed: 0,
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            mode: Mode::Train,
            freeze_through_tap: false,
            seed,
        }
    }
}

/// Outputs of the trunk: the tap activation, the final trunk activation (if
/// computed), and the batchnorm nodes whose statistics may update the
/// running estimates.
#[derive(Debug, Clone)]
pub struct TrunkOutput {
    pub tap: Var,
    pub out: Option<Var>,
    pub bn_nodes: Vec<(String, Var)>,
}

/// Stack standardized single-channel images into an `[B, 1, H, W]` tensor.
pub fn batch_tensor<T: Scalar>(images: &[&crate::image::ImageArray]) -> Tensor<T> {
    let (h, w) = images.first().map_or((0, 0), |i| i.shape());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        assert_eq!(img.shape(), (h, w), "batch images must share a shape");
        data.extend(img.data().iter().map(|&v| T::of(v as f64)));
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}

/// Run the trunk on an `[B, 1, S, S]` batch; stops after the tap when
/// `until_tap` is set.
pub fn forward_trunk<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    params: &ParameterSet<T>,
    bound: &Bound,
    x: Var,
    opts: &ForwardOptions,
    until_tap: bool,
) -> Result<TrunkOutput> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != cfg.input_size || shape[3] != cfg.input_size
    {
        return Err(Error::config(format!(
            "input batch shape {shape:?} does not match [B, 1, {s}, {s}]",
            s = cfg.input_size
        )));
    }
    let tap_at = cfg.trunk.tap;
    let mut h = x;
    let mut tap = None;
    let mut bn_nodes = Vec::new();
    for (b, block) in cfg.trunk.blocks.iter().enumerate() {
        for c in 0..block.convs {
            let pre = conv_prefix(b, c);
            let w = bound.var(&format!("{pre}.weight"));
            if cfg.trunk.batchnorm {
                h = g.conv2d(h, w, None, 1);
                let gamma = bound.var(&format!("{pre}.bn.gamma"));
                let beta = bound.var(&format!("{pre}.bn.beta"));
                let frozen = opts.freeze_through_tap && (b, c) <= (tap_at.block, tap_at.conv);
                if opts.mode == Mode::Train && !frozen {
                    h = g.batch_norm_train(h, gamma, beta, cfg.bn_eps);
                    bn_nodes.push((format!("{pre}.bn"), h));
                } else {
                    let mean = params.expect(&format!("{pre}.bn.running_mean")).data().to_vec();
                    let var = params.expect(&format!("{pre}.bn.running_var")).data().to_vec();
                    h = g.batch_norm_eval(h, gamma, beta, &mean, &var, cfg.bn_eps);
                }
            } else {
                let bias = bound.var(&format!("{pre}.bias"));
                h = g.conv2d(h, w, Some(bias), 1);
            }
            h = g.relu(h);
            if (b, c) == (tap_at.block, tap_at.conv) {
                tap = Some(h);
                if until_tap {
                    return Ok(TrunkOutput {
                        tap: h,
                        out: None,
                        bn_nodes,
                    });
                }
            }
        }
        h = g.max_pool2(h);
    }
    Ok(TrunkOutput {
        tap: tap.expect("validated tap position"),
        out: Some(h),
        bn_nodes,
    })
}

/// Classification head on the final trunk activation; returns per-class
/// log-probabilities `[B, K]`.
pub fn classify<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    bound: &Bound,
    trunk_out: Var,
    opts: &ForwardOptions,
) -> Var {
    let mut rng = SeedRng::seed_from_u64(seed::derive(opts.seed, &[seed::label("dropout")]));
    let mut h = trunk_out;
    for layer in 0..3 {
        let pre = head_prefix(layer);
        let w = bound.var(&format!("{pre}.weight"));
        let b = bound.var(&format!("{pre}.bias"));
        let pad = if layer == 0 { 1 } else { 0 };
        h = g.conv2d(h, w, Some(b), pad);
        if layer < 2 {
            h = g.relu(h);
            if opts.mode == Mode::Train && cfg.head.dropout_rate > 0.0 {
                h = g.dropout(h, cfg.head.dropout_rate, &mut rng);
            }
        }
    }
    let pooled = g.global_avg_pool(h);
    g.log_softmax(pooled)
}

/// Gaussian readout: sample each neuron's feature column at its position,
/// apply its affine map and the positive `elu(z) + 1` nonlinearity.
/// Returns `[B, N]`.
pub fn readout_neural<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    bound: &Bound,
    tap: Var,
    opts: &ForwardOptions,
) -> Var {
    let mut mu = bound.var(READOUT_MU);
    if opts.mode == Mode::Train && cfg.readout.jitter > 0.0 {
        let n = g.value(mu).len();
        let normal = Normal::new(0.0, cfg.readout.jitter).expect("validated jitter");
        let mut rng = seed::rng(seed::derive(opts.seed, &[seed::label("jitter")]));
        let noise = (0..n).map(|_| T::of(normal.sample(&mut rng))).collect();
        let shape = g.value(mu).shape().to_vec();
        let noise = g.constant(Tensor::new(shape, noise));
        mu = g.add(mu, noise);
    }
    let feat = g.bilinear_sample(tap, mu);
    let z = g.readout_linear(feat, bound.var(READOUT_WEIGHT), bound.var(READOUT_BIAS));
    g.elu_plus_one(z)
}

/// Fold the batch statistics observed in a train-mode pass into the running
/// estimates: `running = (1 - m) running + m batch`.
pub fn update_running_stats(
    params: &mut ParameterSet<f32>,
    g: &Graph<f32>,
    bn_nodes: &[(String, Var)],
    momentum: f64,
) {
    let m = momentum as f32;
    for stats in g.batch_stats() {
        let Some((pre, _)) = bn_nodes.iter().find(|(_, v)| *v == stats.output) else {
            continue;
        };
        for (suffix, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let t = params
                .get_mut(&format!("{pre}.{suffix}"))
                .expect("running statistics exist for every batchnorm");
            t.data_mut()
                .iter_mut()
                .zip(batch.iter())
                .for_each(|(r, &b)| *r = (1.0 - m) * *r + m * b);
        }
    }
}

/// Clamp readout positions back into `[-1, 1]^2` after an update.
pub fn clamp_readout_positions<T: Scalar>(params: &mut ParameterSet<T>) {
    if let Some(mu) = params.get_mut(READOUT_MU) {
        let one = T::one();
        mu.data_mut().iter_mut().for_each(|v| *v = v.max(-one).min(one));
    }
}
