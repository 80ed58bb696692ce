//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use cotrain::autodiff::check::{finite_difference, max_relative_error};
use cotrain::autodiff::{Graph, Tensor, Var};
use cotrain::seed::{self, SeedRng};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> SeedRng {
    seed::rng(seed)
}

/// Uniform tensor in `[lo, hi)`.
pub fn uniform(rng: &mut SeedRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Uniform magnitudes in `[lo, hi)` with random sign: keeps values away
/// from the kinks of relu-like functions.
pub fn away_from_zero(rng: &mut SeedRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| {
                let v = rng.random_range(lo..hi);
                if rng.random_bool(0.5) { v } else { -v }
            })
            .collect(),
    )
}

/// Build a graph with every input as a trainable leaf and reduce the output
/// to a scalar by a fixed random projection (identity for scalars).
fn evaluate(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var,
    projection_seed: u64,
) -> (Graph<f64>, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let loss = if g.value(out).len() == 1 {
        out
    } else {
        let shape = g.value(out).shape().to_vec();
        let mut r = rng(projection_seed);
        let w = g.constant(uniform(&mut r, &shape, -1.0, 1.0));
        let p = g.mul(out, w);
        g.sum(p)
    };
    (g, vars, loss)
}

/// Max relative error between the analytic gradient of `build` with respect
/// to all `inputs` and central finite differences.
pub fn gradcheck(inputs: &[Tensor<f64>], build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let (g, vars, loss) = evaluate(inputs, &build, 99);
    let grads = g.backward(loss);
    let analytic: Vec<f64> = vars
        .iter()
        .zip(inputs)
        .flat_map(|(&v, t)| grads.get(v).map_or(vec![0.0; t.len()], |g| g.data().to_vec()))
        .collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let f = |x: &[f64]| {
        let mut off = 0;
        let rebuilt: Vec<Tensor<f64>> = inputs
            .iter()
            .map(|t| {
                let part = x[off..off + t.len()].to_vec();
                off += t.len();
                Tensor::new(t.shape().to_vec(), part)
            })
            .collect();
        let (g, _, loss) = evaluate(&rebuilt, &build, 99);
        g.value(loss).item()
    };
    let numeric = finite_difference(f, &flat, FD_STEP);
    max_relative_error(&analytic, &numeric)
}

/// Relative distance `‖a - b‖∞ / max(‖a‖∞, ‖b‖∞)`.
pub fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// The fixed operation set, each exercised on random inputs. Returns
/// `(name, max relative error)`.
pub fn op_gradchecks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let a = uniform(&mut r, &[2, 3], -1.0, 1.0);
    let b = uniform(&mut r, &[2, 3], -1.0, 1.0);
    out.push(("add", gradcheck(&[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]))));
    out.push(("sub", gradcheck(&[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]))));
    out.push(("mul", gradcheck(&[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]))));
    out.push(("scale", gradcheck(&[a.clone()], |g, v| g.scale(v[0], -1.7))));
    out.push(("add_const", gradcheck(&[a.clone()], |g, v| g.add_const(v[0], 0.3))));
    let s = uniform(&mut r, &[1], 0.5, 1.5);
    out.push(("mul_scalar", gradcheck(&[a.clone(), s], |g, v| g.mul_scalar(v[0], v[1]))));
    out.push(("exp", gradcheck(&[a.clone()], |g, v| g.exp(v[0]))));
    let k = away_from_zero(&mut r, &[2, 3], 0.05, 1.0);
    out.push(("relu", gradcheck(&[k.clone()], |g, v| g.relu(v[0]))));
    out.push(("elu_plus_one", gradcheck(&[k], |g, v| g.elu_plus_one(v[0]))));
    out.push(("sum", gradcheck(&[a.clone()], |g, v| g.sum(v[0]))));
    out.push(("mean", gradcheck(&[a.clone()], |g, v| g.mean(v[0]))));
    out.push(("sum_squares", gradcheck(&[a.clone()], |g, v| g.sum_squares(v[0]))));

    let x = uniform(&mut r, &[2, 2, 5, 5], -1.0, 1.0);
    let w3 = uniform(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
    let w1 = uniform(&mut r, &[3, 2, 1, 1], -0.5, 0.5);
    let bias = uniform(&mut r, &[3], -0.5, 0.5);
    out.push((
        "conv2d_3x3_pad1_bias",
        gradcheck(&[x.clone(), w3.clone(), bias.clone()], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1)),
    ));
    out.push(("conv2d_3x3_valid", gradcheck(&[x.clone(), w3], |g, v| g.conv2d(v[0], v[1], None, 0))));
    out.push(("conv2d_1x1", gradcheck(&[x.clone(), w1, bias], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 0))));

    let gamma = uniform(&mut r, &[2], 0.5, 1.5);
    let beta = uniform(&mut r, &[2], -0.5, 0.5);
    out.push((
        "batch_norm_train",
        gradcheck(&[x.clone(), gamma.clone(), beta.clone()], |g, v| g.batch_norm_train(v[0], v[1], v[2], 1e-5)),
    ));
    out.push((
        "batch_norm_eval",
        gradcheck(&[x.clone(), gamma, beta], |g, v| {
            g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2], &[0.8, 1.3], 1e-5)
        }),
    ));
    let xp = uniform(&mut r, &[2, 2, 5, 4], -1.0, 1.0);
    out.push(("max_pool2", gradcheck(&[xp.clone()], |g, v| g.max_pool2(v[0]))));
    out.push(("global_avg_pool", gradcheck(&[xp.clone()], |g, v| g.global_avg_pool(v[0]))));
    let mask: Vec<f64> = (0..xp.len()).map(|i| if i % 3 == 0 { 0.0 } else { 1.5 }).collect();
    out.push(("dropout", gradcheck(&[xp], move |g, v| g.dropout_with_mask(v[0], mask.clone()))));

    let logits = uniform(&mut r, &[4, 5], -2.0, 2.0);
    out.push(("log_softmax", gradcheck(&[logits.clone()], |g, v| g.log_softmax(v[0]))));
    out.push((
        "nll",
        gradcheck(&[logits], |g, v| {
            let lp = g.log_softmax(v[0]);
            g.nll(lp, &[0, 3, 1, 4])
        }),
    ));

    let feat = uniform(&mut r, &[2, 3, 4, 4], -1.0, 1.0);
    let pos = uniform(&mut r, &[5, 2], -0.9, 0.9);
    out.push(("bilinear_sample", gradcheck(&[feat.clone(), pos.clone()], |g, v| g.bilinear_sample(v[0], v[1]))));
    let rw = uniform(&mut r, &[5, 3], -1.0, 1.0);
    let rb = uniform(&mut r, &[5], -0.5, 0.5);
    let sampled = uniform(&mut r, &[2, 5, 3], -1.0, 1.0);
    out.push(("readout_linear", gradcheck(&[sampled, rw, rb], |g, v| g.readout_linear(v[0], v[1], v[2]))));
    let pred = uniform(&mut r, &[3, 4], 0.2, 2.0);
    let target = uniform(&mut r, &[3, 4], 0.0, 3.0);
    out.push(("poisson_nll", gradcheck(&[pred.clone(), target.clone()], |g, v| g.poisson_nll(v[0], v[1], 1e-8))));
    out.push(("mse", gradcheck(&[pred, target], |g, v| g.mse(v[0], v[1]))));
    out.push(("slice_batch", gradcheck(&[feat], |g, v| g.slice_batch(v[0], 1, 1))));
    out
}

/// A random three-layer convolutional net (conv-bn-relu-pool, conv-relu,
/// 1x1 conv-global pool-log-softmax-nll) checked against all of its
/// parameters and its input pixels.
pub fn three_layer_gradcheck(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = vec![
        uniform(&mut r, &[3, 1, 6, 6], -1.0, 1.0),
        uniform(&mut r, &[4, 1, 3, 3], -0.6, 0.6),
        uniform(&mut r, &[4], 0.5, 1.5),
        uniform(&mut r, &[4], -0.3, 0.3),
        uniform(&mut r, &[4, 4, 3, 3], -0.4, 0.4),
        uniform(&mut r, &[4], -0.2, 0.2),
        uniform(&mut r, &[3, 4, 1, 1], -0.6, 0.6),
        uniform(&mut r, &[3], -0.2, 0.2),
    ];
    gradcheck(&inputs, |g, v| {
        let h = g.conv2d(v[0], v[1], None, 1);
        let h = g.batch_norm_train(h, v[2], v[3], 1e-5);
        let h = g.relu(h);
        let h = g.max_pool2(h);
        let h = g.conv2d(h, v[4], Some(v[5]), 1);
        let h = g.relu(h);
        let h = g.conv2d(h, v[6], Some(v[7]), 0);
        let p = g.global_avg_pool(h);
        let lp = g.log_softmax(p);
        g.nll(lp, &[0, 2, 1])
    })
}
