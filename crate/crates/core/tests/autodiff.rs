mod common;

use common::{op_gradchecks, three_layer_gradcheck, uniform, FD_STEP};
use cotrain::autodiff::check::{finite_difference, max_relative_error};
use cotrain::autodiff::{Graph, Tensor};
use cotrain::model::{
    classify, forward_trunk, init_params, is_buffer, readout_neural, Bound, ForwardOptions, ModelConfig,
    ParameterSet, TrunkConfig, LOG_SIGMA_C, LOG_SIGMA_N, READOUT_MU,
};
use cotrain::objectives::graph as loss;

#[test]
fn every_op_matches_finite_differences_in_f64() {
    for seed in 0..3 {
        for (name, err) in op_gradchecks(seed) {
            assert!(err < 1e-5, "{name} (seed {seed}): relative error {err:e}");
        }
    }
}

#[test]
fn random_three_layer_nets_match_finite_differences() {
    for seed in 10..15 {
        let err = three_layer_gradcheck(seed);
        assert!(err < 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn half_squared_norm_has_gradient_x() {
    let x = Tensor::new(vec![5], vec![0.5, -1.0, 2.0, 0.0, 3.5]);
    let mut g = Graph::<f64>::new();
    let v = g.param(x.clone());
    let s = g.sum_squares(v);
    let l = g.scale(s, 0.5);
    let grads = g.backward(l);
    assert_eq!(grads.get(v).unwrap().data(), x.data());
}

#[test]
fn constants_receive_no_gradient_and_do_not_leak() {
    let mut g = Graph::<f64>::new();
    let a = g.param(Tensor::new(vec![2], vec![1.0, 2.0]));
    let c = g.constant(Tensor::new(vec![2], vec![3.0, 4.0]));
    let p = g.mul(a, c);
    let l = g.sum(p);
    let grads = g.backward(l);
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(a).unwrap().data(), &[3.0, 4.0]);

    // A graph built only from constants has nothing to differentiate.
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::new(vec![2], vec![1.0, 2.0]));
    let l = g.sum_squares(c);
    assert!(!g.requires_grad(l));
}

fn tiny_config() -> ModelConfig {
    let mut cfg = ModelConfig::vgg_mini(8, 3, 3);
    cfg.trunk = TrunkConfig::vgg_mini_with_widths([2, 3, 4]);
    cfg.head.widths = [3, 3];
    cfg.head.dropout_rate = 0.0;
    cfg
}

/// Both task losses through the real network, uncertainty-weighted, as a
/// function of every trainable parameter and the input pixels.
fn model_objective(cfg: &ModelConfig, params: &ParameterSet<f64>, x: &Tensor<f64>) -> (Graph<f64>, Bound, cotrain::autodiff::Var, cotrain::autodiff::Var) {
    let mut g = Graph::new();
    let bound = Bound::bind(&mut g, params, |n| !is_buffer(n));
    let xv = g.param(x.clone());
    let opts = ForwardOptions::train(3);
    let t = forward_trunk(&mut g, cfg, params, &bound, xv, &opts, false).unwrap();
    let logp = classify(&mut g, cfg, &bound, t.out.unwrap(), &opts);
    let ce = loss::cross_entropy(&mut g, logp, &[0, 2, 1]).unwrap();
    let pred = readout_neural(&mut g, cfg, &bound, t.tap, &opts);
    let target = g.constant(Tensor::new(vec![3, 3], vec![0.5, 1.0, 2.0, 0.1, 0.7, 1.3, 0.9, 0.4, 1.1]));
    let mse = loss::mse(&mut g, pred, target).unwrap();
    let a = loss::classification_term(&mut g, ce, bound.var(LOG_SIGMA_C));
    let b = loss::neural_term(&mut g, mse, bound.var(LOG_SIGMA_N));
    let total = g.add(a, b);
    (g, bound, xv, total)
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let cfg = tiny_config();
    cfg.validate().unwrap();
    let mut params: ParameterSet<f64> = init_params(&cfg, 5).cast();
    let mut r = common::rng(8);
    *params.get_mut(READOUT_MU).unwrap() = uniform(&mut r, &[3, 2], -0.7, 0.7);
    *params.get_mut(LOG_SIGMA_N).unwrap() = Tensor::new(vec![1], vec![-0.3]);
    let x = uniform(&mut r, &[3, 1, 8, 8], -1.5, 1.5);

    let (g, bound, xv, total) = model_objective(&cfg, &params, &x);
    let grads = g.backward(total);
    let names: Vec<String> = params.names().filter(|n| !is_buffer(n)).map(String::from).collect();
    let mut analytic = Vec::new();
    for n in &names {
        analytic.extend_from_slice(grads.get(bound.var(n)).unwrap().data());
    }
    analytic.extend_from_slice(grads.get(xv).unwrap().data());

    let mut flat: Vec<f64> = names.iter().flat_map(|n| params.expect(n).data().to_vec()).collect();
    flat.extend_from_slice(x.data());
    let f = |v: &[f64]| {
        let mut p = params.clone();
        let mut off = 0;
        for n in &names {
            let t = p.get_mut(n).unwrap();
            let len = t.len();
            t.data_mut().copy_from_slice(&v[off..off + len]);
            off += len;
        }
        let xs = Tensor::new(x.shape().to_vec(), v[off..].to_vec());
        let (g, _, _, total) = model_objective(&cfg, &p, &xs);
        g.value(total).item()
    };
    let numeric = finite_difference(f, &flat, FD_STEP);
    let err = max_relative_error(&analytic, &numeric);
    assert!(err < 1e-5, "network gradient relative error {err:e}");
}

#[test]
fn f32_production_mode_agrees_within_its_tolerance() {
    let mut r = common::rng(21);
    let x = uniform(&mut r, &[2, 2, 4, 4], -1.0, 1.0);
    let w = uniform(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
    let mut g = Graph::<f32>::new();
    let xv = g.param(x.cast());
    let wv = g.param(w.cast());
    // Quadratic in the weights, so central differences are exact up to
    // rounding and a coarse step keeps f32 cancellation small.
    let c = g.conv2d(xv, wv, None, 1);
    let s = g.sum_squares(c);
    let grads = g.backward(s);
    let analytic: Vec<f64> = grads.get(wv).unwrap().data().iter().map(|&v| v as f64).collect();
    let f = |wf: &[f64]| {
        let mut g = Graph::<f32>::new();
        let xv = g.constant(x.cast());
        let wv = g.constant(Tensor::new(w.shape().to_vec(), wf.iter().map(|&v| v as f32).collect()));
        let c = g.conv2d(xv, wv, None, 1);
        let s = g.sum_squares(c);
        g.value(s).item() as f64
    };
    let numeric = finite_difference(f, w.data(), 0.2);
    let err = max_relative_error(&analytic, &numeric);
    assert!(err < 1e-3, "{err:e}");
}
