mod common;

use common::rel_inf;
use cotrain::autodiff::Tensor;
use cotrain::corruptions::{CorruptionGroup, SeverityTable};
use cotrain::data::synthetic::{generate, SyntheticConfig, SyntheticDataset};
use cotrain::data::StandardizationStats;
use cotrain::model::{
    batch_tensor, init_params, is_buffer, is_readout, is_through_tap, ModelCheckpoint, ModelConfig, ParameterSet,
    TrunkConfig,
};
use cotrain::stats::mean_neuron_correlation;
use cotrain::training::*;

fn dataset(classes: usize, size: usize, per: usize) -> SyntheticDataset {
    generate(&SyntheticConfig {
        classes,
        image_size: size,
        train_per_class: per,
        val_per_class: 4,
        test_per_class: 4,
        seed: 3,
    })
    .unwrap()
}

fn small_model(size: usize, classes: usize, neurons: usize) -> ModelConfig {
    let mut cfg = ModelConfig::vgg_mini(size, classes, neurons);
    cfg.trunk = TrunkConfig::vgg_mini_with_widths([4, 6, 8]);
    cfg.head.widths = [8, 8];
    cfg
}

fn quick(epochs: usize) -> TrainConfig {
    let mut t = TrainConfig::default();
    t.batch_size = 8;
    t.schedule.max_epochs = epochs;
    t.readout_epochs = 2;
    t
}

fn gabor(ds: &SyntheticDataset, neurons: usize) -> (NeuralResponseSet, NeuralResponseSet) {
    let size = ds.train.image_shape().unwrap().0;
    let bank = GaborBank::new(neurons, size, 0);
    let t = Teacher::GaborBank(&bank);
    (
        generate_surrogate_responses(&t, &ds.train, 64).unwrap(),
        generate_surrogate_responses(&t, &ds.val, 64).unwrap(),
    )
}

fn standardized_batch(ds: &SyntheticDataset, range: std::ops::Range<usize>) -> Tensor<f32> {
    let stats = StandardizationStats::from_set(&ds.train).unwrap();
    let imgs: Vec<_> = ds.train.images[range]
        .iter()
        .map(|i| cotrain::data::standardize(i, &stats).unwrap())
        .collect();
    batch_tensor(&imgs.iter().collect::<Vec<_>>())
}

fn responses_tensor(r: &NeuralResponseSet, range: std::ops::Range<usize>) -> Tensor<f32> {
    let n = r.neurons;
    Tensor::new(vec![range.len(), n], r.data()[range.start * n..range.end * n].to_vec())
}

#[test]
fn accumulated_step_gradient_is_the_sum_of_per_task_gradients() {
    let ds = dataset(3, 16, 8);
    let mut cfg = small_model(16, 3, 5);
    cfg.head.dropout_rate = 0.0;
    cfg.readout.jitter = 0.0;
    let mut params = init_params(&cfg, 1);
    params.set_standardization(&StandardizationStats::from_set(&ds.train).unwrap());
    let (resp, _) = gabor(&ds, 5);
    let trainable = |n: &str| !is_buffer(n);
    let spec = StepSpec {
        trainable: &trainable,
        uncertainty: true,
        neural_loss: NeuralLoss::Mse,
        freeze_through_tap: false,
        seed: 4,
    };
    let class_at = |k: usize| ClassBatch {
        x: standardized_batch(&ds, 4 * k..4 * k + 4),
        labels: ds.train.labels[4 * k..4 * k + 4].to_vec(),
    };
    let neural_at = |k: usize| NeuralBatch {
        x: standardized_batch(&ds, 12 + 4 * k..16 + 4 * k),
        targets: responses_tensor(&resp, 12 + 4 * k..16 + 4 * k),
    };
    for (n_neural, n_class) in [(1, 1), (2, 1), (1, 2), (3, 1)] {
        let class: Vec<ClassBatch> = (0..n_class).map(class_at).collect();
        let neural: Vec<NeuralBatch> = (0..n_neural).map(neural_at).collect();
        let joint = accumulate_gradients(&cfg, &params, &class, &neural, &spec).unwrap();
        assert_eq!(joint.ce.len(), n_class);
        assert_eq!(joint.neural.len(), n_neural);

        let mut summed = GradMap::new();
        let mut class_only = GradMap::new();
        for b in &class {
            let g = accumulate_gradients(&cfg, &params, std::slice::from_ref(b), &[], &spec).unwrap();
            add_grads(&mut class_only, g.grads.clone());
            add_grads(&mut summed, g.grads);
        }
        let mut neural_only = GradMap::new();
        for b in &neural {
            let g = accumulate_gradients(&cfg, &params, &[], std::slice::from_ref(b), &spec).unwrap();
            add_grads(&mut neural_only, g.grads.clone());
            add_grads(&mut summed, g.grads);
        }
        assert_eq!(joint.grads.keys().collect::<Vec<_>>(), summed.keys().collect::<Vec<_>>());
        for (name, g) in &joint.grads {
            let a: Vec<f64> = g.iter().map(|&v| v as f64).collect();
            let b: Vec<f64> = summed[name].iter().map(|&v| v as f64).collect();
            assert!(rel_inf(&a, &b) < 1e-6, "{name} at {n_neural}:{n_class}");
        }
        // Private parameters see only their own task.
        for (name, g) in &joint.grads {
            if name.starts_with("head") {
                assert_eq!(g, &class_only[name], "{name}");
                assert!(!neural_only.contains_key(name) || neural_only[name].iter().all(|&v| v == 0.0));
            }
            if is_readout(name) {
                assert_eq!(g, &neural_only[name], "{name}");
            }
        }
    }
}

#[test]
fn mtl_step_counts_follow_the_batch_ratio() {
    let ds = dataset(3, 16, 8);
    let cfg = small_model(16, 3, 4);
    let (tr, va) = gabor(&ds, 4);
    let data = TrainData {
        train: &ds.train,
        val: &ds.val,
        neural_train: Some(NeuralPairs { images: &ds.train.images, responses: &tr }),
        neural_val: Some(NeuralPairs { images: &ds.val.images, responses: &va }),
    };
    let class_batches = ds.train.len().div_ceil(8);
    for (ratio, steps) in [((1, 1), class_batches), ((2, 1), class_batches), ((1, 3), class_batches.div_ceil(3))] {
        let mut t = quick(1);
        t.batch_ratio = BatchRatio { neural: ratio.0, classification: ratio.1 };
        let out = train_mtl(&cfg, &t, &data).unwrap();
        assert_eq!(out.metrics[0].steps, steps, "{ratio:?}");
        assert!(out.metrics[0].sigma_c.is_some() && out.metrics[0].sigma_n.is_some());
    }
}

#[test]
fn readout_fitting_touches_only_the_readout() {
    let ds = dataset(3, 16, 10);
    let cfg = small_model(16, 3, 6);
    let t = quick(2);
    let base = TrainData { train: &ds.train, val: &ds.val, neural_train: None, neural_val: None };
    let trained = train_single_task(&cfg, &t, Task::Classification, &base).unwrap().checkpoint;
    let (tr, va) = gabor(&ds, 6);
    let pairs = NeuralPairs { images: &ds.train.images, responses: &tr };

    let unchanged = fit_readout_on_frozen_trunk(&trained, &t, &pairs, 0).unwrap();
    assert_eq!(unchanged.checkpoint.params.digest(), trained.params.digest());

    let mut tf = t.clone();
    tf.neural.lr = 0.02;
    let fitted = fit_readout_on_frozen_trunk(&trained, &tf, &pairs, 15).unwrap().checkpoint;
    let frozen = |n: &str| !is_readout(n);
    assert_eq!(fitted.params.digest_where(frozen), trained.params.digest_where(frozen));
    assert_ne!(fitted.params.digest_where(is_readout), trained.params.digest_where(is_readout));

    let corr = |c: &ModelCheckpoint| {
        let pred = c.predict_responses(&ds.val.images, 64).unwrap();
        mean_neuron_correlation(&pred, va.data(), va.neurons)
    };
    assert!(corr(&fitted) > corr(&trained), "{} vs {}", corr(&fitted), corr(&trained));
}

#[test]
fn oracle_phase_two_keeps_everything_through_the_tap_bit_identical() {
    let ds = dataset(3, 16, 8);
    let cfg = small_model(16, 3, 4);
    let table = SeverityTable::default();
    let mut t = quick(1);
    t.oracle_corruptions = CorruptionGroup::Noise.members().collect();
    let data = TrainData { train: &ds.train, val: &ds.val, neural_train: None, neural_val: None };
    let p1 = oracle_phase1(&cfg, &t, &data, &table).unwrap();
    let clean = p1.metrics[0].clean_fraction.unwrap();
    assert!((clean - 0.5).abs() <= 8.0 / ds.train.len() as f64, "clean fraction {clean}");
    let p2 = oracle_phase2(&p1.checkpoint, &t, &data).unwrap().checkpoint;
    let tap = cfg.trunk.tap;
    let through = |n: &str| is_through_tap(n, tap);
    assert_eq!(p2.params.digest_where(through), p1.checkpoint.params.digest_where(through));
    assert_ne!(p2.params.digest_where(|n| !through(n)), p1.checkpoint.params.digest_where(|n| !through(n)));

    // The composed entry point is exactly the two phases in sequence.
    let full = train_oracle(&cfg, &t, &data, &table).unwrap();
    assert_eq!(full.checkpoint.params.digest(), p2.params.digest());
    assert_eq!(full.metrics.len(), p1.metrics.len() + 1);
}

#[test]
fn oracle_batches_split_clean_and_corrupted_and_identical_draws_are_consistent() {
    let ds = dataset(3, 16, 8);
    let cfg = small_model(16, 3, 4);
    let mut params: ParameterSet<f32> = init_params(&cfg, 2);
    let stats = StandardizationStats::from_set(&ds.train).unwrap();
    params.set_standardization(&stats);
    let t = quick(1);
    let table = SeverityTable::default();
    let idx: Vec<usize> = (0..8).collect();
    let kinds: Vec<_> = CorruptionGroup::Noise.members().collect();
    let b = oracle_batch(&ds.train, &idx, &t, &stats, &kinds, &table, 17).unwrap();
    assert_eq!((b.n_clean, b.n_pairs), (4, 4));
    assert_eq!(b.x.shape()[0], 12);
    assert_eq!(b.labels.len(), 8);
    let again = oracle_batch(&ds.train, &idx, &t, &stats, &kinds, &table, 17).unwrap();
    assert_eq!(b.x.data(), again.x.data());

    let corrupted = standardized_batch(&ds, 4..8);
    assert_eq!(consistency_penalty(&cfg, &params, &corrupted, &corrupted).unwrap(), 0.0);
}

#[test]
fn same_config_and_seed_reproduce_metrics_and_weights() {
    let ds = dataset(3, 16, 6);
    let cfg = small_model(16, 3, 4);
    let t = quick(2);
    let data = TrainData { train: &ds.train, val: &ds.val, neural_train: None, neural_val: None };
    let a = train_single_task(&cfg, &t, Task::Classification, &data).unwrap();
    let b = train_single_task(&cfg, &t, Task::Classification, &data).unwrap();
    assert_eq!(metrics_jsonl(&a.metrics), metrics_jsonl(&b.metrics));
    assert_eq!(a.checkpoint.params.digest(), b.checkpoint.params.digest());
    let c = train_single_task(&cfg, &TrainConfig { seed: 1, ..t }, Task::Classification, &data).unwrap();
    assert_ne!(a.checkpoint.params.digest(), c.checkpoint.params.digest());
}

#[test]
fn classification_training_beats_chance_on_the_synthetic_set() {
    let ds = dataset(10, 16, 12);
    let mut cfg = small_model(16, 10, 4);
    cfg.trunk = TrunkConfig::vgg_mini_with_widths([8, 16, 32]);
    cfg.head.widths = [32, 32];
    let mut t = quick(5);
    t.batch_size = 16;
    let data = TrainData { train: &ds.train, val: &ds.val, neural_train: None, neural_val: None };
    let initial = {
        let mut p = init_params(&cfg, t.seed);
        p.set_standardization(&StandardizationStats::from_set(&ds.train).unwrap());
        ModelCheckpoint::new(cfg.clone(), p, "init").accuracy(&ds.train, 64).unwrap()
    };
    let out = train_single_task(&cfg, &t, Task::Classification, &data).unwrap();
    let fin = out.checkpoint.accuracy(&ds.train, 64).unwrap();
    assert!(fin > initial && fin > 0.1, "train accuracy {initial} -> {fin}");
}

#[test]
fn neural_task_predicts_held_out_gabor_responses() {
    let ds = generate(&SyntheticConfig {
        classes: 10,
        image_size: 16,
        train_per_class: 20,
        val_per_class: 6,
        test_per_class: 1,
        seed: 5,
    })
    .unwrap();
    let mut cfg = small_model(16, 10, 16);
    cfg.trunk = TrunkConfig::vgg_mini_with_widths([8, 16, 32]);
    let (tr, va) = gabor(&ds, 16);
    let mut t = quick(12);
    t.batch_size = 16;
    let data = TrainData {
        train: &ds.train,
        val: &ds.val,
        neural_train: Some(NeuralPairs { images: &ds.train.images, responses: &tr }),
        neural_val: Some(NeuralPairs { images: &ds.val.images, responses: &va }),
    };
    let out = train_single_task(&cfg, &t, Task::Neural, &data).unwrap();
    let corr = out.metrics.last().unwrap().val_correlation.unwrap();
    assert!(corr > 0.3, "validation correlation {corr}");
}

#[test]
fn mismatched_response_sets_are_rejected() {
    let ds = dataset(3, 16, 4);
    let cfg = small_model(16, 3, 4);
    let (_, va) = gabor(&ds, 4);
    let data = TrainData {
        train: &ds.train,
        val: &ds.val,
        neural_train: Some(NeuralPairs { images: &ds.train.images, responses: &va }),
        neural_val: None,
    };
    assert!(train_mtl(&cfg, &quick(1), &data).is_err());
}
