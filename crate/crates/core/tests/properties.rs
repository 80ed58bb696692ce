//! Property tests over the library's stated invariants.

use cotrain::corruptions::{corrupt, CorruptionGroup, CorruptionKind, SeverityTable};
use cotrain::data::{augment, destandardize, standardize, to_grayscale, AugmentationPolicy, StandardizationStats};
use cotrain::image::{ChannelRaster, ImageArray, ValueSpace};
use cotrain::model::{init_params, ModelCheckpoint, ModelConfig, TrunkConfig};
use cotrain::objectives::{combined_mtl_loss, cross_entropy, mse, poisson_nll, UncertaintyWeights};
use cotrain::reconstruction::{
    l2_norm, quadratic_oracle, reconstruct, LinearMap, QuadraticModel, ReconOptimizer, ReconstructionTask,
};
use cotrain::robustness::{bootstrap_ci, robustness_score, AccuracyTable};
use cotrain::saliency::{binarize_saliency, norm_ratio, normalized_ratio_delta, SaliencyDensity, SaliencyMask, MASK_MASS};
use cotrain::stats::pearson;
use cotrain::training::{shuffle_responses, NeuralResponseSet};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::sync::OnceLock;

fn table() -> &'static SeverityTable {
    static T: OnceLock<SeverityTable> = OnceLock::new();
    T.get_or_init(SeverityTable::default)
}

fn image(size: usize) -> impl Strategy<Value = ImageArray> {
    prop::collection::vec(0.0f32..=1.0, size * size)
        .prop_map(move |d| ImageArray::new(size, size, d, ValueSpace::Raw).unwrap())
}

fn kind() -> impl Strategy<Value = CorruptionKind> {
    (0..14usize).prop_map(|i| CorruptionKind::ALL[i])
}

const DETERMINISTIC: [CorruptionKind; 6] = [
    CorruptionKind::DefocusBlur,
    CorruptionKind::ZoomBlur,
    CorruptionKind::Brightness,
    CorruptionKind::Contrast,
    CorruptionKind::Pixelate,
    CorruptionKind::JpegCompression,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn corruptions_stay_in_unit_range_and_are_seeded(img in image(16), k in kind(), level in 1u8..=5, seed in any::<u64>()) {
        let a = corrupt(&img, k, level, seed, table()).unwrap();
        prop_assert_eq!(a.shape(), img.shape());
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)), "{k:?} level {level}");
        let b = corrupt(&img, k, level, seed, table()).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn deterministic_kinds_ignore_the_seed(img in image(16), i in 0..6usize, level in 1u8..=5, s1 in any::<u64>(), s2 in any::<u64>()) {
        let k = DETERMINISTIC[i];
        let a = corrupt(&img, k, level, s1, table()).unwrap();
        let b = corrupt(&img, k, level, s2, table()).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn contrast_shrinks_variance(img in image(16), level in 1u8..=5) {
        prop_assume!(img.variance() > 1e-4);
        let out = corrupt(&img, CorruptionKind::Contrast, level, 0, table()).unwrap();
        prop_assert!(out.variance() < img.variance());
    }

    #[test]
    fn grayscale_of_equal_channels_is_that_channel(img in image(8), channels in prop_oneof![Just(1usize), Just(3usize)]) {
        let raster = ChannelRaster {
            channels,
            height: 8,
            width: 8,
            data: img.data().repeat(channels),
        };
        let g = to_grayscale(&raster).unwrap();
        for (a, b) in g.data().iter().zip(img.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn standardize_inverts(img in image(8), mean in 0.0f64..1.0, std in 0.05f64..2.0) {
        let stats = StandardizationStats::new(mean, std).unwrap();
        let back = destandardize(&standardize(&img, &stats).unwrap(), &stats).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn augmentation_preserves_shape(img in image(12), pad in 0usize..6, flip in 0.0f64..=1.0, rot in 0.0f64..45.0, seed in any::<u64>()) {
        let p = AugmentationPolicy { crop_pad: pad, hflip_prob: flip, rotation_range_deg: rot };
        let out = augment(&img, &p, seed);
        prop_assert_eq!(out.shape(), img.shape());
        let again = augment(&img, &p, seed);
        prop_assert_eq!(again.data(), out.data());
    }

    #[test]
    fn poisson_loss_is_minimized_at_the_target(y in 0.05f64..5.0) {
        let at = poisson_nll(&[y], &[y], 0.0).unwrap();
        for i in 1..200 {
            let pred = i as f64 * 0.05;
            prop_assert!(poisson_nll(&[pred], &[y], 0.0).unwrap() >= at - 1e-12);
        }
    }

    #[test]
    fn combined_loss_at_unit_sigma_is_ce_plus_half_mse(ce in 0.0f64..10.0, m in 0.0f64..10.0) {
        prop_assert_eq!(combined_mtl_loss(ce, m, &UncertaintyWeights::default()), ce + m / 2.0);
    }

    #[test]
    fn losses_are_permutation_invariant(rows in prop::collection::vec((0.05f64..3.0, 0.0f64..3.0, 0usize..3), 2..12), rot in 0usize..12) {
        let perm: Vec<usize> = (0..rows.len()).map(|i| (i + rot) % rows.len()).collect();
        let pick = |f: &dyn Fn(&(f64, f64, usize)) -> f64, order: &[usize]| -> Vec<f64> { order.iter().map(|&i| f(&rows[i])).collect() };
        let id: Vec<usize> = (0..rows.len()).collect();
        let p = |o: &[usize]| pick(&|r| r.0, o);
        let t = |o: &[usize]| pick(&|r| r.1, o);
        prop_assert!((poisson_nll(&p(&id), &t(&id), 1e-8).unwrap() - poisson_nll(&p(&perm), &t(&perm), 1e-8).unwrap()).abs() < 1e-12);
        prop_assert!((mse(&p(&id), &t(&id)).unwrap() - mse(&p(&perm), &t(&perm)).unwrap()).abs() < 1e-12);
        let logp = |o: &[usize]| -> Vec<f64> {
            o.iter().flat_map(|&i| {
                let z = [rows[i].0, rows[i].1, 0.3];
                let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
                z.map(|v| v - lse)
            }).collect()
        };
        let labels = |o: &[usize]| -> Vec<usize> { o.iter().map(|&i| rows[i].2).collect() };
        let a = cross_entropy(&logp(&id), 3, &labels(&id)).unwrap();
        let b = cross_entropy(&logp(&perm), 3, &labels(&perm)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn robustness_score_scales_with_the_model(acc in prop::collection::vec(0.05f64..0.9, 14 * 5), k in 0.1f64..1.1) {
        let mut base = AccuracyTable::new();
        base.set_clean(0, 0.9).unwrap();
        for (i, kind) in CorruptionKind::ALL.iter().enumerate() {
            for l in 1..=5u8 {
                base.insert(*kind, l, 0, acc[i * 5 + l as usize - 1]).unwrap();
            }
        }
        prop_assume!(acc.iter().all(|a| a * k <= 1.0) && 0.9 * k <= 1.0);
        let scaled = base.scaled(k).unwrap();
        let rep = robustness_score(&scaled, &base).unwrap();
        for (kind, s) in &rep.per_corruption {
            prop_assert!((s - k).abs() < 1e-12, "{kind:?}");
        }
        prop_assert!((rep.score - k).abs() < 1e-12);
        for g in CorruptionGroup::ALL {
            let members: Vec<f64> = g.members().map(|m| rep.per_corruption[&m]).collect();
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            prop_assert!((rep.group(g).unwrap() - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn bootstrap_interval_brackets_the_mean(values in prop::collection::vec(0.0f64..2.0, 2..10), seed in any::<u64>()) {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (lo, hi) = bootstrap_ci(&values, 250, seed).unwrap();
        prop_assert!(lo <= hi);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo >= min - 1e-12 && hi <= max + 1e-12);
        prop_assert_eq!(bootstrap_ci(&values, 250, seed).unwrap(), (lo, hi));
        // Resampled means straddle the sample mean unless every resample
        // landed on one side, which 250 draws make negligible.
        prop_assert!(lo <= mean + 1e-12 && hi >= mean - 1e-12);
    }

    #[test]
    fn pearson_self_correlation_is_one(v in prop::collection::vec(-5.0f64..5.0, 3..40)) {
        let var: f64 = { let m = v.iter().sum::<f64>() / v.len() as f64; v.iter().map(|x| (x - m).powi(2)).sum() };
        prop_assume!(var > 1e-6);
        prop_assert!((pearson(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_oracle_is_feasible_and_shrinks_low_curvature_most(
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        x0 in prop::collection::vec(-2.0f64..2.0, 4),
        frac in 0.05f64..0.95,
    ) {
        let a = DMatrix::from_row_slice(4, 4, &entries);
        let h = 2.0 * a.transpose() * &a;
        let x0 = DVector::from_vec(x0);
        prop_assume!(x0.norm() > 0.1);
        let model = QuadraticModel { hessian: h, x0: x0.clone(), radius: frac * x0.norm() };
        let sol = quadratic_oracle(&model).unwrap();
        prop_assert!(sol.x.norm() <= model.radius * (1.0 + 1e-6));
        if sol.gamma > 0.0 {
            let f = sol.preserved_fractions();
            let ev = sol.eigenvalues.as_slice();
            for i in 1..f.len() {
                if ev[i] > ev[i - 1] * (1.0 + 1e-9) + 1e-12 {
                    prop_assert!(f[i] > f[i - 1], "fractions {f:?} for eigenvalues {ev:?}");
                }
            }
        }
    }

    #[test]
    fn iterative_reconstruction_is_feasible_and_deterministic(
        entries in prop::collection::vec(-1.0f64..1.0, 12),
        x0 in prop::collection::vec(-2.0f64..2.0, 4),
        radius in 0.05f64..3.0,
        seed in any::<u64>(),
    ) {
        let map = LinearMap { a: DMatrix::from_row_slice(3, 4, &entries) };
        let task = ReconstructionTask {
            map: &map,
            target: x0,
            radius,
            optimizer: ReconOptimizer::plain().with_steps(40).with_lr(0.05),
            seed,
        };
        let a = reconstruct(&task).unwrap();
        prop_assert!(l2_norm(&a.x) <= radius * (1.0 + 1e-6));
        let b = reconstruct(&task).unwrap();
        prop_assert_eq!(a.x, b.x);
    }

    #[test]
    fn salient_mask_has_mass_and_a_minimal_last_pixel(values in prop::collection::vec(0.0f64..1.0, 4..80)) {
        prop_assume!(values.iter().any(|&v| v > 0.0));
        let n = values.len();
        let d = SaliencyDensity::new(1, n, values, "prop").unwrap();
        let m = binarize_saliency(&d).unwrap();
        let v = d.values();
        let covered: f64 = m.mask.iter().zip(v).filter(|(b, _)| **b).map(|(_, x)| x).sum();
        prop_assert!(covered >= MASK_MASS - 1e-12);
        let smallest = m.mask.iter().zip(v).filter(|(b, _)| **b).map(|(_, x)| *x).fold(f64::INFINITY, f64::min);
        prop_assert!(covered - smallest < MASK_MASS);
    }

    #[test]
    fn norm_ratio_grows_with_the_mask(vals in prop::collection::vec(-1.0f32..1.0, 36), bits in prop::collection::vec(any::<bool>(), 36), extra in prop::collection::vec(any::<bool>(), 36)) {
        let img = ImageArray::new(6, 6, vals, ValueSpace::Standardized).unwrap();
        prop_assume!(img.norm() > 1e-3);
        let small = SaliencyMask::from_bits(6, 6, bits.clone()).unwrap();
        let big = SaliencyMask::from_bits(6, 6, bits.iter().zip(&extra).map(|(a, b)| *a || *b).collect()).unwrap();
        prop_assert!(norm_ratio(&img, &big).unwrap() >= norm_ratio(&img, &small).unwrap() - 1e-12);
    }

    #[test]
    fn ratio_delta_sign_follows_the_ratio_change(o in prop::collection::vec(0.1f32..1.0, 16), r in prop::collection::vec(-1.0f32..1.0, 16), bits in prop::collection::vec(any::<bool>(), 16)) {
        let mask = SaliencyMask::from_bits(4, 4, bits).unwrap();
        let orig = ImageArray::new(4, 4, o, ValueSpace::Raw).unwrap();
        let rec = ImageArray::new(4, 4, r, ValueSpace::Standardized).unwrap();
        prop_assume!(rec.norm() > 1e-3);
        let ro = norm_ratio(&orig, &mask).unwrap();
        prop_assume!(ro < 1.0);
        let rr = norm_ratio(&rec, &mask).unwrap();
        let d = normalized_ratio_delta(&rec, &orig, &mask).unwrap();
        prop_assert_eq!(d > 0.0, rr > ro);
    }

    #[test]
    fn shuffled_responses_keep_each_neurons_values(rows in 1usize..12, neurons in 1usize..5, seed in any::<u64>(), vals in prop::collection::vec(0.0f32..4.0, 60)) {
        let data = vals[..rows * neurons].to_vec();
        let set = NeuralResponseSet::new(neurons, data, "prop", [0; 32]).unwrap();
        let s = shuffle_responses(&set, seed).unwrap();
        for n in 0..neurons {
            let mut a = set.column(n);
            let mut b = s.column(n);
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
        }
        let again = shuffle_responses(&set, seed).unwrap();
        prop_assert_eq!(again.data(), s.data());
        if rows == 1 {
            prop_assert_eq!(s.data(), set.data());
        }
    }
}

fn tiny_checkpoint() -> ModelCheckpoint {
    let mut cfg = ModelConfig::vgg_mini(16, 4, 5);
    cfg.trunk = TrunkConfig::vgg_mini_with_widths([3, 4, 6]);
    cfg.head.widths = [5, 5];
    let mut p = init_params(&cfg, 9);
    p.set_standardization(&StandardizationStats::new(0.5, 0.25).unwrap());
    ModelCheckpoint::new(cfg, p, "tiny")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn class_probabilities_are_normalized_and_responses_positive(imgs in prop::collection::vec(image(16), 1..5)) {
        let ckpt = tiny_checkpoint();
        let lp = ckpt.predict_log_probs(&imgs, 8).unwrap();
        for row in lp.chunks(4) {
            let s: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
        let r = ckpt.predict_responses(&imgs, 8).unwrap();
        prop_assert!(r.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_preserves_eval_outputs(imgs in prop::collection::vec(image(16), 1..3)) {
        let ckpt = tiny_checkpoint();
        let back = ModelCheckpoint::decode(&ckpt.encode()).unwrap();
        prop_assert_eq!(back.predict_log_probs(&imgs, 8).unwrap(), ckpt.predict_log_probs(&imgs, 8).unwrap());
        prop_assert_eq!(back.tap_features(&imgs, 8).unwrap(), ckpt.tap_features(&imgs, 8).unwrap());
        prop_assert_eq!(back.predict_responses(&imgs, 8).unwrap(), ckpt.predict_responses(&imgs, 8).unwrap());
    }
}
