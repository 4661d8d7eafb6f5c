use mist_core::dataio::FeatureSequence;
use mist_core::encoder::volume::Volume;
use mist_core::encoder::{attend, weighted_ce, Ablation, BackboneConfig, Encoder};
use mist_core::evaluation::{auc_bruteforce, frame_auc};
use mist_core::milgen::mil_ranking_loss;
use mist_core::pseudolabel::{minmax, refine, smooth};
use mist_core::sampling::{gather_subbags, sparse_continuous_starts};
use mist_core::HyperParams;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            // coarse grid so ties are common
            prop::collection::vec((0u8..8).prop_map(|v| f64::from(v) / 7.0), n),
            prop::collection::vec(0u8..2, n),
        )
    })
    .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
}

proptest! {
    #[test]
    fn config_json_round_trip(
        l in 1usize..64, t in 1usize..8, eps in 0.01f64..5.0, lambda in 0.0f64..1.0,
        k in 0usize..10, kk in 1usize..16, p in 0.0f64..0.99, seed in any::<u64>(),
    ) {
        let hp = HyperParams {
            subbags: l, clips_per_subbag: t, epsilon: eps, lambda, k,
            detectors_per_class: kk, dropout_p: p, seed,
            ..HyperParams::default()
        };
        let back = HyperParams::from_json_str(&hp.to_json_string()).unwrap();
        prop_assert_eq!(back, hp);
    }

    #[test]
    fn sparse_starts_cover_the_video(n in 1usize..300, l in 1usize..48, t in 1usize..10) {
        let starts = sparse_continuous_starts(n, l, t);
        let padded = n.max(t);
        prop_assert_eq!(starts.len(), l);
        prop_assert_eq!(starts[0], 0);
        if l > 1 {
            prop_assert_eq!(*starts.last().unwrap(), padded - t);
        }
        prop_assert!(starts.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(starts.iter().all(|&s| s + t <= padded));

        let data = Array2::from_shape_fn((n, 1), |(i, _)| i as f32);
        let bag = gather_subbags(&FeatureSequence::new("v", data).unwrap(), &starts, t).unwrap();
        for (li, &s) in starts.iter().enumerate() {
            for ti in 0..t {
                prop_assert_eq!(bag.subbags[[li, ti, 0]], (s + ti).min(n - 1) as f32);
            }
        }
    }

    #[test]
    fn auc_matches_bruteforce((s, l) in scores_and_labels()) {
        let fast = frame_auc(&s, &l).unwrap();
        let slow = auc_bruteforce(&s, &l).unwrap();
        prop_assert!((fast - slow).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&fast));
    }

    #[test]
    fn auc_rank_invariance((s, l) in scores_and_labels(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = frame_auc(&s, &l).unwrap();
        let affine: Vec<f64> = s.iter().map(|x| a * x + b).collect();
        let cubed: Vec<f64> = s.iter().map(|x| x * x * x).collect();
        let flipped: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((frame_auc(&affine, &l).unwrap() - base).abs() < 1e-12);
        prop_assert!((frame_auc(&cubed, &l).unwrap() - base).abs() < 1e-12);
        prop_assert!((frame_auc(&flipped, &l).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn minmax_is_idempotent(s in prop::collection::vec(-10.0f64..10.0, 1..40)) {
        let once = minmax(&s);
        let twice = minmax(&once.values);
        if once.degenerate {
            prop_assert!(once.values.iter().all(|&v| v == 0.0));
        } else {
            prop_assert!(!twice.degenerate);
            for (a, b) in once.values.iter().zip(&twice.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let lo = once.values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = once.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(lo, 0.0);
            prop_assert!((hi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_stays_in_range(s in prop::collection::vec(-10.0f64..10.0, 1..60), k in 0usize..12) {
        let out = smooth(&s, k);
        prop_assert_eq!(out.len(), s.len());
        let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn refine_ignores_affine_rescaling(
        s in prop::collection::vec(0.0f64..1.0, 2..40), a in 0.01f64..100.0, b in -50.0f64..50.0, k in 0usize..8,
    ) {
        let base = refine(&s, k);
        let scaled: Vec<f64> = s.iter().map(|x| a * x + b).collect();
        let other = refine(&scaled, k);
        prop_assume!(!base.degenerate && !other.degenerate);
        for (x, y) in base.values.iter().zip(&other.values) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn ranking_loss_properties(
        a in prop::collection::vec(0.0f64..1.0, 1..12),
        n in prop::collection::vec(0.0f64..1.0, 1..12),
        bump in 0.0f64..0.5,
        lambda in 0.0f64..0.1,
    ) {
        let base = mil_ranking_loss(&a, &n, 1.0, lambda).unwrap();
        prop_assert!(base >= 0.0);
        // raising every normal score can only raise the loss
        let higher: Vec<f64> = n.iter().map(|x| x + bump).collect();
        prop_assert!(mil_ranking_loss(&a, &higher, 1.0, lambda).unwrap() >= base - 1e-12);
        // with no sparsity term, raising the top abnormal score can only lower it
        let mut lifted = a.clone();
        let top = lifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in lifted.iter_mut() {
            if *v == top {
                *v += bump;
            }
        }
        prop_assert!(
            mil_ranking_loss(&lifted, &n, 1.0, 0.0).unwrap() <= mil_ranking_loss(&a, &n, 1.0, 0.0).unwrap() + 1e-12
        );
    }

    #[test]
    fn weighted_ce_is_finite_and_non_negative(p in 0.0f64..=1.0, y in 0.0f64..=1.0, w0 in 0.1f64..5.0, w1 in 0.1f64..5.0) {
        let v = weighted_ce(p, y, w0, w1);
        prop_assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn attended_map_difference(seed in any::<u64>(), c in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Volume::zeros(2, [1, 2, 3], c);
        m.data.mapv_inplace(|_| rand::Rng::random_range(&mut rng, -5.0..5.0));
        let mut a = Volume::zeros(2, [1, 2, 3], 1);
        a.data.mapv_inplace(|_| rand::Rng::random_range(&mut rng, 0.0..1.0));
        let out = attend(&m, &a).unwrap();
        for r in 0..m.data.nrows() {
            for ch in 0..c {
                let diff = out.data[[r, ch]] - m.data[[r, ch]];
                prop_assert!((diff - a.data[[r, 0]] * m.data[[r, ch]]).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn head_outputs_are_distributions(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = Encoder::init(BackboneConfig::with_widths([1, 4, 8, 8], [2, 2, 3, 3, 4]), 2, Ablation::default(), &mut rng);
        for p in enc.params_mut() {
            for v in p.iter_mut() {
                *v += rand::Rng::random_range(&mut rng, -1.0..1.0);
            }
        }
        let mut x = Volume::zeros(2, [4, 8, 8], 1);
        x.data.mapv_inplace(|_| rand::Rng::random_range(&mut rng, -scale..scale));
        let fwd = enc.forward(&x).unwrap();
        let t = fwd.sga().unwrap();
        for i in 0..2 {
            for probs in [t.p.row(i), t.p_hat.row(i)] {
                prop_assert!(probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!((probs.sum() - 1.0).abs() < 1e-6);
            }
        }
        prop_assert!(t.a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
