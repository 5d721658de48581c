//! Randomized invariants over the numeric kernels, the detectors, and the
//! file formats.

mod common;

use common::{neumaier_sum, random_tame_model, sample_model_path};
use evgrad::detect::{
    calibrate_gradient, gradient_anomaly_test, gradient_series, identify_skill,
    GradientCalibration,
};
use evgrad::eval::group_triggers;
use evgrad::hmm::ObservationSequence;
use evgrad::math::{linear_resample, logsumexp};
use evgrad::synth::Trial;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

proptest! {
    #[test]
    fn logsumexp_bounded_by_max_plus_log_n(xs in prop::collection::vec(-500.0f64..500.0, 1..24)) {
        let lse = logsumexp(&xs);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lse >= max - 1e-12);
        prop_assert!(lse <= max + (xs.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn logsumexp_shift_invariant(
        xs in prop::collection::vec(-300.0f64..300.0, 1..16),
        shift in -200.0f64..200.0,
    ) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        let a = logsumexp(&shifted);
        let b = logsumexp(&xs) + shift;
        prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }

    #[test]
    fn gradients_telescope_to_final_loglik(seed in 0u64..1_000_000, t_len in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_tame_model(&mut rng);
        let (_, obs) = sample_model_path(&model, t_len, &mut rng);
        let series = model.loglik_series(&obs).unwrap();
        let grads = gradient_series(&model, &obs).unwrap();
        prop_assert_eq!(grads.len(), t_len - 1);
        let reconstructed = series[0] + neumaier_sum(&grads);
        let total = *series.last().unwrap();
        prop_assert!(
            (reconstructed - total).abs() <= 1e-9,
            "L1 + sum of gradients = {} but L_T = {}", reconstructed, total
        );
    }

    #[test]
    fn grouping_is_monotone_and_idempotent(
        times in prop::collection::vec(1usize..500, 0..40),
        small in 0usize..10,
        extra in 0usize..30,
    ) {
        let tight = group_triggers(&times, small);
        let loose = group_triggers(&times, small + extra);
        prop_assert!(loose.len() <= tight.len());
        prop_assert_eq!(group_triggers(&tight, small), tight.clone());
        // Group representatives are a subset of the raw trigger times.
        for g in &tight {
            prop_assert!(times.contains(g));
        }
    }

    #[test]
    fn identification_ignores_common_gradient_shifts(
        grads in prop::collection::btree_map(1usize..12, -50.0f64..50.0, 1..6),
        shift in -100.0f64..100.0,
    ) {
        let shifted: BTreeMap<usize, f64> =
            grads.iter().map(|(&k, &v)| (k, v + shift)).collect();
        prop_assert_eq!(identify_skill(&grads), identify_skill(&shifted));
    }

    #[test]
    fn gradient_test_is_monotone_in_the_gradient(
        grad_min in -40.0f64..0.0,
        range in 0.0f64..30.0,
        g in -200.0f64..50.0,
        drop in 0.0f64..50.0,
    ) {
        let cal = GradientCalibration {
            model_id: "m".into(),
            grad_min,
            grad_max: grad_min + range,
            grad_range: range,
        };
        if gradient_anomaly_test(g, &cal) {
            prop_assert!(gradient_anomaly_test(g - drop, &cal));
        }
        // Anything at or above the nominal minimum is never anomalous.
        prop_assert!(!gradient_anomaly_test(grad_min + drop, &cal));
    }

    #[test]
    fn calibration_contains_its_own_training_gradients(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_tame_model(&mut rng);
        let seqs: Vec<ObservationSequence> = (0..3)
            .map(|_| sample_model_path(&model, rng.gen_range(4..20), &mut rng).1)
            .collect();
        let cal = calibrate_gradient(&model, &seqs, "m").unwrap();
        prop_assert!((cal.grad_range - (cal.grad_max - cal.grad_min)).abs() <= 1e-12);
        prop_assert!(cal.threshold() <= cal.grad_min);
        for seq in &seqs {
            for g in gradient_series(&model, seq).unwrap() {
                prop_assert!(g >= cal.grad_min - 1e-12);
                prop_assert!(g <= cal.grad_max + 1e-12);
                prop_assert!(!gradient_anomaly_test(g, &cal));
            }
        }
    }

    #[test]
    fn resampling_preserves_endpoints(
        xs in prop::collection::vec(-100.0f64..100.0, 2..40),
        m in 2usize..60,
    ) {
        let out = linear_resample(&xs, m);
        prop_assert_eq!(out.len(), m);
        prop_assert!((out[0] - xs[0]).abs() <= 1e-12);
        prop_assert!((out[m - 1] - xs[xs.len() - 1]).abs() <= 1e-12);
        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
        for v in &out {
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }
}

proptest! {
    // File round-trips hit the disk; keep the case count civil.
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trial_files_roundtrip_any_payload(
        seed in 0u64..1_000_000,
        t_len in 1usize..40,
        dim in 1usize..4,
        scale in prop::sample::select(vec![1e-6f64, 1.0, 1e6, 1e12]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0) * scale).collect())
            .collect();
        let obs = ObservationSequence::from_rows(rows, 0.004).unwrap();
        let trial = Trial::new(obs, vec![1; t_len], vec![], vec![], "h".into()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        evgrad::io::save_trial(&trial, &path).unwrap();
        let loaded = evgrad::io::load_trial(&path).unwrap();
        prop_assert_eq!(loaded.obs, trial.obs);
        prop_assert_eq!(loaded.skill_labels, trial.skill_labels);
    }

    #[test]
    fn calibration_files_roundtrip(
        grad_min in -100.0f64..0.0,
        range in 0.0f64..50.0,
        k in 0.0f64..5.0,
        curve in prop::collection::vec(-200.0f64..0.0, 2..30),
        dod in 1e-6f64..20.0,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let gpath = dir.path().join("g.json");
        let cal = GradientCalibration {
            model_id: "skill_9".into(),
            grad_min,
            grad_max: grad_min + range,
            grad_range: range,
        };
        evgrad::io::save_gradient_calibration(&cal, &gpath).unwrap();
        prop_assert_eq!(evgrad::io::load_gradient_calibration(&gpath).unwrap(), cal);

        let mpath = dir.path().join("m.json");
        let thr = evgrad::detect::MagnitudeThreshold {
            model_id: "skill_9".into(),
            k,
            mu: curve.clone(),
            sigma: curve.iter().map(|v| v.abs() / 10.0).collect(),
            dod_threshold: dod,
        };
        evgrad::io::save_magnitude_threshold(&thr, &mpath).unwrap();
        prop_assert_eq!(evgrad::io::load_magnitude_threshold(&mpath).unwrap(), thr);
    }
}
