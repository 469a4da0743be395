use eusfl::labeldp::{
    apply_labeldp, dp_audit, dp_audit_pair, dp_audit_with_scale, label_sensitivity, noisy_targets,
    one_hot, LaplaceSampler, NoiseConfig, Verdict,
};
use eusfl::rng::Substreams;
use proptest::prelude::*;

#[test]
fn sensitivity_matches_brute_force() {
    for k in 2..=12 {
        let mut worst = 0.0f64;
        for a in 0..k {
            for b in 0..k {
                let (u, v) = (one_hot(a, k).unwrap(), one_hot(b, k).unwrap());
                let l1: f64 = u
                    .values
                    .iter()
                    .zip(&v.values)
                    .map(|(x, y)| (x - y).abs())
                    .sum();
                worst = worst.max(l1);
            }
        }
        assert_eq!(label_sensitivity(k).unwrap(), worst, "k = {k}");
    }
    assert!(label_sensitivity(1).is_err());
}

#[test]
fn one_hot_sums_to_one() {
    for k in 1..=32 {
        for y in 0..k {
            assert_eq!(one_hot(y, k).unwrap().values.iter().sum::<f64>(), 1.0);
        }
    }
}

#[test]
fn golden_vector() {
    let out = apply_labeldp(&one_hot(1, 4).unwrap(), &NoiseConfig::new(1.0, 4, 2024)).unwrap();
    let golden = [
        0.45389221925387374,
        0.30760439017910274,
        0.26726742465955894,
        -0.028764034092535324,
    ];
    assert_eq!(out.values, golden);
    assert!(out.normalized);
}

#[test]
fn ten_thousand_draws_sum_to_one() {
    let labels: Vec<usize> = (0..10_000).map(|i| i % 5).collect();
    let cfg = NoiseConfig::new(0.7, 5, 3);
    let t = noisy_targets(&labels, 5, Some(&cfg), Substreams::new(3).stream("n", &[])).unwrap();
    for i in 0..labels.len() {
        assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn tiny_scale_converges_to_one_hot() {
    let mut s = LaplaceSampler::new(1e-9, Substreams::new(8).stream("n", &[])).unwrap();
    for y in 0..6 {
        let hot = one_hot(y, 6).unwrap();
        let out = s.privatize(&hot).unwrap();
        let dev = out
            .values
            .iter()
            .zip(&hot.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-6);
        assert_eq!(out.argmax(), y);
    }
}

#[test]
fn utility_is_monotone_in_scale() {
    let trials = 10_000;
    let mut last = 1.0f64;
    for (i, b) in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0].into_iter().enumerate() {
        let mut s = LaplaceSampler::new(b, Substreams::new(21).stream("u", &[i as u64])).unwrap();
        let hits = (0..trials)
            .filter(|t| s.privatize(&one_hot(t % 4, 4).unwrap()).unwrap().argmax() == t % 4)
            .count();
        let p = hits as f64 / trials as f64;
        let sigma = (p * (1.0 - p) / trials as f64)
            .sqrt()
            .max(1.0 / trials as f64);
        assert!(p <= last + 2.0 * sigma, "b = {b}: {p} after {last}");
        last = p;
    }
}

#[test]
fn audit_passes_at_reference_budgets() {
    for eps in [0.5, 1.0, 2.0] {
        let r = dp_audit(&NoiseConfig::new(eps, 4, 11), 100_000).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        assert!(r.bins >= 10);
    }
}

#[test]
fn audit_catches_weak_noise() {
    let cfg = NoiseConfig::new(0.5, 4, 11);
    let r = dp_audit_with_scale(&cfg, 100_000, cfg.scale() / 2.0).unwrap();
    assert_eq!(r.verdict, Verdict::Fail, "{r:?}");
}

#[test]
fn identical_labels_give_unit_ratio() {
    let cfg = NoiseConfig::new(1.0, 4, 5);
    let r = dp_audit_pair(&cfg, 50_000, cfg.scale(), (2, 2)).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!(r.max_ratio < 1.0 + r.slack);
}

proptest! {
    #[test]
    fn outputs_are_normalized(eps in 0.05f64..20.0, k in 2usize..12, y in 0usize..12, seed in any::<u64>()) {
        let y = y % k;
        let out = apply_labeldp(&one_hot(y, k).unwrap(), &NoiseConfig::new(eps, k, seed)).unwrap();
        prop_assert!((out.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(out.values.len(), k);
    }

    #[test]
    fn same_seed_same_output(seed in any::<u64>()) {
        let cfg = NoiseConfig::new(1.0, 4, seed);
        let a = apply_labeldp(&one_hot(3, 4).unwrap(), &cfg).unwrap();
        let b = apply_labeldp(&one_hot(3, 4).unwrap(), &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}
