use eusfl::attack::{asr_sweep, infer_label, noise_threshold, GradientCapture, SweepConfig};
use eusfl::labeldp::one_hot;
use eusfl::nn::{mlp_kinds, NetworkSpec};
use eusfl::rng::Substreams;
use eusfl::Tensor;
use rand::Rng;

#[test]
fn hard_labels_are_always_recovered() {
    let root = Substreams::new(77);
    let mut hits = 0;
    for t in 0..500u64 {
        let mut rng = root.stream("trial", &[t]);
        let k = rng.random_range(2..7);
        let dim = rng.random_range(1..6);
        let hidden = rng.random_range(1..9);
        let net = NetworkSpec::init(
            &mlp_kinds(&[dim, hidden, k]).unwrap(),
            vec![dim],
            k,
            &mut rng,
        )
        .unwrap();
        let x = Tensor::new(
            vec![1, dim],
            (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let y = rng.random_range(0..k);
        let clip = if t % 2 == 0 { None } else { Some(0.5) };
        let cap =
            GradientCapture::observe(&net, &x, &one_hot(y, k).unwrap().values, y, clip).unwrap();
        // softmax - onehot: exactly one negative entry.
        assert_eq!(cap.logit_gradient.iter().filter(|g| **g < 0.0).count(), 1);
        hits += usize::from(infer_label(&cap).unwrap() == y);
    }
    assert_eq!(hits, 500);
}

#[test]
fn uniform_soft_target_has_no_negative_entry() {
    let net = NetworkSpec::init(
        &mlp_kinds(&[2, 3]).unwrap(),
        vec![2],
        3,
        &mut Substreams::new(1).stream("i", &[]),
    )
    .unwrap();
    let x = Tensor::new(vec![1, 2], vec![0.3, -0.4]).unwrap();
    let logits = net.forward(&x).unwrap();
    let z = logits.data();
    let max = z.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    let matching: Vec<f64> = e.iter().map(|v| v / s).collect();
    let cap = GradientCapture::observe(&net, &x, &matching, 0, None).unwrap();
    assert!(cap.logit_gradient.iter().all(|g| g.abs() < 1e-12));
    assert!(infer_label(&cap).unwrap() < 3);
}

#[test]
fn noise_drives_the_attack_to_chance() {
    let cfg = SweepConfig::default();
    let k = cfg.num_classes as f64;
    let points = asr_sweep(&cfg).unwrap();
    assert_eq!(points.len(), 7);
    assert_eq!(points[0].asr_pct, 100.0);
    let sigma = |p: f64, n: usize| (p * (1.0 - p) / n as f64).sqrt();

    let last = points.last().unwrap();
    let chance = 1.0 / k;
    assert!(
        (last.asr_pct / 100.0 - chance).abs() <= 2.0 * sigma(chance, last.trials),
        "ASR {} at b = {}",
        last.asr_pct,
        last.noise_scale
    );
    for w in points.windows(2) {
        let (a, b) = (w[0].asr_pct / 100.0, w[1].asr_pct / 100.0);
        let slack = 2.0 * (sigma(a, w[0].trials).powi(2) + sigma(b, w[1].trials).powi(2)).sqrt();
        assert!(b <= a + slack, "ASR rose from {a} to {b}");
    }
    let b_star = noise_threshold(&points, cfg.num_classes, 5.0);
    assert!(b_star.is_some(), "{points:?}");
}
