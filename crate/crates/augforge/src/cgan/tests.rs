use super::*;
use crate::data::{make_synthetic, SyntheticSpec};
use crate::nn::tests::finite_difference_check;
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

fn small_task() -> (crate::data::LabeledDataset, crate::data::LabeledDataset, MlpModel) {
    let pretrain = make_synthetic(&SyntheticSpec::symmetric(4, 1.0, 0.5, 60, 21)).unwrap();
    let finetune = make_synthetic(&SyntheticSpec::symmetric(4, 1.0, 0.5, 30, 22)).unwrap();
    let baseline = init_model(&[4, 8, 2], HiddenActivation::Tanh, OutputActivation::Softmax, 5).unwrap();
    (pretrain, finetune, baseline)
}

fn small_config() -> CGanConfig {
    CGanConfig {
        noise_dim: 6,
        batch_size: 8,
        pretrain_iters: 12,
        finetune_iters: 12,
        generator_hidden: vec![16],
        discriminator_hidden: vec![12],
        seed: 3,
        ..CGanConfig::default()
    }
}

#[test]
fn normalize_batch_worked_example() {
    let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let (out, means, stds) = normalize_batch(&m).unwrap();
    assert_eq!(out.row(0), &[-1.0, -1.0]);
    assert_eq!(out.row(1), &[1.0, 1.0]);
    assert_eq!(means, vec![2.0, 3.0]);
    assert_eq!(stds, vec![1.0, 1.0]);
}

#[test]
fn normalize_batch_centers_constant_columns() {
    let m = Matrix::from_rows(&[vec![5.0], vec![5.0], vec![5.0]]).unwrap();
    let (out, means, stds) = normalize_batch(&m).unwrap();
    assert!(out.as_slice().iter().all(|&v| v == 0.0));
    assert_eq!(means, vec![5.0]);
    assert_eq!(stds, vec![1.0]);
}

#[test]
fn normalize_batch_is_idempotent() {
    let m = standard_normal(64, 5, &mut crate::rng::stream(9, "t"));
    let (once, _, _) = normalize_batch(&m).unwrap();
    let (twice, _, _) = normalize_batch(&once).unwrap();
    for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn normalize_batch_rejects_single_row() {
    assert!(normalize_batch(&Matrix::zeros(1, 3)).is_err());
}

#[test]
fn inject_noise_zero_variance_is_identity() {
    let m = standard_normal(4, 4, &mut crate::rng::stream(1, "t"));
    let out = inject_noise(&m, 0.0, &mut crate::rng::stream(2, "t"));
    assert_eq!(m, out);
}

#[test]
fn inject_noise_hits_paper_variance() {
    // 100k entries of N(0, 0.02) noise: sample variance within [0.018, 0.022].
    let zeros = Matrix::zeros(1000, 100);
    let noised = inject_noise(&zeros, 0.02, &mut crate::rng::stream(7, "noise"));
    let vals = noised.as_slice();
    let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
    let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
    assert!((0.018..=0.022).contains(&var), "variance {var}");
}

#[test]
fn inject_noise_is_two_percent_of_unit_signal() {
    let raw = standard_normal(512, 32, &mut crate::rng::stream(3, "sig"));
    let (norm, _, _) = normalize_batch(&raw).unwrap();
    let signal_power: f64 =
        norm.as_slice().iter().map(|v| v * v).sum::<f64>() / norm.as_slice().len() as f64;
    assert!((signal_power - 1.0).abs() < 1e-9);
    let noised = inject_noise(&norm, 0.02, &mut crate::rng::stream(4, "n"));
    let noise_power: f64 = noised
        .as_slice()
        .iter()
        .zip(norm.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / norm.as_slice().len() as f64;
    let ratio = noise_power / signal_power;
    assert!((ratio - 0.02).abs() < 0.004, "noise/signal {ratio}");
}

#[test]
fn discriminator_loss_worked_values() {
    let v = discriminator_loss(&[0.9], &[0.1], 1.0);
    assert!((v - (-(0.9f64.ln()) * 2.0)).abs() < 1e-9);
    assert!((v - 0.21072).abs() < 1e-5);

    // Real term at its smoothed minimum, fake term vanishing.
    let v = discriminator_loss(&[0.9], &[1e-12], 0.9);
    let real_min = -0.9 * 0.9f64.ln() - 0.1 * 0.1f64.ln();
    assert!((v - real_min).abs() < 1e-6);

    let v = discriminator_loss(&[0.5], &[0.5], 1.0);
    assert!((v - 2.0 * LN2).abs() < 1e-9);
}

#[test]
fn generator_loss_worked_values() {
    let c = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
    let y = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let l = generator_loss(&[0.5], &c, &y, 1.0).unwrap();
    assert!((l.total - 2.0 * LN2).abs() < 1e-9);

    // lambda = 0 disables the classifier term.
    let l0 = generator_loss(&[0.5], &c, &y, 0.0).unwrap();
    assert!((l0.total - l0.adversarial).abs() < 1e-15);
    assert!((l0.total - LN2).abs() < 1e-9);

    let c = Matrix::from_rows(&[vec![0.25, 0.75]]).unwrap();
    let l = generator_loss(&[0.25], &c, &y, 2.0).unwrap();
    assert!((l.adversarial - 2.0 * LN2).abs() < 1e-9);
    assert!((l.classifier - 2.0 * LN2).abs() < 1e-9);
    assert!((l.total - 6.0 * LN2).abs() < 1e-9);
    assert!((l.total - 4.158883).abs() < 1e-6);
}

#[test]
fn lambda_at_default_schedule() {
    let s = LambdaSchedule::default();
    assert_eq!(lambda_at(&s, 0.5).unwrap(), 0.5);
    assert_eq!(lambda_at(&s, 0.9).unwrap(), 2.0);
    assert_eq!(lambda_at(&s, 0.8).unwrap(), 2.0);
    assert_eq!(lambda_at(&s, 0.0).unwrap(), 0.5);
    let single = LambdaSchedule::constant(3.25).unwrap();
    for f in [0.0, 0.4, 1.0] {
        assert_eq!(lambda_at(&single, f).unwrap(), 3.25);
    }
}

#[test]
fn lambda_schedule_rejects_bad_input() {
    assert!(LambdaSchedule::new(vec![]).is_err());
    assert!(LambdaSchedule::new(vec![(0.1, 1.0)]).is_err());
    assert!(LambdaSchedule::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
    assert!(LambdaSchedule::new(vec![(0.0, -1.0)]).is_err());
    assert!(lambda_at(&LambdaSchedule::default(), 1.5).is_err());
}

#[test]
fn lambda_schedule_parse_round_trip() {
    let s = LambdaSchedule::parse("0.5,2@0.8").unwrap();
    assert_eq!(s.entries(), &[(0.0, 0.5), (0.8, 2.0)]);
    let back = LambdaSchedule::parse(&s.to_string()).unwrap();
    assert_eq!(s, back);
    assert!(LambdaSchedule::parse("0.5,2.0").is_err());
    assert!(LambdaSchedule::parse("abc").is_err());
}

#[test]
fn generator_gradients_match_finite_differences_both_paths() {
    // Small versions of the three components; FD over every generator
    // parameter for the adversarial path, the classifier path, and the
    // fused step.
    let d = 5;
    let k = 2;
    let noise = 4;
    let generator =
        init_model(&[noise + k, 10, d], HiddenActivation::Tanh, OutputActivation::Linear, 31).unwrap();
    let discriminator =
        init_model(&[d + k, 8, 1], HiddenActivation::Tanh, OutputActivation::Sigmoid, 32).unwrap();
    let baseline =
        init_model(&[d, 8, k], HiddenActivation::Tanh, OutputActivation::Softmax, 33).unwrap();

    let mut rng = crate::rng::stream(77, "fd");
    let eta = standard_normal(3, noise, &mut rng);
    let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let g_in = Matrix::hstack(&eta, &y).unwrap();

    let (_, adv_grads) = generator_adversarial_gradients(&generator, &discriminator, &g_in).unwrap();
    let adv_loss = |g: &MlpModel| -> f64 {
        let x = g.forward(&g_in).unwrap();
        let p = discriminator.forward(&Matrix::hstack(&x, &y).unwrap()).unwrap();
        (0..3).map(|r| -clamp_prob(p.get(r, 0)).ln()).sum::<f64>() / 3.0
    };
    finite_difference_check(&generator, &adv_loss, &adv_grads, 1e-5, 1e-4);

    let (_, cls_grads) = generator_classifier_gradients(&generator, &baseline, &g_in).unwrap();
    let cls_loss = |g: &MlpModel| -> f64 {
        let x = g.forward(&g_in).unwrap();
        let c = baseline.forward(&x).unwrap();
        (0..3)
            .map(|r| categorical_cross_entropy(c.row(r), y.row(r)).unwrap())
            .sum::<f64>()
            / 3.0
    };
    finite_difference_check(&generator, &cls_loss, &cls_grads, 1e-5, 1e-4);

    // Fused step equals the sum of the two paths.
    let lambda = 1.7;
    let (losses, fused) =
        generator_step_gradients(&generator, &discriminator, &baseline, &g_in, lambda).unwrap();
    for idx in 0..generator.param_count() {
        let split = adv_grads.param(idx) + lambda * cls_grads.param(idx);
        assert!(
            (fused.param(idx) - split).abs() <= 1e-12 * split.abs().max(1.0),
            "fused vs split at {idx}"
        );
    }
    assert!((losses.total - (losses.adversarial + lambda * losses.classifier)).abs() < 1e-12);
}

#[test]
fn train_cgan_freezes_baseline_and_is_deterministic() {
    let (pretrain, finetune, baseline) = small_task();
    let fingerprint_before = model_fingerprint(&baseline);
    let config = small_config();

    let a = train_cgan(&pretrain, &finetune, &baseline, &config).unwrap();
    assert_eq!(model_fingerprint(&baseline), fingerprint_before);
    assert_eq!(a.baseline_ref, fingerprint_before);
    assert_eq!(a.telemetry.len(), 24);
    assert!(a.telemetry.iter().all(|r| {
        r.loss_d.is_finite() && r.loss_g1.is_finite() && r.loss_g2.is_finite()
    }));

    let b = train_cgan(&pretrain, &finetune, &baseline, &config).unwrap();
    assert_eq!(a.generator, b.generator);
    assert_eq!(a.discriminator, b.discriminator);
}

#[test]
fn pretrain_only_run_ignores_finetune_data() {
    let (pretrain, finetune, baseline) = small_task();
    let other_finetune = make_synthetic(&SyntheticSpec::symmetric(4, 2.0, 0.1, 25, 99)).unwrap();
    let config = CGanConfig {
        finetune_iters: 0,
        ..small_config()
    };
    let a = train_cgan(&pretrain, &finetune, &baseline, &config).unwrap();
    let b = train_cgan(&pretrain, &other_finetune, &baseline, &config).unwrap();
    assert_eq!(a.generator, b.generator);
    assert!(a.telemetry.iter().all(|r| r.phase == Phase::Pretrain));
}

#[test]
fn train_cgan_rejects_dim_mismatches() {
    let (pretrain, _, baseline) = small_task();
    let bad_finetune = make_synthetic(&SyntheticSpec::symmetric(6, 1.0, 0.5, 30, 1)).unwrap();
    let err = train_cgan(&pretrain, &bad_finetune, &baseline, &small_config()).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }));

    let bad_baseline =
        init_model(&[4, 8, 3], HiddenActivation::Tanh, OutputActivation::Softmax, 5).unwrap();
    let (pretrain, finetune, _) = small_task();
    let err = train_cgan(&pretrain, &finetune, &bad_baseline, &small_config()).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }));
}

#[test]
fn discriminator_loss_converges_on_synthetic_task() {
    // Trend check over the run's own telemetry: the mean discriminator loss
    // over the last tenth of iterations sits below the first tenth.
    let pretrain = make_synthetic(&SyntheticSpec::symmetric(4, 1.0, 0.5, 150, 41)).unwrap();
    let finetune = make_synthetic(&SyntheticSpec::symmetric(4, 1.0, 0.5, 80, 42)).unwrap();
    let baseline =
        init_model(&[4, 8, 2], HiddenActivation::Tanh, OutputActivation::Softmax, 43).unwrap();
    let config = CGanConfig {
        noise_dim: 8,
        batch_size: 16,
        pretrain_iters: 200,
        finetune_iters: 100,
        generator_hidden: vec![24],
        discriminator_hidden: vec![16],
        seed: 44,
        ..CGanConfig::default()
    };
    let trained = train_cgan(&pretrain, &finetune, &baseline, &config).unwrap();
    let n = trained.telemetry.len();
    let tenth = n / 10;
    let first: f64 = trained.telemetry[..tenth].iter().map(|r| r.loss_d).sum::<f64>() / tenth as f64;
    let last: f64 = trained.telemetry[n - tenth..].iter().map(|r| r.loss_d).sum::<f64>() / tenth as f64;
    assert!(
        last < first,
        "discriminator loss should drop: first tenth {first}, last tenth {last}"
    );
}

#[test]
fn generate_matches_request_exactly() {
    let (pretrain, finetune, baseline) = small_task();
    let trained = train_cgan(&pretrain, &finetune, &baseline, &small_config()).unwrap();

    let fake = generate(&trained, &[7, 3], &mut crate::rng::stream(5, "gen")).unwrap();
    assert_eq!(fake.data.len(), 10);
    assert_eq!(fake.data.labels().iter().filter(|&&l| l == 0).count(), 7);
    assert_eq!(fake.data.labels().iter().filter(|&&l| l == 1).count(), 3);
    assert_eq!(fake.data.dim(), 4);

    let single = generate(&trained, &[1, 0], &mut crate::rng::stream(5, "gen")).unwrap();
    assert_eq!(single.data.len(), 1);
    assert_eq!(single.data.labels(), &[0]);

    let again = generate(&trained, &[7, 3], &mut crate::rng::stream(5, "gen")).unwrap();
    assert_eq!(fake, again);

    assert!(generate(&trained, &[0, 0], &mut crate::rng::stream(5, "gen")).is_err());
    assert!(generate(&trained, &[1, 2, 3], &mut crate::rng::stream(5, "gen")).is_err());
}

#[test]
fn manifest_round_trip_and_errors() {
    let config = small_config();
    let text = encode_manifest(&config, "deadbeef");
    let (back, hash) = parse_manifest(&text).unwrap();
    assert_eq!(back, config);
    assert_eq!(hash, "deadbeef");

    assert!(matches!(
        parse_manifest("AUGFORGE-CGAN v2\n").unwrap_err(),
        Error::VersionMismatch { .. }
    ));
    assert!(matches!(
        parse_manifest("AUGFORGE-CGAN v1\nbogus_key=1\nbaseline_sha256=x\n").unwrap_err(),
        Error::MalformedFile(_)
    ));
    assert!(matches!(
        parse_manifest("AUGFORGE-CGAN v1\nseed=1\nseed=2\nbaseline_sha256=x\n").unwrap_err(),
        Error::MalformedFile(_)
    ));
    assert!(matches!(
        parse_manifest("AUGFORGE-CGAN v1\nseed=1\n").unwrap_err(),
        Error::MalformedFile(_)
    ));
}

#[test]
fn save_load_cgan_round_trip() {
    let (pretrain, finetune, baseline) = small_task();
    let trained = train_cgan(&pretrain, &finetune, &baseline, &small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_cgan(&trained, dir.path()).unwrap();
    let loaded = load_cgan(dir.path()).unwrap();
    assert_eq!(loaded.generator, trained.generator);
    assert_eq!(loaded.discriminator, trained.discriminator);
    assert_eq!(loaded.baseline_ref, trained.baseline_ref);
    assert_eq!(loaded.config, trained.config);
}

#[test]
fn telemetry_csv_has_header_and_rows() {
    let records = vec![IterationRecord {
        iter: 0,
        phase: Phase::Pretrain,
        loss_d: 1.5,
        loss_g1: 0.25,
        loss_g2: 0.75,
        lambda: 0.5,
        gen_updates: 2,
    }];
    let csv = telemetry_to_csv(&records);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "iter,phase,L_D,L_G1,L_G2,lambda,u");
    assert_eq!(lines.next().unwrap(), "0,pretrain,1.5,0.25,0.75,0.5,2");
}

proptest! {
    // One-sided smoothing: the fake term never depends on the target.
    #[test]
    fn fake_term_ignores_smoothing(p in 0.01f64..0.99, target in 0.51f64..1.0) {
        let anchored_real = 0.7;
        let total = discriminator_loss(&[anchored_real], &[p], target);
        let fake_term = total - binary_cross_entropy(anchored_real, target);
        prop_assert!((fake_term - binary_cross_entropy(p, 0.0)).abs() < 1e-12);
    }

    // With L_G2 > 0, the total generator loss strictly increases in lambda.
    #[test]
    fn generator_loss_monotone_in_lambda(
        p in 0.05f64..0.95,
        c0 in 0.05f64..0.95,
        l1 in 0.0f64..3.0,
        dl in 0.01f64..2.0,
    ) {
        let c = Matrix::from_rows(&[vec![c0, 1.0 - c0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let a = generator_loss(&[p], &c, &y, l1).unwrap();
        let b = generator_loss(&[p], &c, &y, l1 + dl).unwrap();
        prop_assert!(a.classifier > 0.0);
        prop_assert!(b.total > a.total);
    }
}
