//! Scaled-down experiment properties: noise sweeps, ablation isolation and
//! channel-shared transfer.

use tscot::dataset::{generate_synthetic, generate_synthetic_with, NoiseKind, NoiseSpec, SyntheticSignal};
use tscot::eval::{
    evaluate, from_parts, median, robustness_sweep, run_variant, AblationVariant, NoiseTarget, Split,
};
use tscot::training::{finetune_transfer, train, TrainConfig};

fn split(per_class: usize, d: usize, seed: u64) -> Split {
    let train = generate_synthetic(per_class, 64, d, 4, seed).unwrap();
    let test = generate_synthetic(per_class, 64, d, 4, seed + 1000).unwrap();
    from_parts(&train, &test).unwrap()
}

fn small_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig {
        epochs: 3,
        warmup_epochs: 1,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    };
    c.encoder.channels_per_level = vec![8, 16, 16];
    c.encoder.embedding_dim = 16;
    c
}

#[test]
fn sweep_level_zero_matches_clean_run() {
    let s = split(8, 1, 4);
    let cfg = small_config(0);
    let levels = [
        NoiseSpec { kind: NoiseKind::Missing, level: 0.0, seed: 0 },
        NoiseSpec { kind: NoiseKind::Gaussian, level: 0.0, seed: 0 },
    ];
    let rows = robustness_sweep(&s, &levels, &cfg, &[AblationVariant::Full], &[0, 1], NoiseTarget::Both, |_| Ok(()))
        .unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let (_, clean) = run_variant(&s, &TrainConfig { seed: row.seed, ..cfg.clone() }, AblationVariant::Full).unwrap();
        assert_eq!((row.accuracy, row.auroc), (clean.accuracy, clean.auroc));
    }
}

#[test]
fn heavy_missingness_is_no_better_than_light() {
    let s = split(64, 1, 0);
    let acc = |level: f64| {
        let spec = NoiseSpec { kind: NoiseKind::Missing, level, seed: 0 };
        let rows = robustness_sweep(
            &s,
            &[spec],
            &TrainConfig::default(),
            &[AblationVariant::Full],
            &[0, 1, 2],
            NoiseTarget::Both,
            |_| Ok(()),
        )
        .unwrap();
        median(&rows.iter().map(|r| r.accuracy).collect::<Vec<_>>())
    };
    let (light, heavy) = (acc(0.1), acc(0.5));
    assert!(heavy <= light, "p=0.5 {heavy} vs p=0.1 {light}");
}

#[test]
fn time_variant_ignores_the_frequency_encoder() {
    let s = split(8, 1, 5);
    let cfg = small_config(3);
    let (_, alone) = run_variant(&s, &cfg, AblationVariant::T).unwrap();
    // both encoders, no co-training: the time encoder sees the same data,
    // initialization and dropout streams
    let (both, _) = train(&s.train, &TrainConfig { lambda: 0.0, ..cfg.clone() }).unwrap();
    let with_freq = evaluate(&both, &s, AblationVariant::T, cfg.seed).unwrap();
    assert_eq!(alone, with_freq);
}

#[test]
fn channel_shared_transfer_beats_random_init() {
    let (mut transferred, mut scratch) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let mut pre_cfg = TrainConfig { seed, ..TrainConfig::default() };
        pre_cfg.encoder.channel_shared = true;
        let source = split(64, 2, seed);
        let (pretrained, _) = train(&source.train, &pre_cfg).unwrap();

        // few, weakly separated target samples and a one-epoch budget, so
        // the starting point matters
        let weak = SyntheticSignal { amplitude: 0.15, trend: 0.5 };
        let target_train = generate_synthetic_with(8, 64, 3, 4, seed + 500, weak).unwrap();
        let target_test = generate_synthetic_with(32, 64, 3, 4, seed + 1500, weak).unwrap();
        let target = from_parts(&target_train, &target_test).unwrap();
        let tune_cfg = TrainConfig {
            epochs: 1,
            warmup_epochs: 1,
            batch_size: 16,
            ..pre_cfg.clone()
        };
        let (tuned, _) = finetune_transfer(&pretrained, &target.train, &tune_cfg).unwrap();
        let (fresh, _) = train(&target.train, &tune_cfg).unwrap();
        transferred.push(evaluate(&tuned, &target, AblationVariant::Full, seed).unwrap().accuracy);
        scratch.push(evaluate(&fresh, &target, AblationVariant::Full, seed).unwrap().accuracy);
    }
    assert!(
        median(&transferred) > median(&scratch),
        "transfer {transferred:?} vs random init {scratch:?}"
    );
}
