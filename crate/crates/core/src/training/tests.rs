use super::*;
use crate::checkpoint;
use crate::dataset::{generate_synthetic, label_subset, standardize};
use crate::prototypes::semi_supervised_prototypes;

fn tiny_data(seed: u64) -> TimeSeriesDataset {
    let raw = generate_synthetic(8, 32, 1, 3, seed).unwrap();
    standardize(&raw, &[]).unwrap().0
}

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig {
        batch_size: 8,
        epochs: 3,
        warmup_epochs: 1,
        seed: 5,
        ..TrainConfig::default()
    };
    c.encoder.levels = 2;
    c.encoder.channels_per_level = vec![4, 8];
    c.encoder.kernel_size = 3;
    c.encoder.embedding_dim = 8;
    c
}

fn params_of(s: &TrainState) -> Vec<Vec<f64>> {
    [s.time.as_ref(), s.freq.as_ref()]
        .into_iter()
        .flatten()
        .flat_map(|m| m.params.tensors().into_iter().map(|t| t.to_vec()))
        .collect()
}

#[test]
fn deterministic_given_seed() {
    let ds = tiny_data(1);
    let (a, la) = train(&ds, &tiny_config()).unwrap();
    let (b, lb) = train(&ds, &tiny_config()).unwrap();
    assert_eq!(la.losses(), lb.losses());
    assert_eq!(params_of(&a), params_of(&b));
    assert_eq!(a.bank, b.bank);
    assert_eq!(la.loss_csv().unwrap(), lb.loss_csv().unwrap());
}

#[test]
fn different_seed_differs() {
    let ds = tiny_data(1);
    let (_, la) = train(&ds, &tiny_config()).unwrap();
    let (_, lb) = train(&ds, &TrainConfig { seed: 6, ..tiny_config() }).unwrap();
    assert_ne!(la.losses(), lb.losses());
}

#[test]
fn warmup_cot_is_exactly_zero() {
    let ds = tiny_data(2);
    let cfg = TrainConfig { epochs: 4, warmup_epochs: 2, ..tiny_config() };
    let (_, log) = train(&ds, &cfg).unwrap();
    for r in &log.batches {
        if r.epoch < 2 {
            assert_eq!((r.cot_h, r.cot_g), (0.0, 0.0));
            assert_eq!(r.total, r.inst_h + r.inst_g);
        } else {
            assert!(r.cot_h > 0.0 && r.cot_g > 0.0);
        }
        assert!(r.total.is_finite());
    }
    assert_eq!(log.epochs[0].phase, "warmup");
    assert_eq!(log.epochs[3].phase, "co_training");
    let batches_per_epoch = crate::dataset::batches(ds.n, cfg.batch_size, 0).unwrap().len();
    assert_eq!(log.batches.len(), 4 * batches_per_epoch);
}

#[test]
fn all_warmup_matches_single_view_runs() {
    let ds = tiny_data(3);
    let both = TrainConfig { epochs: 1, warmup_epochs: 1, ..tiny_config() };
    let (s, log) = train(&ds, &both).unwrap();
    let (t, tlog) = train(&ds, &TrainConfig { views: ViewSelection::TimeOnly, ..both.clone() }).unwrap();
    let (f, flog) = train(&ds, &TrainConfig { views: ViewSelection::FrequencyOnly, ..both.clone() }).unwrap();
    assert_eq!(s.time.as_ref().unwrap().params, t.time.unwrap().params);
    assert_eq!(s.freq.as_ref().unwrap().params, f.freq.unwrap().params);
    for ((a, b), c) in log.batches.iter().zip(&tlog.batches).zip(&flog.batches) {
        assert_eq!(a.inst_h, b.inst_h);
        assert_eq!(a.inst_g, c.inst_g);
    }
    assert!(s.bank.is_none());
}

#[test]
fn zero_lambda_equals_extended_warmup() {
    let ds = tiny_data(4);
    let (a, _) = train(&ds, &TrainConfig { lambda: 0.0, ..tiny_config() }).unwrap();
    let (b, _) = train(&ds, &TrainConfig { warmup_epochs: 3, ..tiny_config() }).unwrap();
    assert_eq!(params_of(&a), params_of(&b));
}

#[test]
fn checkpoint_resume_matches_uninterrupted() {
    let ds = tiny_data(5);
    let cfg = TrainConfig { epochs: 5, warmup_epochs: 2, ..tiny_config() };
    let (full, full_log) = train(&ds, &cfg).unwrap();

    let data = ViewData::new(&ds, cfg.log_magnitude);
    let mut st = init_state(&ds, &cfg).unwrap();
    let mut log = MetricLog::default();
    continue_training(&mut st, &data, 3, &mut log).unwrap();
    let bytes = checkpoint::to_bytes(&st).unwrap();
    let mut resumed = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(resumed, st);
    continue_training(&mut resumed, &data, 5, &mut log).unwrap();
    assert_eq!(log.losses(), full_log.losses());
    assert_eq!(resumed, full);
    assert_eq!(checkpoint::to_bytes(&resumed).unwrap(), checkpoint::to_bytes(&full).unwrap());
}

#[test]
fn zero_gamma_keeps_refresh_output() {
    let ds = tiny_data(6);
    let cfg = TrainConfig { epochs: 2, warmup_epochs: 1, gamma: 0.0, ..tiny_config() };
    let data = ViewData::new(&ds, false);
    let mut st = init_state(&ds, &cfg).unwrap();
    let mut log = MetricLog::default();
    continue_training(&mut st, &data, 1, &mut log).unwrap();
    let mut refreshed = st.clone();
    refresh_bank(&mut refreshed, &data, 1).unwrap();
    continue_training(&mut st, &data, 2, &mut log).unwrap();
    let (a, b) = (st.bank.unwrap(), refreshed.bank.unwrap());
    for (x, y) in a.ways.iter().zip(&b.ways) {
        assert_eq!((&x.assign_h, &x.assign_g, &x.cross_h, &x.cross_g), (&y.assign_h, &y.assign_g, &y.cross_h, &y.cross_g));
        // only re-normalization rounding separates the intra prototypes
        for (p, q) in [(&x.intra_h, &y.intra_h), (&x.intra_g, &y.intra_g)] {
            assert!(p.iter().zip(q.iter()).all(|(u, v)| (u - v).abs() < 1e-12));
        }
    }
}

#[test]
fn moving_averaged_prototypes_stay_unit_length() {
    let ds = tiny_data(6);
    let cfg = TrainConfig { epochs: 3, warmup_epochs: 1, gamma: 0.3, ..tiny_config() };
    let (st, _) = train(&ds, &cfg).unwrap();
    for way in &st.bank.unwrap().ways {
        for row in way.intra_h.rows().into_iter().chain(way.intra_g.rows()) {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn every_instance_finds_its_cross_prototype() {
    let ds = tiny_data(7);
    let (st, _) = train(&ds, &tiny_config()).unwrap();
    let bank = st.bank.unwrap();
    assert_eq!(bank.sizes(), vec![3, 6]);
    for way in &bank.ways {
        for i in 0..ds.n {
            way.select_cross_prototype(i, ds.n).unwrap();
        }
    }
}

#[test]
fn moving_average_moves_prototypes() {
    let ds = tiny_data(6);
    let cfg = TrainConfig { epochs: 2, warmup_epochs: 1, gamma: 0.5, ..tiny_config() };
    let data = ViewData::new(&ds, false);
    let mut st = init_state(&ds, &cfg).unwrap();
    let mut log = MetricLog::default();
    continue_training(&mut st, &data, 1, &mut log).unwrap();
    let mut refreshed = st.clone();
    refresh_bank(&mut refreshed, &data, 1).unwrap();
    continue_training(&mut st, &data, 2, &mut log).unwrap();
    let (a, b) = (&st.bank.unwrap().ways[0], &refreshed.bank.unwrap().ways[0]);
    assert_ne!(a.intra_h, b.intra_h);
    assert_eq!(a.cross_h, b.cross_h);
}

#[test]
fn semi_supervised_full_labels_use_class_means() {
    let ds = tiny_data(8);
    let cfg = TrainConfig { epochs: 2, warmup_epochs: 1, ..tiny_config() };
    let subset = label_subset(&ds, 1.0, 0).unwrap();
    let (st, log) = train_semi_supervised(&ds, &subset, &cfg).unwrap();
    assert!(log.epochs.iter().all(|e| e.mode == "semi_supervised"));
    // a refresh of the trained state sets the K-way to the class means
    let data = ViewData::new(&ds, false);
    let mut st = st;
    refresh_bank(&mut st, &data, 2).unwrap();
    let (h, g) = embed_views(&st, &data).unwrap();
    let labels = ds.labels.clone().unwrap();
    let hn = l2_normalize_rows(h.unwrap().view());
    let gn = l2_normalize_rows(g.unwrap().view());
    let way = &st.bank.as_ref().unwrap().ways[0];
    assert_eq!(way.c, 3);
    let mh = semi_supervised_prototypes(hn.view(), &labels, 3).unwrap();
    let mg = semi_supervised_prototypes(gn.view(), &labels, 3).unwrap();
    assert!((&way.intra_h - &mh).iter().all(|v| v.abs() < 1e-12));
    assert!((&way.intra_g - &mg).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn semi_supervised_rejects_bad_subsets() {
    let ds = tiny_data(9);
    let cfg = tiny_config();
    let outside = LabeledSubset { indices: vec![0, 8, 16, ds.n + 3] };
    assert!(train_semi_supervised(&ds, &outside, &cfg).is_err());
    let missing = LabeledSubset { indices: vec![0, 1, 8] };
    let err = train_semi_supervised(&ds, &missing, &cfg).unwrap_err().to_string();
    assert!(err.contains("class 2"), "{err}");
    let no_k = TrainConfig { prototype_ways: vec![4, 8], ..cfg };
    assert!(train_semi_supervised(&ds, &label_subset(&ds, 0.5, 0).unwrap(), &no_k).is_err());
}

#[test]
fn non_finite_aborts_with_context() {
    let ds = tiny_data(10);
    let cfg = TrainConfig { epochs: 4, warmup_epochs: 1, ..tiny_config() };
    let data = ViewData::new(&ds, false);
    let mut st = init_state(&ds, &cfg).unwrap();
    let mut log = MetricLog::default();
    continue_training(&mut st, &data, 2, &mut log).unwrap();
    st.time.as_mut().unwrap().params.proj_bias[0] = f64::NAN;
    match continue_training(&mut st, &data, 4, &mut log) {
        Err(Error::NonFinite { epoch, .. }) => assert_eq!(epoch, 2),
        other => panic!("expected non-finite abort, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig { batch_size: 1, ..tiny_config() }.validate().is_err());
    assert!(TrainConfig { warmup_epochs: 4, ..tiny_config() }.validate().is_err());
    assert!(TrainConfig { gamma: 1.5, ..tiny_config() }.validate().is_err());
    let unl = TrainConfig::default();
    assert!(unl.resolve_ways(None).is_err());
    assert_eq!(unl.resolve_ways(Some(4)).unwrap(), vec![4, 8]);
    assert_eq!(TrainConfig { num_prototypes: Some(3), ..unl }.resolve_ways(None).unwrap(), vec![3, 6]);
    let p = TrainConfig::preset("HAR").unwrap();
    assert_eq!((p.epochs, p.batch_size), (30, 256));
    assert_eq!(TrainConfig::preset("epilepsy").unwrap().epochs, 40);
    assert!(TrainConfig::preset("nope").is_none());
}

#[test]
fn config_json_round_trip() {
    let c = TrainConfig {
        mode: TrainMode::SemiSupervised { labeled_fraction: 0.1 },
        ..tiny_config()
    };
    let s = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
    let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 7}"#).unwrap();
    assert_eq!(partial.epochs, 7);
    assert_eq!(partial.batch_size, 64);
}

#[test]
fn transfer_requires_channel_shared() {
    let ds = tiny_data(11);
    let cfg = TrainConfig { epochs: 1, warmup_epochs: 1, ..tiny_config() };
    let (st, _) = train(&ds, &cfg).unwrap();
    assert!(finetune_transfer(&st, &ds, &cfg).is_err());
}

#[test]
fn transfer_on_single_channel_is_continued_training() {
    let ds = tiny_data(12);
    let mut cfg = TrainConfig { epochs: 2, warmup_epochs: 1, ..tiny_config() };
    cfg.encoder.channel_shared = true;
    let (pre, _) = train(&ds, &cfg).unwrap();
    let (a, la) = finetune_transfer(&pre, &ds, &cfg).unwrap();
    // manual: pretrained weights, fresh optimizer and bank, epochs from 0
    let mut manual = init_state(&ds, &cfg).unwrap();
    manual.time.as_mut().unwrap().params = pre.time.as_ref().unwrap().params.clone();
    manual.freq.as_mut().unwrap().params = pre.freq.as_ref().unwrap().params.clone();
    let mut lb = MetricLog::default();
    continue_training(&mut manual, &ViewData::new(&ds, false), 2, &mut lb).unwrap();
    assert_eq!(la.losses(), lb.losses());
    assert_eq!(a, manual);
}

#[test]
fn transfer_across_channel_counts() {
    let src = standardize(&generate_synthetic(6, 32, 2, 3, 1).unwrap(), &[]).unwrap().0;
    let dst = standardize(&generate_synthetic(6, 32, 3, 3, 2).unwrap(), &[]).unwrap().0;
    let mut cfg = TrainConfig { epochs: 2, warmup_epochs: 1, ..tiny_config() };
    cfg.encoder.channel_shared = true;
    let (pre, _) = train(&src, &cfg).unwrap();
    let (post, log) = finetune_transfer(&pre, &dst, &cfg).unwrap();
    assert_eq!(post.epoch, 2);
    assert!(log.batches.iter().all(|r| r.total.is_finite()));
}

#[test]
fn logs_serialize() {
    let ds = tiny_data(13);
    let cfg = TrainConfig { epochs: 2, warmup_epochs: 1, track_nmi: true, ..tiny_config() };
    let (_, log) = train(&ds, &cfg).unwrap();
    let csv = log.loss_csv().unwrap();
    assert!(csv.starts_with("epoch,batch,inst_h,inst_g,cot_h,cot_g,total\n"));
    assert_eq!(csv.lines().count(), log.batches.len() + 1);
    let jsonl = log.epochs_jsonl().unwrap();
    assert_eq!(jsonl.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    for key in ["epoch", "phase", "mode", "inst_h", "total", "nmi", "wall_time_s"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert!(log.epochs.iter().all(|e| e.nmi.is_some_and(|v| (0.0..=1.0).contains(&v))));
}
