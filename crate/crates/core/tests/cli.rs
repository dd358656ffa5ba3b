use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tscot::checkpoint;
use tscot::dataset::{load_dataset, write_dataset, TimeSeriesDataset};

fn tscot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tscot")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"{
  "train": {
    "epochs": 2, "warmup_epochs": 1, "batch_size": 10,
    "encoder": {"levels": 2, "channels_per_level": [4, 8], "kernel_size": 3, "embedding_dim": 8}
  },
  "eval": {"test_fraction": 0.3}
}"#;

struct Fixture {
    dir: tempfile::TempDir,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.tsd");
    let o = tscot(&["synth", "--classes", "3", "--per-class", "10", "--length", "32", "--seed", "7", "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let config = dir.path().join("cfg.json");
    fs::write(&config, TINY).unwrap();
    Fixture { dir, data, config }
}

fn train_run(f: &Fixture, name: &str, extra: &[&str]) -> PathBuf {
    let out = f.dir.path().join(name);
    let mut args = vec!["train", "--data", p(&f.data), "--config", p(&f.config), "--out", p(&out)];
    args.extend_from_slice(extra);
    let o = tscot(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn synth_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tsd");
    let b = dir.path().join("b.tsd");
    for out in [&a, &b] {
        let o = tscot(&["synth", "--classes", "4", "--per-class", "64", "--length", "64", "--seed", "7", "--out", p(out)]);
        assert_eq!(code(&o), 0);
        assert!(String::from_utf8_lossy(&o.stdout).contains("n=256"));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ds = load_dataset(&a).unwrap();
    assert_eq!((ds.n, ds.t, ds.d, ds.class_count), (256, 64, 1, Some(4)));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&tscot(&["synth", "--classes", "4"])), 2);
    assert_eq!(code(&tscot(&["frobnicate"])), 2);
    let f = fixture();
    let out = f.dir.path().join("r");
    let o = tscot(&["train", "--data", p(&f.data), "--config", p(&f.config), "--out", p(&out), "--mode", "weird"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&tscot(&["train", "--config", p(&f.config), "--out", p(&out)])), 2);
    assert_eq!(code(&tscot(&["synth", "--classes", "1", "--out", p(&out)])), 2);
}

#[test]
fn help_documents_flags() {
    let o = tscot(&["train", "--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--data", "--config", "--out", "--seed", "--labeled-fraction", "--lambda", "--gamma", "--proto-tau"] {
        assert!(text.contains(flag), "{flag}");
    }
    assert_eq!(code(&tscot(&["--help"])), 0);
}

#[test]
fn train_writes_outputs_that_restore() {
    let f = fixture();
    let out = train_run(&f, "run", &[]);
    for name in ["checkpoint.tsckpt", "loss.csv", "epochs.jsonl", "config.json", "meta.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let st = checkpoint::restore(&out.join("checkpoint.tsckpt")).unwrap();
    assert_eq!(st.epoch, 2);
    assert!(st.stats.is_some());
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["schema_version"], 1);
    assert_eq!(echo["train"]["epochs"], 2);
    let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert!(csv.starts_with("epoch,batch,inst_h,inst_g,cot_h,cot_g,total"));
}

#[test]
fn flags_override_config_file() {
    let f = fixture();
    let out = train_run(&f, "run", &["--epochs", "3", "--seed", "4"]);
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["train"]["epochs"], 3);
    assert_eq!(echo["train"]["seed"], 4);
    assert_eq!(echo["train"]["batch_size"], 10);
    assert_eq!(checkpoint::restore(&out.join("checkpoint.tsckpt")).unwrap().epoch, 3);
}

#[test]
fn echoed_config_reproduces_run() {
    let f = fixture();
    let a = train_run(&f, "a", &["--seed", "9"]);
    let b = f.dir.path().join("b");
    let o = tscot(&["train", "--config", p(&a.join("config.json")), "--out", p(&b)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("checkpoint.tsckpt")).unwrap(), fs::read(b.join("checkpoint.tsckpt")).unwrap());
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let f = fixture();
    let a = train_run(&f, "a", &["--seed", "1"]);
    let b = train_run(&f, "b", &["--seed", "1"]);
    for name in ["checkpoint.tsckpt", "loss.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = train_run(&f, "c", &["--seed", "2"]);
    assert_ne!(fs::read(a.join("loss.csv")).unwrap(), fs::read(c.join("loss.csv")).unwrap());
}

#[test]
fn semi_mode_is_recorded() {
    let f = fixture();
    let out = train_run(&f, "semi", &["--mode", "semi", "--labeled-fraction", "0.1"]);
    let jsonl = fs::read_to_string(out.join("epochs.jsonl")).unwrap();
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["mode"], "semi_supervised");
    }
    assert!(checkpoint::restore(&out.join("checkpoint.tsckpt")).unwrap().labeled.is_some());
}

#[test]
fn numeric_failure_exits_3() {
    let f = fixture();
    let out = f.dir.path().join("nan");
    let o = tscot(&["train", "--data", p(&f.data), "--config", p(&f.config), "--out", p(&out), "--lr", "1e300"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
    assert!(out.join("loss.csv").exists());
    assert!(!out.join("checkpoint.tsckpt").exists());
}

#[test]
fn io_errors_exit_4() {
    let f = fixture();
    let missing = f.dir.path().join("nope.tsd");
    let out = f.dir.path().join("r");
    assert_eq!(code(&tscot(&["train", "--data", p(&missing), "--out", p(&out)])), 4);
    let junk = f.dir.path().join("junk.tsd");
    fs::write(&junk, b"not a dataset").unwrap();
    assert_eq!(code(&tscot(&["train", "--data", p(&junk), "--out", p(&out)])), 4);
    assert_eq!(code(&tscot(&["eval", "--checkpoint", p(&junk), "--data", p(&f.data)])), 4);
}

#[test]
fn eval_report_schema_and_determinism() {
    let f = fixture();
    let run = train_run(&f, "run", &[]);
    let ck = run.join("checkpoint.tsckpt");
    let r1 = f.dir.path().join("r1.json");
    let r2 = f.dir.path().join("r2.json");
    for r in [&r1, &r2] {
        let o = tscot(&["eval", "--checkpoint", p(&ck), "--data", p(&f.data), "--seed", "3", "--out", p(r)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r1).unwrap()).unwrap();
    for key in ["accuracy", "auroc", "nmi", "l2", "per_class", "schema_version"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["embedding_width"], 16);
    let rt = f.dir.path().join("t.json");
    let o = tscot(&["eval", "--checkpoint", p(&ck), "--data", p(&f.data), "--variant", "T", "--out", p(&rt)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&rt).unwrap()).unwrap();
    assert_eq!(v["embedding_width"], 8);
    assert_eq!(v["variant"], "T");
}

#[test]
fn eval_without_labels_exits_5() {
    let f = fixture();
    let run = train_run(&f, "run", &[]);
    let ds = load_dataset(&f.data).unwrap();
    let unlabeled = TimeSeriesDataset::new("u", ds.n, ds.t, ds.d, ds.samples.clone(), None, None).unwrap();
    let path = f.dir.path().join("u.tsd");
    write_dataset(&unlabeled, &path).unwrap();
    let o = tscot(&["eval", "--checkpoint", p(&run.join("checkpoint.tsckpt")), "--data", p(&path)]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let f = fixture();
    let out = f.dir.path().join("sweep");
    let o = tscot(&[
        "sweep", "--data", p(&f.data), "--config", p(&f.config), "--out", p(&out),
        "--kind", "missing", "--levels", "0,0.1,0.3", "--seeds", "0,1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let header = fs::read_to_string(out.join("sweep.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "kind,level,seed,variant,accuracy,auroc");
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[0] == "missing" && r[3] == "full"));
    assert!(out.join("config.json").exists() && out.join("meta.json").exists());
}

#[test]
fn ablate_writes_variants_by_seeds() {
    let f = fixture();
    let out = f.dir.path().join("abl");
    let o = tscot(&[
        "ablate", "--data", p(&f.data), "--config", p(&f.config), "--out", p(&out),
        "--variants", "T,F,T+F,full", "--seeds", "0,1,2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("ablation.csv"));
    assert_eq!(rows.len(), 12);
    let variants: Vec<&str> = rows.iter().take(4).map(|r| r[0].as_str()).collect();
    assert_eq!(variants, ["T", "F", "T+F", "full"]);
}

#[test]
fn failing_sweep_keeps_flushed_rows() {
    // a huge learning rate survives the clean cell's first seed only if
    // training is short; use a per-seed failure instead: seed 0 trains,
    // then the second cell aborts on non-finite values
    let f = fixture();
    let out = f.dir.path().join("sweep");
    let o = tscot(&[
        "sweep", "--data", p(&f.data), "--config", p(&f.config), "--out", p(&out),
        "--kind", "gaussian", "--levels", "0,1e200", "--seeds", "0",
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&out.join("sweep.csv")).len(), 1);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["status"], "failed");
}
