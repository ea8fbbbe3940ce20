use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use berrysmith_core::edges::DcedParams;
use berrysmith_core::fixtures::{write_corpus, CorpusSpec, CORPUS_MANIFEST, CORPUS_MASKS};
use berrysmith_core::masks::{decode_maskset, encode_maskset};
use berrysmith_core::pipeline::{
    mask_manifest_path, DatasetManifest, SyntheticRecord, RECORDS_FILE, SYNTHETIC_MANIFEST_FILE,
};
use berrysmith_core::tuner::{enumerate_grid, GridSpec, Label, TunedDced};
use tempfile::TempDir;

fn berrysmith(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_berrysmith"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_exit(o: &Output, code: i32) {
    assert_eq!(
        o.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout(o),
        stderr(o)
    );
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        write_corpus(&dir.path().join("data"), &CorpusSpec::default()).unwrap();
        let model = TunedDced {
            params: DcedParams::new(3, 0.0, 25.0, 25.0, 200.0).unwrap(),
            count_threshold: 10.5,
            train_balanced_accuracy: 1.0,
            val_balanced_accuracy: None,
        };
        fs::write(
            dir.path().join("model.json"),
            serde_json::to_vec_pretty(&model).unwrap(),
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn s(&self, rel: &str) -> String {
        self.path(rel).display().to_string()
    }

    fn manifest(&self) -> String {
        self.s(&format!("data/{CORPUS_MANIFEST}"))
    }

    fn masks(&self) -> String {
        self.s(&format!("data/{CORPUS_MASKS}"))
    }

    fn generate(&self, out: &str, extra: &[&str]) -> Output {
        let (manifest, model, masks, out) =
            (self.manifest(), self.s("model.json"), self.masks(), self.s(out));
        let mut args = vec![
            "generate", "--manifest", &manifest, "--model", &model, "--mask-root", &masks,
            "--output-root", &out,
        ];
        args.extend_from_slice(extra);
        berrysmith(&args)
    }
}

fn records(out: &Path) -> Vec<SyntheticRecord> {
    fs::read_to_string(out.join(RECORDS_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn tune_writes_model_and_full_report() {
    let f = Fixture::new();
    let (manifest, out) = (f.manifest(), f.s("tuned"));
    let args = [
        "tune", "--manifest", &manifest, "--output-root", &out, "--kernels", "3,5",
        "--thresholds", "0,25,50,100,200",
    ];
    let first = berrysmith(&args);
    assert_exit(&first, 0);
    let grid = GridSpec {
        threshold_values: vec![0.0, 25.0, 50.0, 100.0, 200.0],
        kernel_sizes: vec![3, 5],
    };
    let expected = enumerate_grid(&grid).unwrap().count();
    let report = fs::read_to_string(f.path("tuned/tune_report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next(),
        Some("kernel_size,wth_min,wth_max,nth_min,nth_max,count_threshold,train_balanced_accuracy")
    );
    assert_eq!(lines.count(), expected);

    let model_bytes = fs::read(f.path("tuned/tuned_dced.json")).unwrap();
    let model: TunedDced = serde_json::from_slice(&model_bytes).unwrap();
    assert!(model.train_balanced_accuracy > 0.9, "{model:?}");

    let again = berrysmith(&args);
    assert_exit(&again, 0);
    assert_eq!(fs::read(f.path("tuned/tuned_dced.json")).unwrap(), model_bytes);
}

#[test]
fn tune_with_validation_fold() {
    let f = Fixture::new();
    let (manifest, out) = (f.manifest(), f.s("out"));
    let split = berrysmith(&["split", "--manifest", &manifest, "--output-root", &out]);
    assert_exit(&split, 0);
    // Fold paths stay relative to the corpus.
    let folds = f.path("data/folds.json");
    fs::copy(f.path("out/folds.json"), &folds).unwrap();
    let o = berrysmith(&[
        "tune", "--manifest", &folds.display().to_string(), "--output-root", &out,
        "--val-fold", "0", "--kernels", "3", "--thresholds", "0,25,100,200",
    ]);
    assert_exit(&o, 0);
    assert!(stdout(&o).contains("val_ba="), "{}", stdout(&o));
    let model: TunedDced =
        serde_json::from_slice(&fs::read(f.path("out/tuned_dced.json")).unwrap()).unwrap();
    assert!(model.val_balanced_accuracy.is_some());

    let unsplit = berrysmith(&[
        "tune", "--manifest", &manifest, "--output-root", &out, "--val-fold", "0",
    ]);
    assert_exit(&unsplit, 3);
}

#[test]
fn missing_manifest_is_a_data_error_naming_the_path() {
    let f = Fixture::new();
    let missing = f.s("nowhere/manifest.json");
    let o = berrysmith(&["tune", "--manifest", &missing, "--output-root", &f.s("out")]);
    assert_exit(&o, 3);
    assert!(stderr(&o).contains(&missing), "{}", stderr(&o));
    assert!(!f.path("out").exists());
}

#[test]
fn usage_errors_exit_2() {
    let f = Fixture::new();
    assert_exit(&berrysmith(&["tune"]), 2);
    assert_exit(&berrysmith(&["frobnicate"]), 2);
    let manifest = f.manifest();
    assert_exit(&berrysmith(&["tune", "--manifest", &manifest]), 2);
    assert_exit(
        &berrysmith(&["tune", "--manifest", &manifest, "--output-root", "x", "--workers", "0"]),
        2,
    );
    assert_exit(
        &berrysmith(&[
            "tune", "--manifest", &manifest, "--output-root", "x", "--thresholds", "5,1",
        ]),
        2,
    );
    let cfg = f.path("bad.toml");
    fs::write(&cfg, "seed = \"many\"\n").unwrap();
    assert_exit(
        &berrysmith(&["split", "--manifest", &manifest, "--config", &cfg.display().to_string()]),
        2,
    );
    // Generation needs masks from somewhere.
    let model = f.s("model.json");
    let o = berrysmith(&[
        "generate", "--manifest", &manifest, "--model", &model, "--output-root", "x",
    ]);
    assert_exit(&o, 2);
    assert_exit(&berrysmith(&["--help"]), 0);
}

#[test]
fn generate_summary_matches_manifest() {
    let f = Fixture::new();
    let o = f.generate("out", &[]);
    assert_exit(&o, 0);
    assert!(
        stdout(&o).starts_with("generated 10 synthetic images (10 pastes) from 10 anomalous inputs; rejected 0"),
        "{}",
        stdout(&o)
    );
    let m = DatasetManifest::load(&f.path("out").join(SYNTHETIC_MANIFEST_FILE)).unwrap();
    assert_eq!(m.entries.len(), 10);
    for e in &m.entries {
        assert!(f.path("out").join(&e.path).is_file());
        assert_eq!(e.label, Label::Anomalous);
    }
    assert_eq!(records(&f.path("out")).len(), 10);
    assert_eq!(fs::read(f.path("out/rejections.jsonl")).unwrap(), b"");
}

#[test]
fn n_syn_gives_that_many_records_per_image() {
    let f = Fixture::new();
    assert_exit(&f.generate("out", &["--n-syn", "3"]), 0);
    let recs = records(&f.path("out"));
    assert_eq!(recs.len(), 30);
    let mut per_image = std::collections::BTreeMap::<_, usize>::new();
    for r in &recs {
        *per_image.entry(r.output_path.clone()).or_default() += 1;
    }
    assert_eq!(per_image.len(), 10);
    assert!(per_image.values().all(|&n| n == 3));
}

#[test]
fn seed_changes_pairings_not_counts() {
    let f = Fixture::new();
    assert_exit(&f.generate("a", &["--seed", "1"]), 0);
    assert_exit(&f.generate("b", &["--seed", "2"]), 0);
    assert_exit(&f.generate("c", &["--seed", "1"]), 0);
    let pairs = |dir: &str| -> Vec<(String, String)> {
        records(&f.path(dir))
            .into_iter()
            .map(|r| (r.source_anomalous_image, r.destination_image))
            .collect()
    };
    let (a, b) = (pairs("a"), pairs("b"));
    assert_eq!(a.len(), b.len());
    assert_ne!(a, b);
    assert_eq!(
        fs::read(f.path("a").join(RECORDS_FILE)).unwrap(),
        fs::read(f.path("c").join(RECORDS_FILE)).unwrap()
    );
}

#[test]
fn generate_dump_blend_writes_debug_planes() {
    let f = Fixture::new();
    assert_exit(&f.generate("out", &["--dump-blend"]), 0);
    let debug: Vec<_> = fs::read_dir(f.path("out/debug/images")).unwrap().collect();
    assert_eq!(debug.len(), 20);
}

#[test]
fn generate_without_masks_fails_or_falls_back() {
    let f = Fixture::new();
    let (manifest, model) = (f.manifest(), f.s("model.json"));
    let empty = f.path("empty");
    fs::create_dir(&empty).unwrap();
    let empty = empty.display().to_string();
    let o = berrysmith(&[
        "generate", "--manifest", &manifest, "--model", &model, "--mask-root", &empty,
        "--output-root", &f.s("out"),
    ]);
    assert_exit(&o, 3);
    assert!(stderr(&o).contains(".masks.json"), "{}", stderr(&o));

    let o = berrysmith(&[
        "generate", "--manifest", &manifest, "--model", &model, "--fallback-masks",
        "--min-area", "50", "--output-root", &f.s("fb"),
    ]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(3), "{}", stderr(&o));
    assert!(stdout(&o).contains("from 10 anomalous inputs"), "{}", stdout(&o));
}

#[test]
fn classify_prints_metric_columns() {
    let f = Fixture::new();
    let (manifest, model) = (f.manifest(), f.s("model.json"));
    let o = berrysmith(&[
        "classify", "--manifest", &manifest, "--model", &model, "--output-root", &f.s("out"),
        "--dump-edges",
    ]);
    assert_exit(&o, 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for key in ["Balanced Acc.", "F1-Score", "Precision", "Recall"] {
        let x = v[key].as_f64().unwrap_or_else(|| panic!("{key} missing"));
        assert!((0.0..=1.0).contains(&x));
    }
    let total: u64 = ["tp", "tn", "fp", "fn"].iter().map(|k| v[k].as_u64().unwrap()).sum();
    assert_eq!(total, 30);
    assert!(f.path("out/metrics.json").is_file());
    let edges = fs::read_dir(f.path("out/edges/images")).unwrap().count();
    assert_eq!(edges, 90);
}

#[test]
fn split_assigns_every_entry_a_fold() {
    let f = Fixture::new();
    let manifest = f.manifest();
    let out = f.s("out");
    assert_exit(&berrysmith(&["split", "--manifest", &manifest, "-k", "3", "--output-root", &out]), 0);
    let bytes = fs::read(f.path("out/folds.json")).unwrap();
    let m = DatasetManifest::load(&f.path("out/folds.json")).unwrap();
    assert_eq!(m.entries.len(), 30);
    assert!(m.entries.iter().all(|e| e.fold.is_some_and(|k| k < 3)));
    assert_exit(&berrysmith(&["split", "--manifest", &manifest, "--output-root", &out]), 0);
    assert_eq!(fs::read(f.path("out/folds.json")).unwrap(), bytes);
    let escape = berrysmith(&[
        "split", "--manifest", &manifest, "--output-root", &out, "--output", "../up.json",
    ]);
    assert_exit(&escape, 2);
}

#[test]
fn augment_substitution_replaces_all_anomalous() {
    let f = Fixture::new();
    assert_exit(&f.generate("syn", &[]), 0);
    let real = f.manifest();
    let synthetic = f.path("syn").join(SYNTHETIC_MANIFEST_FILE).display().to_string();
    let out = f.s("out");
    let o = berrysmith(&[
        "augment", "--real", &real, "--synthetic", &synthetic, "--mode", "substitution",
        "--pct", "100", "--output-root", &out,
    ]);
    assert_exit(&o, 0);
    let m = DatasetManifest::load(&f.path("out/augmented_substitution_100.json")).unwrap();
    let synthetic_paths: Vec<_> = DatasetManifest::load(Path::new(&synthetic))
        .unwrap()
        .entries
        .into_iter()
        .map(|e| e.path)
        .collect();
    assert_eq!(m.count(Label::Normal), 20);
    assert_eq!(m.count(Label::Anomalous), 10);
    for e in m.entries.iter().filter(|e| e.label == Label::Anomalous) {
        assert!(synthetic_paths.contains(&e.path), "{}", e.path);
    }
    let bad = berrysmith(&[
        "augment", "--real", &real, "--synthetic", &synthetic, "--mode", "addition", "--pct",
        "0", "--output-root", &out,
    ]);
    assert_exit(&bad, 2);
}

#[test]
fn segment_fallback_then_validate() {
    let f = Fixture::new();
    let manifest = f.manifest();
    let out = f.s("fallback");
    let o = berrysmith(&[
        "segment-fallback", "--manifest", &manifest, "--min-area", "50", "--output-root", &out,
    ]);
    assert_exit(&o, 0);
    let m = DatasetManifest::load(Path::new(&manifest)).unwrap();
    let files: Vec<String> = m
        .entries
        .iter()
        .map(|e| mask_manifest_path(&f.path("fallback"), &e.path).display().to_string())
        .collect();
    let mut args = vec!["masks-validate"];
    args.extend(files.iter().map(String::as_str));
    let v = berrysmith(&args);
    assert_exit(&v, 0);
    assert_eq!(stdout(&v).lines().filter(|l| l.starts_with("ok ")).count(), 30);
}

#[test]
fn masks_validate_flags_bad_and_noncanonical_files() {
    let f = Fixture::new();
    let m = DatasetManifest::load(Path::new(&f.manifest())).unwrap();
    let good = mask_manifest_path(&f.path("data/masks"), &m.entries[0].path);
    let bytes = fs::read(&good).unwrap();
    let set = decode_maskset(&bytes).unwrap();
    assert_eq!(encode_maskset(&set), bytes.trim_ascii_end());

    let with_newline = f.path("newline.masks.json");
    let mut padded = bytes.clone();
    padded.extend_from_slice(b"\n\n");
    fs::write(&with_newline, &padded).unwrap();

    let pretty = f.path("pretty.masks.json");
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    fs::write(&pretty, serde_json::to_vec_pretty(&v).unwrap()).unwrap();

    let broken = f.path("broken.masks.json");
    fs::write(&broken, &bytes[..bytes.len() / 2]).unwrap();

    let s = |p: &Path| p.display().to_string();
    let ok = berrysmith(&["masks-validate", &s(&good), &s(&with_newline)]);
    assert_exit(&ok, 0);

    let o = berrysmith(&["masks-validate", &s(&good), &s(&pretty), &s(&broken)]);
    assert_exit(&o, 3);
    let out = stdout(&o);
    assert!(out.contains(&format!("ok {}", s(&good))), "{out}");
    assert!(out.contains(&format!("invalid {}: not in canonical form", s(&pretty))), "{out}");
    assert!(out.contains(&format!("invalid {}", s(&broken))), "{out}");
    assert!(stderr(&o).contains("2 of 3"), "{}", stderr(&o));
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let f = Fixture::new();
    let cfg = f.path("run.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 7\nworkers = 2\n[paths]\nmask_root = {:?}\noutput_root = {:?}\n[generation]\nn_syn = 2\n",
            f.masks(),
            f.s("from_config")
        ),
    )
    .unwrap();
    let (manifest, model, cfg) = (f.manifest(), f.s("model.json"), cfg.display().to_string());
    let o = berrysmith(&["generate", "--config", &cfg, "--manifest", &manifest, "--model", &model]);
    assert_exit(&o, 0);
    assert_eq!(records(&f.path("from_config")).len(), 20);

    let o = berrysmith(&[
        "generate", "--config", &cfg, "--manifest", &manifest, "--model", &model, "--n-syn", "1",
        "--output-root", &f.s("flagged"),
    ]);
    assert_exit(&o, 0);
    assert_eq!(records(&f.path("flagged")).len(), 10);
    assert!(records(&f.path("flagged")).iter().all(|r| r.seed_stream.len() == 16));
}
