use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mbs_core::eval::{sha256_file, PerplexityReport, RunManifest};
use mbs_core::model::{load_checkpoint, load_quantized};
use mbs_core::sampler::CalibrationPlan;
use mbs_core::similarity::DistanceMatrix;
use tempfile::TempDir;

fn mbs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbs"))
        .args(args)
        .current_dir(dir)
        .env_remove("MBS_SEED")
        .output()
        .expect("spawn mbs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mbs(dir, args);
    assert!(
        out.status.success(),
        "mbs {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn bloom() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures/bloom_manifest.json")
        .display()
        .to_string()
}

/// Two-language synthetic corpus and a small trained model in a temp dir.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "synth",
            "--out-dir",
            "data",
            "--lang",
            "A:6000",
            "--lang",
            "B:2000",
            "--eval-bytes",
            "800",
            "--seed",
            "5",
        ],
    );
    ok(
        dir.path(),
        &[
            "train",
            "--manifest",
            "data/manifest.json",
            "--out",
            "dense.bin",
            "--steps",
            "60",
            "--context-k",
            "3",
            "--embed-dim",
            "6",
            "--hidden-dim",
            "16",
            "--seed",
            "1",
        ],
    );
    ok(
        dir.path(),
        &[
            "plan",
            "--manifest",
            "data/manifest.json",
            "--total",
            "8",
            "--out",
            "plan.json",
        ],
    );
    dir
}

#[test]
fn plan_reproduces_reference_allocations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "plan",
            "--policy",
            "mbs",
            "--total",
            "256",
            "--manifest",
            &bloom(),
            "--out",
            "mbs.json",
        ],
    );
    let plan = CalibrationPlan::load(d.join("mbs.json")).unwrap();
    let mut want = vec![87, 47, 37, 31, 14, 13, 7, 4, 3, 3];
    want.extend([1; 10]);
    assert_eq!(plan.counts.values().copied().collect::<Vec<_>>(), want);
    assert!(d.join("mbs.json.run.json").exists());

    ok(
        d,
        &[
            "plan",
            "--policy",
            "equal",
            "--total",
            "256",
            "--manifest",
            &bloom(),
            "--out",
            "eq.json",
        ],
    );
    let eq = CalibrationPlan::load(d.join("eq.json")).unwrap();
    let mut want = vec![13; 16];
    want.extend([12; 4]);
    assert_eq!(eq.counts.values().copied().collect::<Vec<_>>(), want);

    let table = ok(
        d,
        &[
            "plan",
            "--policy",
            "mono",
            "--lang",
            "en",
            "--total",
            "256",
            "--manifest",
            &bloom(),
        ],
    );
    let en = table.lines().find(|l| l.starts_with("en ")).unwrap();
    assert!(en.trim_end().ends_with(" 256"), "{en}");
    let sw = table.lines().find(|l| l.starts_with("sw ")).unwrap();
    assert!(sw.trim_end().ends_with(" 0"), "{sw}");
}

#[test]
fn mono_without_lang_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbs(
        dir.path(),
        &["plan", "--policy", "mono", "--manifest", &bloom()],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_is_deterministic_and_seed_falls_back_to_env() {
    let dir = workspace();
    let d = dir.path();
    let args = |out: &'static str| -> Vec<&'static str> {
        vec![
            "train",
            "--manifest",
            "data/manifest.json",
            "--out",
            out,
            "--steps",
            "60",
            "--context-k",
            "3",
            "--embed-dim",
            "6",
            "--hidden-dim",
            "16",
        ]
    };
    let mut with_seed = args("again.bin");
    with_seed.extend(["--seed", "1"]);
    ok(d, &with_seed);
    assert_eq!(
        sha256_file(d.join("dense.bin")).unwrap(),
        sha256_file(d.join("again.bin")).unwrap()
    );

    let out = Command::new(env!("CARGO_BIN_EXE_mbs"))
        .args(args("env.bin"))
        .current_dir(d)
        .env("MBS_SEED", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(d.join("dense.bin")).unwrap(),
        std::fs::read(d.join("env.bin")).unwrap()
    );

    let run: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(d.join("dense.bin.run.json")).unwrap())
            .unwrap();
    assert_eq!(run.seed, Some(1));
    assert_eq!(
        run.outputs["dense.bin"],
        sha256_file(d.join("dense.bin")).unwrap()
    );
    assert!(run.inputs.contains_key("data/manifest.json"));
}

#[test]
fn missing_corpus_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("m.json"),
        r#"{"languages":[{"id":"A","bytes":10,"train":"gone.txt"}]}"#,
    )
    .unwrap();
    let out = mbs(d, &["train", "--manifest", "m.json", "--out", "x.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gone.txt"));
}

#[test]
fn zero_steps_rejected() {
    let dir = workspace();
    let out = mbs(
        dir.path(),
        &[
            "train",
            "--manifest",
            "data/manifest.json",
            "--out",
            "x.bin",
            "--steps",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x.bin").exists());
}

#[test]
fn config_file_with_flag_override_and_unknown_key() {
    let dir = workspace();
    let d = dir.path();
    std::fs::write(
        d.join("train.json"),
        r#"{"manifest":"data/manifest.json","out":"cfg.bin","steps":60,"context_k":3,"embed_dim":6,"hidden_dim":16,"seed":99}"#,
    )
    .unwrap();
    ok(d, &["train", "--config", "train.json", "--seed", "1"]);
    assert_eq!(
        std::fs::read(d.join("dense.bin")).unwrap(),
        std::fs::read(d.join("cfg.bin")).unwrap()
    );

    std::fs::write(
        d.join("bad.json"),
        r#"{"manifest":"data/manifest.json","stepz":3}"#,
    )
    .unwrap();
    let out = mbs(d, &["train", "--config", "bad.json", "--out", "y.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}

#[test]
fn compress_wanda_writes_report_per_language() {
    let dir = workspace();
    let d = dir.path();
    ok(
        d,
        &[
            "compress",
            "--model",
            "dense.bin",
            "--manifest",
            "data/manifest.json",
            "--plan",
            "plan.json",
            "--method",
            "wanda",
            "--sparsity",
            "0.5",
            "--seg-len",
            "32",
            "--out",
            "w.bin",
            "--report",
            "w.csv",
        ],
    );
    let rep = PerplexityReport::read_csv(d.join("w.csv")).unwrap();
    assert_eq!(
        rep.rows.iter().map(|r| r.lang.as_str()).collect::<Vec<_>>(),
        ["A", "B"]
    );
    let w = load_checkpoint(d.join("w.bin")).unwrap();
    for l in &w.layers {
        let zeros = l.weights.as_slice().iter().filter(|&&v| v == 0.0).count();
        assert!(zeros * 2 >= l.weights.as_slice().len());
    }
    let run: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(d.join("w.bin.run.json")).unwrap()).unwrap();
    assert!(run.outputs.contains_key("w.csv") && run.inputs.contains_key("plan.json"));
    assert_eq!(run.config["method"], "wanda");

    let printed = ok(d, &["report", "--csv", "w.csv"]);
    assert!(printed.lines().any(|l| l.starts_with("average")));
}

#[test]
fn compress_gptq_writes_grid_section() {
    let dir = workspace();
    let d = dir.path();
    ok(
        d,
        &[
            "compress",
            "--model",
            "dense.bin",
            "--manifest",
            "data/manifest.json",
            "--plan",
            "plan.json",
            "--method",
            "gptq",
            "--bits",
            "3",
            "--group",
            "8",
            "--seg-len",
            "32",
            "--out",
            "q.bin",
        ],
    );
    let (ckpt, grids) = load_quantized(d.join("q.bin")).unwrap();
    assert_eq!(grids.len(), ckpt.layers.len());
    for (l, g) in ckpt.layers.iter().zip(&grids) {
        assert_eq!((g.bits, g.group_size), (3, 8));
        g.check_membership(&l.weights).unwrap();
    }
}

#[test]
fn full_sparsity_rejected() {
    let dir = workspace();
    let out = mbs(
        dir.path(),
        &[
            "compress",
            "--model",
            "dense.bin",
            "--manifest",
            "data/manifest.json",
            "--plan",
            "plan.json",
            "--method",
            "sparsegpt",
            "--sparsity",
            "1.0",
            "--out",
            "s.bin",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("s.bin").exists());
}

#[test]
fn similarity_of_identical_languages_is_near_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth",
            "--out-dir",
            "data",
            "--lang",
            "A:6000",
            "--lang",
            "B:6000",
            "--lang",
            "C:6000",
            "--same-source",
            "--eval-bytes",
            "6000",
            "--seed",
            "2",
        ],
    );
    ok(
        d,
        &[
            "train",
            "--manifest",
            "data/manifest.json",
            "--out",
            "m.bin",
            "--steps",
            "100",
            "--context-k",
            "3",
            "--embed-dim",
            "6",
            "--hidden-dim",
            "16",
        ],
    );
    ok(
        d,
        &[
            "similarity",
            "--model",
            "m.bin",
            "--manifest",
            "data/manifest.json",
            "--out",
            "d.csv",
            "--mds-out",
            "x.csv",
            "--mds-dim",
            "2",
        ],
    );
    let m = DistanceMatrix::read_csv(d.join("d.csv")).unwrap();
    for i in 0..3 {
        assert_eq!(m.degrees[(i, i)], 0.0);
        for j in 0..3 {
            assert_eq!(m.degrees[(i, j)], m.degrees[(j, i)]);
            assert!(m.degrees[(i, j)] < 1.0, "angle {}", m.degrees[(i, j)]);
        }
    }
    let coords = std::fs::read_to_string(d.join("x.csv")).unwrap();
    let lines: Vec<&str> = coords.lines().collect();
    assert_eq!(lines[0], "lang,x1,x2");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 3));
}

#[test]
fn bad_seed_env_is_a_config_error() {
    let dir = workspace();
    let out = Command::new(env!("CARGO_BIN_EXE_mbs"))
        .args([
            "train",
            "--manifest",
            "data/manifest.json",
            "--out",
            "x.bin",
            "--steps",
            "1",
        ])
        .current_dir(dir.path())
        .env("MBS_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
