use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use paskit::{read_scores, RunManifest};

fn paskit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paskit"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PASKIT_THREADS")
        .output()
        .expect("binary runs")
}

fn status(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn simulate(cwd: &Path, extra: &[&str]) {
    let mut args = vec![
        "simulate",
        "--out",
        "corpus",
        "--n-traces",
        "30",
        "--seed",
        "5",
    ];
    args.extend(extra);
    let out = paskit(&args, cwd);
    assert_eq!(status(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    simulate(cwd, &[]);
    assert!(cwd.join("corpus/vocab.json").is_file());
    assert!(cwd.join("corpus/labels.csv").is_file());
    assert!(cwd.join("corpus/run.json").is_file());

    assert_eq!(status(&paskit(&["validate", "--corpus", "corpus"], cwd)), 0);
    let score = paskit(
        &[
            "score",
            "--corpus",
            "corpus",
            "--detectors",
            "pas,kl",
            "--out",
            "s.csv",
        ],
        cwd,
    );
    assert_eq!(status(&score), 0);
    let rows = read_scores(&cwd.join("s.csv")).unwrap();
    assert_eq!(rows.len(), 30 * 4 * 2);
    assert!(rows
        .iter()
        .all(|r| r.detector == "pas" || r.detector == "kl"));

    let eval = paskit(
        &[
            "eval", "--scores", "s.csv", "--out", "ev", "--format", "csv,json",
        ],
        cwd,
    );
    assert_eq!(status(&eval), 0);
    let mut names: Vec<String> = fs::read_dir(cwd.join("ev"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "prc_kl.csv",
            "prc_pas.csv",
            "report.json",
            "roc_kl.csv",
            "roc_pas.csv",
            "run.json",
            "summary.csv"
        ]
    );
    let summary = fs::read_to_string(cwd.join("ev/summary.csv")).unwrap();
    assert!(summary.starts_with("detector,auroc,n_real,n_hallucinated,"));
}

#[test]
fn validate_names_broken_file_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    simulate(cwd, &[]);
    let victim = cwd.join("corpus/sim-0000000000000005-000003.past");
    let mut bytes = fs::read(&victim).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&victim, bytes).unwrap();

    let out = paskit(
        &["validate", "--corpus", "corpus", "--report", "report.json"],
        cwd,
    );
    assert_eq!(status(&out), 1);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("FAIL") && stdout.contains("000003.past"),
        "{stdout}"
    );
    assert!(stdout.contains("30 files, 1 failed"));
    let report = fs::read_to_string(cwd.join("report.json")).unwrap();
    assert!(report.contains("000003.past"));
    assert!(cwd.join("report.run.json").is_file());
}

#[test]
fn single_class_scores_exit_one_and_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(
        cwd.join("s.csv"),
        "trace_id,k,class,label,detector,score\nt,10,cat,real,pas,0.5\nt,12,dog,real,pas,0.25\n",
    )
    .unwrap();
    let out = paskit(&["eval", "--scores", "s.csv", "--out", "ev"], cwd);
    assert_eq!(status(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("undefined AUROC"));
    let report = fs::read_to_string(cwd.join("ev/report.json")).unwrap();
    assert!(report.contains("\"failed\"") && report.contains("undefined AUROC"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    simulate(cwd, &[]);
    let cases: [&[&str]; 4] = [
        &[
            "score",
            "--corpus",
            "corpus",
            "--detectors",
            "pas,nope",
            "--out",
            "s.csv",
        ],
        &["simulate", "--out", "x", "--mode-shift", "0.9"],
        &["eval", "--scores"],
        &["frobnicate"],
    ];
    for args in cases {
        assert_eq!(status(&paskit(args, cwd)), 2, "{args:?}");
    }
    let threads = Command::new(env!("CARGO_BIN_EXE_paskit"))
        .args(["validate", "--corpus", "corpus"])
        .current_dir(cwd)
        .env("PASKIT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(status(&threads), 2);
}

#[test]
fn thread_count_does_not_change_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    simulate(cwd, &[]);
    for (threads, out) in [("1", "one.csv"), ("4", "four.csv")] {
        let o = Command::new(env!("CARGO_BIN_EXE_paskit"))
            .args(["score", "--corpus", "corpus", "--out", out])
            .current_dir(cwd)
            .env("PASKIT_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(status(&o), 0);
    }
    assert_eq!(
        fs::read(cwd.join("one.csv")).unwrap(),
        fs::read(cwd.join("four.csv")).unwrap()
    );
}

#[test]
fn config_file_applies_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(
        cwd.join("paskit.toml"),
        "[simulate]\nn_traces = 4\nseed = 99\nlayers = 2\n\n[score]\ndetectors = [\"nll\"]\nlayer = 1\n",
    )
    .unwrap();
    let out = paskit(
        &[
            "--config",
            "paskit.toml",
            "simulate",
            "--out",
            "corpus",
            "--seed",
            "3",
        ],
        cwd,
    );
    assert_eq!(status(&out), 0);
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(cwd.join("corpus/run.json")).unwrap()).unwrap();
    match manifest.run {
        paskit::Run::Simulate { config, .. } => {
            assert_eq!((config.seed, config.n_traces, config.layers), (3, 4, 2));
        }
        other => panic!("unexpected run {other:?}"),
    }
    let out = paskit(
        &[
            "--config",
            "paskit.toml",
            "score",
            "--corpus",
            "corpus",
            "--out",
            "s.csv",
            "--detectors",
            "pas",
        ],
        cwd,
    );
    assert_eq!(status(&out), 0);
    let manifest = fs::read_to_string(cwd.join("s.run.json")).unwrap();
    assert!(manifest.contains("\"layer\": 1"));
    assert!(read_scores(&cwd.join("s.csv"))
        .unwrap()
        .iter()
        .all(|r| r.detector == "pas"));

    fs::write(cwd.join("bad.toml"), "[score]\nthreshold = 2\n").unwrap();
    assert_eq!(
        status(&paskit(
            &["--config", "bad.toml", "validate", "--corpus", "corpus"],
            cwd
        )),
        2
    );
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    simulate(cwd, &[]);
    assert_eq!(
        status(&paskit(
            &["score", "--corpus", "corpus", "--out", "s.csv"],
            cwd
        )),
        0
    );
    assert_eq!(
        status(&paskit(
            &["ablate", "--corpus", "corpus", "--out", "ab"],
            cwd
        )),
        0
    );

    assert_eq!(
        status(&paskit(
            &["replay", "corpus/run.json", "--out", "corpus2"],
            cwd
        )),
        0
    );
    assert_eq!(
        status(&paskit(&["replay", "s.run.json", "--out", "s2.csv"], cwd)),
        0
    );
    assert_eq!(
        status(&paskit(&["replay", "ab/run.json", "--out", "ab2"], cwd)),
        0
    );

    for name in [
        "labels.csv",
        "vocab.json",
        "sim-0000000000000005-000017.past",
    ] {
        assert_eq!(
            fs::read(cwd.join("corpus").join(name)).unwrap(),
            fs::read(cwd.join("corpus2").join(name)).unwrap()
        );
    }
    assert_eq!(
        fs::read(cwd.join("s.csv")).unwrap(),
        fs::read(cwd.join("s2.csv")).unwrap()
    );
    for name in [
        "layer_ablation.csv",
        "role_ablation.csv",
        "correlation.csv",
        "ablation.json",
    ] {
        assert_eq!(
            fs::read(cwd.join("ab").join(name)).unwrap(),
            fs::read(cwd.join("ab2").join(name)).unwrap()
        );
    }
}

#[test]
fn builtin_vocabulary_finds_simulated_mentions() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    simulate(cwd, &[]);
    let out = paskit(
        &[
            "score",
            "--corpus",
            "corpus",
            "--vocab",
            "voc",
            "--detectors",
            "pas",
            "--out",
            "s.csv",
        ],
        cwd,
    );
    assert_eq!(status(&out), 0);
    assert_eq!(read_scores(&cwd.join("s.csv")).unwrap().len(), 30 * 4);
    let missing = paskit(
        &[
            "score",
            "--corpus",
            "corpus",
            "--vocab",
            "nowhere.json",
            "--out",
            "t.csv",
        ],
        cwd,
    );
    assert_eq!(status(&missing), 1);
}
