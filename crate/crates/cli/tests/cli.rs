use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SPEC: &str = r#"
n_records = 60
min_token_count = 2
annotated_fraction = 1.0

[[relations]]
name = "processedBy"
prefix = "P"
tokens = 3
coverage = 1.0
extra_tag_prob = 0.0
max_tags = 1
zipf_exponent = 1.0
coupling = 0.0

[[relations]]
name = "hasCrystalStructure"
prefix = "C"
tokens = 3
coverage = 1.0
extra_tag_prob = 0.0
max_tags = 1
zipf_exponent = 1.0
coupling = 3.0
"#;

const RUN: &str = "hidden = 8\nepochs = 12\nearly_stop_patience = 5\nfolds = 3\n";

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let s = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(s.path("spec.toml"), SPEC).unwrap();
        std::fs::write(s.path("run.toml"), RUN).unwrap();
        let out = s.nrkg(&["gen", "--config", "spec.toml", "--seed", "3", "--out", "data"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        s
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn nrkg(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_nrkg"))
            .args(args)
            .current_dir(self.dir.path())
            .env("NRKG_THREADS", "1")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.nrkg(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

fn listing(root: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    text
}

#[test]
fn gen_is_reproducible_and_records_its_truth() {
    let s = Sandbox::new();
    s.ok(&["gen", "--config", "spec.toml", "--seed", "3", "--out", "again"]);
    for f in ["records.csv", "ground_truth.json", "manifest.json"] {
        assert_eq!(s.read(&format!("data/{f}")), s.read(&format!("again/{f}")), "{f}");
    }
    let truth: serde_json::Value = serde_json::from_str(&s.read("data/ground_truth.json")).unwrap();
    assert_eq!(truth["spec"]["seed"], 3);
    assert_eq!(s.read("data/records.csv").lines().count(), 61);
    s.ok(&["gen", "--config", "spec.toml", "--seed", "4", "--out", "other"]);
    assert_ne!(s.read("data/records.csv"), s.read("other/records.csv"));
}

#[test]
fn train_is_deterministic_and_matches_its_cv_fold() {
    let s = Sandbox::new();
    let args = |out: &'static str| {
        vec![
            "train",
            "--config",
            "run.toml",
            "--records",
            "data/records.csv",
            "--fold",
            "1",
            "--out",
            out,
        ]
    };
    s.ok(&args("a"));
    s.ok(&args("b"));
    for f in ["checkpoint.json", "history.csv", "report.json"] {
        assert_eq!(s.read(&format!("a/{f}")), s.read(&format!("b/{f}")), "{f}");
    }
    s.ok(&[
        "cv",
        "--config",
        "run.toml",
        "--records",
        "data/records.csv",
        "--out",
        "cv",
    ]);
    assert_eq!(s.read("a/checkpoint.json"), s.read("cv/checkpoints/fold_1.json"));
    let report: serde_json::Value = serde_json::from_str(&s.read("a/report.json")).unwrap();
    let cv: serde_json::Value = serde_json::from_str(&s.read("cv/report.json")).unwrap();
    assert_eq!(report["predictions"], cv["folds"][1]["predictions"]);
}

#[test]
fn cv_writes_reports_checkpoints_and_manifest() {
    let s = Sandbox::new();
    let stdout = s.ok(&[
        "cv",
        "--config",
        "run.toml",
        "--records",
        "data/records.csv",
        "--link-relation",
        "hasCrystalStructure",
        "--baseline-trials",
        "5",
        "--out",
        "runs/cv",
    ]);
    assert!(stdout.contains("MSE") && stdout.contains("MRR"), "{stdout}");
    assert_eq!(
        listing(&s.path("runs/cv")),
        [
            "checkpoints",
            "config.toml",
            "manifest.json",
            "report.csv",
            "report.json"
        ]
    );
    assert_eq!(listing(&s.path("runs/cv/checkpoints")).len(), 3);
    assert_eq!(s.read("runs/cv/report.csv").lines().count(), 5);

    let manifest: serde_json::Value = serde_json::from_str(&s.read("runs/cv/manifest.json")).unwrap();
    assert_eq!(manifest["command"], "cv");
    assert_eq!(manifest["config"]["train"]["hidden"], 8);
    assert_eq!(manifest["config"]["run"]["baseline_trials"], 5);
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    assert!(inputs.iter().all(|i| i["sha256"].as_str().unwrap().len() == 64));

    // the effective config replays the run
    s.ok(&["cv", "--config", "runs/cv/config.toml", "--out", "replay"]);
    assert_eq!(s.read("runs/cv/report.json"), s.read("replay/report.json"));
}

#[test]
fn predict_writes_id_prediction_rows_in_input_order() {
    let s = Sandbox::new();
    s.ok(&["build-kg", "--records", "data/records.csv", "--out", "kg"]);
    s.ok(&[
        "train",
        "--config",
        "run.toml",
        "--records",
        "data/records.csv",
        "--out",
        "tr",
    ]);
    let records = s.read("data/records.csv");
    let mut lines: Vec<&str> = records.lines().collect();
    let header = lines.remove(0);
    let picked: Vec<String> = [7, 2, 40]
        .iter()
        .map(|&i| format!("new{i}{}", &lines[i][lines[i].find(',').unwrap()..]))
        .collect();
    std::fs::write(s.path("new.csv"), format!("{header}\n{}\n", picked.join("\n"))).unwrap();

    let stdout = s.ok(&[
        "predict",
        "--checkpoint",
        "tr/checkpoint.json",
        "--graph",
        "kg/kg.json",
        "--records",
        "new.csv",
        "--out",
        "pr",
    ]);
    let csv = s.read("pr/predictions.csv");
    assert_eq!(stdout, csv);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "id,prediction");
    let ids: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["new7", "new2", "new40"]);
    assert!(rows[1..]
        .iter()
        .all(|r| r.split(',').nth(1).unwrap().parse::<f64>().unwrap().is_finite()));

    // a records file works as the graph too
    s.ok(&[
        "predict",
        "--checkpoint",
        "tr/checkpoint.json",
        "--graph",
        "data/records.csv",
        "--records",
        "new.csv",
        "--out",
        "pr2",
    ]);
    assert_eq!(csv, s.read("pr2/predictions.csv"));
}

#[test]
fn sweep_linkpred_and_export_produce_their_files() {
    let s = Sandbox::new();
    let stdout = s.ok(&[
        "sweep",
        "--config",
        "run.toml",
        "--records",
        "data/records.csv",
        "--axis",
        "mask-fraction",
        "--values",
        "0,1",
        "--out",
        "sw",
    ]);
    assert!(stdout.starts_with("mask_fraction,"));
    assert_eq!(s.read("sw/sweep.csv").lines().count(), 3);

    s.ok(&[
        "train",
        "--config",
        "run.toml",
        "--records",
        "data/records.csv",
        "--out",
        "tr",
    ]);
    s.ok(&[
        "linkpred",
        "--checkpoint",
        "tr/checkpoint.json",
        "--graph",
        "data/records.csv",
        "--relation",
        "hasCrystalStructure",
        "--out",
        "lp",
    ]);
    let lp: serde_json::Value = serde_json::from_str(&s.read("lp/linkpred.json")).unwrap();
    assert!(lp["model"]["mrr"].as_f64().unwrap() > 0.0);
    // validation and test proxies of the fold, one crystal tag each
    assert_eq!(lp["model"]["queries"], 40);

    s.ok(&[
        "export",
        "--checkpoint",
        "tr/checkpoint.json",
        "--graph",
        "data/records.csv",
        "--out",
        "ex",
    ]);
    // 60 proxies and 6 tokens, plus the header
    assert_eq!(s.read("ex/embeddings.tsv").lines().count(), 67);
}

#[test]
fn nothing_is_written_outside_out() {
    let s = Sandbox::new();
    let before = listing(s.dir.path());
    s.ok(&[
        "cv",
        "--config",
        "run.toml",
        "--records",
        "data/records.csv",
        "--out",
        "only/here",
    ]);
    let mut after = listing(s.dir.path());
    after.retain(|n| n != "only");
    assert_eq!(before, after);
    assert_eq!(
        listing(&s.path("data")),
        ["ground_truth.json", "manifest.json", "records.csv"]
    );
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let s = Sandbox::new();
    let usage = s.nrkg(&["cv", "--records", "data/records.csv", "--bogus", "--out", "x"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(s.nrkg(&["frobnicate"]).status.code(), Some(2));

    let missing = s.nrkg(&["cv", "--records", "data/records.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr_line(&missing).starts_with("error: --out is required"));

    std::fs::write(s.path("bad.toml"), "hiden = 3\n").unwrap();
    let unknown = s.nrkg(&[
        "cv",
        "--config",
        "bad.toml",
        "--records",
        "data/records.csv",
        "--out",
        "x",
    ]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(stderr_line(&unknown).contains("hiden"));

    let absent = s.nrkg(&["train", "--records", "nope.csv", "--out", "x"]);
    assert_eq!(absent.status.code(), Some(1));
    stderr_line(&absent);

    let fold = s.nrkg(&[
        "train",
        "--config",
        "run.toml",
        "--records",
        "data/records.csv",
        "--fold",
        "9",
        "--out",
        "x",
    ]);
    assert_eq!(fold.status.code(), Some(2));
    assert!(stderr_line(&fold).contains("--fold 9"));

    assert_eq!(s.nrkg(&["--help"]).status.code(), Some(0));
}
