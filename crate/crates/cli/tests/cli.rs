use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const FAST_CONFIG: &str = r#"{"encoder":{"hidden":16,"max_epochs":40,"lr":0.005},"classifier":{"epochs":60}}"#;
const SMALL_SBM: &[&str] = &[
    "--nodes", "90", "--feature-dim", "30", "--on-bits", "6", "--p-in", "0.15", "--p-out", "0.01", "--flip-noise",
    "0.05",
];

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path("fast.json"), FAST_CONFIG).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_robograph"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(name)).unwrap()).unwrap()
    }

    /// A small synthetic bundle under `bundle/` and its DICE-poisoned copy
    /// under `poisoned/`.
    fn poisoned(&self) -> &Self {
        let mut synth = vec!["--out", "bundle", "synth"];
        synth.extend_from_slice(SMALL_SBM);
        self.ok(&synth);
        self.ok(&["--out", "poisoned", "attack", "--in", "bundle", "--ptb-rate", "0.2"]);
        self
    }
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn attack_writes_record_and_perturbed_edges() {
    let ws = Workspace::new();
    ws.poisoned();
    let record = ws.json("poisoned/perturbation.json");
    let added = record["added"].as_array().unwrap().len();
    let removed = record["removed"].as_array().unwrap().len();
    assert_eq!(added + removed, record["requested"].as_u64().unwrap() as usize);
    let clean = lines(&ws.path("poisoned/edges.tsv"));
    assert_eq!(lines(&ws.path("poisoned/perturbed.tsv")), clean + added - removed);
    assert_eq!(
        fs::read(ws.path("bundle/edges.tsv")).unwrap(),
        fs::read(ws.path("poisoned/edges.tsv")).unwrap()
    );
}

#[test]
fn chained_stages_reproduce_pipeline() {
    let ws = Workspace::new();
    ws.poisoned();
    let cfg = ["--config", "fast.json", "--seed", "3", "--out", "stages"];
    for stage in ["preprocess", "embed", "refine", "train"] {
        let mut args = cfg.to_vec();
        args.extend([stage, "--in", "poisoned"]);
        ws.ok(&args);
    }
    ws.ok(&["--config", "fast.json", "--seed", "3", "--out", "run", "pipeline", "--in", "poisoned"]);

    let run = &ws.json("run/result.json")["runs"][0];
    let train = ws.json("stages/train.json");
    assert_eq!(train["test_accuracy"], run["test_accuracy"]);
    assert_eq!(train["best_epoch"], run["stats"]["classifier_best_epoch"]);
    let refine = ws.json("stages/refine.json");
    assert_eq!(refine["inserted"], run["stats"]["inserted"]);
    assert_eq!(refine["retained"], run["stats"]["retained_edges"]);
    assert_eq!(ws.json("stages/removal.json"), run["removal"]);
    assert_eq!(
        lines(&ws.path("stages/optimal.tsv")),
        run["stats"]["optimal_arcs"].as_u64().unwrap() as usize
    );
}

#[test]
fn pipeline_is_deterministic_and_reportable() {
    let ws = Workspace::new();
    ws.poisoned();
    let args = |out| ["--config", "fast.json", "--seeds", "2", "--out", out, "pipeline", "--in", "poisoned"];
    ws.ok(&args("a"));
    ws.ok(&args("b"));
    assert_eq!(
        fs::read(ws.path("a/result.json")).unwrap(),
        fs::read(ws.path("b/result.json")).unwrap()
    );
    let config = ws.json("a/config.json");
    assert_eq!(config["seeds"], 2);
    assert_eq!(config["encoder"]["max_epochs"], 40);

    let report = ws.ok(&["report", "a/result.json"]);
    assert!(report.contains("stable"), "{report}");
    assert!(report.contains("removal accuracy"), "{report}");
}

#[test]
fn sweep_and_ablate_on_synthetic_graphs() {
    let ws = Workspace::new();
    fs::write(
        ws.path("sbm.json"),
        r#"{"nodes":60,"feature_dim":20,"on_bits":5,"p_in":0.2,"p_out":0.01}"#,
    )
    .unwrap();
    let synthetic = ["--synthetic", "--sbm", "sbm.json", "--attack", "random"];

    let mut sweep = vec!["--config", "fast.json", "--out", "sw", "sweep", "--param", "k", "--values", "0,1"];
    sweep.extend(synthetic);
    let csv = ws.ok(&sweep);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "k,mean,std,mean_retained,mean_inserted");
    assert!(rows[1].ends_with(",0"), "{csv}");
    assert!(rows[2].ends_with(",60"), "{csv}");

    let mut ablate = vec!["--config", "fast.json", "--out", "ab", "ablate", "--variants", "stable-k,gcn"];
    ablate.extend(synthetic);
    ws.ok(&ablate);
    let results = ws.json("ab/ablation.json");
    assert_eq!(results.as_array().unwrap().len(), 2);
    assert_eq!(results[0]["variant"], "stable-k");
    assert_eq!(results[0]["runs"][0]["stats"]["inserted"], 0);
    let table = fs::read_to_string(ws.path("ab/ablation.csv")).unwrap();
    assert!(table.starts_with("variant,mean,std,seeds\nstable-k,"), "{table}");
    assert!(ws.ok(&["report", "ab/ablation.json", "sw/sweep.json"]).contains("gcn"));
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    ws.poisoned();
    let code = |args: &[&str]| ws.run(args).status.code();

    assert_eq!(code(&["pipeline", "--in", "poisoned", "--recover-p", "3"]), Some(2));
    assert_eq!(code(&["pipeline", "--in", "missing"]), Some(2));
    assert_eq!(code(&["pipeline", "--in", "poisoned", "--variant", "nope"]), Some(2));
    fs::write(ws.path("bad.json"), r#"{"t3": 1}"#).unwrap();
    assert_eq!(code(&["--config", "bad.json", "pipeline", "--in", "poisoned"]), Some(2));
    assert_eq!(code(&["attack", "--in", "poisoned"]), Some(2));

    let out = ws.run(&["--out", "x", "train", "--in", "poisoned", "--raw", "--lr", "1e300"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn raw_training_matches_gcn_variant() {
    let ws = Workspace::new();
    ws.poisoned();
    ws.ok(&[
        "--config", "fast.json", "--out", "raw", "train", "--in", "poisoned", "--raw", "--mode", "vanilla",
    ]);
    ws.ok(&["--config", "fast.json", "--out", "gcn", "pipeline", "--in", "poisoned", "--variant", "gcn"]);
    assert_eq!(
        ws.json("raw/train.json")["test_accuracy"],
        ws.json("gcn/result.json")["accuracies"][0]
    );
    assert_eq!(lines(&ws.path("raw/predictions.tsv")), 90);
}
