//! Subcommand bodies. Stage commands derive their seeds exactly as the
//! end-to-end pipeline does, so chaining `preprocess`, `embed`, `refine` and
//! `train` on one seed reproduces `pipeline` on that seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::Value;

use robograph::attack::{attack as run_attack, AttackBudget, AttackMethod};
use robograph::augment::{build_views, rough_preprocess, Augmentation, SimilarityMetric, ViewBundle};
use robograph::classifier::{predict, train_classifier};
use robograph::data::{
    generate_sbm, read_directed_graph, read_edge_list, read_features, read_undirected_graph, write_edge_list,
    write_features, write_graph, write_report, SbmSpec,
};
use robograph::encoder::train_encoder;
use robograph::graph::EdgeSet;
use robograph::pipeline::{
    ablate as run_ablation, run_experiment, stage_seed, sweep as run_sweep, AttackSpec, PipelineConfig, PipelineInput,
    RunResult, Scenario, Source, SweepParam, SweepTable, Variant, ATTACK_SEED, CLASSIFIER_SEED, ENCODER_SEED,
    VIEW_SEED,
};
use robograph::refine::refine as run_refine;

use crate::{ExperimentFlags, GlobalArgs, SynthArgs};

pub const PREPROCESSED_FILE: &str = "preprocessed.tsv";
pub const REMOVED_FILE: &str = "removed.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const OPTIMAL_FILE: &str = "optimal.tsv";

fn view_file(j: usize) -> String {
    format!("view_{j}.tsv")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn stage_dir(global: &GlobalArgs, stage: &Option<PathBuf>) -> PathBuf {
    stage.clone().unwrap_or_else(|| global.out.clone())
}

fn load_input(dir: &Path) -> Result<PipelineInput> {
    PipelineInput::load(dir).with_context(|| format!("loading graph bundle {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    Ok(write_report(value, path)?)
}

pub fn synth(global: &GlobalArgs, config: &PipelineConfig, a: &SynthArgs) -> Result<()> {
    let mut spec = SbmSpec {
        seed: config.seed,
        ..SbmSpec::default()
    };
    let s = &mut spec;
    crate::set(&mut s.nodes, a.nodes);
    crate::set(&mut s.classes, a.classes);
    crate::set(&mut s.p_in, a.p_in);
    crate::set(&mut s.p_out, a.p_out);
    crate::set(&mut s.feature_dim, a.feature_dim);
    crate::set(&mut s.on_bits, a.on_bits);
    crate::set(&mut s.flip_noise, a.flip_noise);
    let input = PipelineInput::new(generate_sbm(&spec)?);
    input.save(&global.out)?;
    write_json(&global.out.join("sbm.json"), &spec)?;
    println!(
        "wrote {} nodes, {} edges to {}",
        input.bundle.num_nodes(),
        input.bundle.graph.num_edges(),
        global.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AttackLog<'a> {
    method: AttackMethod,
    rate: f64,
    seed: u64,
    requested: usize,
    added: &'a EdgeSet,
    removed: &'a EdgeSet,
}

pub fn attack(global: &GlobalArgs, config: &PipelineConfig, a: &crate::AttackArgs) -> Result<()> {
    let input = load_input(&a.input)?;
    ensure!(
        input.clean.is_none(),
        "{} already holds a perturbed graph",
        a.input.display()
    );
    let seed = stage_seed(config.seed, ATTACK_SEED);
    let b = &input.bundle;
    let outcome = run_attack(a.method, &b.graph, &b.labels, &AttackBudget::new(a.ptb_rate, seed))?;
    if !outcome.is_complete() {
        log::warn!(
            "attack applied {} of {} requested changes",
            outcome.record.len(),
            outcome.requested
        );
    }
    let poisoned = PipelineInput {
        bundle: robograph::data::GraphBundle {
            graph: outcome.graph,
            ..b.clone()
        },
        clean: Some(b.graph.clone()),
    };
    poisoned.save(&global.out)?;
    write_json(
        &global.out.join("perturbation.json"),
        &AttackLog {
            method: a.method,
            rate: a.ptb_rate,
            seed,
            requested: outcome.requested,
            added: &outcome.record.added,
            removed: &outcome.record.removed,
        },
    )?;
    println!(
        "{:?}: added {}, removed {} of {} edges",
        a.method,
        outcome.record.added.len(),
        outcome.record.removed.len(),
        b.graph.num_edges()
    );
    Ok(())
}

#[derive(Serialize)]
struct PreprocessLog {
    metric: SimilarityMetric,
    t1: f64,
    augmentation: Augmentation,
    recover_p: f64,
    views: usize,
    input_edges: usize,
    removed: usize,
    preprocessed_edges: usize,
    recovered: Vec<usize>,
}

pub fn preprocess(global: &GlobalArgs, config: &PipelineConfig, a: &crate::PreprocessArgs) -> Result<()> {
    config.validate()?;
    let input = load_input(&a.input)?;
    let b = &input.bundle;
    let pre = rough_preprocess(&b.graph, &b.features, config.metric, config.t1)?;
    let views = build_views(
        a.aug,
        &pre.graph,
        &pre.removed,
        config.recover_p,
        config.views,
        stage_seed(config.seed, VIEW_SEED),
    )?;
    let out = &global.out;
    create_dir(out)?;
    write_graph(&out.join(PREPROCESSED_FILE), &pre.graph)?;
    write_edge_list(&out.join(REMOVED_FILE), pre.removed.iter())?;
    for (j, v) in views.views.iter().enumerate() {
        write_graph(&out.join(view_file(j)), v)?;
    }
    let log = PreprocessLog {
        metric: config.metric,
        t1: config.t1,
        augmentation: a.aug,
        recover_p: config.recover_p,
        views: config.views,
        input_edges: b.graph.num_edges(),
        removed: pre.removed.len(),
        preprocessed_edges: pre.graph.num_edges(),
        recovered: views.recovered_counts(),
    };
    write_json(&out.join("preprocess.json"), &log)?;
    println!(
        "removed {} of {} edges; recovered per view {:?}",
        log.removed, log.input_edges, log.recovered
    );
    Ok(())
}

/// Views written by `preprocess`, in order.
fn read_views(dir: &Path, n: usize, seed: u64) -> Result<ViewBundle> {
    let preprocessed = read_undirected_graph(&dir.join(PREPROCESSED_FILE), n)?;
    let removed = EdgeSet::from_pairs(read_edge_list(&dir.join(REMOVED_FILE), n)?);
    let log_path = dir.join("preprocess.json");
    let log: Value = serde_json::from_str(
        &fs::read_to_string(&log_path).with_context(|| format!("reading {}; run preprocess first", log_path.display()))?,
    )
    .with_context(|| format!("parsing {}", log_path.display()))?;
    let m = log["views"]
        .as_u64()
        .with_context(|| format!("{} has no view count", log_path.display()))?;
    let views = (0..m as usize)
        .map(|j| read_undirected_graph(&dir.join(view_file(j)), n))
        .collect::<robograph::Result<Vec<_>>>()?;
    Ok(ViewBundle {
        preprocessed,
        removed,
        views,
        seed,
    })
}

#[derive(Serialize)]
struct EncoderLog {
    epochs_run: usize,
    best_epoch: Option<usize>,
    best_loss: Option<f64>,
    losses: Vec<f64>,
}

pub fn embed(global: &GlobalArgs, config: &PipelineConfig, a: &crate::EmbedArgs) -> Result<()> {
    config.validate()?;
    let input = load_input(&a.input)?;
    let b = &input.bundle;
    let dir = stage_dir(global, &a.stage);
    let views = read_views(&dir, b.num_nodes(), stage_seed(config.seed, VIEW_SEED))?;
    let trained = train_encoder(
        &views,
        &b.features,
        &config.encoder,
        stage_seed(config.seed, ENCODER_SEED),
    )?;
    create_dir(&global.out)?;
    write_features(&global.out.join(EMBEDDINGS_FILE), &trained.embeddings)?;
    let log = EncoderLog {
        epochs_run: trained.epochs_run(),
        best_epoch: trained.best_epoch,
        best_loss: trained.best_epoch.map(|e| trained.losses[e]),
        losses: trained.losses.clone(),
    };
    write_json(&global.out.join("encoder.json"), &log)?;
    println!(
        "{} epochs, best loss {}",
        log.epochs_run,
        log.best_loss.map_or("n/a".into(), |l| format!("{l:.6}"))
    );
    Ok(())
}

#[derive(Serialize)]
struct RefineLog {
    t2: f64,
    k: usize,
    preprocessed_edges: usize,
    retained: usize,
    pruned: usize,
    inserted: usize,
    optimal_arcs: usize,
}

pub fn refine(global: &GlobalArgs, config: &PipelineConfig, a: &crate::RefineArgs) -> Result<()> {
    let input = load_input(&a.input)?;
    let n = input.bundle.num_nodes();
    let dir = stage_dir(global, &a.stage);
    let preprocessed = read_undirected_graph(&dir.join(PREPROCESSED_FILE), n)?;
    let h = read_features(&dir.join(EMBEDDINGS_FILE))?;
    ensure!(h.rows() == n, "embeddings have {} rows for {n} nodes", h.rows());
    let refined = run_refine(&preprocessed, &h, config.t2, config.k)?;
    create_dir(&global.out)?;
    write_graph(&global.out.join(OPTIMAL_FILE), &refined.optimal)?;
    let log = RefineLog {
        t2: config.t2,
        k: config.k,
        preprocessed_edges: preprocessed.num_edges(),
        retained: refined.retained.len(),
        pruned: preprocessed.num_edges() - refined.retained.len(),
        inserted: refined.inserted_count(),
        optimal_arcs: refined.optimal.num_arcs(),
    };
    write_json(&global.out.join("refine.json"), &log)?;
    let removed = input.bundle.graph.edge_set().difference(&refined.retained);
    if let Some(audit) = input.audit_removal(&removed, config.metric)? {
        write_json(&global.out.join("removal.json"), &audit)?;
        println!(
            "removal accuracy {:.4} over {} edges ({} adversarial); raw-feature pruning {:.4}",
            audit.refined.accuracy, audit.refined.total, audit.refined.adversarial, audit.feature_baseline.accuracy
        );
    }
    println!(
        "kept {} of {} edges, inserted {}, {} arcs",
        log.retained, log.preprocessed_edges, log.inserted, log.optimal_arcs
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainLog {
    mode: robograph::classifier::ClassifierMode,
    raw: bool,
    best_epoch: usize,
    val_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    train_losses: Vec<f64>,
}

pub fn train(global: &GlobalArgs, config: &PipelineConfig, a: &crate::TrainArgs) -> Result<()> {
    config.validate()?;
    let input = load_input(&a.input)?;
    let b = &input.bundle;
    let n = b.num_nodes();
    let (graph, h) = if a.raw {
        (b.graph.clone(), b.features.clone())
    } else {
        let dir = stage_dir(global, &a.stage);
        let h = read_features(&dir.join(EMBEDDINGS_FILE))?;
        ensure!(h.rows() == n, "embeddings have {} rows for {n} nodes", h.rows());
        (read_directed_graph(&dir.join(OPTIMAL_FILE), n)?, h)
    };
    let trained = train_classifier(
        &graph,
        &h,
        &b.labels,
        &b.split,
        &config.classifier,
        stage_seed(config.seed, CLASSIFIER_SEED),
    )?;
    let predictions = predict(&trained.model, &graph, &h)?;
    create_dir(&global.out)?;
    let mut tsv = String::new();
    for (i, c) in predictions.iter().enumerate() {
        writeln!(tsv, "{i}\t{c}").expect("writing to a String");
    }
    let path = global.out.join("predictions.tsv");
    fs::write(&path, tsv).with_context(|| format!("writing {}", path.display()))?;
    let log = TrainLog {
        mode: config.classifier.mode,
        raw: a.raw,
        best_epoch: trained.best_epoch,
        val_accuracy: trained.val_accuracy,
        test_accuracy: trained.test_accuracy,
        train_losses: trained.train_losses,
    };
    write_json(&global.out.join("train.json"), &log)?;
    match log.test_accuracy {
        Some(acc) => println!("test accuracy {acc:.4} (best epoch {})", log.best_epoch),
        None => println!("no test nodes (best epoch {})", log.best_epoch),
    }
    Ok(())
}

enum Input {
    Fixed(PipelineInput),
    Synthetic(Scenario),
}

impl Input {
    fn from_flags(f: &ExperimentFlags) -> Result<Self> {
        if let Some(dir) = &f.source.input {
            return Ok(Input::Fixed(load_input(dir)?));
        }
        let sbm = match &f.synthetic.sbm {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => SbmSpec::default(),
        };
        let attack = f.synthetic.attack.map(|method| AttackSpec {
            method,
            rate: f.synthetic.ptb_rate,
        });
        Ok(Input::Synthetic(Scenario { sbm, attack }))
    }

    fn source(&self) -> Source<'_> {
        match self {
            Input::Fixed(i) => Source::Fixed(i),
            Input::Synthetic(s) => Source::Synthetic(s),
        }
    }
}

fn summary_line(r: &RunResult) -> String {
    let mut line = format!(
        "{:<11} {:.4} +- {:.4} over {} seed(s)",
        r.variant.name(),
        r.mean,
        r.std,
        r.seeds.len()
    );
    if let Some((refined, baseline)) = r.mean_removal_accuracy() {
        write!(line, "; removal accuracy {refined:.4} (raw-feature {baseline:.4})").expect("writing to a String");
    }
    line
}

pub fn pipeline(global: &GlobalArgs, config: &PipelineConfig, f: &ExperimentFlags) -> Result<()> {
    config.validate()?;
    let input = Input::from_flags(f)?;
    let result = run_experiment(input.source(), config, config.variant)?;
    create_dir(&global.out)?;
    write_json(&global.out.join("config.json"), config)?;
    write_json(&global.out.join("result.json"), &result)?;
    println!("{}", summary_line(&result));
    Ok(())
}

fn ablation_csv(results: &[RunResult]) -> String {
    let mut out = String::from("variant,mean,std,seeds\n");
    for r in results {
        writeln!(out, "{},{},{},{}", r.variant, r.mean, r.std, r.seeds.len()).expect("writing to a String");
    }
    out
}

pub fn ablate(global: &GlobalArgs, config: &PipelineConfig, f: &ExperimentFlags, variants: &[Variant]) -> Result<()> {
    config.validate()?;
    let input = Input::from_flags(f)?;
    let results = run_ablation(input.source(), config, variants)?;
    create_dir(&global.out)?;
    write_json(&global.out.join("config.json"), config)?;
    write_json(&global.out.join("ablation.json"), &results)?;
    let csv = global.out.join("ablation.csv");
    fs::write(&csv, ablation_csv(&results)).with_context(|| format!("writing {}", csv.display()))?;
    for r in &results {
        println!("{}", summary_line(r));
    }
    Ok(())
}

pub fn sweep(
    global: &GlobalArgs,
    config: &PipelineConfig,
    f: &ExperimentFlags,
    param: SweepParam,
    values: &[f64],
) -> Result<()> {
    config.validate()?;
    let input = Input::from_flags(f)?;
    let table = run_sweep(input.source(), config, param, values)?;
    create_dir(&global.out)?;
    write_json(&global.out.join("config.json"), config)?;
    write_json(&global.out.join("sweep.json"), &table)?;
    let csv = global.out.join("sweep.csv");
    fs::write(&csv, table.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    print!("{}", table.to_csv());
    Ok(())
}

pub fn report(files: &[PathBuf]) -> Result<()> {
    for path in files {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        println!("# {}", path.display());
        let parse_err = || format!("{} is not a result, ablation or sweep file", path.display());
        if value.is_array() {
            let results: Vec<RunResult> = serde_json::from_value(value).with_context(parse_err)?;
            results.iter().for_each(|r| println!("{}", summary_line(r)));
        } else if value.get("rows").is_some() {
            let table: SweepTable = serde_json::from_value(value).with_context(parse_err)?;
            println!("{} over {} seed(s)", table.variant, table.seeds.len());
            print!("{}", table.to_csv());
        } else if value.get("runs").is_some() {
            let result: RunResult = serde_json::from_value(value).with_context(parse_err)?;
            println!("{}", summary_line(&result));
            for note in &result.notes {
                println!("  note: {note}");
            }
        } else {
            bail!(parse_err());
        }
    }
    Ok(())
}
