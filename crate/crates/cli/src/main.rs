//! `robograph`: synthesize and poison graphs, run pipeline stages one at a
//! time, or run whole multi-seed experiments.
//!
//! Exit codes: 0 on success, 2 on bad configuration or input, 3 when
//! training diverges.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};

use robograph::attack::AttackMethod;
use robograph::augment::{Augmentation, SimilarityMetric};
use robograph::classifier::ClassifierMode;
use robograph::pipeline::{PipelineConfig, SweepParam, Variant};

#[derive(Debug, Parser)]
#[command(name = "robograph", version, about = "Robust node classification under structural poisoning")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON pipeline configuration; command-line flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run seed (first seed of an experiment).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds in an experiment.
    #[arg(long, global = true, value_name = "N")]
    pub seeds: Option<usize>,
    #[arg(long, global = true, value_name = "DIR", default_value = "robograph-out")]
    pub out: PathBuf,
    /// More log output; repeat for debug level.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a stochastic-block-model graph bundle.
    Synth(SynthArgs),
    /// Poison a bundle's graph; writes perturbed.tsv next to the clean bundle.
    Attack(AttackArgs),
    /// Drop dissimilar edges and build the contrastive views.
    Preprocess(PreprocessArgs),
    /// Train the contrastive encoder on the views; writes embeddings.
    Embed(EmbedArgs),
    /// Prune by embedding similarity and insert top-k neighbours.
    Refine(RefineArgs),
    /// Train the node classifier on the refined graph.
    Train(TrainArgs),
    /// Run one variant end to end over every seed.
    Pipeline(PipelineArgs),
    /// Run several variants over the same seeds.
    Ablate(AblateArgs),
    /// Run the pipeline at each value of one parameter.
    Sweep(SweepArgs),
    /// Summarize result files written by pipeline, ablate or sweep.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub p_in: Option<f64>,
    #[arg(long)]
    pub p_out: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub on_bits: Option<usize>,
    #[arg(long)]
    pub flip_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Clean graph bundle.
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long, default_value = "dice")]
    pub method: AttackMethod,
    #[arg(long, default_value_t = 0.2)]
    pub ptb_rate: f64,
}

#[derive(Debug, Args)]
pub struct PreprocessFlags {
    #[arg(long)]
    pub metric: Option<SimilarityMetric>,
    #[arg(long)]
    pub t1: Option<f64>,
    /// Number of views.
    #[arg(long, value_name = "M")]
    pub views: Option<usize>,
    /// Probability that a removed edge returns to a view.
    #[arg(long)]
    pub recover_p: Option<f64>,
}

impl PreprocessFlags {
    fn apply(&self, c: &mut PipelineConfig) {
        set(&mut c.metric, self.metric);
        set(&mut c.t1, self.t1);
        set(&mut c.views, self.views);
        set(&mut c.recover_p, self.recover_p);
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    #[command(flatten)]
    pub flags: PreprocessFlags,
    #[arg(long, default_value = "recovery")]
    pub aug: Augmentation,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Directory holding the preprocess output; defaults to --out.
    #[arg(long, value_name = "DIR")]
    pub stage: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

impl EmbedArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        let e = &mut c.encoder;
        set(&mut e.hidden, self.hidden);
        set(&mut e.lr, self.lr);
        set(&mut e.max_epochs, self.epochs);
        set(&mut e.patience, self.patience);
    }
}

#[derive(Debug, Args)]
pub struct RefineFlags {
    #[arg(long)]
    pub t2: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
}

impl RefineFlags {
    fn apply(&self, c: &mut PipelineConfig) {
        set(&mut c.t2, self.t2);
        set(&mut c.k, self.k);
    }
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Directory holding the preprocess and embed output; defaults to --out.
    #[arg(long, value_name = "DIR")]
    pub stage: Option<PathBuf>,
    #[command(flatten)]
    pub flags: RefineFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Directory holding the refine and embed output; defaults to --out.
    #[arg(long, value_name = "DIR")]
    pub stage: Option<PathBuf>,
    /// Train on the input graph and raw features instead.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub mode: Option<ClassifierMode>,
}

impl TrainArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        let k = &mut c.classifier;
        set(&mut k.alpha, self.alpha);
        set(&mut k.beta, self.beta);
        set(&mut k.hidden, self.hidden);
        set(&mut k.lr, self.lr);
        set(&mut k.weight_decay, self.weight_decay);
        set(&mut k.epochs, self.epochs);
        set(&mut k.dropout, self.dropout);
        set(&mut k.mode, self.mode);
    }
}

/// Where experiment inputs come from: a bundle directory, or a synthetic
/// graph regenerated (and optionally attacked) for every seed.
#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct SourceArgs {
    /// Graph bundle; a perturbed.tsv inside it is defended and audited.
    #[arg(long = "in", value_name = "DIR")]
    pub input: Option<PathBuf>,
    /// Per-seed synthetic graph.
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    /// JSON block-model spec for --synthetic; unset fields keep defaults.
    #[arg(long, value_name = "FILE", conflicts_with = "input")]
    pub sbm: Option<PathBuf>,
    /// Poison each synthetic graph with this method.
    #[arg(long, conflicts_with = "input")]
    pub attack: Option<AttackMethod>,
    #[arg(long, default_value_t = 0.2, requires = "attack")]
    pub ptb_rate: f64,
}

#[derive(Debug, Args)]
pub struct ExperimentFlags {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[command(flatten)]
    pub preprocess: PreprocessFlags,
    #[command(flatten)]
    pub refine: RefineFlags,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub mode: Option<ClassifierMode>,
    /// Record wall time per seed; reports then differ between runs.
    #[arg(long)]
    pub timings: bool,
}

impl ExperimentFlags {
    fn apply(&self, c: &mut PipelineConfig) {
        self.preprocess.apply(c);
        self.refine.apply(c);
        set(&mut c.classifier.alpha, self.alpha);
        set(&mut c.classifier.beta, self.beta);
        set(&mut c.classifier.mode, self.mode);
        c.timings |= self.timings;
    }
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub flags: ExperimentFlags,
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub flags: ExperimentFlags,
    /// Comma-separated variants; all of them by default.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<Variant>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub flags: ExperimentFlags,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// result.json, ablation.json or sweep.json files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// The config file (or defaults) with global flags applied.
fn base_config(global: &GlobalArgs) -> Result<PipelineConfig> {
    let mut config = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    set(&mut config.seed, global.seed);
    set(&mut config.seeds, global.seeds);
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut config = base_config(g)?;
    match &cli.command {
        Command::Synth(a) => commands::synth(g, &config, a),
        Command::Attack(a) => commands::attack(g, &config, a),
        Command::Preprocess(a) => {
            a.flags.apply(&mut config);
            commands::preprocess(g, &config, a)
        }
        Command::Embed(a) => {
            a.apply(&mut config);
            commands::embed(g, &config, a)
        }
        Command::Refine(a) => {
            a.flags.apply(&mut config);
            commands::refine(g, &config, a)
        }
        Command::Train(a) => {
            a.apply(&mut config);
            commands::train(g, &config, a)
        }
        Command::Pipeline(a) => {
            a.flags.apply(&mut config);
            set(&mut config.variant, a.variant);
            commands::pipeline(g, &config, &a.flags)
        }
        Command::Ablate(a) => {
            a.flags.apply(&mut config);
            let variants = if a.variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                a.variants.clone()
            };
            commands::ablate(g, &config, &a.flags, &variants)
        }
        Command::Sweep(a) => {
            a.flags.apply(&mut config);
            set(&mut config.variant, a.variant);
            commands::sweep(g, &config, &a.flags, a.param, &a.values)
        }
        Command::Report(a) => commands::report(&a.files),
    }
}

/// 3 when the failure is numeric divergence, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .filter_map(|e| e.downcast_ref::<robograph::Error>())
        .any(robograph::Error::is_numeric);
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(match cli.global.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
