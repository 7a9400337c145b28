//! End-to-end runs: pre-process, augment, train the encoder, refine, then
//! classify. Every stage draws from its own seed derived from the run seed,
//! so a run is a pure function of `(input, config, seed)`.

mod experiment;

pub use experiment::{
    ablate, run_experiment, sweep, AttackSpec, RunResult, Scenario, Source, SweepParam, SweepRow, SweepTable,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{build_views, lowest_scoring_edges, rough_preprocess, Augmentation, SimilarityMetric};
use crate::classifier::{train_classifier, ClassifierConfig, ClassifierMode};
use crate::data::{load_graph_bundle, read_undirected_graph, save_graph_bundle, write_graph, GraphBundle, PERTURBED_FILE};
use crate::encoder::{train_encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{EdgeSet, SparseGraph};
use crate::refine::{refine, removal_report, RemovalReport};
use crate::tensor::SeededRng;

pub const VIEW_SEED: u64 = 100;
pub const ENCODER_SEED: u64 = 101;
pub const CLASSIFIER_SEED: u64 = 102;
pub const ATTACK_SEED: u64 = 103;

/// Per-stage seed derived from a run seed.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    SeededRng::new(seed).fork(stage).next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// The full method.
    Stable,
    /// No pre-processing; views are random perturbations at ratio `p`.
    StableP,
    /// Views are unchanged copies of the pre-processed graph.
    StableA,
    /// Views are random perturbations instead of recoveries.
    StableRan,
    /// Pruning only (`k = 0`).
    StableK,
    /// Vanilla GCN layers on the refined graph.
    StableGcn,
    /// Vanilla GCN on the input graph with raw features.
    Gcn,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Stable,
        Variant::StableP,
        Variant::StableA,
        Variant::StableRan,
        Variant::StableK,
        Variant::StableGcn,
        Variant::Gcn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Stable => "stable",
            Variant::StableP => "stable-p",
            Variant::StableA => "stable-a",
            Variant::StableRan => "stable-ran",
            Variant::StableK => "stable-k",
            Variant::StableGcn => "stable-gcn",
            Variant::Gcn => "gcn",
        }
    }

    fn augmentation(self) -> Augmentation {
        match self {
            Variant::StableP | Variant::StableRan => Augmentation::Random,
            Variant::StableA => Augmentation::None,
            _ => Augmentation::Recovery,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::invalid(format!("unknown variant '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub metric: SimilarityMetric,
    /// Pre-processing threshold; edges scoring strictly below are removed.
    pub t1: f64,
    /// Recovery probability of each removed edge per view.
    pub recover_p: f64,
    /// Number of views `M`.
    pub views: usize,
    /// Refinement threshold; edges must score strictly above to be kept.
    pub t2: f64,
    pub k: usize,
    pub encoder: EncoderConfig,
    pub classifier: ClassifierConfig,
    pub variant: Variant,
    /// First run seed.
    pub seed: u64,
    /// Number of consecutive seeds in an experiment.
    pub seeds: usize,
    /// Record wall time per run. Reports then differ between runs.
    pub timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            metric: SimilarityMetric::Jaccard,
            t1: 0.03,
            recover_p: 0.2,
            views: 2,
            t2: 0.2,
            k: 5,
            encoder: EncoderConfig::default(),
            classifier: ClassifierConfig::default(),
            variant: Variant::Stable,
            seed: 0,
            seeds: 1,
            timings: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.t1.is_finite() || !self.t2.is_finite() {
            return Err(Error::invalid(format!(
                "thresholds must be finite, got t1={} t2={}",
                self.t1, self.t2
            )));
        }
        if !(0.0..=1.0).contains(&self.recover_p) {
            return Err(Error::invalid(format!("p {} outside [0, 1]", self.recover_p)));
        }
        if self.views == 0 {
            return Err(Error::invalid("need at least one view"));
        }
        if self.seeds == 0 {
            return Err(Error::invalid("need at least one seed"));
        }
        if self.encoder.hidden == 0 || self.encoder.lr.is_nan() || self.encoder.lr <= 0.0 {
            return Err(Error::invalid("encoder needs hidden >= 1 and a positive learning rate"));
        }
        self.classifier.validate()
    }

    /// Seeds `seed, seed + 1, ...` of an experiment.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

/// A graph to defend, optionally with the clean graph it was poisoned from.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInput {
    /// The (possibly poisoned) graph with features, labels and split.
    pub bundle: GraphBundle,
    pub clean: Option<SparseGraph>,
}

impl PipelineInput {
    pub fn new(bundle: GraphBundle) -> Self {
        Self { bundle, clean: None }
    }

    /// Loads a graph bundle. When `dir` also holds `perturbed.tsv`, that graph
    /// is defended and `edges.tsv` becomes the clean reference.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut bundle = load_graph_bundle(dir)?;
        let perturbed = dir.join(PERTURBED_FILE);
        if !perturbed.exists() {
            return Ok(Self::new(bundle));
        }
        let poisoned = read_undirected_graph(&perturbed, bundle.num_nodes())?;
        let clean = std::mem::replace(&mut bundle.graph, poisoned);
        Ok(Self {
            bundle,
            clean: Some(clean),
        })
    }

    /// Audits `removed` against the clean graph, next to raw-feature pruning
    /// of the same size. `None` without a clean graph.
    pub fn audit_removal(&self, removed: &EdgeSet, metric: SimilarityMetric) -> Result<Option<RemovalAudit>> {
        let Some(clean) = &self.clean else {
            return Ok(None);
        };
        let b = &self.bundle;
        let clean = clean.edge_set();
        let poisoned = b.graph.edge_set();
        let baseline = lowest_scoring_edges(&b.graph, &b.features, metric, removed.len())?;
        Ok(Some(RemovalAudit {
            refined: removal_report(&clean, &poisoned, removed, &b.labels)?,
            feature_baseline: removal_report(&clean, &poisoned, &baseline, &b.labels)?,
        }))
    }

    /// Inverse of [`PipelineInput::load`].
    pub fn save(&self, dir: &Path) -> Result<()> {
        match &self.clean {
            None => save_graph_bundle(dir, &self.bundle),
            Some(clean) => {
                let bundle = GraphBundle {
                    graph: clean.clone(),
                    ..self.bundle.clone()
                };
                save_graph_bundle(dir, &bundle)?;
                write_graph(&dir.join(PERTURBED_FILE), &self.bundle.graph)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let b = &self.bundle;
        let n = b.graph.num_nodes();
        if b.graph.is_directed() {
            return Err(Error::invalid("pipeline input graph must be undirected"));
        }
        if b.features.rows() != n || b.labels.len() != n {
            return Err(Error::shape(
                "pipeline input",
                format!("{n} nodes, {} feature rows, {} labels", b.features.rows(), b.labels.len()),
            ));
        }
        b.split.validate(n)?;
        if b.split.test.is_empty() {
            return Err(Error::invalid("pipeline needs at least one test node"));
        }
        if let Some(c) = &self.clean {
            if c.num_nodes() != n {
                return Err(Error::invalid(format!("clean graph has {} nodes, expected {n}", c.num_nodes())));
            }
        }
        Ok(())
    }
}

/// Edge counts and training diagnostics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub nodes: usize,
    pub input_edges: usize,
    pub preprocess_removed: usize,
    pub preprocessed_edges: usize,
    /// Removed edges recovered in each view.
    pub recovered: Vec<usize>,
    pub encoder_epochs: usize,
    pub encoder_best_loss: Option<f64>,
    pub retained_edges: usize,
    /// Pre-processed edges dropped by refinement.
    pub pruned: usize,
    /// Top-k entries, `Σ_i |T^k_i|`.
    pub inserted: usize,
    /// Directed arcs of the optimal graph.
    pub optimal_arcs: usize,
    pub classifier_best_epoch: usize,
}

/// Removed edges of a run against the known attack, next to raw-feature
/// pruning of the same size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalAudit {
    pub refined: RemovalReport,
    pub feature_baseline: RemovalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub variant: Variant,
    pub test_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub stats: StageStats,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub removal: Option<RemovalAudit>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_seconds: Option<f64>,
}

/// Runs the variant named in `config`.
pub fn run_pipeline(input: &PipelineInput, config: &PipelineConfig, seed: u64) -> Result<SeedRun> {
    run_variant(input, config, config.variant, seed)
}

pub fn run_variant(input: &PipelineInput, config: &PipelineConfig, variant: Variant, seed: u64) -> Result<SeedRun> {
    config.validate()?;
    input.validate()?;
    let start = config.timings.then(Instant::now);
    let b = &input.bundle;
    let n = b.graph.num_nodes();
    let input_edges = b.graph.edge_set();

    let mut run = if variant == Variant::Gcn {
        let cfg = ClassifierConfig {
            mode: ClassifierMode::Vanilla,
            ..config.classifier.clone()
        };
        let trained = train_classifier(&b.graph, &b.features, &b.labels, &b.split, &cfg, stage_seed(seed, CLASSIFIER_SEED))
            .map_err(|e| e.in_stage("classifier"))?;
        SeedRun {
            seed,
            variant,
            test_accuracy: trained.test_accuracy.expect("test split checked nonempty"),
            val_accuracy: trained.val_accuracy,
            stats: StageStats {
                nodes: n,
                input_edges: input_edges.len(),
                preprocess_removed: 0,
                preprocessed_edges: input_edges.len(),
                recovered: Vec::new(),
                encoder_epochs: 0,
                encoder_best_loss: None,
                retained_edges: input_edges.len(),
                pruned: 0,
                inserted: 0,
                optimal_arcs: b.graph.num_arcs(),
                classifier_best_epoch: trained.best_epoch,
            },
            removal: None,
            wall_seconds: None,
        }
    } else {
        let (preprocessed, removed) = if variant == Variant::StableP {
            (b.graph.clone(), EdgeSet::new())
        } else {
            let pre = rough_preprocess(&b.graph, &b.features, config.metric, config.t1)
                .map_err(|e| e.in_stage("preprocess"))?;
            (pre.graph, pre.removed)
        };
        let views = build_views(
            variant.augmentation(),
            &preprocessed,
            &removed,
            config.recover_p,
            config.views,
            stage_seed(seed, VIEW_SEED),
        )
        .map_err(|e| e.in_stage("augment"))?;
        let encoded = train_encoder(&views, &b.features, &config.encoder, stage_seed(seed, ENCODER_SEED))
            .map_err(|e| e.in_stage("encoder"))?;
        let k = if variant == Variant::StableK { 0 } else { config.k };
        let refined = refine(&preprocessed, &encoded.embeddings, config.t2, k).map_err(|e| e.in_stage("refine"))?;
        let cfg = ClassifierConfig {
            mode: if variant == Variant::StableGcn {
                ClassifierMode::Vanilla
            } else {
                config.classifier.mode
            },
            ..config.classifier.clone()
        };
        let trained = train_classifier(
            &refined.optimal,
            &encoded.embeddings,
            &b.labels,
            &b.split,
            &cfg,
            stage_seed(seed, CLASSIFIER_SEED),
        )
        .map_err(|e| e.in_stage("classifier"))?;
        let preprocessed_edges = preprocessed.num_edges();
        SeedRun {
            seed,
            variant,
            test_accuracy: trained.test_accuracy.expect("test split checked nonempty"),
            val_accuracy: trained.val_accuracy,
            stats: StageStats {
                nodes: n,
                input_edges: input_edges.len(),
                preprocess_removed: removed.len(),
                preprocessed_edges,
                recovered: views.recovered_counts(),
                encoder_epochs: encoded.epochs_run(),
                encoder_best_loss: encoded.best_epoch.map(|e| encoded.losses[e]),
                retained_edges: refined.retained.len(),
                pruned: preprocessed_edges - refined.retained.len(),
                inserted: refined.inserted_count(),
                optimal_arcs: refined.optimal.num_arcs(),
                classifier_best_epoch: trained.best_epoch,
            },
            removal: input
                .audit_removal(&input_edges.difference(&refined.retained), config.metric)
                .map_err(|e| e.in_stage("report"))?,
            wall_seconds: None,
        }
    };
    run.wall_seconds = start.map(|s| s.elapsed().as_secs_f64());
    Ok(run)
}
