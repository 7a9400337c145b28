//! Multi-seed experiments, ablations and parameter sweeps.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run_variant, stage_seed, PipelineConfig, PipelineInput, SeedRun, Variant, ATTACK_SEED};
use crate::attack::{attack, AttackBudget, AttackMethod};
use crate::data::{generate_sbm, mean_std, SbmSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub method: AttackMethod,
    pub rate: f64,
}

/// A synthetic graph, optionally poisoned, regenerated for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sbm: SbmSpec,
    pub attack: Option<AttackSpec>,
}

impl Scenario {
    /// The input for `seed`: the SBM drawn with that seed, then attacked with
    /// a seed derived from it.
    pub fn materialize(&self, seed: u64) -> Result<PipelineInput> {
        let mut bundle = generate_sbm(&SbmSpec {
            seed,
            ..self.sbm.clone()
        })?;
        let Some(spec) = self.attack else {
            return Ok(PipelineInput::new(bundle));
        };
        let budget = AttackBudget::new(spec.rate, stage_seed(seed, ATTACK_SEED));
        let outcome = attack(spec.method, &bundle.graph, &bundle.labels, &budget)?;
        if !outcome.is_complete() {
            log::warn!(
                "attack applied {} of {} requested changes",
                outcome.record.len(),
                outcome.requested
            );
        }
        let clean = std::mem::replace(&mut bundle.graph, outcome.graph);
        Ok(PipelineInput {
            bundle,
            clean: Some(clean),
        })
    }
}

/// Where each seed's input comes from.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    /// The same input for every seed.
    Fixed(&'a PipelineInput),
    Synthetic(&'a Scenario),
}

impl Source<'_> {
    fn input(&self, seed: u64) -> Result<Cow<'_, PipelineInput>> {
        match self {
            Source::Fixed(input) => Ok(Cow::Borrowed(*input)),
            Source::Synthetic(s) => Ok(Cow::Owned(s.materialize(seed)?)),
        }
    }
}

/// Per-seed runs of one variant with their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `accuracies`.
    pub std: f64,
    pub runs: Vec<SeedRun>,
    pub notes: Vec<String>,
}

impl RunResult {
    pub fn from_runs(variant: Variant, runs: Vec<SeedRun>) -> Self {
        let accuracies: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        let (mean, std) = mean_std(&accuracies);
        let mut notes = vec!["model selection: best validation accuracy, ties to lower validation loss".to_string()];
        if variant == Variant::StableP {
            notes.push("views: random perturbation at ratio p (no pre-processing removals to recover)".into());
        }
        Self {
            variant,
            seeds: runs.iter().map(|r| r.seed).collect(),
            accuracies,
            mean,
            std,
            runs,
            notes,
        }
    }

    /// Mean over seeds of `(refined, feature_baseline)` removal accuracy, when
    /// every run was audited.
    pub fn mean_removal_accuracy(&self) -> Option<(f64, f64)> {
        let audits: Option<Vec<_>> = self.runs.iter().map(|r| r.removal).collect();
        let audits = audits.filter(|a| !a.is_empty())?;
        let n = audits.len() as f64;
        Some((
            audits.iter().map(|a| a.refined.accuracy).sum::<f64>() / n,
            audits.iter().map(|a| a.feature_baseline.accuracy).sum::<f64>() / n,
        ))
    }
}

/// Runs `variant` once per seed of `config`, in seed order.
pub fn run_experiment(source: Source<'_>, config: &PipelineConfig, variant: Variant) -> Result<RunResult> {
    config.validate()?;
    let runs = config
        .seed_list()
        .into_iter()
        .map(|seed| {
            log::info!("{variant} seed {seed}");
            let input = source.input(seed)?;
            run_variant(&input, config, variant, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult::from_runs(variant, runs))
}

/// One experiment per variant, in the given order.
pub fn ablate(source: Source<'_>, config: &PipelineConfig, variants: &[Variant]) -> Result<Vec<RunResult>> {
    variants.iter().map(|&v| run_experiment(source, config, v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    K,
    Alpha,
    T1,
    T2,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::K => "k",
            SweepParam::Alpha => "alpha",
            SweepParam::T1 => "t1",
            SweepParam::T2 => "t2",
        })
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k" => Ok(Self::K),
            "alpha" => Ok(Self::Alpha),
            "t1" => Ok(Self::T1),
            "t2" => Ok(Self::T2),
            other => Err(Error::invalid(format!(
                "unknown sweep parameter '{other}' (expected k, alpha, t1 or t2)"
            ))),
        }
    }
}

impl SweepParam {
    fn apply(self, config: &mut PipelineConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::K => {
                if value < 0.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
                    return Err(Error::invalid(format!("k must be a non-negative integer, got {value}")));
                }
                config.k = value as usize;
            }
            SweepParam::Alpha => config.classifier.alpha = value,
            SweepParam::T1 => config.t1 = value,
            SweepParam::T2 => config.t2 = value,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
    pub accuracies: Vec<f64>,
    pub mean_retained: f64,
    pub mean_inserted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},mean,std,mean_retained,mean_inserted\n", self.param);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.value, r.mean, r.std, r.mean_retained, r.mean_inserted
            ));
        }
        out
    }
}

/// The variant of `config` at every value of `param`, each over all seeds.
pub fn sweep(source: Source<'_>, config: &PipelineConfig, param: SweepParam, values: &[f64]) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let rows = values
        .iter()
        .map(|&value| {
            let mut cfg = config.clone();
            param.apply(&mut cfg, value)?;
            let result = run_experiment(source, &cfg, cfg.variant)?;
            let n = result.runs.len() as f64;
            Ok(SweepRow {
                value,
                mean: result.mean,
                std: result.std,
                mean_retained: result.runs.iter().map(|r| r.stats.retained_edges as f64).sum::<f64>() / n,
                mean_inserted: result.runs.iter().map(|r| r.stats.inserted as f64).sum::<f64>() / n,
                accuracies: result.accuracies,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable {
        param,
        variant: config.variant,
        seeds: config.seed_list(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{fast_config, small_input};
    use super::*;

    #[test]
    fn single_value_single_seed_matches_run() {
        let input = small_input();
        let cfg = fast_config();
        let t = sweep(Source::Fixed(&input), &cfg, SweepParam::K, &[5.0]).unwrap();
        let r = run_variant(&input, &cfg, cfg.variant, cfg.seed).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].accuracies, vec![r.test_accuracy]);
        assert_eq!(t.rows[0].mean, r.test_accuracy);
    }

    #[test]
    fn k_one_inserts_one_arc_per_node() {
        let input = small_input();
        let t = sweep(Source::Fixed(&input), &fast_config(), SweepParam::K, &[0.0, 1.0]).unwrap();
        assert_eq!(t.rows[0].mean_inserted, 0.0);
        assert_eq!(t.rows[1].mean_inserted, 90.0);
        assert!(t.to_csv().starts_with("k,mean,std"));
        assert!(sweep(Source::Fixed(&input), &fast_config(), SweepParam::K, &[1.5]).is_err());
        assert!(sweep(Source::Fixed(&input), &fast_config(), SweepParam::K, &[]).is_err());
    }

    #[test]
    fn result_summary_recomputes() {
        let input = small_input();
        let cfg = PipelineConfig {
            seeds: 3,
            ..fast_config()
        };
        let r = run_experiment(Source::Fixed(&input), &cfg, Variant::StableK).unwrap();
        assert_eq!(r.seeds, vec![0, 1, 2]);
        let (m, s) = mean_std(&r.accuracies);
        assert!((r.mean - m).abs() < 1e-12 && (r.std - s).abs() < 1e-12);
        assert!(r.mean_removal_accuracy().is_none());
    }

    #[test]
    fn scenario_attack_is_audited() {
        let scenario = Scenario {
            sbm: SbmSpec {
                nodes: 90,
                feature_dim: 30,
                on_bits: 6,
                p_in: 0.15,
                p_out: 0.01,
                ..SbmSpec::default()
            },
            attack: Some(AttackSpec {
                method: AttackMethod::Dice,
                rate: 0.2,
            }),
        };
        let input = scenario.materialize(4).unwrap();
        let clean = input.clean.as_ref().unwrap();
        let changed = clean.edge_set().difference(&input.bundle.graph.edge_set()).len()
            + input.bundle.graph.edge_set().difference(&clean.edge_set()).len();
        assert_eq!(changed, (0.2 * clean.num_edges() as f64).round() as usize);
        assert_eq!(scenario.materialize(4).unwrap(), input);

        let r = run_experiment(Source::Synthetic(&scenario), &fast_config(), Variant::Stable).unwrap();
        let audit = r.runs[0].removal.unwrap();
        assert_eq!(audit.refined.total, audit.feature_baseline.total);
        assert!(r.mean_removal_accuracy().is_some());
    }
}
