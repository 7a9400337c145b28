//! Feature-similarity pre-processing of a (possibly poisoned) graph and the
//! augmented views used for contrastive training.
//!
//! Recovery views re-insert each pruned edge independently with probability
//! `p`, so every view sits between the pre-processed graph and the input.
//! Random views instead drop and add the same number of arbitrary edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeSet, SparseGraph};
use crate::tensor::{cosine, DenseMatrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMetric {
    Jaccard,
    Cosine,
}

impl std::str::FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jaccard" => Ok(Self::Jaccard),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::invalid(format!("unknown similarity metric `{other}`"))),
        }
    }
}

/// Jaccard over supports (`value > 0`), or cosine. Both are 0 when undefined.
pub fn feature_similarity(a: &[f64], b: &[f64], metric: SimilarityMetric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "feature_similarity",
            format!("lengths {} and {}", a.len(), b.len()),
        ));
    }
    Ok(match metric {
        SimilarityMetric::Jaccard => {
            let (mut both, mut either) = (0usize, 0usize);
            for (&x, &y) in a.iter().zip(b) {
                let (x, y) = (x > 0.0, y > 0.0);
                both += usize::from(x && y);
                either += usize::from(x || y);
            }
            if either == 0 {
                0.0
            } else {
                both as f64 / either as f64
            }
        }
        SimilarityMetric::Cosine => cosine(a, b),
    })
}

/// One score per undirected edge, aligned with `edges`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityScores {
    pub edges: EdgeSet,
    pub scores: Vec<f64>,
}

pub fn edge_scores(
    g: &SparseGraph,
    x: &DenseMatrix,
    metric: SimilarityMetric,
) -> Result<SimilarityScores> {
    if x.rows() != g.num_nodes() {
        return Err(Error::shape(
            "edge_scores",
            format!("{} feature rows for {} nodes", x.rows(), g.num_nodes()),
        ));
    }
    let edges = g.edge_set();
    let scores = edges
        .iter()
        .map(|(a, b)| feature_similarity(x.row(a), x.row(b), metric))
        .collect::<Result<_>>()?;
    Ok(SimilarityScores { edges, scores })
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub graph: SparseGraph,
    pub removed: EdgeSet,
    pub scores: SimilarityScores,
}

/// Drops every edge whose feature similarity is strictly below `t1`.
pub fn rough_preprocess(
    g: &SparseGraph,
    x: &DenseMatrix,
    metric: SimilarityMetric,
    t1: f64,
) -> Result<Preprocessed> {
    if !t1.is_finite() {
        return Err(Error::invalid(format!("threshold t1 must be finite, got {t1}")));
    }
    let scores = edge_scores(g, x, metric)?;
    let (mut kept, mut removed) = (Vec::new(), Vec::new());
    for ((a, b), &s) in scores.edges.iter().zip(&scores.scores) {
        if s < t1 {
            removed.push((a, b));
        } else {
            kept.push((a, b));
        }
    }
    Ok(Preprocessed {
        graph: SparseGraph::undirected(g.num_nodes(), kept)?,
        removed: EdgeSet::from_pairs(removed),
        scores,
    })
}

/// The `count` lowest-scoring edges, ties by pair order. This is the raw-feature
/// pruning baseline at a fixed removal size.
pub fn lowest_scoring_edges(
    g: &SparseGraph,
    x: &DenseMatrix,
    metric: SimilarityMetric,
    count: usize,
) -> Result<EdgeSet> {
    let s = edge_scores(g, x, metric)?;
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_by(|&i, &j| s.scores[i].total_cmp(&s.scores[j]).then(i.cmp(&j)));
    Ok(order
        .into_iter()
        .take(count)
        .map(|i| s.edges.as_slice()[i])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    /// Re-insert pruned edges at random.
    Recovery,
    /// Remove and add random edges.
    Random,
    /// Every view is a copy of the pre-processed graph.
    None,
}

impl std::str::FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recovery" => Ok(Self::Recovery),
            "random" => Ok(Self::Random),
            "none" => Ok(Self::None),
            other => Err(Error::invalid(format!("unknown augmentation `{other}`"))),
        }
    }
}

/// Pre-processed graph, its removed edges and `M` views of it.
#[derive(Debug, Clone)]
pub struct ViewBundle {
    pub preprocessed: SparseGraph,
    pub removed: EdgeSet,
    pub views: Vec<SparseGraph>,
    pub seed: u64,
}

impl ViewBundle {
    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    /// Edges each view has beyond the pre-processed graph.
    pub fn recovered_counts(&self) -> Vec<usize> {
        let base = self.preprocessed.num_edges();
        self.views
            .iter()
            .map(|v| v.num_edges().saturating_sub(base))
            .collect()
    }
}

fn check_views(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("need at least one view"));
    }
    Ok(())
}

fn check_fraction(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{name} {p} outside [0, 1]")));
    }
    Ok(())
}

/// Recovery views: each removed edge returns to view `j` independently with
/// probability `p`. View `j` draws from its own stream of `seed`.
pub fn make_views(
    preprocessed: &SparseGraph,
    removed: &EdgeSet,
    p: f64,
    m: usize,
    seed: u64,
) -> Result<ViewBundle> {
    check_fraction("recovery probability", p)?;
    check_views(m)?;
    let base = preprocessed.edge_set();
    let root = SeededRng::new(seed);
    let views = (0..m)
        .map(|j| {
            let mut rng = root.fork(j as u64);
            let recovered: Vec<_> = removed.iter().filter(|_| rng.bernoulli(p)).collect();
            SparseGraph::with_edges(preprocessed.num_nodes(), &base.union(&recovered.into_iter().collect()))
        })
        .collect::<Result<_>>()?;
    Ok(ViewBundle {
        preprocessed: preprocessed.clone(),
        removed: removed.clone(),
        views,
        seed,
    })
}

/// Random views: each removes `round(ratio·|E|/2)` random edges and adds as
/// many random non-edges of the pre-processed graph.
pub fn random_perturb_views(
    preprocessed: &SparseGraph,
    removed: &EdgeSet,
    ratio: f64,
    m: usize,
    seed: u64,
) -> Result<ViewBundle> {
    check_fraction("perturbation ratio", ratio)?;
    check_views(m)?;
    let n = preprocessed.num_nodes();
    let base = preprocessed.edge_set();
    let count = (ratio * base.len() as f64 / 2.0).round() as usize;
    let non_edges = n * n.saturating_sub(1) / 2 - base.len();
    if count > base.len() || count > non_edges {
        return Err(Error::invalid(format!(
            "cannot swap {count} edges: graph has {} edges and {non_edges} non-edges",
            base.len()
        )));
    }
    let root = SeededRng::new(seed);
    let views = (0..m)
        .map(|j| {
            let mut rng = root.fork(j as u64);
            let drop: EdgeSet = rng
                .sample_distinct(base.len(), count)
                .into_iter()
                .map(|i| base.as_slice()[i])
                .collect();
            let mut add = std::collections::BTreeSet::new();
            while add.len() < count {
                let a = rng.below(n);
                let b = rng.below(n);
                if a != b && !base.contains(a, b) {
                    add.insert((a.min(b), a.max(b)));
                }
            }
            let edges = base.difference(&drop).union(&add.into_iter().collect());
            SparseGraph::with_edges(n, &edges)
        })
        .collect::<Result<_>>()?;
    Ok(ViewBundle {
        preprocessed: preprocessed.clone(),
        removed: removed.clone(),
        views,
        seed,
    })
}

/// `m` unchanged copies of the pre-processed graph.
pub fn identical_views(preprocessed: &SparseGraph, removed: &EdgeSet, m: usize) -> Result<ViewBundle> {
    check_views(m)?;
    Ok(ViewBundle {
        preprocessed: preprocessed.clone(),
        removed: removed.clone(),
        views: vec![preprocessed.clone(); m],
        seed: 0,
    })
}

pub fn build_views(
    kind: Augmentation,
    preprocessed: &SparseGraph,
    removed: &EdgeSet,
    p: f64,
    m: usize,
    seed: u64,
) -> Result<ViewBundle> {
    match kind {
        Augmentation::Recovery => make_views(preprocessed, removed, p, m, seed),
        Augmentation::Random => random_perturb_views(preprocessed, removed, p, m, seed),
        Augmentation::None => identical_views(preprocessed, removed, m),
    }
}
