//! Structural poisoning under an edge budget: uniform random noise and DICE
//! (delete edges inside classes, insert edges across classes).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeSet, LabelVector, SparseGraph};
use crate::tensor::SeededRng;

/// Rejection-sampling attempts before falling back to enumerating the pool.
const REJECTION_TRIES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Random,
    Dice,
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "dice" => Ok(Self::Dice),
            other => Err(Error::invalid(format!("unknown attack method `{other}`"))),
        }
    }
}

/// Perturbation rate `Δ` over undirected clean edges, plus the move mix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackBudget {
    pub rate: f64,
    pub seed: u64,
    /// Probability that a single change is an insertion.
    #[serde(default = "default_add_probability")]
    pub add_probability: f64,
}

fn default_add_probability() -> f64 {
    0.5
}

impl AttackBudget {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            seed,
            add_probability: default_add_probability(),
        }
    }

    /// `round(Δ · |E|)`.
    pub fn changes(&self, clean_edges: usize) -> Result<usize> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::invalid(format!(
                "perturbation rate {} outside [0, 1]",
                self.rate
            )));
        }
        if !(0.0..=1.0).contains(&self.add_probability) {
            return Err(Error::invalid(format!(
                "add probability {} outside [0, 1]",
                self.add_probability
            )));
        }
        Ok((self.rate * clean_edges as f64).round() as usize)
    }
}

/// Edges added to and removed from the clean graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub added: EdgeSet,
    pub removed: EdgeSet,
}

impl PerturbationRecord {
    pub fn len(&self) -> usize {
        self.added.len() + self.removed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies the record to `clean`, checking that it is consistent with it.
    pub fn apply(&self, clean: &SparseGraph) -> Result<SparseGraph> {
        let edges = clean.edge_set();
        if let Some((a, b)) = self.added.iter().find(|&(a, b)| edges.contains(a, b)) {
            return Err(Error::invalid(format!("added edge ({a},{b}) already present")));
        }
        if let Some((a, b)) = self.removed.iter().find(|&(a, b)| !edges.contains(a, b)) {
            return Err(Error::invalid(format!("removed edge ({a},{b}) not present")));
        }
        let result = edges.difference(&self.removed).union(&self.added);
        SparseGraph::with_edges(clean.num_nodes(), &result)
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub graph: SparseGraph,
    pub record: PerturbationRecord,
    pub requested: usize,
}

impl AttackOutcome {
    /// False when DICE ran out of candidate moves before the budget was met.
    pub fn is_complete(&self) -> bool {
        self.record.len() == self.requested
    }
}

/// Deletion pool with O(1) uniform removal.
struct DeletionPool {
    edges: Vec<(usize, usize)>,
}

impl DeletionPool {
    fn take(&mut self, rng: &mut SeededRng) -> (usize, usize) {
        let i = rng.below(self.edges.len());
        self.edges.swap_remove(i)
    }
}

/// Uniform sampler over unordered pairs accepted by `ok`, given the current
/// pool size. Samples ordered pairs and rejects; after too many misses it
/// enumerates the pool and draws from it directly.
fn sample_pair(
    rng: &mut SeededRng,
    n: usize,
    pool: usize,
    ok: impl Fn(usize, usize) -> bool,
) -> (usize, usize) {
    debug_assert!(pool > 0);
    for _ in 0..REJECTION_TRIES {
        let a = rng.below(n);
        let b = rng.below(n);
        if a != b && ok(a, b) {
            return (a.min(b), a.max(b));
        }
    }
    let mut candidates = Vec::with_capacity(pool);
    for a in 0..n {
        for b in a + 1..n {
            if ok(a, b) {
                candidates.push((a, b));
            }
        }
    }
    candidates[rng.below(candidates.len())]
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Uniform structure noise: each change is an insertion between a random
/// non-adjacent pair with probability `add_probability`, else a random
/// deletion. Forced to the other move when one pool is empty.
pub fn random_attack(g: &SparseGraph, budget: &AttackBudget) -> Result<AttackOutcome> {
    check_undirected(g)?;
    let n = g.num_nodes();
    let clean = g.edge_set();
    let requested = budget.changes(clean.len())?;
    let total_pairs = n * n.saturating_sub(1) / 2;
    if requested > total_pairs {
        return Err(Error::invalid(format!(
            "budget of {requested} changes exceeds the {total_pairs} node pairs"
        )));
    }
    let mut rng = SeededRng::new(budget.seed);
    let mut deletions = DeletionPool {
        edges: clean.as_slice().to_vec(),
    };
    let mut added: HashSet<(usize, usize)> = HashSet::new();
    let mut removed = Vec::new();
    for _ in 0..requested {
        let add_pool = total_pairs - clean.len() - added.len();
        let want_add = rng.bernoulli(budget.add_probability);
        if (want_add && add_pool > 0) || deletions.edges.is_empty() {
            let pair = sample_pair(&mut rng, n, add_pool, |a, b| {
                !clean.contains(a, b) && !added.contains(&key(a, b))
            });
            added.insert(pair);
        } else {
            removed.push(deletions.take(&mut rng));
        }
    }
    finish(g, clean, added, removed, requested)
}

/// DICE: each change deletes a random intra-class edge with probability
/// `1 - add_probability`, else inserts a random inter-class non-edge. Falls
/// back to the other move when one pool is empty and stops early, with
/// [`AttackOutcome::is_complete`] false, when both are.
pub fn dice_attack(
    g: &SparseGraph,
    labels: &LabelVector,
    budget: &AttackBudget,
) -> Result<AttackOutcome> {
    check_undirected(g)?;
    let n = g.num_nodes();
    if labels.len() != n || !labels.all_known() {
        return Err(Error::invalid("DICE needs a known label for every node"));
    }
    let y = labels.to_dense();
    let clean = g.edge_set();
    let requested = budget.changes(clean.len())?;
    let mut rng = SeededRng::new(budget.seed);

    let mut deletions = DeletionPool {
        edges: clean.iter().filter(|&(a, b)| y[a] == y[b]).collect(),
    };
    let mut class_sizes = vec![0usize; labels.num_classes()];
    y.iter().for_each(|&c| class_sizes[c] += 1);
    let same_pairs: usize = class_sizes.iter().map(|&s| s * s.saturating_sub(1) / 2).sum();
    let inter_pairs = n * n.saturating_sub(1) / 2 - same_pairs;
    let inter_edges = clean.len() - deletions.edges.len();

    let mut added: HashSet<(usize, usize)> = HashSet::new();
    let mut removed = Vec::new();
    for _ in 0..requested {
        let add_pool = inter_pairs - inter_edges - added.len();
        if add_pool == 0 && deletions.edges.is_empty() {
            log::warn!(
                "DICE exhausted both move pools after {} of {requested} changes",
                added.len() + removed.len()
            );
            break;
        }
        let want_add = rng.bernoulli(budget.add_probability);
        if (want_add && add_pool > 0) || deletions.edges.is_empty() {
            let pair = sample_pair(&mut rng, n, add_pool, |a, b| {
                y[a] != y[b] && !clean.contains(a, b) && !added.contains(&key(a, b))
            });
            added.insert(pair);
        } else {
            removed.push(deletions.take(&mut rng));
        }
    }
    finish(g, clean, added, removed, requested)
}

fn finish(
    g: &SparseGraph,
    clean: EdgeSet,
    added: HashSet<(usize, usize)>,
    removed: Vec<(usize, usize)>,
    requested: usize,
) -> Result<AttackOutcome> {
    let record = PerturbationRecord {
        added: EdgeSet::from_pairs(added),
        removed: EdgeSet::from_pairs(removed),
    };
    let graph = SparseGraph::with_edges(
        g.num_nodes(),
        &clean.difference(&record.removed).union(&record.added),
    )?;
    Ok(AttackOutcome {
        graph,
        record,
        requested,
    })
}

pub fn attack(
    method: AttackMethod,
    g: &SparseGraph,
    labels: &LabelVector,
    budget: &AttackBudget,
) -> Result<AttackOutcome> {
    match method {
        AttackMethod::Random => random_attack(g, budget),
        AttackMethod::Dice => dice_attack(g, labels, budget),
    }
}

/// Exact edge-set differences between a clean and a poisoned graph.
pub fn perturbation_diff(clean: &SparseGraph, poisoned: &SparseGraph) -> Result<PerturbationRecord> {
    if clean.num_nodes() != poisoned.num_nodes() {
        return Err(Error::invalid(format!(
            "node counts differ: clean {} vs poisoned {}",
            clean.num_nodes(),
            poisoned.num_nodes()
        )));
    }
    let c = clean.edge_set();
    let p = poisoned.edge_set();
    Ok(PerturbationRecord {
        added: p.difference(&c),
        removed: c.difference(&p),
    })
}

fn check_undirected(g: &SparseGraph) -> Result<()> {
    if g.is_directed() {
        return Err(Error::invalid("attacks operate on undirected graphs"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sbm, SbmSpec};

    fn complete(n: usize) -> SparseGraph {
        SparseGraph::undirected(n, (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b)))).unwrap()
    }

    fn ring(n: usize) -> SparseGraph {
        SparseGraph::undirected(n, (0..n).map(|i| (i, (i + 1) % n))).unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let g = ring(10);
        let out = random_attack(&g, &AttackBudget::new(0.0, 3)).unwrap();
        assert_eq!(out.graph, g);
        assert!(out.record.is_empty());
    }

    #[test]
    fn complete_graph_only_deletes() {
        let g = complete(12);
        let out = random_attack(&g, &AttackBudget::new(0.1, 1)).unwrap();
        assert!(out.record.added.is_empty());
        assert_eq!(out.record.removed.len(), (0.1f64 * 66.0).round() as usize);
    }

    #[test]
    fn random_budget_is_exact() {
        let g = ring(100);
        let out = random_attack(&g, &AttackBudget::new(0.2, 9)).unwrap();
        assert_eq!(out.record.len(), 20);
        assert_eq!(out.record.apply(&g).unwrap(), out.graph);
        assert!(out.record.added.intersection(&g.edge_set()).is_empty());
        assert!(out.record.removed.is_subset(&g.edge_set()));
    }

    #[test]
    fn infeasible_random_budget_rejected() {
        let g = complete(3);
        assert!(random_attack(&g, &AttackBudget::new(1.5, 0)).is_err());
    }

    #[test]
    fn dice_without_intra_edges_only_adds() {
        // bipartite between classes: no intra-class edges to delete
        let g = SparseGraph::undirected(6, [(0, 3), (1, 4), (2, 5), (0, 4), (1, 5)]).unwrap();
        let labels = LabelVector::from_known(&[0, 0, 0, 1, 1, 1]).unwrap();
        let out = dice_attack(&g, &labels, &AttackBudget::new(0.4, 2)).unwrap();
        assert_eq!(out.record.removed.len(), 0);
        assert_eq!(out.record.added.len(), 2);
    }

    #[test]
    fn dice_reports_exhaustion() {
        // complete bipartite: no inter-class non-edges, no intra edges
        let g = SparseGraph::undirected(4, [(0, 2), (0, 3), (1, 2), (1, 3)]).unwrap();
        let labels = LabelVector::from_known(&[0, 0, 1, 1]).unwrap();
        let out = dice_attack(&g, &labels, &AttackBudget::new(0.5, 0)).unwrap();
        assert!(!out.is_complete());
        assert!(out.record.is_empty());
    }

    #[test]
    fn dice_on_sbm_budget() {
        let b = generate_sbm(&SbmSpec {
            nodes: 120,
            p_in: 0.08,
            p_out: 0.01,
            ..SbmSpec::default()
        })
        .unwrap();
        let m = b.graph.num_edges();
        let out = dice_attack(&b.graph, &b.labels, &AttackBudget::new(0.1, 4)).unwrap();
        assert_eq!(out.record.len(), (0.1 * m as f64).round() as usize);
    }

    #[test]
    fn diff_examples() {
        let g = ring(8);
        assert!(perturbation_diff(&g, &g).unwrap().is_empty());
        let mut e = g.edge_set();
        e = e.union(&EdgeSet::from_pairs([(0, 5)]));
        let p = SparseGraph::with_edges(8, &e).unwrap();
        let rec = perturbation_diff(&g, &p).unwrap();
        assert_eq!(rec.added.as_slice(), &[(0, 5)]);
        assert!(rec.removed.is_empty());
        assert!(perturbation_diff(&g, &ring(9)).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("DICE".parse::<AttackMethod>().unwrap(), AttackMethod::Dice);
        assert!("meta".parse::<AttackMethod>().is_err());
    }
}
