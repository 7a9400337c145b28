//! Structure refinement from learned embeddings: prune weakly similar edges,
//! then let every node aggregate from its `k` most similar nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeSet, LabelVector, SparseGraph};
use crate::tensor::{cosine, dot, norm, DenseMatrix};

/// Cosine similarity of embedding rows `i` and `j`; 0 if either is all-zero.
pub fn embedding_similarity(h: &DenseMatrix, i: usize, j: usize) -> f64 {
    cosine(h.row(i), h.row(j))
}

fn check_rows(g: &SparseGraph, h: &DenseMatrix) -> Result<()> {
    if h.rows() != g.num_nodes() {
        return Err(Error::shape(
            "refine",
            format!("{} embedding rows for {} nodes", h.rows(), g.num_nodes()),
        ));
    }
    Ok(())
}

/// Edges of `g` whose endpoint similarity is strictly above `t2`.
pub fn prune_edges(g: &SparseGraph, h: &DenseMatrix, t2: f64) -> Result<EdgeSet> {
    if !t2.is_finite() {
        return Err(Error::invalid(format!("t2 must be finite, got {t2}")));
    }
    check_rows(g, h)?;
    Ok(g.edge_set()
        .iter()
        .filter(|&(i, j)| embedding_similarity(h, i, j) > t2)
        .collect())
}

/// For each node, the `min(k, N-1)` other nodes of highest similarity,
/// ties to the smaller id. Row `i` of the result lists targets of node `i` in
/// rank order.
pub fn topk_neighbors(h: &DenseMatrix, k: usize) -> Vec<Vec<usize>> {
    let n = h.rows();
    let take = k.min(n.saturating_sub(1));
    let norms: Vec<f64> = (0..n).map(|i| norm(h.row(i))).collect();
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n);
    (0..n)
        .map(|i| {
            if take == 0 {
                return Vec::new();
            }
            scored.clear();
            for j in (0..n).filter(|&j| j != i) {
                let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                    0.0
                } else {
                    dot(h.row(i), h.row(j)) / (norms[i] * norms[j])
                };
                scored.push((s, j));
            }
            let by_rank = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            if take < scored.len() {
                scored.select_nth_unstable_by(take - 1, by_rank);
                scored.truncate(take);
            }
            scored.sort_unstable_by(by_rank);
            scored.iter().map(|&(_, j)| j).collect()
        })
        .collect()
}

/// The optimal graph `A* = A^R ∨ T^k` and its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedGraph {
    /// Directed; row `i` lists the aggregation sources of node `i`.
    pub optimal: SparseGraph,
    pub retained: EdgeSet,
    /// `inserted[i]` are the top-k targets of node `i`.
    pub inserted: Vec<Vec<usize>>,
}

impl RefinedGraph {
    /// Total top-k entries, `Σ_i |T^k_i|`.
    pub fn inserted_count(&self) -> usize {
        self.inserted.iter().map(Vec::len).sum()
    }
}

/// `A^R` plus the top-k arcs of every node, OR-combined.
pub fn topk_insert(n: usize, retained: &EdgeSet, h: &DenseMatrix, k: usize) -> Result<RefinedGraph> {
    if h.rows() != n {
        return Err(Error::shape("topk_insert", format!("{} embedding rows for {n} nodes", h.rows())));
    }
    let inserted = topk_neighbors(h, k);
    let arcs = retained
        .iter()
        .flat_map(|(a, b)| [(a, b), (b, a)])
        .chain(inserted.iter().enumerate().flat_map(|(i, js)| js.iter().map(move |&j| (i, j))));
    Ok(RefinedGraph {
        optimal: SparseGraph::directed(n, arcs)?,
        retained: retained.clone(),
        inserted,
    })
}

/// Pruning followed by top-k insertion on the pre-processed graph.
pub fn refine(g: &SparseGraph, h: &DenseMatrix, t2: f64, k: usize) -> Result<RefinedGraph> {
    let retained = prune_edges(g, h, t2)?;
    topk_insert(g.num_nodes(), &retained, h, k)
}

/// Audit of a removed-edge set against a known attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub total: usize,
    /// Removed edges that the attack added.
    pub adversarial: usize,
    /// Removed edges present in the clean graph.
    pub normal: usize,
    /// Normal removed edges whose endpoints have different labels.
    pub normal_heterophilic: usize,
    /// `adversarial / total`, 0 when nothing was removed.
    pub accuracy: f64,
}

/// Classifies `removed` against the clean and poisoned edge sets.
/// `removed` must be a subset of `poisoned`.
pub fn removal_report(
    clean: &EdgeSet,
    poisoned: &EdgeSet,
    removed: &EdgeSet,
    labels: &LabelVector,
) -> Result<RemovalReport> {
    if !removed.is_subset(poisoned) {
        let stray = removed.difference(poisoned);
        let (a, b) = stray.as_slice()[0];
        return Err(Error::invalid(format!(
            "removed edge ({a}, {b}) is not in the poisoned graph"
        )));
    }
    let adversarial = removed.intersection(&poisoned.difference(clean));
    let normal = removed.intersection(clean);
    let normal_heterophilic = normal
        .iter()
        .filter(|&(a, b)| labels.same_class(a, b) == Some(false))
        .count();
    let total = removed.len();
    Ok(RemovalReport {
        total,
        adversarial: adversarial.len(),
        normal: normal.len(),
        normal_heterophilic,
        accuracy: if total == 0 {
            0.0
        } else {
            adversarial.len() as f64 / total as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let h = rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(embedding_similarity(&h, 0, 0), 1.0);
        assert_eq!(embedding_similarity(&h, 0, 1), 0.0);
        assert!((embedding_similarity(&h, 2, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(embedding_similarity(&h, 3, 0), 0.0);
    }

    #[test]
    fn prune_boundaries() {
        let g = SparseGraph::undirected(4, [(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let h = rows(&[&[1.0, 0.0], &[0.3, 1.0], &[-1.0, 0.2], &[0.5, -0.5]]);
        assert_eq!(prune_edges(&g, &h, -1.0).unwrap(), g.edge_set());
        assert!(prune_edges(&g, &h, 1.0).unwrap().is_empty());
        assert!(prune_edges(&g, &h, f64::NAN).is_err());
        let dup = rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        let g2 = SparseGraph::undirected(2, [(0, 1)]).unwrap();
        assert!(prune_edges(&g2, &dup, 1.0).unwrap().is_empty());
    }

    /// Unit rows with pairwise cosines 0.9 (0,1), 0.1 (0,2), 0.2 (1,2).
    fn three_node() -> DenseMatrix {
        rows(&[
            &[1.0, 0.0, 0.0],
            &[0.9, 0.435_889_894_354_067_33, 0.0],
            &[0.1, 0.252_357_307_257_618, 0.962_453_006_371_575_6],
        ])
    }

    #[test]
    fn three_node_topk_example() {
        let h = three_node();
        assert!((embedding_similarity(&h, 0, 1) - 0.9).abs() < 1e-9);
        assert!((embedding_similarity(&h, 0, 2) - 0.1).abs() < 1e-9);
        assert!((embedding_similarity(&h, 1, 2) - 0.2).abs() < 1e-9);
        let r = topk_insert(3, &EdgeSet::new(), &h, 1).unwrap();
        let arcs: Vec<_> = r.optimal.arcs().collect();
        assert_eq!(arcs, vec![(0, 1), (1, 0), (2, 1)]);
        assert!(!r.optimal.has_arc(1, 2));
    }

    #[test]
    fn topk_zero_is_retained_graph() {
        let h = three_node();
        let retained = EdgeSet::from_pairs([(0, 2)]);
        let r = topk_insert(3, &retained, &h, 0).unwrap();
        assert_eq!(r.optimal.arcs().collect::<Vec<_>>(), vec![(0, 2), (2, 0)]);
        assert_eq!(r.inserted_count(), 0);
    }

    #[test]
    fn ties_prefer_smaller_id_and_large_k_saturates() {
        let h = rows(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(topk_neighbors(&h, 1), vec![vec![1], vec![0], vec![0], vec![0]]);
        let all = topk_neighbors(&h, 10);
        assert_eq!(all[2], vec![0, 1, 3]);
        let r = topk_insert(4, &EdgeSet::new(), &h, 10).unwrap();
        assert_eq!(r.optimal.num_arcs(), 12);
    }

    #[test]
    fn existing_neighbors_stay_eligible() {
        let h = three_node();
        let r = topk_insert(3, &EdgeSet::from_pairs([(0, 1)]), &h, 1).unwrap();
        assert_eq!(r.inserted[0], vec![1]);
        assert_eq!(r.optimal.neighbors(0), &[1]);
    }

    fn labels() -> LabelVector {
        LabelVector::from_known(&[0, 0, 0, 1, 1, 1, 0, 1, 0, 1]).unwrap()
    }

    #[test]
    fn removal_report_hand_counts() {
        let clean = EdgeSet::from_pairs([(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7)]);
        let added = EdgeSet::from_pairs([(0, 9), (1, 8), (2, 7)]);
        let poisoned = clean.union(&added);
        assert_eq!(poisoned.len(), 10);
        let removed = EdgeSet::from_pairs([(0, 9), (1, 8), (2, 7), (2, 3), (4, 5)]);
        let r = removal_report(&clean, &poisoned, &removed, &labels()).unwrap();
        assert_eq!((r.total, r.adversarial, r.normal, r.normal_heterophilic), (5, 3, 2, 1));
        assert!((r.accuracy - 0.6).abs() < 1e-15);

        let exact = removal_report(&clean, &poisoned, &added, &labels()).unwrap();
        assert_eq!(exact.accuracy, 1.0);
        let none = removal_report(&clean, &poisoned, &EdgeSet::new(), &labels()).unwrap();
        assert_eq!((none.total, none.adversarial, none.normal, none.accuracy), (0, 0, 0, 0.0));
        assert!(removal_report(&clean, &poisoned, &EdgeSet::from_pairs([(0, 5)]), &labels()).is_err());
    }
}
