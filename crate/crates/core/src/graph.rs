//! Graph data model: unit-weight adjacency in compressed-row form, explicit
//! edge sets, node labels, and the structural utilities built on them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, SparseMatrix};

/// Unit-weight adjacency, directed or undirected.
///
/// Self-loops are never stored. An undirected graph stores both `(i, j)` and
/// `(j, i)`. For a directed graph, row `i` lists the nodes `i` aggregates from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseGraph {
    n: usize,
    directed: bool,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparseGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            directed: false,
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
        }
    }

    /// Undirected graph from unordered pairs. Duplicates and reversed
    /// duplicates collapse; self-loops are dropped.
    pub fn undirected(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut arcs = Vec::new();
        for (u, v) in edges {
            check_node(n, u)?;
            check_node(n, v)?;
            if u != v {
                arcs.push((u, v));
                arcs.push((v, u));
            }
        }
        Ok(Self::from_arcs(n, false, arcs))
    }

    /// Directed graph from `(row, source)` arcs.
    pub fn directed(n: usize, arcs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list = Vec::new();
        for (u, v) in arcs {
            check_node(n, u)?;
            check_node(n, v)?;
            if u != v {
                list.push((u, v));
            }
        }
        Ok(Self::from_arcs(n, true, list))
    }

    fn from_arcs(n: usize, directed: bool, mut arcs: Vec<(usize, usize)>) -> Self {
        arcs.sort_unstable();
        arcs.dedup();
        let mut row_ptr = vec![0usize; n + 1];
        for &(u, _) in &arcs {
            row_ptr[u + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            directed,
            row_ptr,
            col_idx: arcs.into_iter().map(|(_, v)| v).collect(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Stored `(row, col)` entries.
    pub fn num_arcs(&self) -> usize {
        self.col_idx.len()
    }

    /// Undirected edge count, or arc count for directed graphs.
    pub fn num_edges(&self) -> usize {
        if self.directed {
            self.num_arcs()
        } else {
            self.num_arcs() / 2
        }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn has_arc(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j)))
    }

    /// Unordered pairs `i < j` joined by at least one arc.
    pub fn edge_set(&self) -> EdgeSet {
        EdgeSet::from_pairs(self.arcs())
    }

    /// Undirected closure: `(i, j)` present iff either arc was.
    pub fn symmetrized(&self) -> SparseGraph {
        if !self.directed {
            return self.clone();
        }
        SparseGraph::undirected(self.n, self.arcs()).expect("ids already validated")
    }

    /// Unit-valued adjacency as a numeric operand.
    pub fn adjacency_matrix(&self) -> SparseMatrix {
        let t = self.arcs().map(|(i, j)| (i, j, 1.0)).collect();
        SparseMatrix::from_triplets(self.n, self.n, t).expect("ids already validated")
    }

    /// Same node set with `edges` as its undirected edge set.
    pub fn with_edges(n: usize, edges: &EdgeSet) -> Result<SparseGraph> {
        SparseGraph::undirected(n, edges.iter())
    }
}

fn check_node(n: usize, u: usize) -> Result<()> {
    if u >= n {
        return Err(Error::invalid(format!("node id {u} out of range for {n} nodes")));
    }
    Ok(())
}

/// Sorted set of unordered node pairs, each stored as `(min, max)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeSet {
    pairs: Vec<(usize, usize)>,
}

impl EdgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut v: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        v.sort_unstable();
        v.dedup();
        Self { pairs: v }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.pairs.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn as_slice(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn union(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet::from_pairs(self.iter().chain(other.iter()))
    }

    pub fn difference(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet {
            pairs: self.iter().filter(|&(a, b)| !other.contains(a, b)).collect(),
        }
    }

    pub fn intersection(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet {
            pairs: self.iter().filter(|&(a, b)| other.contains(a, b)).collect(),
        }
    }

    pub fn is_subset(&self, other: &EdgeSet) -> bool {
        self.iter().all(|(a, b)| other.contains(a, b))
    }

    pub fn max_node(&self) -> Option<usize> {
        self.pairs.iter().map(|&(_, b)| b).max()
    }
}

impl FromIterator<(usize, usize)> for EdgeSet {
    fn from_iter<T: IntoIterator<Item = (usize, usize)>>(iter: T) -> Self {
        EdgeSet::from_pairs(iter)
    }
}

/// Per-node class labels; `None` marks an unknown label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<Option<usize>>,
    num_classes: usize,
}

impl LabelVector {
    /// Class count is `max label + 1` and must be at least 2.
    pub fn new(labels: Vec<Option<usize>>) -> Result<Self> {
        let num_classes = labels.iter().flatten().max().map_or(0, |m| m + 1);
        if num_classes < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes, found {num_classes}"
            )));
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    pub fn from_known(labels: &[usize]) -> Result<Self> {
        Self::new(labels.iter().map(|&l| Some(l)).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn all_known(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// Dense label array with unknowns mapped to `usize::MAX`.
    pub fn to_dense(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.unwrap_or(usize::MAX)).collect()
    }

    /// Whether both endpoints carry known, equal labels.
    pub fn same_class(&self, a: usize, b: usize) -> Option<bool> {
        Some(self.labels[a]? == self.labels[b]?)
    }
}

/// `d_i = |N_i*|`: out-neighbour count, self excluded.
pub fn degrees(g: &SparseGraph) -> Vec<usize> {
    (0..g.num_nodes()).map(|i| g.degree(i)).collect()
}

/// Result of [`largest_connected_component`].
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: SparseGraph,
    pub features: DenseMatrix,
    pub labels: LabelVector,
    /// `old_to_new[old]` is the new id, or `None` if the node was dropped.
    pub old_to_new: Vec<Option<usize>>,
    pub new_to_old: Vec<usize>,
}

/// Connected components of an undirected graph, as sorted node lists in
/// order of their smallest node id.
pub fn connected_components(g: &SparseGraph) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(u) = stack.pop() {
            comp.push(u);
            for &v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Restricts a graph, its features and labels to the largest connected
/// component. Ties go to the component with the smallest node id; ids are
/// remapped densely in their original order.
pub fn largest_connected_component(
    g: &SparseGraph,
    features: &DenseMatrix,
    labels: &LabelVector,
) -> Result<Subgraph> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::invalid("largest connected component of an empty graph"));
    }
    if g.is_directed() {
        return Err(Error::invalid("largest connected component needs an undirected graph"));
    }
    if features.rows() != n || labels.len() != n {
        return Err(Error::shape(
            "largest_connected_component",
            format!(
                "{n} nodes, {} feature rows, {} labels",
                features.rows(),
                labels.len()
            ),
        ));
    }
    // components come ordered by smallest id, so the first maximum wins ties
    let comps = connected_components(g);
    let best = comps
        .iter()
        .enumerate()
        .fold(0, |best, (i, c)| if c.len() > comps[best].len() { i } else { best });
    let keep = &comps[best];
    let mut old_to_new = vec![None; n];
    for (new, &old) in keep.iter().enumerate() {
        old_to_new[old] = Some(new);
    }
    let edges: Vec<_> = g
        .arcs()
        .filter_map(|(a, b)| Some((old_to_new[a]?, old_to_new[b]?)))
        .collect();
    let graph = SparseGraph::undirected(keep.len(), edges)?;
    let features = features.select_rows(keep);
    let sub_labels: Vec<Option<usize>> = keep.iter().map(|&o| labels.get(o)).collect();
    let labels = LabelVector {
        num_classes: labels.num_classes(),
        labels: sub_labels,
    };
    Ok(Subgraph {
        graph,
        features,
        labels,
        old_to_new,
        new_to_old: keep.clone(),
    })
}

/// `Â = (D+I)^{-1/2} (A+I) (D+I)^{-1/2}`, the GCN renormalisation with
/// self-loops. Degrees are row sizes, so the result is symmetric exactly when
/// the graph is undirected.
pub fn renormalized_adjacency(g: &SparseGraph) -> SparseMatrix {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt())
        .collect();
    let mut t = Vec::with_capacity(g.num_arcs() + n);
    for i in 0..n {
        t.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        for &j in g.neighbors(i) {
            t.push((i, j, inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    SparseMatrix::from_triplets(n, n, t).expect("ids already validated")
}

/// Histogram of edge degree `d_i + d_j` (degrees taken on `g`) over `edges`.
pub fn edge_degree_histogram(g: &SparseGraph, edges: &EdgeSet) -> Result<BTreeMap<usize, usize>> {
    let mut hist = BTreeMap::new();
    for (a, b) in edges.iter() {
        check_node(g.num_nodes(), b)?;
        *hist.entry(g.degree(a) + g.degree(b)).or_insert(0) += 1;
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> SparseGraph {
        SparseGraph::undirected(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    fn path3() -> SparseGraph {
        SparseGraph::undirected(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn degree_examples() {
        assert_eq!(degrees(&SparseGraph::empty(4)), vec![0; 4]);
        assert_eq!(degrees(&triangle()), vec![2, 2, 2]);
        assert_eq!(degrees(&path3()), vec![1, 2, 1]);
    }

    #[test]
    fn construction_dedups_and_drops_self_loops() {
        let g = SparseGraph::undirected(3, [(0, 1), (1, 0), (2, 2), (0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert!(!g.has_arc(2, 2));
        assert!(SparseGraph::undirected(2, [(0, 2)]).is_err());
    }

    #[test]
    fn renormalized_examples() {
        let iso = renormalized_adjacency(&SparseGraph::empty(2));
        assert_eq!(iso.get(0, 0), 1.0);

        let single = renormalized_adjacency(&SparseGraph::undirected(2, [(0, 1)]).unwrap());
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert!((single.get(i, j) - 0.5).abs() < 1e-15);
        }

        let p = renormalized_adjacency(&path3());
        assert!((p.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!(p.is_symmetric(0.0));
    }

    #[test]
    fn edge_degree_examples() {
        let t = triangle();
        assert_eq!(
            edge_degree_histogram(&t, &t.edge_set()).unwrap(),
            BTreeMap::from([(4, 3)])
        );
        let p = path3();
        assert_eq!(
            edge_degree_histogram(&p, &p.edge_set()).unwrap(),
            BTreeMap::from([(3, 2)])
        );
        let star = SparseGraph::undirected(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_eq!(
            edge_degree_histogram(&star, &star.edge_set()).unwrap(),
            BTreeMap::from([(4, 3)])
        );
    }

    fn lcc_of(g: &SparseGraph) -> Subgraph {
        let n = g.num_nodes();
        let x = DenseMatrix::from_fn(n, 2, |i, j| (i * 10 + j) as f64);
        let y = LabelVector::from_known(&(0..n).map(|i| i % 2).collect::<Vec<_>>()).unwrap();
        largest_connected_component(g, &x, &y).unwrap()
    }

    #[test]
    fn lcc_keeps_largest_component() {
        let g = SparseGraph::undirected(5, [(0, 3), (1, 2), (2, 4)]).unwrap();
        let sub = lcc_of(&g);
        assert_eq!(sub.new_to_old, vec![1, 2, 4]);
        assert_eq!(sub.graph.num_edges(), 2);
        assert_eq!(sub.features.row(2), &[40.0, 41.0]);
        assert_eq!(sub.labels.get(0), Some(1));
        assert_eq!(sub.old_to_new[0], None);
    }

    #[test]
    fn lcc_identity_on_connected_graph_and_tie_rule() {
        let sub = lcc_of(&triangle());
        assert_eq!(sub.new_to_old, vec![0, 1, 2]);
        assert_eq!(sub.graph, triangle());

        let tie = SparseGraph::undirected(4, [(1, 3), (0, 2)]).unwrap();
        assert_eq!(lcc_of(&tie).new_to_old, vec![0, 2]);
    }

    #[test]
    fn lcc_rejects_empty() {
        let g = SparseGraph::empty(0);
        let x = DenseMatrix::zeros(0, 1);
        let y = LabelVector {
            labels: vec![],
            num_classes: 2,
        };
        assert!(largest_connected_component(&g, &x, &y).is_err());
    }

    #[test]
    fn edge_set_algebra() {
        let a = EdgeSet::from_pairs([(1, 0), (2, 3), (0, 1)]);
        let b = EdgeSet::from_pairs([(3, 2), (4, 5)]);
        assert_eq!(a.len(), 2);
        assert_eq!(a.intersection(&b).as_slice(), &[(2, 3)]);
        assert_eq!(a.difference(&b).as_slice(), &[(0, 1)]);
        assert_eq!(a.union(&b).len(), 3);
    }
}
