use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LabelVector, SparseGraph};
use crate::tensor::DenseMatrix;

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.txt";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLIT_FILE: &str = "split.json";
/// Attacked edge list stored next to the clean `edges.tsv`.
pub const PERTURBED_FILE: &str = "perturbed.tsv";

/// Train / validation / test node ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    /// Checks disjointness, id range and a nonempty training set.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::invalid("split has an empty training set"));
        }
        let mut seen: Vec<Option<&str>> = vec![None; n];
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &id in ids {
                if id >= n {
                    return Err(Error::invalid(format!(
                        "{name} id {id} out of range for {n} nodes"
                    )));
                }
                if let Some(prev) = seen[id] {
                    return Err(Error::invalid(format!(
                        "node {id} appears in both {prev} and {name}"
                    )));
                }
                seen[id] = Some(name);
            }
        }
        Ok(())
    }
}

/// A graph with node features, labels and a split.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle {
    pub graph: SparseGraph,
    pub features: DenseMatrix,
    pub labels: LabelVector,
    pub split: DataSplit,
}

impl GraphBundle {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-comment, non-blank lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_id(path: &Path, line: usize, tok: Option<&str>, n: usize, what: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| parse_err(path, line, format!("missing {what}")))?;
    let id: usize = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} `{tok}`")))?;
    if id >= n {
        return Err(parse_err(
            path,
            line,
            format!("{what} {id} out of range for {n} nodes"),
        ));
    }
    Ok(id)
}

/// Reads `u<TAB>v` pairs (any whitespace accepted), `#` comments allowed.
pub fn read_edge_list(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (line, l) in content_lines(&text) {
        let mut toks = l.split_whitespace();
        let u = parse_id(path, line, toks.next(), n, "node id")?;
        let v = parse_id(path, line, toks.next(), n, "node id")?;
        if toks.next().is_some() {
            return Err(parse_err(path, line, "expected exactly two ids"));
        }
        out.push((u, v));
    }
    Ok(out)
}

pub fn write_edge_list(path: &Path, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<()> {
    let mut s = String::new();
    for (u, v) in pairs {
        writeln!(s, "{u}\t{v}").unwrap();
    }
    write(path, &s)
}

/// Undirected graph from an edge file; duplicate and reversed lines collapse.
pub fn read_undirected_graph(path: &Path, n: usize) -> Result<SparseGraph> {
    SparseGraph::undirected(n, read_edge_list(path, n)?)
}

/// Directed graph where each line `i<TAB>j` makes `j` an aggregation source
/// of `i`.
pub fn read_directed_graph(path: &Path, n: usize) -> Result<SparseGraph> {
    SparseGraph::directed(n, read_edge_list(path, n)?)
}

/// Writes an undirected graph as `i<TAB>j` with `i < j`, or a directed graph
/// as one line per arc.
pub fn write_graph(path: &Path, g: &SparseGraph) -> Result<()> {
    if g.is_directed() {
        write_edge_list(path, g.arcs())
    } else {
        write_edge_list(path, g.edge_set().iter())
    }
}

/// Reads `N d` followed by `N` rows of `d` reals.
pub fn read_features(path: &Path) -> Result<DenseMatrix> {
    let text = read(path)?;
    let mut lines = content_lines(&text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing `N d` header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, hline, "header must be `N d`"))?;
    let [n, d] = dims[..] else {
        return Err(parse_err(path, hline, "header must be `N d`"));
    };
    let mut values = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (line, l) in lines {
        if rows == n {
            return Err(parse_err(path, line, format!("more than {n} feature rows")));
        }
        let before = values.len();
        for tok in l.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad number `{tok}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, "non-finite feature value"));
            }
            values.push(v);
        }
        if values.len() - before != d {
            return Err(parse_err(
                path,
                line,
                format!("row has {} values, expected {d}", values.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(
            path,
            text.lines().count(),
            format!("found {rows} feature rows, expected {n}"),
        ));
    }
    DenseMatrix::from_vec(n, d, values)
}

pub fn write_features(path: &Path, x: &DenseMatrix) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "{} {}", x.rows(), x.cols()).unwrap();
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(s, "{}", row.join(" ")).unwrap();
    }
    write(path, &s)
}

/// Reads `node<TAB>label` lines; nodes without a line get an unknown label.
pub fn read_labels(path: &Path, n: usize) -> Result<LabelVector> {
    let text = read(path)?;
    let mut labels = vec![None; n];
    for (line, l) in content_lines(&text) {
        let mut toks = l.split_whitespace();
        let node = parse_id(path, line, toks.next(), n, "node id")?;
        let tok = toks
            .next()
            .ok_or_else(|| parse_err(path, line, "missing label"))?;
        let label: usize = tok
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad label `{tok}`")))?;
        if labels[node].is_some_and(|l| l != label) {
            return Err(parse_err(path, line, format!("conflicting label for node {node}")));
        }
        labels[node] = Some(label);
    }
    LabelVector::new(labels).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn write_labels(path: &Path, labels: &LabelVector) -> Result<()> {
    let mut s = String::new();
    for (i, l) in labels.as_slice().iter().enumerate() {
        if let Some(l) = l {
            writeln!(s, "{i}\t{l}").unwrap();
        }
    }
    write(path, &s)
}

pub fn read_split(path: &Path, n: usize) -> Result<DataSplit> {
    let text = read(path)?;
    let split: DataSplit = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    split.validate(n).map_err(|e| parse_err(path, 0, e.to_string()))?;
    Ok(split)
}

pub fn write_split(path: &Path, split: &DataSplit) -> Result<()> {
    let json = serde_json::to_string(split).expect("split serializes");
    write(path, &(json + "\n"))
}

/// Loads `edges.tsv`, `features.txt`, `labels.tsv` and `split.json` from `dir`.
pub fn load_graph_bundle(dir: &Path) -> Result<GraphBundle> {
    let p = |f: &str| -> PathBuf { dir.join(f) };
    let features = read_features(&p(FEATURES_FILE))?;
    let n = features.rows();
    let graph = read_undirected_graph(&p(EDGES_FILE), n)?;
    let labels = read_labels(&p(LABELS_FILE), n)?;
    let split = read_split(&p(SPLIT_FILE), n)?;
    for &i in split.train.iter().chain(&split.val).chain(&split.test) {
        if labels.get(i).is_none() {
            return Err(parse_err(
                &p(SPLIT_FILE),
                0,
                format!("split node {i} has no label"),
            ));
        }
    }
    Ok(GraphBundle {
        graph,
        features,
        labels,
        split,
    })
}

pub fn save_graph_bundle(dir: &Path, bundle: &GraphBundle) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_graph(&dir.join(EDGES_FILE), &bundle.graph)?;
    write_features(&dir.join(FEATURES_FILE), &bundle.features)?;
    write_labels(&dir.join(LABELS_FILE), &bundle.labels)?;
    write_split(&dir.join(SPLIT_FILE), &bundle.split)
}

/// Ids present in more than one split list, for diagnostics.
pub fn split_overlaps(split: &DataSplit) -> BTreeSet<usize> {
    let train: BTreeSet<_> = split.train.iter().copied().collect();
    let val: BTreeSet<_> = split.val.iter().copied().collect();
    let test: BTreeSet<_> = split.test.iter().copied().collect();
    let mut out: BTreeSet<usize> = train.intersection(&val).copied().collect();
    out.extend(train.intersection(&test));
    out.extend(val.intersection(&test));
    out
}
