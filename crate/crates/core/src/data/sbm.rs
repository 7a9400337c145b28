//! Stochastic block model graphs with class-template binary features.

use serde::{Deserialize, Serialize};

use super::{DataSplit, GraphBundle};
use crate::error::{Error, Result};
use crate::graph::{LabelVector, SparseGraph};
use crate::tensor::{DenseMatrix, SeededRng};

const EDGE_STREAM: u64 = 1;
const TEMPLATE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const SPLIT_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmSpec {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Bits set in each class template.
    pub on_bits: usize,
    /// Independent flip probability for every feature bit.
    pub flip_noise: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            nodes: 300,
            classes: 3,
            p_in: 0.1,
            p_out: 0.005,
            feature_dim: 100,
            on_bits: 10,
            flip_noise: 0.01,
            seed: 0,
        }
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(prob(self.p_in) && prob(self.p_out) && self.p_out < self.p_in) {
            return Err(Error::invalid(format!(
                "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if !prob(self.flip_noise) {
            return Err(Error::invalid(format!(
                "flip noise {} outside [0, 1]",
                self.flip_noise
            )));
        }
        if self.classes < 2 || self.nodes < self.classes {
            return Err(Error::invalid(format!(
                "need 2 <= classes <= nodes, got {} classes for {} nodes",
                self.classes, self.nodes
            )));
        }
        if self.feature_dim == 0 || self.on_bits > self.feature_dim {
            return Err(Error::invalid(format!(
                "on-bits {} must not exceed feature dim {} (>0)",
                self.on_bits, self.feature_dim
            )));
        }
        Ok(())
    }

    /// Contiguous class blocks; the first `nodes % classes` blocks get one
    /// extra node.
    pub fn class_of(&self) -> Vec<usize> {
        let base = self.nodes / self.classes;
        let extra = self.nodes % self.classes;
        (0..self.classes)
            .flat_map(|c| std::iter::repeat_n(c, base + usize::from(c < extra)))
            .collect()
    }
}

/// Generates a bundle fully determined by `spec.seed`.
pub fn generate_sbm(spec: &SbmSpec) -> Result<GraphBundle> {
    spec.validate()?;
    let root = SeededRng::new(spec.seed);
    let class = spec.class_of();
    let n = spec.nodes;

    let mut rng = root.fork(EDGE_STREAM);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if class[i] == class[j] { spec.p_in } else { spec.p_out };
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }
    let graph = SparseGraph::undirected(n, edges)?;

    let mut rng = root.fork(TEMPLATE_STREAM);
    let templates: Vec<Vec<bool>> = (0..spec.classes)
        .map(|_| {
            let mut t = vec![false; spec.feature_dim];
            for b in rng.sample_distinct(spec.feature_dim, spec.on_bits) {
                t[b] = true;
            }
            t
        })
        .collect();
    let mut rng = root.fork(NOISE_STREAM);
    let mut features = DenseMatrix::zeros(n, spec.feature_dim);
    for i in 0..n {
        for (b, &on) in templates[class[i]].iter().enumerate() {
            let bit = on ^ rng.bernoulli(spec.flip_noise);
            if bit {
                features.set(i, b, 1.0);
            }
        }
    }

    let split = stratified_split(&class, spec.classes, 0.1, 0.1, &mut root.fork(SPLIT_STREAM));
    Ok(GraphBundle {
        graph,
        features,
        labels: LabelVector::from_known(&class)?,
        split,
    })
}

/// Per-class shuffled split with `round(frac * class_size)` train and
/// validation nodes (at least one train node per class); the rest is test.
/// Each list is sorted.
pub fn stratified_split(
    class: &[usize],
    classes: usize,
    train_frac: f64,
    val_frac: f64,
    rng: &mut SeededRng,
) -> DataSplit {
    let mut split = DataSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..classes {
        let mut members: Vec<usize> = (0..class.len()).filter(|&i| class[i] == c).collect();
        rng.shuffle(&mut members);
        let size = members.len();
        let n_train = ((train_frac * size as f64).round() as usize).clamp(1.min(size), size);
        let n_val = ((val_frac * size as f64).round() as usize).min(size - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities_give_cliques() {
        let spec = SbmSpec {
            nodes: 4,
            classes: 2,
            p_in: 1.0,
            p_out: 0.0,
            ..SbmSpec::default()
        };
        let b = generate_sbm(&spec).unwrap();
        assert_eq!(b.graph.edge_set().as_slice(), &[(0, 1), (2, 3)]);
    }

    #[test]
    fn zero_noise_gives_identical_class_features() {
        let spec = SbmSpec {
            nodes: 30,
            flip_noise: 0.0,
            ..SbmSpec::default()
        };
        let b = generate_sbm(&spec).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                if b.labels.get(i) == b.labels.get(j) {
                    assert_eq!(b.features.row(i), b.features.row(j));
                }
            }
            assert_eq!(b.features.row(i).iter().sum::<f64>(), 10.0);
        }
    }

    #[test]
    fn invalid_probabilities_rejected() {
        for (p_in, p_out) in [(0.1, 0.2), (1.5, 0.0), (0.3, -0.1), (0.2, 0.2)] {
            let spec = SbmSpec {
                p_in,
                p_out,
                ..SbmSpec::default()
            };
            assert!(generate_sbm(&spec).is_err());
        }
    }

    #[test]
    fn class_sizes_differ_by_at_most_one() {
        for (n, k) in [(10, 3), (11, 4), (300, 3), (7, 7)] {
            let spec = SbmSpec {
                nodes: n,
                classes: k,
                ..SbmSpec::default()
            };
            let class = spec.class_of();
            let sizes: Vec<usize> = (0..k).map(|c| class.iter().filter(|&&x| x == c).count()).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn split_is_stratified_and_valid() {
        let b = generate_sbm(&SbmSpec::default()).unwrap();
        b.split.validate(300).unwrap();
        assert_eq!(b.split.train.len(), 30);
        assert_eq!(b.split.val.len(), 30);
        assert_eq!(b.split.test.len(), 240);
        for c in 0..3 {
            let in_train = b.split.train.iter().filter(|&&i| b.labels.get(i) == Some(c)).count();
            assert_eq!(in_train, 10);
        }
    }

    #[test]
    fn intra_class_fraction_monte_carlo() {
        // Expected intra edges 3·C(100,2)·0.1 = 1485, inter 3·100²·0.005 = 150.
        let mut total = 0.0;
        for seed in 0..100 {
            let b = generate_sbm(&SbmSpec {
                seed,
                ..SbmSpec::default()
            })
            .unwrap();
            let edges = b.graph.edge_set();
            let intra = edges
                .iter()
                .filter(|&(u, v)| b.labels.get(u) == b.labels.get(v))
                .count();
            total += intra as f64 / edges.len() as f64;
        }
        let mean = total / 100.0;
        assert!((0.85..=0.95).contains(&mean), "mean intra fraction {mean}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_sbm(&SbmSpec::default()).unwrap();
        let b = generate_sbm(&SbmSpec::default()).unwrap();
        assert_eq!(a, b);
        let c = generate_sbm(&SbmSpec {
            seed: 1,
            ..SbmSpec::default()
        })
        .unwrap();
        assert_ne!(a.graph, c.graph);
    }
}
