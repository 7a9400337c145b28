//! Shared fixtures for the benchmarks.

use robograph::augment::{make_views, rough_preprocess, SimilarityMetric, ViewBundle};
use robograph::data::{generate_sbm, GraphBundle, SbmSpec};
use robograph::tensor::{DenseMatrix, SeededRng};

/// Block-model bundle with `nodes` nodes and default density scaled so the
/// mean degree stays near 10.
pub fn bundle(nodes: usize) -> GraphBundle {
    let p_in = (30.0 / nodes as f64).min(1.0);
    generate_sbm(&SbmSpec {
        nodes,
        p_in,
        p_out: p_in / 20.0,
        ..SbmSpec::default()
    })
    .expect("valid block-model spec")
}

/// Two recovery views of the default pre-processed graph.
pub fn views(b: &GraphBundle) -> ViewBundle {
    let pre = rough_preprocess(&b.graph, &b.features, SimilarityMetric::Jaccard, 0.03).expect("shapes agree");
    make_views(&pre.graph, &pre.removed, 0.2, 2, 0).expect("valid view parameters")
}

/// Dense matrix with entries uniform in `[-1, 1)`.
pub fn uniform(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = SeededRng::new(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform_range(-1.0, 1.0))
}
