//! File formats, synthetic benchmark graphs and report serialization.

mod bundle;
mod report;
mod sbm;

pub use bundle::{
    load_graph_bundle, read_directed_graph, read_edge_list, read_features, read_labels,
    read_split, read_undirected_graph, save_graph_bundle, split_overlaps, write_edge_list,
    write_features, write_graph, write_labels, write_split, DataSplit, GraphBundle, EDGES_FILE,
    FEATURES_FILE, LABELS_FILE, PERTURBED_FILE, SPLIT_FILE,
};
pub use report::{mean_std, read_report, write_report};
pub use sbm::{generate_sbm, stratified_split, SbmSpec};
