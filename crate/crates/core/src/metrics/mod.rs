//! Clustering and evaluation: k-means, reliable-sample mining, and the
//! ACC / NMI / ARI / purity / silhouette / neighbor-purity scores.

mod geometry;
mod kmeans;
mod matrix;
mod scores;

pub use geometry::{mine_reliable, mined_purity, neighbor_purity, silhouette, PseudoLabelSet};
pub use kmeans::{
    kmeans, kmeans_with, lloyd, nearest_center, ClusterResult, DEFAULT_RESTARTS, MAX_ITERATIONS,
    SHIFT_TOLERANCE,
};
pub use matrix::{squared_distance, Matrix};
pub use scores::{
    ari, clustering_accuracy, hungarian_max, nmi, purity, score_all, Contingency, Scores,
};
