//! Exact t-SNE layout of embedding vectors onto the unit square.

pub mod affinity;
pub mod rng;
pub mod tsne;

pub use affinity::{conditional_affinities, squared_distances, symmetrize, AffinityMatrix, ConditionalAffinities, SquareMatrix};
pub use tsne::{
    affinities_for, kl_divergence, kl_gradient, run_tsne, run_tsne_observed, student_t_affinities, IterationStats,
    LayoutResult, TsneConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum LayoutError {
    #[error("all input points are identical")]
    Degenerate,
    #[error("invalid layout configuration: {0}")]
    Config(String),
    #[error("invalid layout input: {0}")]
    InvalidInput(String),
    #[error("non-finite gradient or coordinates at iteration {iteration}")]
    Numerical { iteration: usize },
}
