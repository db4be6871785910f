//! Differentiating embedding networks: an unsupervised Siamese embedding for
//! low-dimensional visualization, spectral clustering with automatic cluster
//! count estimation, an end-to-end parametric cluster predictor, and
//! Shapley-value feature attribution for cluster assignments.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`pair_graph`] builds positive pairs (shared-nearest-neighbor pruned KNN)
//!    and distance-weighted negative pairs from the raw samples.
//! 2. [`siamese_embedder`] trains a weight-shared encoder so that the pairwise
//!    probability from [`fdist_loss`] is small for positives and large for
//!    negatives, producing an n-dimensional embedding.
//! 3. [`spectral_cluster`] clusters the embedding with a Gaussian affinity,
//!    estimates the cluster count from the Laplacian spectrum, and denoises
//!    labels with a KNN majority filter.
//! 4. [`cluster_head`] fits a SELU head on the spectral labels and fine-tunes
//!    encoder + head into a single parametric cluster predictor.
//! 5. [`explain`] attributes a sample's cluster probability to its input
//!    features with Kernel SHAP.

pub mod cluster_head;
pub mod data_io;
pub mod explain;
pub mod fdist_loss;
pub mod metrics;
pub mod nn_core;
pub mod pair_graph;
pub mod plot;
pub mod siamese_embedder;
pub mod spectral_cluster;
pub mod synth;

mod eigen;
mod error;

pub use cluster_head::ClusterModel;
pub use data_io::{Dataset, DatasetKind, RunConfig, SeedStream};
pub use error::{DenError, Result};
pub use pair_graph::{KnnIndex, PairGraph};
pub use siamese_embedder::{EmbeddingModel, EmbeddingResult};
pub use spectral_cluster::ClusterLabels;
