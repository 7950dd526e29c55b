//! Pool-based active learning over dense embeddings.
//!
//! The main query strategy scores each unlabeled sample by the entropy of its
//! prior-calibrated zero-shot prediction plus a kernel-weighted average of its
//! neighbors' entropies, then clusters the pool with those scores as k-means
//! weights and queries the sample closest to each centroid. Random, entropy,
//! k-center (CoreSet) and gradient-embedding (BADGE) baselines share the same
//! interface, and a small trainer stands in for prompt tuning so whole
//! multi-round experiments can run end to end.

pub mod clustering;
pub mod driver;
pub mod error;
pub mod neighborhood;
pub mod scalar;
pub mod scoring;
pub mod store;
pub mod strategies;
pub mod trainer;

pub use error::{DataError, Error, Result};
pub use scalar::Scalar;

pub type Pool = store::EmbeddingPool<f64>;
pub type Pool32 = store::EmbeddingPool<f32>;
pub type Head = store::ClassHead<f64>;
pub type Head32 = store::ClassHead<f32>;
pub type Probabilities = scoring::ProbabilityTable<f64>;
pub type Prior = scoring::ContextPrior<f64>;
pub type Graph = neighborhood::NeighborGraph<f64>;
pub type Uncertainty = neighborhood::UncertaintyReport<f64>;
pub type Clusters = clustering::ClusterResult<f64>;


pub type Request<'a> = strategies::QueryRequest<'a, f64>;
pub type Trained = trainer::TrainedHead<f64>;
pub type Data = driver::ExperimentData<f64>;
