//! Search, ethograms, occupancy, group statistics and phenotype prediction.

pub mod ethogram;
pub mod occupancy;
pub mod phenotype;
pub mod search;

use thiserror::Error;

pub use ethogram::{behavior_proportions, window_proportions, EthogramTrack, ProportionRow, Sample, Window};
pub use occupancy::{spatial_occupancy, Occupancy, OccupancyPoint, ARENA_RADIUS_CM};
pub use phenotype::{
    build_profile, leave_one_out, predict_phenotype, prediction_matrix, PhenotypeProfile, Prediction, PredictionMatrix,
    PredictOptions, ReferenceMode,
};
pub use search::{search, SearchHit};

use crate::embedding::EmbeddingError;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}
