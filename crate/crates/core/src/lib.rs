//! Multi-view kinematics, language-model annotation, embedding, clustering
//! and phenotype analytics for freely moving mouse recordings.

pub mod kinematics;
pub mod analytics;
pub mod annotation;
pub mod anomaly;
pub mod clustering;
pub mod embedding;
pub mod finegrained;
pub mod provider;
pub mod synthetic;
pub mod pipeline;
