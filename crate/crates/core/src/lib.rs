//! Household energy management engine: power trace ingestion, usage event
//! detection, time-of-use pricing, consumption analytics and an advisor that
//! ranks efficiency advices from explicit user feedback.

pub mod advisor;
pub mod analytics;
pub mod detection;
pub mod energy;
pub mod ingestion;
pub mod model;
pub mod money;
pub mod registry;
pub mod tariff;
pub mod vocabulary;
pub mod wire;

pub use model::*;
pub use money::Money;
