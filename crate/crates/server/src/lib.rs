//! HTTP/JSON service for the household energy engine, with SQLite storage.

pub mod api;
pub mod config;
pub mod engine;
pub mod error;
pub mod store;

pub use config::Config;
pub use engine::{Clock, Engine, Principal};
pub use error::EngineError;
