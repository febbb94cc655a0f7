use hems_core::advisor::AdvisorError;
use hems_core::analytics::AnalyticsError;
use hems_core::detection::DetectError;
use hems_core::ingestion::IngestError;
use hems_core::registry::RegistryError;
use hems_core::tariff::TariffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config: {0}")]
    Config(String),
    #[error("storage: {0}")]
    Storage(#[from] rusqlite::Error),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Conflict(String),
    #[error("not enough history: {0}")]
    NoHistory(String),
    #[error("corrupt stored record: {0}")]
    Corrupt(String),
}

impl EngineError {
    pub fn invalid(e: impl ToString) -> Self {
        EngineError::Invalid(e.to_string())
    }
}

impl From<IngestError> for EngineError {
    fn from(e: IngestError) -> Self {
        EngineError::invalid(e)
    }
}

impl From<DetectError> for EngineError {
    fn from(e: DetectError) -> Self {
        EngineError::invalid(e)
    }
}

impl From<TariffError> for EngineError {
    fn from(e: TariffError) -> Self {
        EngineError::invalid(e)
    }
}

impl From<AnalyticsError> for EngineError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::InsufficientHistory => EngineError::NoHistory(e.to_string()),
            other => EngineError::invalid(other),
        }
    }
}

impl From<RegistryError> for EngineError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::UnknownDevice(_) => EngineError::NotFound(e.to_string()),
            RegistryError::Duplicate(_) | RegistryError::AlreadyApplied(_) => EngineError::Conflict(e.to_string()),
            other => EngineError::invalid(other),
        }
    }
}

impl From<AdvisorError> for EngineError {
    fn from(e: AdvisorError) -> Self {
        match e {
            AdvisorError::UnknownAdvice(_) => EngineError::NotFound(e.to_string()),
            AdvisorError::Disabled(_) => EngineError::Conflict(e.to_string()),
            other => EngineError::invalid(other),
        }
    }
}

impl From<serde_json::Error> for EngineError {
    fn from(e: serde_json::Error) -> Self {
        EngineError::Corrupt(e.to_string())
    }
}
