//! Runs operations in-process against the local store, or over HTTP.

use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use hems_client::Client;
use hems_core::analytics::{local_date, PeriodKind};
use hems_core::ingestion::parse_trace;
use hems_core::wire::{
    AdvicesResponse, DaySummary, EstimateResponse, EventDto, FeedbackRequest, FeedbackResponse, IngestReport,
    ItemizationResponse, ReadingRow, ReadingsRequest, SlotDistributionResponse, UsageResponse,
};
use hems_core::{DeviceId, HouseholdId, Timestamp, UserId};
use hems_server::Engine;
use tokio::runtime::Runtime;

const UPLOAD_CHUNK: usize = 20_000;

pub type Result<T> = std::result::Result<T, String>;

pub enum Backend {
    Local {
        engine: Arc<Engine>,
        household: HouseholdId,
        now: Timestamp,
    },
    Remote {
        client: Client,
        rt: Runtime,
    },
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl Backend {
    pub fn ingest_file(&self, path: &Path) -> Result<IngestReport> {
        let bytes = std::fs::read(path).map_err(err)?;
        match self {
            Backend::Local { engine, household, .. } => engine.ingest_trace(household, &bytes).map_err(err),
            Backend::Remote { client, rt } => {
                let parsed = parse_trace(&bytes).map_err(err)?;
                let mut report = IngestReport {
                    rejected: parsed.stats.malformed,
                    warnings: parsed.warnings.clone(),
                    ..Default::default()
                };
                for channel in &parsed.channels {
                    let rows: Vec<ReadingRow> = parsed
                        .samples
                        .iter()
                        .filter(|s| &s.channel_id == channel)
                        .map(|s| ReadingRow {
                            t: hems_core::wire::to_utc(s.timestamp).fixed_offset(),
                            w: s.power,
                        })
                        .collect();
                    for chunk in rows.chunks(UPLOAD_CHUNK) {
                        let req = ReadingsRequest {
                            channel_id: channel.to_string(),
                            samples: chunk.to_vec(),
                        };
                        let r = rt.block_on(client.post_readings(&req)).map_err(err)?;
                        report.accepted += r.accepted;
                        report.duplicates += r.duplicates;
                    }
                }
                Ok(report)
            }
        }
    }

    pub fn detect(&self, device: &str) -> Result<Vec<EventDto>> {
        match self {
            Backend::Local { engine, household, .. } => engine.detect(household, &DeviceId::new(device)).map_err(err),
            Backend::Remote { client, rt } => rt.block_on(client.events(Some(device), None, None)).map_err(err),
        }
    }

    pub fn itemization(&self, kind: PeriodKind) -> Result<ItemizationResponse> {
        match self {
            Backend::Local { engine, household, now } => engine.itemization(household, kind, *now).map_err(err),
            Backend::Remote { client, rt } => rt.block_on(client.itemization(period_name(kind))).map_err(err),
        }
    }

    pub fn slots(&self, month: Option<(i32, u32)>) -> Result<SlotDistributionResponse> {
        match self {
            Backend::Local { engine, household, now } => {
                let (y, m) = match month {
                    Some(ym) => ym,
                    None => {
                        use chrono::Datelike;
                        let d = local_date(*now, engine.timezone(household).map_err(err)?);
                        (d.year(), d.month())
                    }
                };
                engine.slot_distribution(household, y, m).map_err(err)
            }
            Backend::Remote { client, rt } => {
                let m = month.map(|(y, m)| format!("{y:04}-{m:02}"));
                rt.block_on(client.slot_distribution(m.as_deref())).map_err(err)
            }
        }
    }

    pub fn estimate(&self) -> Result<EstimateResponse> {
        match self {
            Backend::Local { engine, household, now } => engine.estimate_today(household, *now).map_err(err),
            Backend::Remote { client, rt } => rt.block_on(client.estimate_today()).map_err(err),
        }
    }

    pub fn usage(&self, device: &str, kind: PeriodKind) -> Result<UsageResponse> {
        match self {
            Backend::Local { engine, household, now } => {
                engine.usage(household, &DeviceId::new(device), kind, *now).map_err(err)
            }
            Backend::Remote { client, rt } => rt.block_on(client.usage(device, period_name(kind))).map_err(err),
        }
    }

    pub fn summary(&self, date: Option<NaiveDate>) -> Result<DaySummary> {
        match self {
            Backend::Local { engine, household, now } => {
                let date = match date {
                    Some(d) => d,
                    None => local_date(*now, engine.timezone(household).map_err(err)?),
                };
                engine.day_summary(household, date).map_err(err)
            }
            Backend::Remote { client, rt } => rt.block_on(client.day_summary(date)).map_err(err),
        }
    }

    fn local_user(engine: &Engine, household: &HouseholdId, user: Option<&str>) -> Result<UserId> {
        match user {
            Some(u) => Ok(UserId::new(u)),
            None => engine
                .default_user(household)
                .cloned()
                .ok_or_else(|| format!("household '{household}' has no users; pass --user")),
        }
    }

    pub fn advices(&self, user: Option<&str>) -> Result<AdvicesResponse> {
        match self {
            Backend::Local { engine, household, now } => {
                let user = Self::local_user(engine, household, user)?;
                engine.advices(household, &user, *now).map_err(err)
            }
            Backend::Remote { client, rt } => rt.block_on(client.advices()).map_err(err),
        }
    }

    pub fn feedback(&self, user: Option<&str>, advice_id: &str, req: &FeedbackRequest) -> Result<FeedbackResponse> {
        match self {
            Backend::Local { engine, household, now } => {
                let user = Self::local_user(engine, household, user)?;
                engine.feedback(household, &user, advice_id, req, *now).map_err(err)
            }
            Backend::Remote { client, rt } => rt.block_on(client.feedback(advice_id, req)).map_err(err),
        }
    }
}

pub fn period_name(kind: PeriodKind) -> &'static str {
    match kind {
        PeriodKind::Day => "day",
        PeriodKind::Week => "week",
        PeriodKind::Month => "month",
        PeriodKind::Year => "year",
    }
}
