//! JSON bodies exchanged by the HTTP service and its clients.
//!
//! Values keep full precision in memory; floating point figures are rounded
//! to four decimals only when serialized.

use std::collections::BTreeMap;

use chrono::{DateTime, FixedOffset, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize, Serializer};

use crate::advisor::{AdviceParams, AdviceType, FeedbackAction, RejectCause};
use crate::analytics::{ItemizationEntry, SlotShareRow, UsageModel};
use crate::model::{CategoryId, DeviceId, DeviceMetadata, EventSource, Mobility, SlotId, Timestamp, UsageEvent};
use crate::money::Money;

pub const API_PREFIX: &str = "/api/v1";

pub fn round4(v: f64) -> f64 {
    (v * 10_000.0).round() / 10_000.0
}

pub(crate) fn ser4<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round4(*v))
}

fn ser4_opt<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_some(&round4(*v)),
        None => s.serialize_none(),
    }
}

fn ser4_map<S: Serializer>(m: &BTreeMap<SlotId, f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(m.iter().map(|(k, v)| (k, round4(*v))))
}

pub fn to_utc(t: Timestamp) -> DateTime<Utc> {
    Utc.timestamp_opt(t, 0).single().expect("timestamp in range")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingRow {
    pub t: DateTime<FixedOffset>,
    pub w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingsRequest {
    pub channel_id: String,
    pub samples: Vec<ReadingRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub index: usize,
    pub message: String,
}

/// Outcome of an ingestion. `accepted` and `duplicates` count readings;
/// `rejected` counts input rows that could not be parsed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<RowError>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl IngestReport {
    pub fn absorb(&mut self, other: IngestReport) {
        let offset = self.accepted + self.duplicates + self.rejected;
        self.accepted += other.accepted;
        self.duplicates += other.duplicates;
        self.rejected += other.rejected;
        self.errors.extend(other.errors.into_iter().map(|e| RowError {
            index: e.index + offset,
            message: e.message,
        }));
        self.warnings.extend(other.warnings);
    }
}

/// A usage event reported by a smart appliance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEventRequest {
    pub device_id: String,
    pub t_start: DateTime<FixedOffset>,
    pub duration_s: i64,
    pub energy_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDto {
    pub device_id: DeviceId,
    pub t_start: DateTime<Utc>,
    pub t_end: DateTime<Utc>,
    pub duration_s: i64,
    #[serde(serialize_with = "ser4")]
    pub energy_kwh: f64,
    #[serde(serialize_with = "ser4_opt")]
    pub cost_eur: Option<f64>,
    pub source: EventSource,
}

impl From<&UsageEvent> for EventDto {
    fn from(e: &UsageEvent) -> Self {
        EventDto {
            device_id: e.device_id.clone(),
            t_start: to_utc(e.t_start),
            t_end: to_utc(e.t_end()),
            duration_s: e.duration,
            energy_kwh: e.energy_kwh,
            cost_eur: e.cost_eur,
            source: e.source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDto {
    pub device_id: DeviceId,
    pub device_type: String,
    pub room: String,
    pub mobility: Mobility,
    pub curtailable: bool,
    pub user_driven: bool,
    pub has_standby: bool,
    #[serde(default)]
    pub credit_eur: f64,
}

impl From<&DeviceMetadata> for DeviceDto {
    fn from(d: &DeviceMetadata) -> Self {
        DeviceDto {
            device_id: d.device_id.clone(),
            device_type: d.device_type.clone(),
            room: d.room.clone(),
            mobility: d.mobility,
            curtailable: d.curtailable,
            user_driven: d.user_driven,
            has_standby: d.has_standby,
            credit_eur: d.credit.eur(),
        }
    }
}

impl From<DeviceDto> for DeviceMetadata {
    fn from(d: DeviceDto) -> Self {
        DeviceMetadata {
            device_id: d.device_id,
            device_type: d.device_type,
            room: d.room,
            mobility: d.mobility,
            curtailable: d.curtailable,
            user_driven: d.user_driven,
            has_standby: d.has_standby,
            credit: Money::from_eur(d.credit_eur),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DevicePatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility: Option<Mobility>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curtailable: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_driven: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_standby: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credit_eur: Option<f64>,
}

impl DevicePatch {
    pub fn apply(&self, d: &DeviceMetadata) -> DeviceMetadata {
        let mut d = d.clone();
        if let Some(v) = &self.device_type {
            d.device_type = v.clone();
        }
        if let Some(v) = &self.room {
            d.room = v.clone();
        }
        if let Some(v) = self.mobility {
            d.mobility = v;
        }
        if let Some(v) = self.curtailable {
            d.curtailable = v;
        }
        if let Some(v) = self.user_driven {
            d.user_driven = v;
        }
        if let Some(v) = self.has_standby {
            d.has_standby = v;
        }
        if let Some(v) = self.credit_eur {
            d.credit = Money::from_eur(v);
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemizationRow {
    pub device_id: DeviceId,
    #[serde(serialize_with = "ser4")]
    pub energy_kwh: f64,
    #[serde(serialize_with = "ser4")]
    pub cost_eur: f64,
    /// Percent of the energy attributed to devices in the period.
    #[serde(serialize_with = "ser4")]
    pub share_pct: f64,
}

impl From<&ItemizationEntry> for ItemizationRow {
    fn from(e: &ItemizationEntry) -> Self {
        ItemizationRow {
            device_id: e.device_id.clone(),
            energy_kwh: e.energy_kwh,
            cost_eur: e.cost_eur,
            share_pct: e.share * 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemizationResponse {
    pub period: String,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
    pub category: CategoryId,
    pub rows: Vec<ItemizationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub date: NaiveDate,
    #[serde(serialize_with = "ser4")]
    pub consumption_kwh: f64,
    #[serde(serialize_with = "ser4")]
    pub production_kwh: f64,
    /// Aggregate consumption by tariff slot.
    #[serde(serialize_with = "ser4_map")]
    pub slot_kwh: BTreeMap<SlotId, f64>,
    #[serde(serialize_with = "ser4")]
    pub cost_eur: f64,
    pub devices: Vec<ItemizationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResponse {
    pub date: NaiveDate,
    pub prior_days: usize,
    #[serde(serialize_with = "ser4")]
    pub consumption_so_far_kwh: f64,
    #[serde(serialize_with = "ser4")]
    pub consumption_kwh: f64,
    #[serde(serialize_with = "ser4_opt")]
    pub production_so_far_kwh: Option<f64>,
    #[serde(serialize_with = "ser4_opt")]
    pub production_kwh: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRow {
    pub device_id: DeviceId,
    #[serde(serialize_with = "ser4_map")]
    pub kwh: BTreeMap<SlotId, f64>,
    #[serde(serialize_with = "ser4_map")]
    pub percent: BTreeMap<SlotId, f64>,
}

impl From<&SlotShareRow> for SlotRow {
    fn from(r: &SlotShareRow) -> Self {
        SlotRow {
            device_id: r.device_id.clone(),
            kwh: r.kwh.clone(),
            percent: r.percent.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDistributionResponse {
    pub month: String,
    pub slots: Vec<SlotId>,
    pub rows: Vec<SlotRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageResponse {
    pub device_id: DeviceId,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
    pub event_count: u32,
    #[serde(serialize_with = "ser4")]
    pub events_per_week: f64,
    pub start_hours: Vec<u32>,
    #[serde(serialize_with = "ser4")]
    pub mean_energy_kwh: f64,
}

impl UsageResponse {
    pub fn new(m: &UsageModel, from: Timestamp, to: Timestamp) -> Self {
        UsageResponse {
            device_id: m.device_id.clone(),
            from: to_utc(from),
            to: to_utc(to),
            event_count: m.event_count,
            events_per_week: m.events_per_week,
            start_hours: m.start_hours.to_vec(),
            mean_energy_kwh: m.mean_energy_kwh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceDto {
    pub advice_id: String,
    pub advice_type: AdviceType,
    pub device_id: DeviceId,
    pub device_type: String,
    pub score: i32,
    pub message: String,
    #[serde(serialize_with = "ser_params")]
    pub params: AdviceParams,
}

fn ser_params<S: Serializer>(p: &AdviceParams, s: S) -> Result<S::Ok, S::Error> {
    let r = |v: Option<f64>| v.map(round4);
    AdviceParams {
        saving_eur: r(p.saving_eur),
        kwh_year: r(p.kwh_year),
        device_w: r(p.device_w),
        type_w: r(p.type_w),
        runs: p.runs,
        type_runs: r(p.type_runs),
    }
    .serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvicesResponse {
    pub user_id: String,
    pub rng_seed: u64,
    pub advices: Vec<AdviceDto>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub action: FeedbackAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<RejectCause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub advice_id: String,
    /// Advices whose score or state changed.
    pub changed: Vec<String>,
}

/// Pushed on the event stream after data changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamMessage {
    Readings { channel_id: String, accepted: usize },
    Event { event: EventDto },
    Advices { user_id: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_only_on_the_wire() {
        let e = UsageEvent {
            device_id: "wm".into(),
            t_start: 1_741_000_000,
            duration: 7200,
            energy_kwh: 1.234_567_89,
            cost_eur: Some(0.123_456),
            source: EventSource::Detected,
        };
        let dto = EventDto::from(&e);
        assert_eq!(dto.energy_kwh, 1.234_567_89);
        let json = serde_json::to_value(&dto).unwrap();
        assert_eq!(json["energy_kwh"], 1.2346);
        assert_eq!(json["cost_eur"], 0.1235);
        assert_eq!(json["t_start"], "2025-03-03T11:06:40Z");
        let back: EventDto = serde_json::from_value(json).unwrap();
        assert_eq!(back.t_end, to_utc(e.t_end()));
    }

    #[test]
    fn feedback_body_shape() {
        let body: FeedbackRequest = serde_json::from_str(r#"{"action":"reject","cause":"advice_mistrust"}"#).unwrap();
        assert_eq!(body.cause, Some(RejectCause::AdviceMistrust));
        assert!(serde_json::from_str::<FeedbackRequest>(r#"{"action":"maybe"}"#).is_err());
    }

    #[test]
    fn patch_touches_only_given_fields() {
        let d = DeviceMetadata {
            device_id: "tv".into(),
            device_type: "television".into(),
            room: "living room".into(),
            mobility: Mobility::Fixed,
            curtailable: true,
            user_driven: true,
            has_standby: false,
            credit: Money::from_eur(2.0),
        };
        let p: DevicePatch = serde_json::from_str(r#"{"has_standby":true}"#).unwrap();
        let out = p.apply(&d);
        assert!(out.has_standby);
        assert_eq!(out.room, d.room);
        assert_eq!(out.credit, d.credit);
    }

    #[test]
    fn report_absorb_offsets_indices() {
        let mut a = IngestReport {
            accepted: 2,
            ..Default::default()
        };
        a.absorb(IngestReport {
            accepted: 1,
            rejected: 1,
            errors: vec![RowError {
                index: 1,
                message: "bad".into(),
            }],
            ..Default::default()
        });
        assert_eq!((a.accepted, a.rejected, a.errors[0].index), (3, 1, 3));
    }
}
