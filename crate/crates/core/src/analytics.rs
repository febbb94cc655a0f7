//! Figures behind the dashboard and the advisor: itemization, slot shares,
//! same-day estimation, usage models and the savings calculators.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, TimeZone, Timelike};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CategoryId, DeviceId, DeviceMetadata, PowerSample, SlotId, Timestamp, UsageEvent};
use crate::tariff::{TariffError, TariffScheme};

pub const DEFAULT_LABEL_COEFFICIENTS: &str = include_str!("../data/label_coefficients.toml");

const HOURS_PER_YEAR: f64 = 8760.0;
const WEEKS_PER_YEAR: f64 = 52.0;
const SECONDS_PER_WEEK: f64 = 7.0 * 86400.0;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("event of {device} at {t_start} has not been priced")]
    Unpriced { device: DeviceId, t_start: Timestamp },
    #[error("insufficient history: at least one complete prior day is needed")]
    InsufficientHistory,
    #[error("device {0} is not user-driven")]
    NotUserDriven(DeviceId),
    #[error("rates must be positive")]
    ZeroRate,
    #[error("active rate must exceed standby power, and standby power must be non-negative")]
    BadRates,
    #[error("unknown appliance label category {0}")]
    UnknownLabelCategory(u8),
    #[error("label coefficients: {0}")]
    Coefficients(String),
    #[error("period is empty or inverted")]
    BadPeriod,
    #[error(transparent)]
    Tariff(#[from] TariffError),
}

/// Half-open UTC interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub from: Timestamp,
    pub to: Timestamp,
}

impl Period {
    pub fn new(from: Timestamp, to: Timestamp) -> Result<Self, AnalyticsError> {
        if to <= from {
            return Err(AnalyticsError::BadPeriod);
        }
        Ok(Period { from, to })
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.from <= t && t < self.to
    }

    pub fn seconds(&self) -> i64 {
        self.to - self.from
    }

    /// The whole local calendar day `date`.
    pub fn local_day(date: NaiveDate, tz: Tz) -> Period {
        Period {
            from: local_midnight(date, tz),
            to: local_midnight(date + Duration::days(1), tz),
        }
    }

    /// The local calendar month containing `date`.
    pub fn local_month(year: i32, month: u32, tz: Tz) -> Option<Period> {
        let first = NaiveDate::from_ymd_opt(year, month, 1)?;
        let next = if month == 12 {
            NaiveDate::from_ymd_opt(year + 1, 1, 1)?
        } else {
            NaiveDate::from_ymd_opt(year, month + 1, 1)?
        };
        Some(Period {
            from: local_midnight(first, tz),
            to: local_midnight(next, tz),
        })
    }
}

/// Start of a local day. Where midnight falls in a DST gap the first valid
/// instant after it is used.
pub fn local_midnight(date: NaiveDate, tz: Tz) -> Timestamp {
    local_instant(date, 0, tz)
}

/// UTC instant of `seconds_into_day` wall-clock seconds on local `date`.
pub fn local_instant(date: NaiveDate, seconds_into_day: u32, tz: Tz) -> Timestamp {
    let mut naive = date.and_hms_opt(0, 0, 0).unwrap() + Duration::seconds(seconds_into_day as i64);
    loop {
        if let Some(dt) = tz.from_local_datetime(&naive).earliest() {
            return dt.timestamp();
        }
        naive += Duration::minutes(15);
    }
}

pub fn local_date(t: Timestamp, tz: Tz) -> NaiveDate {
    tz.timestamp_opt(t, 0).unwrap().date_naive()
}

/// Calendar period relative to a reference instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodKind {
    Day,
    Week,
    Month,
    Year,
}

impl PeriodKind {
    /// The local day, ISO week, month or year containing `now`, up to its end.
    pub fn resolve(self, now: Timestamp, tz: Tz) -> Period {
        let today = local_date(now, tz);
        let (start, end) = match self {
            PeriodKind::Day => (today, today + Duration::days(1)),
            PeriodKind::Week => {
                let monday = today - Duration::days(today.weekday().num_days_from_monday() as i64);
                (monday, monday + Duration::days(7))
            }
            PeriodKind::Month => {
                let p = Period::local_month(today.year(), today.month(), tz).unwrap();
                return p;
            }
            PeriodKind::Year => (
                NaiveDate::from_ymd_opt(today.year(), 1, 1).unwrap(),
                NaiveDate::from_ymd_opt(today.year() + 1, 1, 1).unwrap(),
            ),
        };
        Period {
            from: local_midnight(start, tz),
            to: local_midnight(end, tz),
        }
    }
}

impl std::str::FromStr for PeriodKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "day" => Ok(PeriodKind::Day),
            "week" => Ok(PeriodKind::Week),
            "month" => Ok(PeriodKind::Month),
            "year" => Ok(PeriodKind::Year),
            other => Err(format!("unknown period '{other}' (day|week|month|year)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemizationEntry {
    pub device_id: DeviceId,
    pub energy_kwh: f64,
    pub cost_eur: f64,
    /// Fraction of monitored consumption in the period.
    pub share: f64,
}

/// Per-device energy and cost of priced events starting inside `period`.
pub fn itemize(events: &[UsageEvent], period: Period) -> Result<Vec<ItemizationEntry>, AnalyticsError> {
    let mut sums: BTreeMap<&DeviceId, (f64, f64)> = BTreeMap::new();
    for e in events.iter().filter(|e| period.contains(e.t_start)) {
        let cost = e.cost_eur.ok_or_else(|| AnalyticsError::Unpriced {
            device: e.device_id.clone(),
            t_start: e.t_start,
        })?;
        let acc = sums.entry(&e.device_id).or_insert((0.0, 0.0));
        acc.0 += e.energy_kwh;
        acc.1 += cost;
    }
    let total: f64 = sums.values().map(|v| v.0).sum();
    Ok(sums
        .into_iter()
        .map(|(device, (energy, cost))| ItemizationEntry {
            device_id: device.clone(),
            energy_kwh: energy,
            cost_eur: cost,
            share: if total > 0.0 { energy / total } else { 0.0 },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotShareRow {
    pub device_id: DeviceId,
    pub kwh: BTreeMap<SlotId, f64>,
    /// Share of each slot's total energy, in percent; each slot sums to 100
    /// across devices (or to 0 when nothing ran in that slot).
    pub percent: BTreeMap<SlotId, f64>,
}

pub fn slot_distribution(events: &[UsageEvent], scheme: &TariffScheme, tz: Tz) -> Result<Vec<SlotShareRow>, AnalyticsError> {
    let mut per_device: BTreeMap<DeviceId, BTreeMap<SlotId, f64>> = BTreeMap::new();
    for e in events {
        let split = scheme.event_slot_energy(e, tz)?;
        let row = per_device.entry(e.device_id.clone()).or_default();
        for (slot, kwh) in split {
            *row.entry(slot).or_insert(0.0) += kwh;
        }
    }
    let mut slot_totals: BTreeMap<SlotId, f64> = scheme.slots().iter().map(|s| (s.clone(), 0.0)).collect();
    for row in per_device.values() {
        for (slot, kwh) in row {
            *slot_totals.entry(slot.clone()).or_insert(0.0) += kwh;
        }
    }
    Ok(per_device
        .into_iter()
        .map(|(device_id, kwh)| {
            let mut full = BTreeMap::new();
            let mut percent = BTreeMap::new();
            for (slot, &total) in &slot_totals {
                let e = kwh.get(slot).copied().unwrap_or(0.0);
                full.insert(slot.clone(), e);
                percent.insert(slot.clone(), if total > 0.0 { 100.0 * e / total } else { 0.0 });
            }
            SlotShareRow {
                device_id,
                kwh: full,
                percent,
            }
        })
        .collect())
}

/// A complete earlier day: its total and how much had accrued by the same
/// time of day as now.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorDay {
    pub total_kwh: f64,
    pub cumulative_kwh: f64,
}

/// Projects today's total from what is used so far plus the mean of what
/// earlier days still consumed after this time of day.
///
/// An earlier day's remainder is counted from whichever is larger, its own
/// accrual at this time or today's, so a day already heavier than history
/// adds nothing and the projection never falls below `so_far`.
pub fn estimate_day_total(history: &[PriorDay], so_far: f64) -> Result<f64, AnalyticsError> {
    if history.is_empty() {
        return Err(AnalyticsError::InsufficientHistory);
    }
    let remaining: f64 = history
        .iter()
        .map(|d| (d.total_kwh - d.cumulative_kwh.max(so_far)).max(0.0))
        .sum::<f64>()
        / history.len() as f64;
    Ok(so_far + remaining)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TodayEstimate {
    pub consumption_kwh: f64,
    pub production_kwh: f64,
}

/// Consumption requires history; production is zero for a household without
/// production channels.
pub fn estimate_today(
    consumption: (&[PriorDay], f64),
    production: Option<(&[PriorDay], f64)>,
) -> Result<TodayEstimate, AnalyticsError> {
    Ok(TodayEstimate {
        consumption_kwh: estimate_day_total(consumption.0, consumption.1)?,
        production_kwh: match production {
            Some((h, so_far)) => estimate_day_total(h, so_far)?,
            None => 0.0,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageModel {
    pub device_id: DeviceId,
    pub event_count: u32,
    pub events_per_week: f64,
    /// Events by local start hour.
    pub start_hours: [u32; 24],
    pub mean_energy_kwh: f64,
}

pub fn build_usage_model(
    events: &[UsageEvent],
    device: &DeviceMetadata,
    period: Period,
    tz: Tz,
) -> Result<UsageModel, AnalyticsError> {
    if !device.user_driven {
        return Err(AnalyticsError::NotUserDriven(device.device_id.clone()));
    }
    let mut start_hours = [0u32; 24];
    let mut count = 0u32;
    let mut energy = 0.0;
    for e in events
        .iter()
        .filter(|e| e.device_id == device.device_id && period.contains(e.t_start))
    {
        let hour = tz.timestamp_opt(e.t_start, 0).unwrap().hour() as usize;
        start_hours[hour] += 1;
        count += 1;
        energy += e.energy_kwh;
    }
    Ok(UsageModel {
        device_id: device.device_id.clone(),
        event_count: count,
        events_per_week: count as f64 / (period.seconds() as f64 / SECONDS_PER_WEEK),
        start_hours,
        mean_energy_kwh: if count > 0 { energy / count as f64 } else { 0.0 },
    })
}

/// Mean of the present readings.
pub fn mean_power(samples: &[PowerSample]) -> Option<f64> {
    let (sum, n) = samples
        .iter()
        .filter_map(|s| s.power)
        .fold((0.0, 0usize), |(s, n), w| (s + w, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean of the readings below `off_threshold`, i.e. the idle draw.
pub fn standby_power(samples: &[PowerSample], off_threshold: f64) -> Option<f64> {
    let (sum, n) = samples
        .iter()
        .filter_map(|s| s.power)
        .filter(|&w| w < off_threshold)
        .fold((0.0, 0usize), |(s, n), w| (s + w, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StandbySchedule {
    AlwaysOn,
    /// Hours powered per weekday and per weekend day, over a 52-week year.
    Weekly { weekday_hours: f64, weekend_hours: f64 },
}

impl StandbySchedule {
    pub fn hours_per_year(&self) -> f64 {
        match *self {
            StandbySchedule::AlwaysOn => HOURS_PER_YEAR,
            StandbySchedule::Weekly {
                weekday_hours,
                weekend_hours,
            } => (5.0 * weekday_hours + 2.0 * weekend_hours) * WEEKS_PER_YEAR,
        }
    }
}

pub fn standby_annual_kwh(standby_power_w: f64, schedule: StandbySchedule) -> f64 {
    standby_power_w * schedule.hours_per_year() / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApplianceRates {
    /// Energy per hour of activity, Wh/h.
    pub active_rate: f64,
    pub standby_power: f64,
}

impl ApplianceRates {
    pub fn new(active_rate: f64, standby_power: f64) -> Result<Self, AnalyticsError> {
        if !(standby_power >= 0.0 && active_rate > standby_power) {
            return Err(AnalyticsError::BadRates);
        }
        Ok(ApplianceRates {
            active_rate,
            standby_power,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapEstimate {
    pub hours_a: f64,
    pub hours_b: f64,
    /// Fractional reduction of the pair's consumption after swapping roles.
    pub savings_fraction: f64,
}

/// Effect of swapping two appliances' usage: each device's hours of activity
/// (energy over hourly rate) are served by the other device instead.
pub fn swap_savings(rate_a: f64, energy_a_kwh: f64, rate_b: f64, energy_b_kwh: f64) -> Result<SwapEstimate, AnalyticsError> {
    if !(rate_a > 0.0 && rate_b > 0.0) {
        return Err(AnalyticsError::ZeroRate);
    }
    let hours_a = energy_a_kwh * 1000.0 / rate_a;
    let hours_b = energy_b_kwh * 1000.0 / rate_b;
    let before = hours_a * rate_a + hours_b * rate_b;
    let after = hours_a * rate_b + hours_b * rate_a;
    let savings_fraction = if before > 0.0 { 1.0 - after / before } else { 0.0 };
    Ok(SwapEstimate {
        hours_a,
        hours_b,
        savings_fraction,
    })
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LabelCategory {
    #[serde(default)]
    pub name: String,
    pub m: f64,
    pub n: f64,
}

/// Per-category coefficients of the standard annual consumption
/// `SAE = M * Veq + N`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LabelCoefficients {
    categories: BTreeMap<u8, LabelCategory>,
}

impl LabelCoefficients {
    pub fn parse(text: &str) -> Result<Self, AnalyticsError> {
        toml::from_str(text).map_err(|e| AnalyticsError::Coefficients(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AnalyticsError> {
        let text = std::fs::read_to_string(path).map_err(|e| AnalyticsError::Coefficients(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn get(&self, category: u8) -> Option<&LabelCategory> {
        self.categories.get(&category)
    }
}

impl Default for LabelCoefficients {
    fn default() -> Self {
        Self::parse(DEFAULT_LABEL_COEFFICIENTS).expect("shipped coefficients parse")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplacementTarget {
    /// Annual consumption of the replacement set, known directly.
    AnnualKwh { kwh_year: f64 },
    /// Units rated by energy label.
    Label {
        eei: f64,
        volume_l: f64,
        compartment_temp_c: f64,
        category: u8,
        units: u32,
    },
}

impl ReplacementTarget {
    pub fn annual_kwh(&self, coefficients: &LabelCoefficients) -> Result<f64, AnalyticsError> {
        match *self {
            ReplacementTarget::AnnualKwh { kwh_year } => Ok(kwh_year),
            ReplacementTarget::Label {
                eei,
                volume_l,
                compartment_temp_c,
                category,
                units,
            } => {
                let c = coefficients
                    .get(category)
                    .ok_or(AnalyticsError::UnknownLabelCategory(category))?;
                let equivalent_volume = volume_l * (25.0 - compartment_temp_c) / 20.0;
                let standard = c.m * equivalent_volume + c.n;
                Ok(eei / 100.0 * standard * units as f64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplacementEstimate {
    pub old_kwh_year: f64,
    pub old_kwh_month: f64,
    pub new_kwh_year: f64,
    pub monthly_saving_kwh: f64,
}

/// Annual consumption of always-on appliances measured at the given average
/// powers, against their replacement.
pub fn replacement_annual_kwh(
    old_measured_w: &[f64],
    target: &ReplacementTarget,
    coefficients: &LabelCoefficients,
) -> Result<ReplacementEstimate, AnalyticsError> {
    let old_kwh_year: f64 = old_measured_w.iter().map(|w| w * HOURS_PER_YEAR / 1000.0).sum();
    let new_kwh_year = target.annual_kwh(coefficients)?;
    Ok(ReplacementEstimate {
        old_kwh_year,
        old_kwh_month: old_kwh_year / 12.0,
        new_kwh_year,
        monthly_saving_kwh: (old_kwh_year - new_kwh_year) / 12.0,
    })
}

/// Saving from moving `l_kwh` of consumption from `expensive` to `cheap`.
pub fn shift_savings(
    l_kwh: f64,
    expensive: &SlotId,
    cheap: &SlotId,
    category: &CategoryId,
    scheme: &TariffScheme,
) -> Result<f64, AnalyticsError> {
    let t = scheme.price_per_kwh(expensive, category)?;
    let c = scheme.price_per_kwh(cheap, category)?;
    Ok(l_kwh * t - l_kwh * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventSource, Mobility};
    use crate::money::Money;

    fn rome() -> Tz {
        "Europe/Rome".parse().unwrap()
    }

    fn ev(device: &str, t: Timestamp, kwh: f64, cost: f64) -> UsageEvent {
        UsageEvent {
            device_id: device.into(),
            t_start: t,
            duration: 600,
            energy_kwh: kwh,
            cost_eur: Some(cost),
            source: EventSource::Detected,
        }
    }

    fn device(id: &str, user_driven: bool) -> DeviceMetadata {
        DeviceMetadata {
            device_id: id.into(),
            device_type: "washing machine".into(),
            room: "laundry".into(),
            mobility: Mobility::Fixed,
            curtailable: true,
            user_driven,
            has_standby: false,
            credit: Money::ZERO,
        }
    }

    #[test]
    fn itemize_normalizes() {
        let events = [ev("a", 0, 50.0, 5.0), ev("b", 1, 30.0, 3.0), ev("c", 2, 20.0, 2.0)];
        let items = itemize(&events, Period::new(0, 10).unwrap()).unwrap();
        let shares: Vec<_> = items.iter().map(|i| i.share).collect();
        assert_eq!(shares, [0.5, 0.3, 0.2]);
        let single = itemize(&events[..1], Period::new(0, 10).unwrap()).unwrap();
        assert_eq!(single[0].share, 1.0);
        assert!(itemize(&[], Period::new(0, 10).unwrap()).unwrap().is_empty());
        let mut unpriced = events.to_vec();
        unpriced[0].cost_eur = None;
        assert!(itemize(&unpriced, Period::new(0, 10).unwrap()).is_err());
    }

    #[test]
    fn itemize_filters_by_start() {
        let events = [ev("a", 0, 1.0, 0.1), ev("a", 10, 1.0, 0.1)];
        assert_eq!(itemize(&events, Period::new(0, 10).unwrap()).unwrap()[0].energy_kwh, 1.0);
    }

    #[test]
    fn slot_distribution_degenerate_and_hand_checked() {
        let scheme = TariffScheme::italian();
        let tz = rome();
        let sat = tz.with_ymd_and_hms(2025, 3, 8, 10, 0, 0).unwrap().timestamp();
        let wed = tz.with_ymd_and_hms(2025, 3, 5, 10, 0, 0).unwrap().timestamp();
        let only_t2 = slot_distribution(&[ev("tv", sat, 1.0, 0.0)], &scheme, tz).unwrap();
        assert_eq!(only_t2[0].percent[&SlotId::from("T2")], 100.0);
        assert_eq!(only_t2[0].percent[&SlotId::from("T1")], 0.0);

        // washing machine 19 kWh in T1 and 12 kWh in T2, oven 1 kWh in T1 and 4 kWh in T2
        let events = [ev("wm", wed, 19.0, 0.0), ev("wm", sat, 12.0, 0.0), ev("oven", wed + 3600, 1.0, 0.0), ev("oven", sat + 3600, 4.0, 0.0)];
        let rows = slot_distribution(&events, &scheme, tz).unwrap();
        let get = |dev: &str, slot: &str| rows.iter().find(|r| r.device_id.as_str() == dev).unwrap().percent[&SlotId::from(slot)];
        assert!((get("wm", "T1") - 95.0).abs() < 1e-9);
        assert!((get("oven", "T1") - 5.0).abs() < 1e-9);
        assert!((get("wm", "T2") - 75.0).abs() < 1e-9);
        assert!((get("oven", "T2") - 25.0).abs() < 1e-9);
    }

    #[test]
    fn estimate_examples() {
        let week = [PriorDay { total_kwh: 10.0, cumulative_kwh: 5.0 }; 7];
        assert!((estimate_day_total(&week, 4.0).unwrap() - 9.0).abs() < 1e-12);
        let end_of_day = [PriorDay { total_kwh: 10.0, cumulative_kwh: 10.0 }; 7];
        assert_eq!(estimate_day_total(&end_of_day, 7.5).unwrap(), 7.5);
        assert_eq!(estimate_day_total(&week, 12.0).unwrap(), 12.0);
        assert_eq!(estimate_day_total(&[], 1.0), Err(AnalyticsError::InsufficientHistory));
        let both = estimate_today((&week, 4.0), None).unwrap();
        assert_eq!(both.production_kwh, 0.0);
    }

    #[test]
    fn usage_model_counts() {
        let tz = rome();
        let start = tz.with_ymd_and_hms(2025, 3, 3, 0, 0, 0).unwrap().timestamp();
        let two_weeks = Period::new(start, start + 14 * 86400).unwrap();
        let events: Vec<_> = [0, 3, 7, 10]
            .iter()
            .map(|d| ev("wm", start + d * 86400 + 20 * 3600 + 900, 1.0, 0.1))
            .collect();
        let m = build_usage_model(&events, &device("wm", true), two_weeks, tz).unwrap();
        assert_eq!(m.start_hours[20], 4);
        assert_eq!(m.events_per_week, 2.0);
        let empty = build_usage_model(&[], &device("wm", true), two_weeks, tz).unwrap();
        assert_eq!((empty.event_count, empty.mean_energy_kwh), (0, 0.0));
        assert!(build_usage_model(&events, &device("wm", false), two_weeks, tz).is_err());
    }

    #[test]
    fn standby_calculator() {
        assert!((standby_annual_kwh(6.57, StandbySchedule::AlwaysOn) - 57.5532).abs() < 1e-9);
        assert!((standby_annual_kwh(30.0, StandbySchedule::AlwaysOn) - 262.8).abs() < 1e-9);
        let modem = StandbySchedule::Weekly {
            weekday_hours: 3.0,
            weekend_hours: 24.0,
        };
        assert_eq!(modem.hours_per_year(), 3276.0);
        assert!((standby_annual_kwh(30.0, modem) - 98.28).abs() < 1e-9);
    }

    #[test]
    fn swap_paper_figures() {
        let s4 = swap_savings(200.0, 84.2, 80.0, 11.84).unwrap();
        assert_eq!((s4.hours_a.round(), s4.hours_b.round()), (421.0, 148.0));
        assert!((s4.savings_fraction - 0.34).abs() <= 0.01);
        let s5 = swap_savings(200.0, 154.2, 80.0, 32.32).unwrap();
        assert_eq!((s5.hours_a.round(), s5.hours_b.round()), (771.0, 404.0));
        assert!((s5.savings_fraction - 0.23).abs() <= 0.01);
        assert_eq!(swap_savings(80.0, 3.0, 80.0, 7.0).unwrap().savings_fraction, 0.0);
        assert_eq!(swap_savings(0.0, 1.0, 80.0, 1.0), Err(AnalyticsError::ZeroRate));
    }

    #[test]
    fn rates_invariant() {
        assert!(ApplianceRates::new(200.0, 0.5).is_ok());
        assert!(ApplianceRates::new(1.0, 1.0).is_err());
        assert!(ApplianceRates::new(10.0, -1.0).is_err());
    }

    #[test]
    fn replacement_figures() {
        let coeffs = LabelCoefficients::default();
        let r = replacement_annual_kwh(&[47.7, 28.6], &ReplacementTarget::AnnualKwh { kwh_year: 258.0 }, &coeffs).unwrap();
        assert!((r.old_kwh_year - 668.0).abs() / 668.0 < 0.01);
        assert!((r.old_kwh_month - 56.0).abs() / 56.0 < 0.01);
        assert!((r.monthly_saving_kwh - 34.0).abs() <= 1.0);

        let label = |eei: f64, category: u8| ReplacementTarget::Label {
            eei,
            volume_l: 302.0,
            compartment_temp_c: -18.0,
            category,
            units: 2,
        };
        let zero = replacement_annual_kwh(&[47.7, 28.6], &label(0.0, 7), &coeffs).unwrap();
        assert_eq!(zero.new_kwh_year, 0.0);
        assert!((zero.monthly_saving_kwh - zero.old_kwh_year / 12.0).abs() < 1e-12);
        // 2 * 0.22 * (0.777 * 302 * 43 / 20 + 303)
        let a3 = replacement_annual_kwh(&[47.7], &label(22.0, 7), &coeffs).unwrap();
        assert!((a3.new_kwh_year - 2.0 * 0.22 * (0.777 * 649.3 + 303.0)).abs() < 1e-9);
        assert_eq!(
            replacement_annual_kwh(&[1.0], &label(22.0, 42), &coeffs),
            Err(AnalyticsError::UnknownLabelCategory(42))
        );
    }

    #[test]
    fn shift_examples() {
        let s = TariffScheme::italian();
        let c1 = CategoryId::from("C1");
        let v = shift_savings(19.0, &"T1".into(), &"T2".into(), &c1, &s).unwrap();
        assert!((v - 0.1210).abs() <= 0.005);
        assert!((v - 19.0 * 0.00637).abs() < 1e-9);
        assert_eq!(shift_savings(0.0, &"T1".into(), &"T2".into(), &c1, &s).unwrap(), 0.0);
        assert_eq!(shift_savings(5.0, &"T1".into(), &"T1".into(), &c1, &s).unwrap(), 0.0);
    }

    #[test]
    fn period_resolution() {
        let tz = rome();
        let now = tz.with_ymd_and_hms(2025, 3, 5, 15, 0, 0).unwrap().timestamp();
        let week = PeriodKind::Week.resolve(now, tz);
        assert_eq!(week.from, tz.with_ymd_and_hms(2025, 3, 3, 0, 0, 0).unwrap().timestamp());
        assert_eq!(week.seconds(), 7 * 86400);
        // March has a DST switch on the 30th
        let month = PeriodKind::Month.resolve(now, tz);
        assert_eq!(month.seconds(), 31 * 86400 - 3600);
        assert_eq!(PeriodKind::Day.resolve(now, tz).seconds(), 86400);
    }

    #[test]
    fn standby_and_mean_power() {
        let s: Vec<_> = [Some(6.0), Some(120.0), None, Some(8.0)]
            .iter()
            .enumerate()
            .map(|(t, &p)| PowerSample::new("tv", t as i64, p))
            .collect();
        assert_eq!(standby_power(&s, 10.0), Some(7.0));
        assert!((mean_power(&s).unwrap() - 134.0 / 3.0).abs() < 1e-12);
        assert_eq!(mean_power(&[]), None);
    }
}
