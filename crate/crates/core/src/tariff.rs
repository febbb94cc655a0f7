//! Time-of-use tariff schemes: slot calendar, consumption categories and prices.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate, TimeZone, Timelike};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{hold_intervals, HoldPolicy};
use crate::model::{CategoryId, HouseholdId, PowerSample, SlotId, Timestamp, UsageEvent};

pub const DEFAULT_TARIFF: &str = include_str!("../data/tariff_it_enel.toml");
pub const DEFAULT_HOLIDAYS: &str = include_str!("../data/holidays_it.txt");

const MINUTES_PER_DAY: u32 = 1440;
const MINUTES_PER_WEEK: u32 = 7 * MINUTES_PER_DAY;

#[derive(Debug, Error, PartialEq)]
pub enum TariffError {
    #[error("tariff file: {0}")]
    Parse(String),
    #[error("invalid tariff: {0}")]
    Invalid(String),
    #[error("holiday file line {line}: '{text}' is not an ISO date")]
    BadHoliday { line: usize, text: String },
    #[error("no price for slot {slot} in category {category}")]
    UnknownPair { slot: SlotId, category: CategoryId },
    #[error("unknown category {0}")]
    UnknownCategory(CategoryId),
    #[error("energy must not be negative, got {0}")]
    NegativeEnergy(f64),
    #[error("event must have positive duration and energy")]
    EmptyEvent,
}

/// Set of local dates on which holiday pricing applies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HolidayCalendar {
    dates: BTreeSet<NaiveDate>,
}

impl HolidayCalendar {
    /// One ISO-8601 date per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TariffError> {
        let mut dates = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let date = NaiveDate::parse_from_str(line, "%Y-%m-%d").map_err(|_| TariffError::BadHoliday {
                line: i + 1,
                text: line.to_owned(),
            })?;
            dates.insert(date);
        }
        Ok(HolidayCalendar { dates })
    }

    pub fn load(path: &Path) -> Result<Self, TariffError> {
        let text = std::fs::read_to_string(path).map_err(|e| TariffError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn italian() -> Self {
        Self::parse(DEFAULT_HOLIDAYS).expect("shipped holiday file parses")
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.dates.contains(&date)
    }

    pub fn iter(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.dates.iter().copied()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TariffFile {
    name: String,
    #[serde(default)]
    currency: Option<String>,
    default_slot: String,
    slots: Vec<SlotDef>,
    categories: Vec<CategoryDef>,
    prices: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlotDef {
    id: String,
    days: Option<Vec<String>>,
    from: Option<String>,
    to: Option<String>,
    #[serde(default)]
    on_holidays: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryDef {
    id: String,
    lower_kwh_year: Option<f64>,
    upper_kwh_year: Option<f64>,
}

/// Weekly window during which a slot applies, in local time.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRule {
    pub slot: SlotId,
    /// Indexed Monday = 0.
    pub days: [bool; 7],
    /// Half-open `[from_minute, to_minute)` within the day.
    pub from_minute: u32,
    pub to_minute: u32,
    pub on_holidays: bool,
}

impl SlotRule {
    fn applies(&self, weekday: usize, minute: u32, holiday: bool) -> bool {
        self.days[weekday] && (self.on_holidays || !holiday) && self.from_minute <= minute && minute < self.to_minute
    }

    fn weekly_minutes(&self) -> u32 {
        self.days.iter().filter(|&&d| d).count() as u32 * (self.to_minute - self.from_minute)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Category {
    pub id: CategoryId,
    pub lower_kwh_year: Option<f64>,
    pub upper_kwh_year: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TariffScheme {
    pub name: String,
    pub currency: String,
    slots: Vec<SlotId>,
    rules: Vec<SlotRule>,
    default_slot: SlotId,
    categories: Vec<Category>,
    prices: BTreeMap<(SlotId, CategoryId), f64>,
    holidays: HolidayCalendar,
}

fn parse_day(name: &str) -> Option<usize> {
    let idx = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"]
        .iter()
        .position(|d| name.len() >= 3 && name[..3].eq_ignore_ascii_case(d))?;
    Some(idx)
}

fn parse_minute(hhmm: &str) -> Option<u32> {
    let (h, m) = hhmm.split_once(':')?;
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    let minute = h * 60 + m;
    (m < 60 && minute <= MINUTES_PER_DAY).then_some(minute)
}

impl TariffScheme {
    /// Parses and validates a tariff file. Holidays start empty.
    pub fn parse(text: &str) -> Result<Self, TariffError> {
        let file: TariffFile = toml::from_str(text).map_err(|e| TariffError::Parse(e.to_string()))?;
        let invalid = |msg: String| TariffError::Invalid(msg);

        let mut slots: Vec<SlotId> = Vec::new();
        let mut rules = Vec::new();
        for def in &file.slots {
            let slot = SlotId::new(def.id.clone());
            if !slots.contains(&slot) {
                slots.push(slot.clone());
            }
            let Some(day_names) = &def.days else {
                if def.from.is_some() || def.to.is_some() {
                    return Err(invalid(format!("slot {} has hours but no days", def.id)));
                }
                continue;
            };
            let mut days = [false; 7];
            for name in day_names {
                let d = parse_day(name).ok_or_else(|| invalid(format!("unknown weekday '{name}'")))?;
                days[d] = true;
            }
            let from = def.from.as_deref().map_or(Some(0), parse_minute);
            let to = def.to.as_deref().map_or(Some(MINUTES_PER_DAY), parse_minute);
            let (Some(from_minute), Some(to_minute)) = (from, to) else {
                return Err(invalid(format!("slot {} has malformed hours", def.id)));
            };
            if from_minute >= to_minute {
                return Err(invalid(format!("slot {} window is empty", def.id)));
            }
            rules.push(SlotRule {
                slot,
                days,
                from_minute,
                to_minute,
                on_holidays: def.on_holidays,
            });
        }
        let default_slot = SlotId::new(file.default_slot.clone());
        if !slots.contains(&default_slot) {
            return Err(invalid(format!("default slot {default_slot} is not declared")));
        }
        for (i, a) in rules.iter().enumerate() {
            for b in &rules[i + 1..] {
                let same_day = (0..7).any(|d| a.days[d] && b.days[d]);
                let same_time = a.from_minute < b.to_minute && b.from_minute < a.to_minute;
                if same_day && same_time {
                    return Err(invalid(format!("slot rules for {} and {} overlap", a.slot, b.slot)));
                }
            }
        }

        let categories: Vec<Category> = file
            .categories
            .iter()
            .map(|c| Category {
                id: CategoryId::new(c.id.clone()),
                lower_kwh_year: c.lower_kwh_year,
                upper_kwh_year: c.upper_kwh_year,
            })
            .collect();
        if categories.is_empty() {
            return Err(invalid("no categories".into()));
        }
        for (i, c) in categories.iter().enumerate() {
            let last = i + 1 == categories.len();
            match (c.upper_kwh_year, last) {
                (None, false) => return Err(invalid(format!("only the last category may be unbounded ({})", c.id))),
                (Some(_), true) => return Err(invalid(format!("last category {} must be unbounded", c.id))),
                _ => {}
            }
            if let (Some(lo), Some(hi)) = (c.lower_kwh_year, c.upper_kwh_year) {
                if lo > hi {
                    return Err(invalid(format!("category {} bounds inverted", c.id)));
                }
            }
            if i == 0 {
                if c.lower_kwh_year.is_some_and(|lo| lo > 0.0) {
                    return Err(invalid(format!("first category {} must start at zero", c.id)));
                }
                continue;
            }
            let prev_upper = categories[i - 1].upper_kwh_year.unwrap();
            // tabled integer bounds (1800 / 1801) or continuous ones (1800 / 1800)
            let contiguous = match c.lower_kwh_year {
                Some(lo) => lo == prev_upper || lo == prev_upper + 1.0,
                None => false,
            };
            if !contiguous {
                return Err(invalid(format!("category {} does not continue {}", c.id, categories[i - 1].id)));
            }
        }

        let mut prices = BTreeMap::new();
        for (slot, row) in &file.prices {
            let slot = SlotId::new(slot.clone());
            if !slots.contains(&slot) {
                return Err(invalid(format!("prices given for undeclared slot {slot}")));
            }
            for (cat, &price) in row {
                let cat = CategoryId::new(cat.clone());
                if !categories.iter().any(|c| c.id == cat) {
                    return Err(invalid(format!("prices given for undeclared category {cat}")));
                }
                if !(price.is_finite() && price >= 0.0) {
                    return Err(invalid(format!("price for {slot}/{cat} must be non-negative")));
                }
                prices.insert((slot.clone(), cat), price);
            }
        }
        for slot in &slots {
            let mut previous = f64::NEG_INFINITY;
            for c in &categories {
                let price = *prices
                    .get(&(slot.clone(), c.id.clone()))
                    .ok_or_else(|| invalid(format!("missing price for {slot}/{}", c.id)))?;
                if price < previous {
                    return Err(invalid(format!("prices for {slot} decrease at category {}", c.id)));
                }
                previous = price;
            }
        }

        Ok(TariffScheme {
            name: file.name,
            currency: file.currency.unwrap_or_else(|| "EUR".into()),
            slots,
            rules,
            default_slot,
            categories,
            prices,
            holidays: HolidayCalendar::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, TariffError> {
        let text = std::fs::read_to_string(path).map_err(|e| TariffError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The shipped two-slot Italian scheme with the Italian holiday calendar.
    pub fn italian() -> Self {
        Self::parse(DEFAULT_TARIFF)
            .expect("shipped tariff parses")
            .with_holidays(HolidayCalendar::italian())
    }

    pub fn with_holidays(mut self, holidays: HolidayCalendar) -> Self {
        self.holidays = holidays;
        self
    }

    pub fn holidays(&self) -> &HolidayCalendar {
        &self.holidays
    }

    pub fn slots(&self) -> &[SlotId] {
        &self.slots
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category(&self, id: &CategoryId) -> Option<&Category> {
        self.categories.iter().find(|c| &c.id == id)
    }

    /// The slot in force at `timestamp`, evaluated in local time.
    pub fn classify_slot(&self, timestamp: Timestamp, tz: Tz) -> &SlotId {
        let local = tz.timestamp_opt(timestamp, 0).unwrap();
        let weekday = local.weekday().num_days_from_monday() as usize;
        let minute = local.hour() * 60 + local.minute();
        let holiday = self.holidays.contains(local.date_naive());
        self.rules
            .iter()
            .find(|r| r.applies(weekday, minute, holiday))
            .map_or(&self.default_slot, |r| &r.slot)
    }

    /// Seconds spent in each slot over `[from, to)`.
    ///
    /// Slot boundaries fall on whole local minutes, and every real timezone
    /// offset is a whole number of minutes, so one lookup per UTC minute is exact.
    pub fn slot_seconds(&self, from: Timestamp, to: Timestamp, tz: Tz) -> Vec<(SlotId, i64)> {
        let mut out: Vec<(SlotId, i64)> = Vec::new();
        let mut t = from;
        while t < to {
            let next = ((t.div_euclid(60) + 1) * 60).min(to);
            let slot = self.classify_slot(t, tz);
            match out.last_mut() {
                Some((s, secs)) if s == slot => *secs += next - t,
                _ => out.push((slot.clone(), next - t)),
            }
            t = next;
        }
        out
    }

    /// Energy (kWh) of a reading series in each slot over `[from, to)`.
    pub fn sample_slot_energy(
        &self,
        samples: &[PowerSample],
        from: Timestamp,
        to: Timestamp,
        policy: HoldPolicy,
        tz: Tz,
    ) -> BTreeMap<SlotId, f64> {
        let mut wh: BTreeMap<SlotId, f64> = BTreeMap::new();
        let mut cached: Option<(i64, &SlotId)> = None;
        for h in hold_intervals(samples, policy) {
            if h.start >= to {
                break;
            }
            let mut lo = h.start.max(from);
            let hi = h.end.min(to);
            while lo < hi {
                let minute = lo.div_euclid(60);
                let next = ((minute + 1) * 60).min(hi);
                let slot = match cached {
                    Some((m, s)) if m == minute => s,
                    _ => {
                        let s = self.classify_slot(lo, tz);
                        cached = Some((minute, s));
                        s
                    }
                };
                *wh.entry(slot.clone()).or_insert(0.0) += h.power * (next - lo) as f64 / 3600.0;
                lo = next;
            }
        }
        wh.into_iter().map(|(s, v)| (s, v / 1000.0)).collect()
    }

    /// Category whose inclusive bounds hold `annual_kwh`.
    pub fn determine_category(&self, annual_kwh: f64) -> Result<&CategoryId, TariffError> {
        if !(annual_kwh >= 0.0) {
            return Err(TariffError::NegativeEnergy(annual_kwh));
        }
        let found = self
            .categories
            .iter()
            .find(|c| c.upper_kwh_year.is_none_or(|hi| annual_kwh <= hi))
            .expect("last category is unbounded");
        Ok(&found.id)
    }

    pub fn price_per_kwh(&self, slot: &SlotId, category: &CategoryId) -> Result<f64, TariffError> {
        self.prices
            .get(&(slot.clone(), category.clone()))
            .copied()
            .ok_or_else(|| TariffError::UnknownPair {
                slot: slot.clone(),
                category: category.clone(),
            })
    }

    pub fn cost_of_energy(&self, kwh: f64, slot: &SlotId, category: &CategoryId) -> Result<f64, TariffError> {
        if !(kwh >= 0.0) {
            return Err(TariffError::NegativeEnergy(kwh));
        }
        Ok(kwh * self.price_per_kwh(slot, category)?)
    }

    /// Splits an event's energy across slots in proportion to time, assuming
    /// the device drew constant power during the event.
    pub fn event_slot_energy(&self, event: &UsageEvent, tz: Tz) -> Result<BTreeMap<SlotId, f64>, TariffError> {
        if event.duration <= 0 || !(event.energy_kwh > 0.0) {
            return Err(TariffError::EmptyEvent);
        }
        let mut out = BTreeMap::new();
        for (slot, secs) in self.slot_seconds(event.t_start, event.t_end(), tz) {
            *out.entry(slot).or_insert(0.0) += event.energy_kwh * secs as f64 / event.duration as f64;
        }
        Ok(out)
    }

    pub fn cost_of_event(&self, event: &UsageEvent, category: &CategoryId, tz: Tz) -> Result<f64, TariffError> {
        let mut cost = 0.0;
        for (slot, kwh) in self.event_slot_energy(event, tz)? {
            cost += kwh * self.price_per_kwh(&slot, category)?;
        }
        Ok(cost)
    }

    /// (most expensive slot, cheapest slot) for a category. Ties resolve to the
    /// slot declared first.
    pub fn price_extremes(&self, category: &CategoryId) -> Result<((SlotId, f64), (SlotId, f64)), TariffError> {
        if self.category(category).is_none() {
            return Err(TariffError::UnknownCategory(category.clone()));
        }
        let mut expensive: Option<(SlotId, f64)> = None;
        let mut cheap: Option<(SlotId, f64)> = None;
        for slot in &self.slots {
            let p = self.price_per_kwh(slot, category)?;
            if expensive.as_ref().is_none_or(|(_, e)| p > *e) {
                expensive = Some((slot.clone(), p));
            }
            if cheap.as_ref().is_none_or(|(_, c)| p < *c) {
                cheap = Some((slot.clone(), p));
            }
        }
        Ok((expensive.unwrap(), cheap.unwrap()))
    }

    /// Unit price averaged over a week of constant load (holidays ignored).
    pub fn mean_unit_price(&self, category: &CategoryId) -> Result<f64, TariffError> {
        let mut minutes: BTreeMap<&SlotId, u32> = BTreeMap::new();
        let mut ruled = 0;
        for r in &self.rules {
            *minutes.entry(&r.slot).or_insert(0) += r.weekly_minutes();
            ruled += r.weekly_minutes();
        }
        *minutes.entry(&self.default_slot).or_insert(0) += MINUTES_PER_WEEK - ruled;
        let mut total = 0.0;
        for (slot, m) in minutes {
            total += self.price_per_kwh(slot, category)? * m as f64;
        }
        Ok(total / MINUTES_PER_WEEK as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMethod {
    Measured365d,
    AnnualizedProjection,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryAssignment {
    pub household_id: HouseholdId,
    pub category_id: CategoryId,
    pub basis_kwh_year: f64,
    pub method: AssignmentMethod,
}

/// Picks a household's category from observed consumption.
///
/// `total_kwh` covers the trailing 365 days when at least that much history
/// exists, otherwise all `days_observed` days, and is then annualized.
pub fn assign_category(
    scheme: &TariffScheme,
    household_id: HouseholdId,
    total_kwh: f64,
    days_observed: f64,
    manual: Option<&CategoryId>,
) -> Result<CategoryAssignment, TariffError> {
    let (basis, method) = if days_observed >= 365.0 {
        (total_kwh, AssignmentMethod::Measured365d)
    } else if days_observed > 0.0 {
        (total_kwh * 365.0 / days_observed, AssignmentMethod::AnnualizedProjection)
    } else {
        (0.0, AssignmentMethod::AnnualizedProjection)
    };
    let (category_id, method) = match manual {
        Some(c) => {
            if scheme.category(c).is_none() {
                return Err(TariffError::UnknownCategory(c.clone()));
            }
            (c.clone(), AssignmentMethod::Manual)
        }
        None => (scheme.determine_category(basis)?.clone(), method),
    };
    Ok(CategoryAssignment {
        household_id,
        category_id,
        basis_kwh_year: basis,
        method,
    })
}
