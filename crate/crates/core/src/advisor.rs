//! Advice generation, explicit-feedback scoring and ranking.
//!
//! Four generators turn device statistics into candidate advices. Each user
//! keeps an [`AdviceBook`] with one state per advice identity: a conversion
//! disables the advice for good, acceptance raises its score, and a rejection
//! lowers the score of every enabled advice sharing the advice type or the
//! device type, depending on the cause the user picked.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{standby_annual_kwh, StandbySchedule};
use crate::model::{CategoryId, DeviceId, DeviceMetadata, HouseholdId, SlotId, Timestamp, UserId};
use crate::tariff::{TariffError, TariffScheme};

pub const DEFAULT_MESSAGES: &str = include_str!("../data/messages.txt");

#[derive(Debug, Error, PartialEq)]
pub enum AdvisorError {
    #[error("unknown advice '{0}'")]
    UnknownAdvice(String),
    #[error("advice '{0}' is disabled")]
    Disabled(String),
    #[error("a reject cause is required for rejections and only for them")]
    CauseMismatch,
    #[error("tau1 must be positive")]
    BadThreshold,
    #[error("message templates line {0}: expected 'type = template'")]
    BadTemplate(usize),
    #[error(transparent)]
    Tariff(#[from] TariffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdviceType {
    Diagnostics,
    Shifting,
    Standby,
    Curtailment,
}

impl AdviceType {
    pub const ALL: [AdviceType; 4] = [
        AdviceType::Diagnostics,
        AdviceType::Shifting,
        AdviceType::Standby,
        AdviceType::Curtailment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdviceType::Diagnostics => "diagnostics",
            AdviceType::Shifting => "shifting",
            AdviceType::Standby => "standby",
            AdviceType::Curtailment => "curtailment",
        }
    }
}

impl fmt::Display for AdviceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdviceType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        AdviceType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown advice type '{s}'"))
    }
}

/// "Ok thanks", "I'm already doing it", "No thanks".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackAction {
    Accept,
    Converted,
    Reject,
}

impl FromStr for FeedbackAction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "accept" => Ok(FeedbackAction::Accept),
            "converted" => Ok(FeedbackAction::Converted),
            "reject" => Ok(FeedbackAction::Reject),
            other => Err(format!("unknown action '{other}' (accept|converted|reject)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCause {
    /// The user does not want to change how the device is used.
    DeviceReluctance,
    /// The user does not trust this kind of advice.
    AdviceMistrust,
}

impl FromStr for RejectCause {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "device_reluctance" => Ok(RejectCause::DeviceReluctance),
            "advice_mistrust" => Ok(RejectCause::AdviceMistrust),
            other => Err(format!("unknown cause '{other}' (device_reluctance|advice_mistrust)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvisorConfig {
    /// Relative excess over the type mean that triggers a diagnostics advice.
    pub tau1: f64,
    pub max_displayed: usize,
    pub rng_seed: u64,
    /// Shifting advices saving at most this much per month are dropped.
    pub min_shift_saving_eur: f64,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        AdvisorConfig {
            tau1: 0.30,
            max_displayed: 5,
            rng_seed: 0,
            min_shift_saving_eur: 0.01,
        }
    }
}

impl AdvisorConfig {
    pub fn validate(&self) -> Result<(), AdvisorError> {
        if !(self.tau1 > 0.0) {
            return Err(AdvisorError::BadThreshold);
        }
        Ok(())
    }
}

/// Figures carried by an advice and substituted into its message.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdviceParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saving_eur: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kwh_year: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub device_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub type_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub type_runs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub advice_type: AdviceType,
    pub device_id: DeviceId,
    pub device_type: String,
    pub params: AdviceParams,
}

impl Candidate {
    pub fn advice_id(&self) -> String {
        advice_id(self.advice_type, &self.device_id)
    }
}

pub fn advice_id(advice_type: AdviceType, device: &DeviceId) -> String {
    format!("{advice_type}:{device}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    pub advice_id: String,
    pub user_id: UserId,
    pub advice_type: AdviceType,
    pub device_type: String,
    pub device_id: DeviceId,
    pub params: AdviceParams,
    pub enabled: bool,
    pub score: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub user_id: UserId,
    pub advice_id: String,
    pub advice_type: AdviceType,
    pub device_type: String,
    pub action: FeedbackAction,
    pub reject_cause: Option<RejectCause>,
    pub time: Timestamp,
}

/// Device usage over the trailing month.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonthUsage {
    pub runs: u32,
    pub cost_eur: f64,
    pub kwh_by_slot: BTreeMap<SlotId, f64>,
    pub mean_event_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceStats {
    pub meta: DeviceMetadata,
    /// Mean power over the trailing month.
    pub mean_power_w: Option<f64>,
    pub standby_power_w: Option<f64>,
    pub month: MonthUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdStats {
    pub household_id: HouseholdId,
    pub category: CategoryId,
    pub devices: Vec<DeviceStats>,
}

/// Per device-type averages across every household, refreshed periodically.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FleetStats {
    /// Mean power of autonomous devices, by type.
    pub type_mean_power: BTreeMap<String, f64>,
    /// Mean monthly runs of user-driven devices, by type.
    pub type_mean_runs: BTreeMap<String, f64>,
}

impl FleetStats {
    pub fn from_households(households: &[HouseholdStats]) -> Self {
        let mut power: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut runs: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for d in households.iter().flat_map(|h| &h.devices) {
            if d.meta.user_driven {
                let acc = runs.entry(d.meta.device_type.clone()).or_default();
                acc.0 += d.month.runs as f64;
                acc.1 += 1;
            } else if let Some(w) = d.mean_power_w {
                let acc = power.entry(d.meta.device_type.clone()).or_default();
                acc.0 += w;
                acc.1 += 1;
            }
        }
        let mean = |m: BTreeMap<String, (f64, usize)>| m.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
        FleetStats {
            type_mean_power: mean(power),
            type_mean_runs: mean(runs),
        }
    }
}

/// Replacement advices for autonomous devices drawing clearly more than their type.
pub fn generate_diagnostics(household: &HouseholdStats, fleet: &FleetStats, cfg: &AdvisorConfig) -> Vec<Candidate> {
    household
        .devices
        .iter()
        .filter(|d| !d.meta.user_driven)
        .filter_map(|d| {
            let device_w = d.mean_power_w?;
            let type_w = *fleet.type_mean_power.get(&d.meta.device_type)?;
            (device_w > (1.0 + cfg.tau1) * type_w).then(|| Candidate {
                advice_type: AdviceType::Diagnostics,
                device_id: d.meta.device_id.clone(),
                device_type: d.meta.device_type.clone(),
                params: AdviceParams {
                    device_w: Some(device_w),
                    type_w: Some(type_w),
                    kwh_year: Some((device_w - type_w) * 8.76),
                    ..Default::default()
                },
            })
        })
        .collect()
}

/// Advices to run user-driven devices in the cheapest slot, heaviest devices
/// (by mean energy per run) first.
pub fn generate_shifting(
    household: &HouseholdStats,
    scheme: &TariffScheme,
    cfg: &AdvisorConfig,
) -> Result<Vec<Candidate>, AdvisorError> {
    let category = &household.category;
    let ((_, t), (_, c)) = scheme.price_extremes(category)?;
    if t <= c {
        return Ok(Vec::new());
    }
    let mut ranked = Vec::new();
    for d in household.devices.iter().filter(|d| d.meta.user_driven) {
        let mut shiftable = 0.0;
        for (slot, kwh) in &d.month.kwh_by_slot {
            if scheme.price_per_kwh(slot, category)? > c {
                shiftable += kwh;
            }
        }
        let saving = shiftable * t - shiftable * c;
        if saving <= 0.0 || saving <= cfg.min_shift_saving_eur {
            continue;
        }
        ranked.push((d.month.mean_event_kwh, shiftable, d, saving));
    }
    ranked.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(b.1.total_cmp(&a.1))
            .then_with(|| a.2.meta.device_id.cmp(&b.2.meta.device_id))
    });
    Ok(ranked
        .into_iter()
        .map(|(_, shiftable, d, saving)| Candidate {
            advice_type: AdviceType::Shifting,
            device_id: d.meta.device_id.clone(),
            device_type: d.meta.device_type.clone(),
            params: AdviceParams {
                saving_eur: Some(saving),
                kwh_year: Some(shiftable * 12.0),
                ..Default::default()
            },
        })
        .collect())
}

/// One switch-off advice per standby-capable device, with its always-on
/// standby consumption priced at the week-averaged unit price.
pub fn generate_standby(household: &HouseholdStats, scheme: &TariffScheme) -> Result<Vec<Candidate>, AdvisorError> {
    let unit_price = scheme.mean_unit_price(&household.category)?;
    Ok(household
        .devices
        .iter()
        .filter(|d| d.meta.has_standby)
        .map(|d| {
            let kwh_year = d.standby_power_w.map(|w| standby_annual_kwh(w, StandbySchedule::AlwaysOn));
            Candidate {
                advice_type: AdviceType::Standby,
                device_id: d.meta.device_id.clone(),
                device_type: d.meta.device_type.clone(),
                params: AdviceParams {
                    kwh_year,
                    saving_eur: kwh_year.map(|k| k * unit_price),
                    device_w: d.standby_power_w,
                    ..Default::default()
                },
            }
        })
        .collect())
}

/// Advices to use user-driven devices less often, for devices run more often
/// than their type's average. Larger excess first, then higher monthly cost.
pub fn generate_curtailment(household: &HouseholdStats, fleet: &FleetStats) -> Vec<Candidate> {
    let mut over: Vec<(f64, &DeviceStats, f64)> = household
        .devices
        .iter()
        .filter(|d| d.meta.user_driven && d.month.runs > 0)
        .filter_map(|d| {
            let type_runs = *fleet.type_mean_runs.get(&d.meta.device_type)?;
            let excess = d.month.runs as f64 - type_runs;
            (excess > 0.0).then_some((excess, d, type_runs))
        })
        .collect();
    over.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(b.1.month.cost_eur.total_cmp(&a.1.month.cost_eur))
            .then_with(|| a.1.meta.device_id.cmp(&b.1.meta.device_id))
    });
    over.into_iter()
        .map(|(excess, d, type_runs)| Candidate {
            advice_type: AdviceType::Curtailment,
            device_id: d.meta.device_id.clone(),
            device_type: d.meta.device_type.clone(),
            params: AdviceParams {
                saving_eur: Some(curtailment_yearly_saving(d.month.cost_eur, excess, d.month.runs)),
                runs: Some(d.month.runs),
                type_runs: Some(type_runs),
                ..Default::default()
            },
        })
        .collect()
}

/// Monthly running cost scaled by the share of runs above the type average, annualized.
pub fn curtailment_yearly_saving(month_cost_eur: f64, excess_runs: f64, total_runs: u32) -> f64 {
    month_cost_eur * (excess_runs / total_runs as f64) * 12.0
}

/// All four generators for one household, in generator order.
pub fn generate_all(
    household: &HouseholdStats,
    fleet: &FleetStats,
    scheme: &TariffScheme,
    cfg: &AdvisorConfig,
) -> Result<Vec<Candidate>, AdvisorError> {
    let mut out = generate_diagnostics(household, fleet, cfg);
    out.extend(generate_shifting(household, scheme, cfg)?);
    out.extend(generate_standby(household, scheme)?);
    out.extend(generate_curtailment(household, fleet));
    Ok(out)
}

/// Orders advices by descending score. Equal scores are ordered by a
/// permutation drawn from `seed` over the advice ids, so the result depends
/// only on the scores, the ids and the seed.
pub fn rank_advices(advices: Vec<Advice>, seed: u64) -> Vec<Advice> {
    let mut advices = advices;
    advices.sort_by(|a, b| a.advice_id.cmp(&b.advice_id));
    advices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    advices.sort_by_key(|a| std::cmp::Reverse(a.score));
    advices
}

/// Advice states of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceBook {
    pub user_id: UserId,
    advices: BTreeMap<String, Advice>,
    log: Vec<FeedbackRecord>,
}

impl AdviceBook {
    pub fn new(user_id: UserId) -> Self {
        AdviceBook {
            user_id,
            advices: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    /// Rebuilds a book from stored states and its feedback log.
    pub fn restore(user_id: UserId, advices: Vec<Advice>, log: Vec<FeedbackRecord>) -> Self {
        AdviceBook {
            user_id,
            advices: advices.into_iter().map(|a| (a.advice_id.clone(), a)).collect(),
            log,
        }
    }

    pub fn get(&self, advice_id: &str) -> Option<&Advice> {
        self.advices.get(advice_id)
    }

    pub fn advices(&self) -> impl Iterator<Item = &Advice> {
        self.advices.values()
    }

    pub fn log(&self) -> &[FeedbackRecord] {
        &self.log
    }

    /// Records fresh candidates. New identities start enabled with score 0;
    /// known ones keep their state and only take the new figures.
    pub fn merge(&mut self, candidates: &[Candidate]) {
        for c in candidates {
            let id = c.advice_id();
            match self.advices.get_mut(&id) {
                Some(a) => {
                    a.params = c.params.clone();
                    a.device_type = c.device_type.clone();
                }
                None => {
                    self.advices.insert(
                        id.clone(),
                        Advice {
                            advice_id: id,
                            user_id: self.user_id.clone(),
                            advice_type: c.advice_type,
                            device_type: c.device_type.clone(),
                            device_id: c.device_id.clone(),
                            params: c.params.clone(),
                            enabled: true,
                            score: 0,
                        },
                    );
                }
            }
        }
    }

    /// Applies one piece of feedback and appends it to the log. Returns the
    /// ids of the advices whose state changed.
    pub fn apply_feedback(
        &mut self,
        advice_id: &str,
        action: FeedbackAction,
        cause: Option<RejectCause>,
        time: Timestamp,
    ) -> Result<Vec<String>, AdvisorError> {
        if (action == FeedbackAction::Reject) != cause.is_some() {
            return Err(AdvisorError::CauseMismatch);
        }
        let target = self
            .advices
            .get(advice_id)
            .ok_or_else(|| AdvisorError::UnknownAdvice(advice_id.to_owned()))?;
        if !target.enabled {
            return Err(AdvisorError::Disabled(advice_id.to_owned()));
        }
        let (advice_type, device_type) = (target.advice_type, target.device_type.clone());

        let mut changed = Vec::new();
        match (action, cause) {
            (FeedbackAction::Converted, _) => {
                self.advices.get_mut(advice_id).unwrap().enabled = false;
                changed.push(advice_id.to_owned());
            }
            (FeedbackAction::Accept, _) => {
                self.advices.get_mut(advice_id).unwrap().score += 1;
                changed.push(advice_id.to_owned());
            }
            (FeedbackAction::Reject, Some(cause)) => {
                for a in self.advices.values_mut().filter(|a| a.enabled) {
                    let hit = match cause {
                        RejectCause::AdviceMistrust => a.advice_type == advice_type,
                        RejectCause::DeviceReluctance => a.device_type == device_type,
                    };
                    if hit {
                        a.score -= 1;
                        changed.push(a.advice_id.clone());
                    }
                }
            }
            (FeedbackAction::Reject, None) => unreachable!(),
        }
        self.log.push(FeedbackRecord {
            user_id: self.user_id.clone(),
            advice_id: advice_id.to_owned(),
            advice_type,
            device_type,
            action,
            reject_cause: cause,
            time,
        });
        Ok(changed)
    }

    /// Enabled advices among the current candidates, ranked and truncated.
    /// Candidates must already be merged.
    pub fn active_advices(&self, candidates: &[Candidate], cfg: &AdvisorConfig) -> Vec<Advice> {
        let ids: BTreeSet<String> = candidates.iter().map(Candidate::advice_id).collect();
        let enabled: Vec<Advice> = ids
            .iter()
            .filter_map(|id| self.advices.get(id))
            .filter(|a| a.enabled)
            .cloned()
            .collect();
        let mut ranked = rank_advices(enabled, cfg.rng_seed);
        ranked.truncate(cfg.max_displayed);
        ranked
    }
}

/// Message templates keyed by advice type.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageTemplates {
    templates: BTreeMap<AdviceType, String>,
}

impl MessageTemplates {
    pub fn parse(text: &str) -> Result<Self, AdvisorError> {
        let mut templates = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, template) = line.split_once('=').ok_or(AdvisorError::BadTemplate(i + 1))?;
            let kind: AdviceType = key.trim().parse().map_err(|_| AdvisorError::BadTemplate(i + 1))?;
            templates.insert(kind, template.trim().to_owned());
        }
        Ok(MessageTemplates { templates })
    }

    pub fn render(&self, advice: &Advice) -> String {
        let Some(template) = self.templates.get(&advice.advice_type) else {
            return format!("{} advice for {}", advice.advice_type, advice.device_id);
        };
        let p = &advice.params;
        let fmt2 = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.2}"));
        let fmt1 = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.1}"));
        template
            .replace("{device}", &format!("{} ({})", advice.device_type, advice.device_id))
            .replace("{saving_eur}", &fmt2(p.saving_eur))
            .replace("{kwh_year}", &fmt1(p.kwh_year))
            .replace("{device_w}", &fmt1(p.device_w))
            .replace("{type_w}", &fmt1(p.type_w))
            .replace("{runs}", &p.runs.map_or_else(|| "n/a".to_owned(), |r| r.to_string()))
            .replace("{type_runs}", &fmt1(p.type_runs))
    }
}

impl Default for MessageTemplates {
    fn default() -> Self {
        Self::parse(DEFAULT_MESSAGES).expect("shipped templates parse")
    }
}
