//! Household operations on top of the store. Synchronous; the HTTP layer
//! calls in through `spawn_blocking`.

use std::collections::BTreeMap;
use std::sync::{Mutex, MutexGuard, RwLock};

use chrono::{Duration, NaiveDate};
use chrono_tz::Tz;
use hems_core::advisor::{
    generate_all, AdviceBook, DeviceStats, FleetStats, HouseholdStats, MonthUsage,
};
use hems_core::analytics::{
    build_usage_model, estimate_day_total, itemize, local_date, local_instant, local_midnight, slot_distribution,
    standby_power, Period, PeriodKind, PriorDay,
};
use hems_core::detection::detect_events;
use hems_core::energy::{integrate, HoldPolicy};
use hems_core::ingestion::parse_trace_with;
use hems_core::registry::DeviceRegistry;
use hems_core::tariff::assign_category;
use hems_core::wire::{
    to_utc, AdviceDto, AdvicesResponse, DaySummary, DeviceDto, DevicePatch, EstimateResponse, EventDto,
    ExternalEventRequest, FeedbackRequest, FeedbackResponse, IngestReport, ItemizationResponse, ItemizationRow,
    SlotDistributionResponse, SlotRow, StreamMessage, UsageResponse,
};
use hems_core::{
    CategoryId, ChannelId, DeviceId, DeviceMetadata, Direction, EventSource, HouseholdId, Scope, SlotId, Timestamp,
    UsageEvent, UserId,
};
use subtle::ConstantTimeEq;
use tokio::sync::broadcast;

use crate::config::{Config, HouseholdConfig, Resources};
use crate::error::EngineError;
use crate::store::Store;

const DAY: i64 = 86_400;
const ADVISOR_WINDOW_DAYS: i64 = 30;
const ESTIMATE_HISTORY_DAYS: i64 = 28;

/// Source of "now".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(Timestamp),
}

impl Clock {
    pub fn now(self) -> Timestamp {
        match self {
            Clock::System => chrono::Utc::now().timestamp(),
            Clock::Fixed(t) => t,
        }
    }
}

/// An authenticated caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub household: HouseholdId,
    pub user: UserId,
    pub scopes: Vec<Scope>,
}

impl Principal {
    pub fn can(&self, scope: Scope) -> bool {
        self.scopes.contains(&scope)
    }
}

struct Household {
    cfg: HouseholdConfig,
    store: Mutex<Store>,
}

pub struct Engine {
    config: Config,
    res: Resources,
    households: BTreeMap<HouseholdId, Household>,
    tokens: Vec<(Vec<u8>, Principal)>,
    clock: Clock,
    fleet: RwLock<Option<FleetStats>>,
    stream: broadcast::Sender<(HouseholdId, StreamMessage)>,
}

fn price(events: &mut [UsageEvent], res: &Resources, category: &CategoryId, tz: Tz) -> Result<(), EngineError> {
    for e in events {
        e.cost_eur = Some(res.scheme.cost_of_event(e, category, tz)?);
    }
    Ok(())
}

impl Engine {
    /// Opens (creating if needed) one database per configured household and
    /// registers the configured devices that are not stored yet.
    pub fn open(config: Config, clock: Clock) -> Result<Self, EngineError> {
        let res = config.resources()?;
        std::fs::create_dir_all(&config.data_dir)
            .map_err(|e| EngineError::Config(format!("{}: {e}", config.data_dir.display())))?;
        let mut households = BTreeMap::new();
        let mut tokens = Vec::new();
        for h in &config.households {
            let store = Store::open(&config.data_dir.join(format!("{}.sqlite", h.id)))?;
            let existing = store.devices()?;
            let mut registry = DeviceRegistry::new(res.vocabulary.clone());
            for d in existing {
                registry.register_device(d)?;
            }
            for d in &h.devices {
                let meta = DeviceMetadata::from(d.clone());
                if registry.get(&meta.device_id).is_none() {
                    registry.register_device(meta.clone())?;
                    store.put_device(&meta)?;
                }
            }
            for u in &h.users {
                tokens.push((
                    u.token.as_bytes().to_vec(),
                    Principal {
                        household: h.id.clone(),
                        user: u.id.clone(),
                        scopes: u.scopes.clone(),
                    },
                ));
            }
            households.insert(
                h.id.clone(),
                Household {
                    cfg: h.clone(),
                    store: Mutex::new(store),
                },
            );
        }
        let (stream, _) = broadcast::channel(256);
        Ok(Engine {
            config,
            res,
            households,
            tokens,
            clock,
            fleet: RwLock::new(None),
            stream,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn resources(&self) -> &Resources {
        &self.res
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<(HouseholdId, StreamMessage)> {
        self.stream.subscribe()
    }

    fn publish(&self, household: &HouseholdId, msg: StreamMessage) {
        let _ = self.stream.send((household.clone(), msg));
    }

    /// Resolves a bearer token. Every configured token is compared, in constant time.
    pub fn authenticate(&self, token: &str) -> Option<Principal> {
        let mut found = None;
        for (candidate, principal) in &self.tokens {
            if bool::from(candidate.as_slice().ct_eq(token.as_bytes())) {
                found = Some(principal.clone());
            }
        }
        found
    }

    pub fn household_ids(&self) -> impl Iterator<Item = &HouseholdId> {
        self.households.keys()
    }

    pub fn default_household(&self) -> Option<&HouseholdId> {
        self.households.keys().next()
    }

    pub fn default_user(&self, household: &HouseholdId) -> Option<&UserId> {
        self.households.get(household)?.cfg.users.first().map(|u| &u.id)
    }

    pub fn timezone(&self, household: &HouseholdId) -> Result<Tz, EngineError> {
        Ok(self.household(household)?.cfg.timezone)
    }

    fn household(&self, id: &HouseholdId) -> Result<&Household, EngineError> {
        self.households
            .get(id)
            .ok_or_else(|| EngineError::NotFound(format!("unknown household '{id}'")))
    }

    fn lock<'a>(&self, h: &'a Household) -> MutexGuard<'a, Store> {
        h.store.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn channel_direction(h: &Household, store: &Store, channel: &ChannelId) -> Result<Direction, EngineError> {
        if let Some(c) = h.cfg.channels.iter().find(|c| &c.id == channel) {
            return Ok(c.direction);
        }
        if store.devices()?.iter().any(|d| d.device_id.as_str() == channel.as_str()) {
            return Ok(Direction::Consumption);
        }
        Err(EngineError::Invalid(format!("unknown channel '{channel}'")))
    }

    /// Whole-house channels of one direction. Without configured consumption
    /// meters the device channels stand in for the aggregate.
    fn aggregate_channels(h: &Household, store: &Store, direction: Direction) -> Result<Vec<ChannelId>, EngineError> {
        let configured: Vec<ChannelId> = h
            .cfg
            .channels
            .iter()
            .filter(|c| c.direction == direction)
            .map(|c| c.id.clone())
            .collect();
        if configured.is_empty() && direction == Direction::Consumption {
            return Ok(store
                .devices()?
                .into_iter()
                .map(|d| ChannelId::new(d.device_id.as_str()))
                .collect());
        }
        Ok(configured)
    }

    fn integrate_channels(
        store: &Store,
        channels: &[ChannelId],
        direction: Direction,
        from: Timestamp,
        to: Timestamp,
    ) -> Result<(f64, i64), EngineError> {
        let mut kwh = 0.0;
        let mut observed = 0;
        for c in channels {
            let samples = store.samples(c, direction, from - HoldPolicy::ONE_HZ.max_gap, to)?;
            let i = integrate(&samples, from, to, HoldPolicy::ONE_HZ);
            kwh += i.kwh();
            observed = observed.max(i.observed_s);
        }
        Ok((kwh, observed))
    }

    // ---- ingestion ----

    pub fn ingest_samples(
        &self,
        household: &HouseholdId,
        channel: &ChannelId,
        rows: &[(Timestamp, Option<f64>)],
    ) -> Result<IngestReport, EngineError> {
        let h = self.household(household)?;
        let mut store = self.lock(h);
        Self::channel_direction(h, &store, channel)?;
        let (accepted, duplicates) = store.insert_samples(channel, rows)?;
        if accepted > 0 && !h.cfg.channels.iter().any(|c| &c.id == channel) {
            store.mark_dirty(&DeviceId::new(channel.as_str()))?;
        }
        drop(store);
        if accepted > 0 {
            self.publish(
                household,
                StreamMessage::Readings {
                    channel_id: channel.to_string(),
                    accepted,
                },
            );
        }
        Ok(IngestReport {
            accepted,
            duplicates,
            ..Default::default()
        })
    }

    /// Ingests one trace file. The file must hold a single local day and name
    /// only known channels; malformed rows are skipped and counted.
    pub fn ingest_trace(&self, household: &HouseholdId, bytes: &[u8]) -> Result<IngestReport, EngineError> {
        let h = self.household(household)?;
        let parsed = {
            let store = self.lock(h);
            let devices = store.devices()?;
            let direction_of = |c: &ChannelId| {
                h.cfg
                    .channels
                    .iter()
                    .find(|x| &x.id == c)
                    .map_or(Direction::Consumption, |x| x.direction)
            };
            let parsed = parse_trace_with(bytes, direction_of)?;
            for c in &parsed.channels {
                let known = h.cfg.channels.iter().any(|x| &x.id == c)
                    || devices.iter().any(|d| d.device_id.as_str() == c.as_str());
                if !known {
                    return Err(EngineError::Invalid(format!("unknown channel '{c}'")));
                }
            }
            parsed.check_single_day(h.cfg.timezone)?;
            parsed
        };
        let mut report = IngestReport {
            rejected: parsed.stats.malformed,
            duplicates: parsed.stats.duplicates * parsed.channels.len(),
            warnings: parsed.warnings.clone(),
            ..Default::default()
        };
        for c in &parsed.channels {
            let rows: Vec<(Timestamp, Option<f64>)> = parsed
                .samples
                .iter()
                .filter(|s| &s.channel_id == c)
                .map(|s| (s.timestamp, s.power))
                .collect();
            let r = self.ingest_samples(household, c, &rows)?;
            report.accepted += r.accepted;
            report.duplicates += r.duplicates;
        }
        Ok(report)
    }

    // ---- devices ----

    fn registry(&self, store: &Store) -> Result<DeviceRegistry, EngineError> {
        let mut registry = DeviceRegistry::new(self.res.vocabulary.clone());
        for d in store.devices()? {
            registry.register_device(d)?;
        }
        for k in store.applied_keys()? {
            registry.mark_applied(k);
        }
        Ok(registry)
    }

    pub fn devices(&self, household: &HouseholdId) -> Result<Vec<DeviceDto>, EngineError> {
        let h = self.household(household)?;
        let store = self.lock(h);
        Ok(store.devices()?.iter().map(DeviceDto::from).collect())
    }

    pub fn register_device(&self, household: &HouseholdId, dto: DeviceDto) -> Result<DeviceDto, EngineError> {
        let h = self.household(household)?;
        let store = self.lock(h);
        if h.cfg.channels.iter().any(|c| c.id.as_str() == dto.device_id.as_str()) {
            return Err(EngineError::Conflict(format!("'{}' is a meter channel", dto.device_id)));
        }
        let meta = DeviceMetadata::from(dto);
        self.registry(&store)?.register_device(meta.clone())?;
        store.put_device(&meta)?;
        Ok(DeviceDto::from(&meta))
    }

    pub fn patch_device(&self, household: &HouseholdId, device: &DeviceId, patch: &DevicePatch) -> Result<DeviceDto, EngineError> {
        let h = self.household(household)?;
        let store = self.lock(h);
        let mut registry = self.registry(&store)?;
        let current = registry
            .get(device)
            .ok_or_else(|| EngineError::NotFound(format!("unknown device '{device}'")))?;
        let updated = patch.apply(current);
        registry.update_device(updated.clone())?;
        store.put_device(&updated)?;
        Ok(DeviceDto::from(&updated))
    }

    // ---- events ----

    /// Category in force at `now`: manual if configured, else from the
    /// trailing year of consumption (annualized when shorter).
    fn category(&self, h: &Household, store: &Store, now: Timestamp) -> Result<CategoryId, EngineError> {
        if let Some(c) = &h.cfg.category {
            return Ok(c.clone());
        }
        let channels = Self::aggregate_channels(h, store, Direction::Consumption)?;
        let from = now - 365 * DAY;
        let mut first = None::<Timestamp>;
        for c in &channels {
            if let Some((lo, _)) = store.sample_span(c)? {
                first = Some(first.map_or(lo, |f| f.min(lo)));
            }
        }
        let (kwh, days) = match first {
            Some(first) if first < now => {
                let start = first.max(from);
                let (kwh, _) = Self::integrate_channels(store, &channels, Direction::Consumption, start, now)?;
                (kwh, (now - start) as f64 / DAY as f64)
            }
            _ => (0.0, 0.0),
        };
        let a = assign_category(&self.res.scheme, HouseholdId::new(h.cfg.id.as_str()), kwh, days, None)?;
        Ok(a.category_id)
    }

    /// Re-detects devices that received readings since their last detection,
    /// then charges closed, uncharged events against device credit.
    fn refresh(&self, h: &Household, store: &mut Store, now: Timestamp) -> Result<(), EngineError> {
        let dirty = store.dirty()?;
        if dirty.is_empty() {
            return Ok(());
        }
        let category = self.category(h, store, now)?;
        let tz = h.cfg.timezone;
        let mut registry = self.registry(store)?;
        for device in dirty {
            if registry.get(&device).is_none() {
                store.clear_dirty(&device)?;
                continue;
            }
            let cfg = self.config.detector.for_device(device.as_str());
            let channel = ChannelId::new(device.as_str());
            let samples = store.samples(&channel, Direction::Consumption, i64::MIN, i64::MAX)?;
            let externals: Vec<UsageEvent> = store
                .device_events(&device)?
                .into_iter()
                .filter(|e| e.source == EventSource::External)
                .collect();
            let mut events = detect_events(&samples, &cfg)?;
            events.retain(|e| !externals.iter().any(|x| x.overlaps(e)));
            store.replace_detected(&device, &events)?;
            store.clear_dirty(&device)?;

            let Some(last) = samples.last().map(|s| s.timestamp) else {
                continue;
            };
            price(&mut events, &self.res, &category, tz)?;
            for e in events.iter().filter(|e| e.t_end() + cfg.merge_gap < last) {
                if registry.is_applied(&e.key()) {
                    continue;
                }
                registry.apply_event_to_credit(e)?;
                store.mark_applied(&e.key())?;
                store.put_device(registry.get(&device).unwrap())?;
                self.publish(&h.cfg.id, StreamMessage::Event { event: EventDto::from(e) });
            }
        }
        Ok(())
    }

    pub fn add_external_event(&self, household: &HouseholdId, req: &ExternalEventRequest) -> Result<EventDto, EngineError> {
        let h = self.household(household)?;
        let mut store = self.lock(h);
        let now = self.now();
        self.refresh(h, &mut store, now)?;
        let device = DeviceId::new(req.device_id.as_str());
        let mut registry = self.registry(&store)?;
        if registry.get(&device).is_none() {
            return Err(EngineError::NotFound(format!("unknown device '{device}'")));
        }
        if req.duration_s <= 0 || !(req.energy_kwh.is_finite() && req.energy_kwh > 0.0) {
            return Err(EngineError::Invalid("duration_s and energy_kwh must be positive".into()));
        }
        let mut event = UsageEvent {
            device_id: device.clone(),
            t_start: req.t_start.timestamp(),
            duration: req.duration_s,
            energy_kwh: req.energy_kwh,
            cost_eur: None,
            source: EventSource::External,
        };
        let existing = store.device_events(&device)?;
        if existing
            .iter()
            .any(|e| e.source == EventSource::External && (e.overlaps(&event) || e.t_start == event.t_start))
        {
            return Err(EngineError::Conflict("overlaps an existing appliance event".into()));
        }
        for e in existing.iter().filter(|e| e.overlaps(&event) || e.t_start == event.t_start) {
            store.delete_event(&e.key())?;
        }
        store.insert_event(&event)?;
        let category = self.category(h, &store, now)?;
        event.cost_eur = Some(self.res.scheme.cost_of_event(&event, &category, h.cfg.timezone)?);
        if !registry.is_applied(&event.key()) {
            registry.apply_event_to_credit(&event)?;
            store.mark_applied(&event.key())?;
            store.put_device(registry.get(&device).unwrap())?;
        }
        let dto = EventDto::from(&event);
        drop(store);
        self.publish(household, StreamMessage::Event { event: dto.clone() });
        Ok(dto)
    }

    fn priced_events(
        &self,
        h: &Household,
        store: &mut Store,
        device: Option<&DeviceId>,
        from: Timestamp,
        to: Timestamp,
        now: Timestamp,
    ) -> Result<Vec<UsageEvent>, EngineError> {
        self.refresh(h, store, now)?;
        let mut events = store.events(device, from, to)?;
        let category = self.category(h, store, now)?;
        price(&mut events, &self.res, &category, h.cfg.timezone)?;
        Ok(events)
    }

    pub fn events(
        &self,
        household: &HouseholdId,
        device: Option<&DeviceId>,
        from: Option<Timestamp>,
        to: Option<Timestamp>,
    ) -> Result<Vec<EventDto>, EngineError> {
        let h = self.household(household)?;
        let mut store = self.lock(h);
        let events = self.priced_events(
            h,
            &mut store,
            device,
            from.unwrap_or(i64::MIN),
            to.unwrap_or(i64::MAX),
            self.now(),
        )?;
        Ok(events.iter().map(EventDto::from).collect())
    }

    /// Forces detection of one device over its whole history.
    pub fn detect(&self, household: &HouseholdId, device: &DeviceId) -> Result<Vec<EventDto>, EngineError> {
        let h = self.household(household)?;
        {
            let store = self.lock(h);
            if !store.devices()?.iter().any(|d| &d.device_id == device) {
                return Err(EngineError::NotFound(format!("unknown device '{device}'")));
            }
            store.mark_dirty(device)?;
        }
        self.events(household, Some(device), None, None)
    }

    // ---- analytics ----

    pub fn itemization(&self, household: &HouseholdId, kind: PeriodKind, now: Timestamp) -> Result<ItemizationResponse, EngineError> {
        let h = self.household(household)?;
        let mut store = self.lock(h);
        let period = kind.resolve(now, h.cfg.timezone);
        let events = self.priced_events(h, &mut store, None, period.from, period.to, now)?;
        let category = self.category(h, &store, now)?;
        Ok(ItemizationResponse {
            period: format!("{kind:?}").to_lowercase(),
            from: to_utc(period.from),
            to: to_utc(period.to),
            category,
            rows: itemize(&events, period)?.iter().map(ItemizationRow::from).collect(),
        })
    }

    pub fn day_summary(&self, household: &HouseholdId, date: NaiveDate) -> Result<DaySummary, EngineError> {
        let h = self.household(household)?;
        let mut store = self.lock(h);
        let tz = h.cfg.timezone;
        let now = self.now();
        let period = Period::local_day(date, tz);
        let category = self.category(h, &store, now)?;
        let consumption = Self::aggregate_channels(h, &store, Direction::Consumption)?;
        let production = Self::aggregate_channels(h, &store, Direction::Production)?;

        let mut slot_kwh: BTreeMap<SlotId, f64> = self.res.scheme.slots().iter().map(|s| (s.clone(), 0.0)).collect();
        let mut consumption_kwh = 0.0;
        for c in &consumption {
            let samples = store.samples(c, Direction::Consumption, period.from - HoldPolicy::ONE_HZ.max_gap, period.to)?;
            for (slot, kwh) in self
                .res
                .scheme
                .sample_slot_energy(&samples, period.from, period.to, HoldPolicy::ONE_HZ, tz)
            {
                consumption_kwh += kwh;
                *slot_kwh.entry(slot).or_insert(0.0) += kwh;
            }
        }
        let mut cost_eur = 0.0;
        for (slot, kwh) in &slot_kwh {
            cost_eur += self.res.scheme.cost_of_energy(*kwh, slot, &category)?;
        }
        let (production_kwh, _) = Self::integrate_channels(&store, &production, Direction::Production, period.from, period.to)?;
        let events = self.priced_events(h, &mut store, None, period.from, period.to, now)?;
        Ok(DaySummary {
            date,
            consumption_kwh,
            production_kwh,
            slot_kwh,
            cost_eur,
            devices: itemize(&events, period)?.iter().map(ItemizationRow::from).collect(),
        })
    }

    fn prior_days(
        store: &Store,
        channels: &[ChannelId],
        direction: Direction,
        today: NaiveDate,
        seconds_into_day: u32,
        tz: Tz,
    ) -> Result<Vec<PriorDay>, EngineError> {
        let mut out = Vec::new();
        for back in 1..=ESTIMATE_HISTORY_DAYS {
            let day = today - Duration::days(back);
            let p = Period::local_day(day, tz);
            let (total, observed) = Self::integrate_channels(store, channels, direction, p.from, p.to)?;
            if observed == 0 {
                continue;
            }
            let cut = local_instant(day, seconds_into_day, tz).clamp(p.from, p.to);
            let (cumulative, _) = Self::integrate_channels(store, channels, direction, p.from, cut)?;
            out.push(PriorDay {
                total_kwh: total,
                cumulative_kwh: cumulative,
            });
        }
        Ok(out)
    }

    pub fn estimate_today(&self, household: &HouseholdId, now: Timestamp) -> Result<EstimateResponse, EngineError> {
        let h = self.household(household)?;
        let store = self.lock(h);
        let tz = h.cfg.timezone;
        let today = local_date(now, tz);
        let midnight = local_midnight(today, tz);
        let seconds = (now - midnight).clamp(0, DAY) as u32;

        let consumption = Self::aggregate_channels(h, &store, Direction::Consumption)?;
        let (so_far, _) = Self::integrate_channels(&store, &consumption, Direction::Consumption, midnight, now)?;
        let history = Self::prior_days(&store, &consumption, Direction::Consumption, today, seconds, tz)?;
        let total = estimate_day_total(&history, so_far)?;

        let production = Self::aggregate_channels(h, &store, Direction::Production)?;
        let (production_so_far, production_kwh) = if production.is_empty() {
            (None, None)
        } else {
            let (p_so_far, _) = Self::integrate_channels(&store, &production, Direction::Production, midnight, now)?;
            let p_hist = Self::prior_days(&store, &production, Direction::Production, today, seconds, tz)?;
            (Some(p_so_far), Some(estimate_day_total(&p_hist, p_so_far)?))
        };
        Ok(EstimateResponse {
            date: today,
            prior_days: history.len(),
            consumption_so_far_kwh: so_far,
            consumption_kwh: total,
            production_so_far_kwh: production_so_far,
            production_kwh,
        })
    }

    pub fn slot_distribution(&self, household: &HouseholdId, year: i32, month: u32) -> Result<SlotDistributionResponse, EngineError> {
        let h = self.household(household)?;
        let mut store = self.lock(h);
        let tz = h.cfg.timezone;
        let period = Period::local_month(year, month, tz)
            .ok_or_else(|| EngineError::Invalid(format!("invalid month {year}-{month}")))?;
        let events = self.priced_events(h, &mut store, None, period.from, period.to, self.now())?;
        let rows = slot_distribution(&events, &self.res.scheme, tz)?;
        Ok(SlotDistributionResponse {
            month: format!("{year:04}-{month:02}"),
            slots: self.res.scheme.slots().to_vec(),
            rows: rows.iter().map(SlotRow::from).collect(),
        })
    }

    pub fn usage(&self, household: &HouseholdId, device: &DeviceId, kind: PeriodKind, now: Timestamp) -> Result<UsageResponse, EngineError> {
        let h = self.household(household)?;
        let mut store = self.lock(h);
        let meta = store
            .devices()?
            .into_iter()
            .find(|d| &d.device_id == device)
            .ok_or_else(|| EngineError::NotFound(format!("unknown device '{device}'")))?;
        let period = kind.resolve(now, h.cfg.timezone);
        let events = self.priced_events(h, &mut store, Some(device), period.from, period.to, now)?;
        let model = build_usage_model(&events, &meta, period, h.cfg.timezone)?;
        Ok(UsageResponse::new(&model, period.from, period.to))
    }

    // ---- advisor ----

    fn household_stats(&self, h: &Household, store: &mut Store, now: Timestamp) -> Result<HouseholdStats, EngineError> {
        let from = now - ADVISOR_WINDOW_DAYS * DAY;
        let events = self.priced_events(h, store, None, from, now, now)?;
        let category = self.category(h, store, now)?;
        let mut devices = Vec::new();
        for meta in store.devices()? {
            let channel = ChannelId::new(meta.device_id.as_str());
            let samples = store.samples(&channel, Direction::Consumption, from, now)?;
            let integral = integrate(&samples, from, now, HoldPolicy::ONE_HZ);
            let mean_power_w = (integral.observed_s > 0).then(|| integral.wh * 3600.0 / integral.observed_s as f64);
            let off = self.config.detector.for_device(meta.device_id.as_str()).off_threshold;
            let mut month = MonthUsage::default();
            let mut energy = 0.0;
            for e in events.iter().filter(|e| e.device_id == meta.device_id) {
                month.runs += 1;
                month.cost_eur += e.cost_eur.unwrap_or(0.0);
                energy += e.energy_kwh;
                for (slot, kwh) in self.res.scheme.event_slot_energy(e, h.cfg.timezone)? {
                    *month.kwh_by_slot.entry(slot).or_insert(0.0) += kwh;
                }
            }
            if month.runs > 0 {
                month.mean_event_kwh = energy / month.runs as f64;
            }
            devices.push(DeviceStats {
                standby_power_w: standby_power(&samples, off),
                mean_power_w,
                month,
                meta,
            });
        }
        Ok(HouseholdStats {
            household_id: h.cfg.id.clone(),
            category,
            devices,
        })
    }

    /// Recomputes the per-type averages across every household.
    pub fn refresh_fleet_stats(&self, now: Timestamp) -> Result<FleetStats, EngineError> {
        let mut all = Vec::new();
        for h in self.households.values() {
            let mut store = self.lock(h);
            all.push(self.household_stats(h, &mut store, now)?);
        }
        let fleet = FleetStats::from_households(&all);
        *self.fleet.write().unwrap_or_else(|p| p.into_inner()) = Some(fleet.clone());
        Ok(fleet)
    }

    fn fleet_stats(&self, now: Timestamp) -> Result<FleetStats, EngineError> {
        if let Some(f) = self.fleet.read().unwrap_or_else(|p| p.into_inner()).as_ref() {
            return Ok(f.clone());
        }
        self.refresh_fleet_stats(now)
    }

    /// Generates advices for the household, merges them into the user's
    /// book and returns the ranked, enabled ones.
    pub fn advices(&self, household: &HouseholdId, user: &UserId, now: Timestamp) -> Result<AdvicesResponse, EngineError> {
        let fleet = self.fleet_stats(now)?;
        let h = self.household(household)?;
        let mut store = self.lock(h);
        let stats = self.household_stats(h, &mut store, now)?;
        let cfg = &self.config.advisor;
        let candidates = generate_all(&stats, &fleet, &self.res.scheme, cfg)?;
        let mut book = AdviceBook::restore(user.clone(), store.advices(user)?, Vec::new());
        book.merge(&candidates);
        store.save_advices(user, book.advices(), &[])?;
        let advices = book
            .active_advices(&candidates, cfg)
            .into_iter()
            .map(|a| AdviceDto {
                message: self.res.messages.render(&a),
                advice_id: a.advice_id,
                advice_type: a.advice_type,
                device_id: a.device_id,
                device_type: a.device_type,
                score: a.score,
                params: a.params,
            })
            .collect();
        Ok(AdvicesResponse {
            user_id: user.to_string(),
            rng_seed: cfg.rng_seed,
            advices,
        })
    }

    pub fn feedback(
        &self,
        household: &HouseholdId,
        user: &UserId,
        advice_id: &str,
        req: &FeedbackRequest,
        now: Timestamp,
    ) -> Result<FeedbackResponse, EngineError> {
        let h = self.household(household)?;
        let mut store = self.lock(h);
        let mut book = AdviceBook::restore(user.clone(), store.advices(user)?, Vec::new());
        let changed = book.apply_feedback(advice_id, req.action, req.cause, now)?;
        let touched: Vec<_> = changed.iter().filter_map(|id| book.get(id)).collect();
        store.save_advices(user, touched, book.log())?;
        drop(store);
        self.publish(household, StreamMessage::Advices { user_id: user.to_string() });
        Ok(FeedbackResponse {
            advice_id: advice_id.to_owned(),
            changed,
        })
    }
}
