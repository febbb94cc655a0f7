//! Device registry and per-device credit ledger.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::model::{is_valid_id, DeviceId, DeviceMetadata, EventKey, UsageEvent};
use crate::money::Money;
use crate::vocabulary::Vocabulary;

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("unknown {kind} '{term}'")]
    UnknownTerm { kind: &'static str, term: String },
    #[error("invalid device id '{0}'")]
    InvalidId(String),
    #[error("device '{0}' already registered")]
    Duplicate(DeviceId),
    #[error("unknown device '{0}'")]
    UnknownDevice(DeviceId),
    #[error("credit cannot be negative")]
    NegativeCredit,
    #[error("event at {0} has no cost yet")]
    Unpriced(i64),
    #[error("event {device}@{t_start} already charged", device = .0.device_id, t_start = .0.t_start)]
    AlreadyApplied(EventKey),
}

/// Devices of one household plus the credit charged against them.
#[derive(Debug, Clone)]
pub struct DeviceRegistry {
    vocabulary: Vocabulary,
    devices: BTreeMap<DeviceId, DeviceMetadata>,
    applied: HashSet<EventKey>,
}

impl DeviceRegistry {
    pub fn new(vocabulary: Vocabulary) -> Self {
        DeviceRegistry {
            vocabulary,
            devices: BTreeMap::new(),
            applied: HashSet::new(),
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn validate(&self, meta: &DeviceMetadata) -> Result<(), RegistryError> {
        if !is_valid_id(meta.device_id.as_str()) {
            return Err(RegistryError::InvalidId(meta.device_id.to_string()));
        }
        if meta.credit.is_negative() {
            return Err(RegistryError::NegativeCredit);
        }
        self.vocabulary.validate(&meta.device_type, &meta.room)
    }

    pub fn register_device(&mut self, meta: DeviceMetadata) -> Result<DeviceId, RegistryError> {
        self.validate(&meta)?;
        if self.devices.contains_key(&meta.device_id) {
            return Err(RegistryError::Duplicate(meta.device_id));
        }
        let id = meta.device_id.clone();
        self.devices.insert(id.clone(), meta);
        Ok(id)
    }

    /// Replaces the metadata of an existing device.
    pub fn update_device(&mut self, meta: DeviceMetadata) -> Result<(), RegistryError> {
        self.validate(&meta)?;
        match self.devices.get_mut(&meta.device_id) {
            Some(slot) => {
                *slot = meta;
                Ok(())
            }
            None => Err(RegistryError::UnknownDevice(meta.device_id)),
        }
    }

    pub fn get(&self, id: &DeviceId) -> Option<&DeviceMetadata> {
        self.devices.get(id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceMetadata> {
        self.devices.values()
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn is_applied(&self, key: &EventKey) -> bool {
        self.applied.contains(key)
    }

    /// Marks an event as already charged without touching credit (used when
    /// restoring the ledger from storage).
    pub fn mark_applied(&mut self, key: EventKey) {
        self.applied.insert(key);
    }

    /// Charges a priced event against its device's credit. Credit floors at zero;
    /// the event is still recorded as applied. Returns the new credit.
    pub fn apply_event_to_credit(&mut self, event: &UsageEvent) -> Result<Money, RegistryError> {
        let cost = event.cost_eur.ok_or(RegistryError::Unpriced(event.t_start))?;
        let key = event.key();
        if self.applied.contains(&key) {
            return Err(RegistryError::AlreadyApplied(key));
        }
        let device = self
            .devices
            .get_mut(&event.device_id)
            .ok_or_else(|| RegistryError::UnknownDevice(event.device_id.clone()))?;
        device.credit = device.credit.saturating_sub_floor(Money::from_eur(cost));
        self.applied.insert(key);
        Ok(device.credit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventSource, Mobility};

    fn fridge(id: &str, credit: f64) -> DeviceMetadata {
        DeviceMetadata {
            device_id: id.into(),
            device_type: "fridge".into(),
            room: "kitchen".into(),
            mobility: Mobility::Fixed,
            curtailable: false,
            user_driven: false,
            has_standby: false,
            credit: Money::from_eur(credit),
        }
    }

    fn event(device: &str, t: i64, cost: Option<f64>) -> UsageEvent {
        UsageEvent {
            device_id: device.into(),
            t_start: t,
            duration: 60,
            energy_kwh: 0.1,
            cost_eur: cost,
            source: EventSource::Detected,
        }
    }

    #[test]
    fn register_and_list() {
        let mut reg = DeviceRegistry::new(Vocabulary::default());
        reg.register_device(fridge("f1", 0.0)).unwrap();
        assert_eq!(reg.devices().count(), 1);
        assert_eq!(reg.get(&"f1".into()).unwrap().device_type, "fridge");
    }

    #[test]
    fn duplicate_rejected() {
        let mut reg = DeviceRegistry::new(Vocabulary::default());
        reg.register_device(fridge("f1", 0.0)).unwrap();
        assert_eq!(
            reg.register_device(fridge("f1", 0.0)),
            Err(RegistryError::Duplicate("f1".into()))
        );
    }

    #[test]
    fn vocabulary_gate() {
        let mut reg = DeviceRegistry::new(Vocabulary::default());
        let mut meta = fridge("w", 0.0);
        meta.device_type = "warpdrive".into();
        assert!(matches!(reg.register_device(meta), Err(RegistryError::UnknownTerm { .. })));
    }

    #[test]
    fn credit_subtracts_and_floors() {
        let mut reg = DeviceRegistry::new(Vocabulary::default());
        reg.register_device(fridge("a", 10.0)).unwrap();
        reg.register_device(fridge("b", 0.30)).unwrap();
        assert_eq!(reg.apply_event_to_credit(&event("a", 0, Some(0.5))).unwrap(), Money::from_eur(9.5));
        assert_eq!(reg.apply_event_to_credit(&event("b", 0, Some(0.5))).unwrap(), Money::ZERO);
    }

    #[test]
    fn replay_rejected_and_unpriced_rejected() {
        let mut reg = DeviceRegistry::new(Vocabulary::default());
        reg.register_device(fridge("a", 10.0)).unwrap();
        let e = event("a", 100, Some(0.5));
        reg.apply_event_to_credit(&e).unwrap();
        assert!(matches!(reg.apply_event_to_credit(&e), Err(RegistryError::AlreadyApplied(_))));
        assert_eq!(reg.get(&"a".into()).unwrap().credit, Money::from_eur(9.5));
        assert_eq!(
            reg.apply_event_to_credit(&event("a", 200, None)),
            Err(RegistryError::Unpriced(200))
        );
        assert!(matches!(
            reg.apply_event_to_credit(&event("zz", 300, Some(0.1))),
            Err(RegistryError::UnknownDevice(_))
        ));
    }
}
