//! Shared domain types.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::money::Money;

/// Unix epoch seconds, UTC.
pub type Timestamp = i64;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(
    /// Identifier of a monitored device. A device's power channel shares its id.
    DeviceId
);
id_type!(
    /// Identifier of a power channel (a device or an aggregate meter).
    ChannelId
);
id_type!(UserId);
id_type!(HouseholdId);
id_type!(
    /// Tariff time slot, e.g. `T1`.
    SlotId
);
id_type!(
    /// Annual consumption category, e.g. `C1`.
    CategoryId
);

impl From<&DeviceId> for ChannelId {
    fn from(d: &DeviceId) -> Self {
        ChannelId(d.0.clone())
    }
}

/// Ids end up in URL paths and CSV headers, so keep them plain.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mobility {
    Fixed,
    Portable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Consumption,
    Production,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceMetadata {
    pub device_id: DeviceId,
    pub device_type: String,
    pub room: String,
    pub mobility: Mobility,
    pub curtailable: bool,
    /// Operated on explicit user demand (washing machine) rather than autonomously (fridge).
    pub user_driven: bool,
    pub has_standby: bool,
    #[serde(default)]
    pub credit: Money,
}

/// One power reading. `power` is `None` when the logger reported nothing usable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub channel_id: ChannelId,
    pub timestamp: Timestamp,
    pub power: Option<f64>,
    pub direction: Direction,
}

impl PowerSample {
    pub fn new(channel_id: impl Into<ChannelId>, timestamp: Timestamp, power: Option<f64>) -> Self {
        PowerSample {
            channel_id: channel_id.into(),
            timestamp,
            power,
            direction: Direction::Consumption,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    Detected,
    External,
}

/// A contiguous period of active use of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageEvent {
    pub device_id: DeviceId,
    pub t_start: Timestamp,
    /// Seconds, always positive.
    pub duration: i64,
    pub energy_kwh: f64,
    pub cost_eur: Option<f64>,
    pub source: EventSource,
}

impl UsageEvent {
    pub fn t_end(&self) -> Timestamp {
        self.t_start + self.duration
    }

    pub fn key(&self) -> EventKey {
        EventKey {
            device_id: self.device_id.clone(),
            t_start: self.t_start,
        }
    }

    pub fn overlaps(&self, other: &UsageEvent) -> bool {
        self.t_start < other.t_end() && other.t_start < self.t_end()
    }
}

/// Identity of an event: events of one device never overlap, so the start is unique.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventKey {
    pub device_id: DeviceId,
    pub t_start: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Read,
    Write,
}

#[derive(Clone, Serialize, Deserialize)]
pub struct User {
    pub user_id: UserId,
    pub display_name: String,
    pub token: String,
    pub scopes: Vec<Scope>,
}

impl fmt::Debug for User {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("User")
            .field("user_id", &self.user_id)
            .field("display_name", &self.display_name)
            .field("token", &"<redacted>")
            .field("scopes", &self.scopes)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_charset() {
        assert!(is_valid_id("fridge-1"));
        assert!(is_valid_id("tv.living_room"));
        assert!(!is_valid_id(""));
        assert!(!is_valid_id("a/b"));
        assert!(!is_valid_id("has space"));
    }

    #[test]
    fn user_debug_hides_token() {
        let u = User {
            user_id: "u".into(),
            display_name: "U".into(),
            token: "s3cret".into(),
            scopes: vec![Scope::Read],
        };
        assert!(!format!("{u:?}").contains("s3cret"));
    }
}
