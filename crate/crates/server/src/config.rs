//! Service configuration, read from a TOML file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono_tz::Tz;
use hems_core::advisor::{AdvisorConfig, MessageTemplates};
use hems_core::analytics::LabelCoefficients;
use hems_core::detection::DetectorConfig;
use hems_core::tariff::{HolidayCalendar, TariffScheme};
use hems_core::vocabulary::{TermList, Vocabulary};
use hems_core::wire::DeviceDto;
use hems_core::{CategoryId, ChannelId, Direction, HouseholdId, Scope, UserId};
use serde::Deserialize;

use crate::error::EngineError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data_dir: PathBuf,
    pub tariff: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    pub device_types: Option<PathBuf>,
    pub rooms: Option<PathBuf>,
    pub label_coefficients: Option<PathBuf>,
    pub messages: Option<PathBuf>,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub advisor: AdvisorConfig,
    #[serde(default)]
    pub households: Vec<HouseholdConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct DetectorSection {
    #[serde(flatten)]
    pub defaults: DetectorConfig,
    /// Per-device overrides keyed by device id.
    #[serde(default)]
    pub devices: BTreeMap<String, DetectorConfig>,
}

impl DetectorSection {
    pub fn for_device(&self, device: &str) -> DetectorConfig {
        self.devices.get(device).copied().unwrap_or(self.defaults)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HouseholdConfig {
    pub id: HouseholdId,
    pub timezone: Tz,
    pub category: Option<CategoryId>,
    #[serde(default)]
    pub users: Vec<UserConfig>,
    /// Whole-house meter channels.
    #[serde(default)]
    pub channels: Vec<ChannelConfig>,
    /// Devices registered on first start.
    #[serde(default)]
    pub devices: Vec<DeviceDto>,
}

#[derive(Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub id: UserId,
    #[serde(default)]
    pub name: String,
    pub token: String,
    #[serde(default = "default_scopes")]
    pub scopes: Vec<Scope>,
}

fn default_scopes() -> Vec<Scope> {
    vec![Scope::Read]
}

impl fmt::Debug for UserConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserConfig")
            .field("id", &self.id)
            .field("name", &self.name)
            .field("token", &"<redacted>")
            .field("scopes", &self.scopes)
            .finish()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub id: ChannelId,
    #[serde(default = "default_direction")]
    pub direction: Direction,
}

fn default_direction() -> Direction {
    Direction::Consumption
}

/// Reference data resolved from the config, falling back to the shipped files.
#[derive(Debug, Clone)]
pub struct Resources {
    pub scheme: TariffScheme,
    pub vocabulary: Vocabulary,
    pub coefficients: LabelCoefficients,
    pub messages: MessageTemplates,
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self, EngineError> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        cfg.rebase(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        for p in [
            &mut self.tariff,
            &mut self.holidays,
            &mut self.device_types,
            &mut self.rooms,
            &mut self.label_coefficients,
            &mut self.messages,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        self.detector.defaults.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        for (device, d) in &self.detector.devices {
            d.validate().map_err(|e| EngineError::Config(format!("detector.devices.{device}: {e}")))?;
        }
        self.advisor.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        let mut tokens = std::collections::BTreeSet::new();
        let mut households = std::collections::BTreeSet::new();
        for h in &self.households {
            if !hems_core::is_valid_id(h.id.as_str()) {
                return bad(format!("invalid household id '{}'", h.id));
            }
            if !households.insert(h.id.clone()) {
                return bad(format!("duplicate household '{}'", h.id));
            }
            for u in &h.users {
                if u.token.len() < 16 {
                    return bad(format!("token of user '{}' is shorter than 16 characters", u.id));
                }
                if !tokens.insert(u.token.clone()) {
                    return bad(format!("user '{}' reuses another user's token", u.id));
                }
            }
            for c in &h.channels {
                if !hems_core::is_valid_id(c.id.as_str()) {
                    return bad(format!("invalid channel id '{}'", c.id));
                }
                if h.devices.iter().any(|d| d.device_id.as_str() == c.id.as_str()) {
                    return bad(format!("channel '{}' collides with a device id", c.id));
                }
            }
        }
        Ok(())
    }

    pub fn resources(&self) -> Result<Resources, EngineError> {
        let err = |p: &Path, e: String| EngineError::Config(format!("{}: {e}", p.display()));
        let mut scheme = match &self.tariff {
            Some(p) => TariffScheme::load(p).map_err(|e| err(p, e.to_string()))?,
            None => TariffScheme::italian(),
        };
        if let Some(p) = &self.holidays {
            scheme = scheme.with_holidays(HolidayCalendar::load(p).map_err(|e| err(p, e.to_string()))?);
        }
        let terms = |p: &Option<PathBuf>, fallback: &str| match p {
            Some(p) => TermList::load(p).map_err(|e| err(p, e.to_string())),
            None => Ok(TermList::parse(fallback)),
        };
        let vocabulary = Vocabulary::new(
            terms(&self.device_types, hems_core::vocabulary::DEFAULT_DEVICE_TYPES)?,
            terms(&self.rooms, hems_core::vocabulary::DEFAULT_ROOMS)?,
        );
        let coefficients = match &self.label_coefficients {
            Some(p) => LabelCoefficients::load(p).map_err(|e| err(p, e.to_string()))?,
            None => LabelCoefficients::default(),
        };
        let messages = match &self.messages {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| err(p, e.to_string()))?;
                MessageTemplates::parse(&text).map_err(|e| err(p, e.to_string()))?
            }
            None => MessageTemplates::default(),
        };
        for h in &self.households {
            if let Some(c) = &h.category {
                if scheme.category(c).is_none() {
                    return Err(EngineError::Config(format!("household '{}': unknown category '{c}'", h.id)));
                }
            }
        }
        Ok(Resources {
            scheme,
            vocabulary,
            coefficients,
            messages,
        })
    }
}
