//! Controlled vocabularies for device types and rooms.

use std::collections::BTreeSet;
use std::path::Path;

use crate::registry::RegistryError;

pub const DEFAULT_DEVICE_TYPES: &str = include_str!("../data/device_types.txt");
pub const DEFAULT_ROOMS: &str = include_str!("../data/rooms.txt");

/// A set of accepted terms, one per line in its source file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermList {
    terms: BTreeSet<String>,
}

impl TermList {
    pub fn parse(text: &str) -> Self {
        let terms = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect();
        TermList { terms }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains(term)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub device_types: TermList,
    pub rooms: TermList,
}

impl Vocabulary {
    pub fn new(device_types: TermList, rooms: TermList) -> Self {
        Vocabulary { device_types, rooms }
    }

    pub fn validate(&self, device_type: &str, room: &str) -> Result<(), RegistryError> {
        if !self.device_types.contains(device_type) {
            return Err(RegistryError::UnknownTerm {
                kind: "device type",
                term: device_type.to_owned(),
            });
        }
        if !self.rooms.contains(room) {
            return Err(RegistryError::UnknownTerm {
                kind: "room",
                term: room.to_owned(),
            });
        }
        Ok(())
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            device_types: TermList::parse(DEFAULT_DEVICE_TYPES),
            rooms: TermList::parse(DEFAULT_ROOMS),
        }
    }
}
