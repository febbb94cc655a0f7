//! SQLite persistence for one household.

use std::path::Path;

use hems_core::advisor::{Advice, FeedbackRecord};
use hems_core::{
    ChannelId, DeviceId, DeviceMetadata, Direction, EventKey, EventSource, PowerSample, Timestamp, UsageEvent, UserId,
};
use rusqlite::{params, Connection};

use crate::error::EngineError;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS samples (
    channel TEXT NOT NULL,
    t INTEGER NOT NULL,
    w REAL,
    PRIMARY KEY (channel, t)
) WITHOUT ROWID;
CREATE TABLE IF NOT EXISTS devices (
    device_id TEXT PRIMARY KEY,
    meta TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS events (
    device_id TEXT NOT NULL,
    t_start INTEGER NOT NULL,
    duration INTEGER NOT NULL,
    energy_kwh REAL NOT NULL,
    source TEXT NOT NULL,
    PRIMARY KEY (device_id, t_start)
);
CREATE INDEX IF NOT EXISTS events_by_start ON events (t_start);
CREATE TABLE IF NOT EXISTS credit_applied (
    device_id TEXT NOT NULL,
    t_start INTEGER NOT NULL,
    PRIMARY KEY (device_id, t_start)
);
CREATE TABLE IF NOT EXISTS dirty (
    device_id TEXT PRIMARY KEY
);
CREATE TABLE IF NOT EXISTS advices (
    user_id TEXT NOT NULL,
    advice_id TEXT NOT NULL,
    body TEXT NOT NULL,
    PRIMARY KEY (user_id, advice_id)
);
CREATE TABLE IF NOT EXISTS feedback (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    user_id TEXT NOT NULL,
    body TEXT NOT NULL
);
";

pub struct Store {
    conn: Connection,
}

fn source_str(s: EventSource) -> &'static str {
    match s {
        EventSource::Detected => "detected",
        EventSource::External => "external",
    }
}

fn event_from_row(row: &rusqlite::Row<'_>) -> rusqlite::Result<UsageEvent> {
    let source: String = row.get(4)?;
    Ok(UsageEvent {
        device_id: DeviceId::new(row.get::<_, String>(0)?),
        t_start: row.get(1)?,
        duration: row.get(2)?,
        energy_kwh: row.get(3)?,
        cost_eur: None,
        source: if source == "external" {
            EventSource::External
        } else {
            EventSource::Detected
        },
    })
}

impl Store {
    pub fn open(path: &Path) -> Result<Self, EngineError> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Self, EngineError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, EngineError> {
        conn.execute_batch(SCHEMA)?;
        Ok(Store { conn })
    }

    /// Stores readings; a (channel, timestamp) pair already present is left
    /// untouched. Returns (inserted, duplicates).
    pub fn insert_samples(&mut self, channel: &ChannelId, rows: &[(Timestamp, Option<f64>)]) -> Result<(usize, usize), EngineError> {
        let tx = self.conn.transaction()?;
        let mut inserted = 0;
        {
            let mut stmt = tx.prepare_cached("INSERT OR IGNORE INTO samples (channel, t, w) VALUES (?1, ?2, ?3)")?;
            for (t, w) in rows {
                inserted += stmt.execute(params![channel.as_str(), t, w])?;
            }
        }
        tx.commit()?;
        Ok((inserted, rows.len() - inserted))
    }

    pub fn samples(
        &self,
        channel: &ChannelId,
        direction: Direction,
        from: Timestamp,
        to: Timestamp,
    ) -> Result<Vec<PowerSample>, EngineError> {
        let mut stmt = self
            .conn
            .prepare_cached("SELECT t, w FROM samples WHERE channel = ?1 AND t >= ?2 AND t < ?3 ORDER BY t")?;
        let rows = stmt.query_map(params![channel.as_str(), from, to], |r| {
            Ok(PowerSample {
                channel_id: channel.clone(),
                timestamp: r.get(0)?,
                power: r.get(1)?,
                direction,
            })
        })?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// First and last reading times of a channel.
    pub fn sample_span(&self, channel: &ChannelId) -> Result<Option<(Timestamp, Timestamp)>, EngineError> {
        let span: (Option<i64>, Option<i64>) = self.conn.query_row(
            "SELECT MIN(t), MAX(t) FROM samples WHERE channel = ?1",
            [channel.as_str()],
            |r| Ok((r.get(0)?, r.get(1)?)),
        )?;
        Ok(span.0.zip(span.1))
    }

    pub fn devices(&self) -> Result<Vec<DeviceMetadata>, EngineError> {
        let mut stmt = self.conn.prepare_cached("SELECT meta FROM devices ORDER BY device_id")?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for json in rows {
            out.push(serde_json::from_str(&json?)?);
        }
        Ok(out)
    }

    pub fn put_device(&self, meta: &DeviceMetadata) -> Result<(), EngineError> {
        self.conn.execute(
            "INSERT INTO devices (device_id, meta) VALUES (?1, ?2)
             ON CONFLICT (device_id) DO UPDATE SET meta = excluded.meta",
            params![meta.device_id.as_str(), serde_json::to_string(meta)?],
        )?;
        Ok(())
    }

    /// Events starting in `[from, to)`, optionally for one device, by start time.
    pub fn events(&self, device: Option<&DeviceId>, from: Timestamp, to: Timestamp) -> Result<Vec<UsageEvent>, EngineError> {
        let mut stmt = self.conn.prepare_cached(
            "SELECT device_id, t_start, duration, energy_kwh, source FROM events
             WHERE t_start >= ?1 AND t_start < ?2 AND (?3 IS NULL OR device_id = ?3)
             ORDER BY t_start, device_id",
        )?;
        let rows = stmt.query_map(params![from, to, device.map(DeviceId::as_str)], event_from_row)?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn device_events(&self, device: &DeviceId) -> Result<Vec<UsageEvent>, EngineError> {
        self.events(Some(device), i64::MIN, i64::MAX)
    }

    /// Replaces a device's detected events, keeping external ones.
    pub fn replace_detected(&mut self, device: &DeviceId, events: &[UsageEvent]) -> Result<(), EngineError> {
        let tx = self.conn.transaction()?;
        tx.execute(
            "DELETE FROM events WHERE device_id = ?1 AND source = 'detected'",
            [device.as_str()],
        )?;
        {
            let mut stmt = tx.prepare_cached(
                "INSERT INTO events (device_id, t_start, duration, energy_kwh, source) VALUES (?1, ?2, ?3, ?4, ?5)",
            )?;
            for e in events {
                stmt.execute(params![device.as_str(), e.t_start, e.duration, e.energy_kwh, source_str(e.source)])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    pub fn insert_event(&self, e: &UsageEvent) -> Result<(), EngineError> {
        self.conn.execute(
            "INSERT INTO events (device_id, t_start, duration, energy_kwh, source) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![e.device_id.as_str(), e.t_start, e.duration, e.energy_kwh, source_str(e.source)],
        )?;
        Ok(())
    }

    pub fn delete_event(&self, key: &EventKey) -> Result<(), EngineError> {
        self.conn.execute(
            "DELETE FROM events WHERE device_id = ?1 AND t_start = ?2",
            params![key.device_id.as_str(), key.t_start],
        )?;
        Ok(())
    }

    pub fn applied_keys(&self) -> Result<Vec<EventKey>, EngineError> {
        let mut stmt = self.conn.prepare_cached("SELECT device_id, t_start FROM credit_applied")?;
        let rows = stmt.query_map([], |r| {
            Ok(EventKey {
                device_id: DeviceId::new(r.get::<_, String>(0)?),
                t_start: r.get(1)?,
            })
        })?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn mark_applied(&self, key: &EventKey) -> Result<(), EngineError> {
        self.conn.execute(
            "INSERT OR IGNORE INTO credit_applied (device_id, t_start) VALUES (?1, ?2)",
            params![key.device_id.as_str(), key.t_start],
        )?;
        Ok(())
    }

    pub fn mark_dirty(&self, device: &DeviceId) -> Result<(), EngineError> {
        self.conn
            .execute("INSERT OR IGNORE INTO dirty (device_id) VALUES (?1)", [device.as_str()])?;
        Ok(())
    }

    pub fn dirty(&self) -> Result<Vec<DeviceId>, EngineError> {
        let mut stmt = self.conn.prepare_cached("SELECT device_id FROM dirty ORDER BY device_id")?;
        let rows = stmt.query_map([], |r| Ok(DeviceId::new(r.get::<_, String>(0)?)))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn clear_dirty(&self, device: &DeviceId) -> Result<(), EngineError> {
        self.conn.execute("DELETE FROM dirty WHERE device_id = ?1", [device.as_str()])?;
        Ok(())
    }

    pub fn advices(&self, user: &UserId) -> Result<Vec<Advice>, EngineError> {
        let mut stmt = self
            .conn
            .prepare_cached("SELECT body FROM advices WHERE user_id = ?1 ORDER BY advice_id")?;
        let rows = stmt.query_map([user.as_str()], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for json in rows {
            out.push(serde_json::from_str(&json?)?);
        }
        Ok(out)
    }

    pub fn feedback_log(&self, user: &UserId) -> Result<Vec<FeedbackRecord>, EngineError> {
        let mut stmt = self
            .conn
            .prepare_cached("SELECT body FROM feedback WHERE user_id = ?1 ORDER BY seq")?;
        let rows = stmt.query_map([user.as_str()], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for json in rows {
            out.push(serde_json::from_str(&json?)?);
        }
        Ok(out)
    }

    /// Writes advice states and appends feedback records in one transaction.
    pub fn save_advices<'a>(
        &mut self,
        user: &UserId,
        advices: impl IntoIterator<Item = &'a Advice>,
        feedback: &[FeedbackRecord],
    ) -> Result<(), EngineError> {
        let tx = self.conn.transaction()?;
        {
            let mut put = tx.prepare_cached(
                "INSERT INTO advices (user_id, advice_id, body) VALUES (?1, ?2, ?3)
                 ON CONFLICT (user_id, advice_id) DO UPDATE SET body = excluded.body",
            )?;
            for a in advices {
                put.execute(params![user.as_str(), a.advice_id, serde_json::to_string(a)?])?;
            }
            let mut log = tx.prepare_cached("INSERT INTO feedback (user_id, body) VALUES (?1, ?2)")?;
            for f in feedback {
                log.execute(params![user.as_str(), serde_json::to_string(f)?])?;
            }
        }
        tx.commit()?;
        Ok(())
    }
}
