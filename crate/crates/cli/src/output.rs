//! JSON and CSV rendering of reports.

use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use hems_core::wire::{
    AdvicesResponse, DaySummary, EstimateResponse, EventDto, ItemizationResponse, SlotDistributionResponse,
    UsageResponse,
};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// A report with a tabular rendering.
pub trait Table: Serialize {
    fn header(&self) -> Vec<String>;
    fn rows(&self) -> Vec<Vec<String>>;
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn opt4(v: Option<f64>) -> String {
    v.map(f4).unwrap_or_default()
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn emit<T: Table>(report: &T, format: Format, out: Option<&Path>) -> Result<(), String> {
    let mut buf = Vec::new();
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, report).map_err(|e| e.to_string())?;
            buf.push(b'\n');
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(report.header()).map_err(|e| e.to_string())?;
            for row in report.rows() {
                w.write_record(row).map_err(|e| e.to_string())?;
            }
            w.flush().map_err(|e| e.to_string())?;
        }
    }
    match out {
        Some(p) => std::fs::write(p, buf).map_err(|e| format!("{}: {e}", p.display())),
        None => std::io::stdout().write_all(&buf).map_err(|e| e.to_string()),
    }
}

impl Table for ItemizationResponse {
    fn header(&self) -> Vec<String> {
        cols(&["device_id", "energy_kwh", "cost_eur", "share_pct"])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| vec![r.device_id.to_string(), f4(r.energy_kwh), f4(r.cost_eur), f4(r.share_pct)])
            .collect()
    }
}

impl Table for SlotDistributionResponse {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["device_id".to_owned()];
        h.extend(self.slots.iter().map(|s| format!("{s}_kwh")));
        h.extend(self.slots.iter().map(|s| format!("{s}_pct")));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut row = vec![r.device_id.to_string()];
                row.extend(self.slots.iter().map(|s| opt4(r.kwh.get(s).copied())));
                row.extend(self.slots.iter().map(|s| opt4(r.percent.get(s).copied())));
                row
            })
            .collect()
    }
}

impl Table for EstimateResponse {
    fn header(&self) -> Vec<String> {
        cols(&[
            "date",
            "prior_days",
            "consumption_so_far_kwh",
            "consumption_kwh",
            "production_so_far_kwh",
            "production_kwh",
        ])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        vec![vec![
            self.date.to_string(),
            self.prior_days.to_string(),
            f4(self.consumption_so_far_kwh),
            f4(self.consumption_kwh),
            opt4(self.production_so_far_kwh),
            opt4(self.production_kwh),
        ]]
    }
}

impl Table for UsageResponse {
    fn header(&self) -> Vec<String> {
        let mut h = cols(&["device_id", "event_count", "events_per_week", "mean_energy_kwh"]);
        h.extend((0..24).map(|i| format!("h{i:02}")));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut row = vec![
            self.device_id.to_string(),
            self.event_count.to_string(),
            f4(self.events_per_week),
            f4(self.mean_energy_kwh),
        ];
        row.extend(self.start_hours.iter().map(u32::to_string));
        vec![row]
    }
}

impl Table for DaySummary {
    fn header(&self) -> Vec<String> {
        let mut h = cols(&["date", "consumption_kwh", "production_kwh", "cost_eur"]);
        h.extend(self.slot_kwh.keys().map(|s| format!("{s}_kwh")));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut row = vec![
            self.date.to_string(),
            f4(self.consumption_kwh),
            f4(self.production_kwh),
            f4(self.cost_eur),
        ];
        row.extend(self.slot_kwh.values().map(|v| f4(*v)));
        vec![row]
    }
}

#[derive(Serialize)]
#[serde(transparent)]
pub struct Events(pub Vec<EventDto>);

impl Table for Events {
    fn header(&self) -> Vec<String> {
        cols(&["device_id", "t_start", "t_end", "duration_s", "energy_kwh", "cost_eur", "source"])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.0
            .iter()
            .map(|e| {
                vec![
                    e.device_id.to_string(),
                    e.t_start.to_rfc3339(),
                    e.t_end.to_rfc3339(),
                    e.duration_s.to_string(),
                    f4(e.energy_kwh),
                    opt4(e.cost_eur),
                    format!("{:?}", e.source).to_lowercase(),
                ]
            })
            .collect()
    }
}

impl Table for AdvicesResponse {
    fn header(&self) -> Vec<String> {
        cols(&["rank", "advice_id", "advice_type", "device_id", "score", "rng_seed", "message"])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.advices
            .iter()
            .enumerate()
            .map(|(i, a)| {
                vec![
                    (i + 1).to_string(),
                    a.advice_id.clone(),
                    a.advice_type.to_string(),
                    a.device_id.to_string(),
                    a.score.to_string(),
                    self.rng_seed.to_string(),
                    a.message.clone(),
                ]
            })
            .collect()
    }
}

/// Key/value results of the calculators.
#[derive(Serialize)]
#[serde(transparent)]
pub struct Figures(pub serde_json::Map<String, serde_json::Value>);

impl Table for Figures {
    fn header(&self) -> Vec<String> {
        self.0.keys().cloned().collect()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        vec![self
            .0
            .values()
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect()]
    }
}
