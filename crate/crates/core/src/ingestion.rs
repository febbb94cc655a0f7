//! Power trace parsing, resampling and channel aggregation.
//!
//! Trace files are CSV: a `timestamp` column (unix seconds, UTC) followed by one
//! column per channel. An empty cell or `NULL` is a missing reading.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{NaiveDate, TimeZone};
use chrono_tz::Tz;
use thiserror::Error;

use crate::energy::MAX_BRIDGED_GAP_S;
use crate::model::{is_valid_id, ChannelId, Direction, PowerSample, Timestamp};

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("trace has no header row starting with 'timestamp'")]
    MissingHeader,
    #[error("invalid channel name '{0}' in header")]
    InvalidChannel(String),
    #[error("channel '{0}' appears twice in header")]
    DuplicateChannel(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("resampling period must be positive, got {0}")]
    BadPeriod(i64),
    #[error("cannot merge consumption and production channels")]
    MixedDirections,
    #[error("{weights} weights given for {channels} channels")]
    WeightCount { weights: usize, channels: usize },
    #[error("trace spans {0} calendar days, at most one allowed")]
    MultipleDays(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub rows: usize,
    pub malformed: usize,
    pub duplicates: usize,
    pub out_of_order: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub channels: Vec<ChannelId>,
    /// Ordered by timestamp, then by header column.
    pub samples: Vec<PowerSample>,
    pub stats: ParseStats,
    pub warnings: Vec<String>,
}

impl ParsedTrace {
    /// Local calendar days touched by the trace.
    pub fn days(&self, tz: Tz) -> BTreeSet<NaiveDate> {
        self.samples
            .iter()
            .map(|s| tz.timestamp_opt(s.timestamp, 0).unwrap().date_naive())
            .collect()
    }

    /// Enforces the one-file-per-day convention.
    pub fn check_single_day(&self, tz: Tz) -> Result<Option<NaiveDate>, IngestError> {
        let days = self.days(tz);
        match days.len() {
            0 => Ok(None),
            1 => Ok(days.into_iter().next()),
            n => Err(IngestError::MultipleDays(n)),
        }
    }

    pub fn channel_samples(&self, channel: &ChannelId) -> Vec<PowerSample> {
        self.samples.iter().filter(|s| &s.channel_id == channel).cloned().collect()
    }
}

fn parse_cell(cell: &str) -> Result<Option<f64>, ()> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("null") {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(w) if w.is_finite() && w >= 0.0 => Ok(Some(w)),
        _ => Err(()),
    }
}

/// Parses a trace with every channel marked as consumption.
pub fn parse_trace(bytes: &[u8]) -> Result<ParsedTrace, IngestError> {
    parse_trace_with(bytes, |_| Direction::Consumption)
}

/// Parses a trace, asking `direction_of` for each header channel.
///
/// Malformed rows are counted and skipped. Rows are reordered by timestamp if
/// needed; of two rows with the same timestamp the later one is dropped.
pub fn parse_trace_with(
    bytes: &[u8],
    direction_of: impl Fn(&ChannelId) -> Direction,
) -> Result<ParsedTrace, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut records = reader.records();

    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(IngestError::Csv(e.to_string())),
        None => return Err(IngestError::MissingHeader),
    };
    if !header.get(0).is_some_and(|h| h.eq_ignore_ascii_case("timestamp")) {
        return Err(IngestError::MissingHeader);
    }
    let mut channels = Vec::with_capacity(header.len() - 1);
    for name in header.iter().skip(1) {
        if !is_valid_id(name) {
            return Err(IngestError::InvalidChannel(name.to_owned()));
        }
        let id = ChannelId::from(name);
        if channels.contains(&id) {
            return Err(IngestError::DuplicateChannel(name.to_owned()));
        }
        channels.push(id);
    }
    let directions: Vec<Direction> = channels.iter().map(&direction_of).collect();

    let mut stats = ParseStats::default();
    let mut rows: Vec<(Timestamp, Vec<Option<f64>>)> = Vec::new();
    'rows: for record in records {
        stats.rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                stats.malformed += 1;
                continue;
            }
        };
        if record.len() != channels.len() + 1 {
            stats.malformed += 1;
            continue;
        }
        let Ok(t) = record[0].parse::<Timestamp>() else {
            stats.malformed += 1;
            continue;
        };
        let mut values = Vec::with_capacity(channels.len());
        for cell in record.iter().skip(1) {
            match parse_cell(cell) {
                Ok(v) => values.push(v),
                Err(()) => {
                    stats.malformed += 1;
                    continue 'rows;
                }
            }
        }
        rows.push((t, values));
    }

    let mut warnings = Vec::new();
    stats.out_of_order = rows.windows(2).filter(|w| w[1].0 < w[0].0).count();
    if stats.out_of_order > 0 {
        warnings.push(format!("{} rows out of timestamp order were reordered", stats.out_of_order));
        // stable: among equal timestamps the earlier row stays first
        rows.sort_by_key(|r| r.0);
    }
    let before = rows.len();
    rows.dedup_by_key(|r| r.0);
    stats.duplicates = before - rows.len();
    if stats.duplicates > 0 {
        warnings.push(format!("{} rows with duplicate timestamps dropped", stats.duplicates));
    }

    let mut samples = Vec::with_capacity(rows.len() * channels.len());
    for (t, values) in rows {
        for ((channel, direction), power) in channels.iter().zip(&directions).zip(values) {
            samples.push(PowerSample {
                channel_id: channel.clone(),
                timestamp: t,
                power,
                direction: *direction,
            });
        }
    }
    Ok(ParsedTrace {
        channels,
        samples,
        stats,
        warnings,
    })
}

/// Writes samples back out in trace format, one row per distinct timestamp.
/// Channels without a reading at a timestamp get an empty cell.
pub fn write_trace(channels: &[ChannelId], samples: &[PowerSample]) -> String {
    let column: BTreeMap<&ChannelId, usize> = channels.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let mut rows: BTreeMap<Timestamp, Vec<Option<f64>>> = BTreeMap::new();
    for s in samples {
        if let Some(&i) = column.get(&s.channel_id) {
            rows.entry(s.timestamp).or_insert_with(|| vec![None; channels.len()])[i] = s.power;
        }
    }
    let mut out = String::from("timestamp");
    for c in channels {
        out.push(',');
        out.push_str(c.as_str());
    }
    out.push('\n');
    for (t, values) in rows {
        out.push_str(&t.to_string());
        for v in values {
            out.push(',');
            if let Some(w) = v {
                out.push_str(&w.to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// Averages readings into `period`-second bins aligned to the epoch.
///
/// Each output sample sits at its bin start and carries the mean of the present
/// readings in the bin; a bin holding only missing readings yields a missing
/// sample, an empty bin yields nothing.
pub fn resample(samples: &[PowerSample], period: i64) -> Result<Vec<PowerSample>, IngestError> {
    if period <= 0 {
        return Err(IngestError::BadPeriod(period));
    }
    // (channel, bin) -> (direction, sum, present count)
    let mut bins: BTreeMap<(&ChannelId, Timestamp), (Direction, f64, usize)> = BTreeMap::new();
    for s in samples {
        let bin = s.timestamp.div_euclid(period) * period;
        let acc = bins.entry((&s.channel_id, bin)).or_insert((s.direction, 0.0, 0));
        if let Some(w) = s.power {
            acc.1 += w;
            acc.2 += 1;
        }
    }
    Ok(bins
        .into_iter()
        .map(|((channel, bin), (direction, sum, n))| PowerSample {
            channel_id: channel.clone(),
            timestamp: bin,
            power: (n > 0).then(|| sum / n as f64),
            direction,
        })
        .collect())
}

/// Sums time-sorted channels onto the union of their timestamps.
///
/// A channel without a reading at a grid point contributes its last reading if
/// that is at most five seconds old, and nothing otherwise. The aggregate is
/// missing only where no channel contributes.
pub fn merge_channels(
    channels: &[Vec<PowerSample>],
    weights: Option<&[f64]>,
    output: &ChannelId,
) -> Result<Vec<PowerSample>, IngestError> {
    if let Some(w) = weights {
        if w.len() != channels.len() {
            return Err(IngestError::WeightCount {
                weights: w.len(),
                channels: channels.len(),
            });
        }
    }
    let mut direction = None;
    for s in channels.iter().flatten() {
        match direction {
            None => direction = Some(s.direction),
            Some(d) if d != s.direction => return Err(IngestError::MixedDirections),
            _ => {}
        }
    }
    let direction = direction.unwrap_or(Direction::Consumption);

    let grid: BTreeSet<Timestamp> = channels.iter().flatten().map(|s| s.timestamp).collect();
    let mut cursors = vec![0usize; channels.len()];
    let mut last: Vec<Option<(Timestamp, f64)>> = vec![None; channels.len()];
    let mut out = Vec::with_capacity(grid.len());
    for t in grid {
        let mut total = 0.0;
        let mut any = false;
        for (i, series) in channels.iter().enumerate() {
            while cursors[i] < series.len() && series[cursors[i]].timestamp <= t {
                let s = &series[cursors[i]];
                if let Some(w) = s.power {
                    last[i] = Some((s.timestamp, w));
                }
                cursors[i] += 1;
            }
            if let Some((seen, w)) = last[i] {
                if t - seen <= MAX_BRIDGED_GAP_S {
                    total += w * weights.map_or(1.0, |ws| ws[i]);
                    any = true;
                }
            }
        }
        out.push(PowerSample {
            channel_id: output.clone(),
            timestamp: t,
            power: any.then_some(total),
            direction,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(channel: &str, ts: impl Iterator<Item = i64>, w: f64) -> Vec<PowerSample> {
        ts.map(|t| PowerSample::new(channel, t, Some(w))).collect()
    }

    #[test]
    fn three_rows_two_channels() {
        let parsed = parse_trace(b"timestamp,a,b\n10,1,2\n11,3,4\n12,5,6\n").unwrap();
        assert_eq!(parsed.samples.len(), 6);
        let order: Vec<_> = parsed.samples.iter().map(|s| (s.timestamp, s.channel_id.as_str())).collect();
        assert_eq!(order, [(10, "a"), (10, "b"), (11, "a"), (11, "b"), (12, "a"), (12, "b")]);
        assert_eq!(parsed.samples[5].power, Some(6.0));
    }

    #[test]
    fn empty_and_null_cells_are_missing() {
        let parsed = parse_trace(b"timestamp,a,b\n10,,NULL\n11,0,7\n").unwrap();
        assert_eq!(parsed.samples[0].power, None);
        assert_eq!(parsed.samples[1].power, None);
        assert_eq!(parsed.samples[2].power, Some(0.0));
        assert_eq!(parsed.stats.malformed, 0);
    }

    #[test]
    fn header_required() {
        assert_eq!(parse_trace(b""), Err(IngestError::MissingHeader));
        assert_eq!(parse_trace(b"10,1,2\n"), Err(IngestError::MissingHeader));
        assert_eq!(parse_trace(b"timestamp,a b\n"), Err(IngestError::InvalidChannel("a b".into())));
    }

    #[test]
    fn malformed_rows_skipped() {
        let parsed = parse_trace(b"timestamp,a\n1,5\nx,5\n2,-3\n3,abc\n4\n5,1,2\n6,9\n").unwrap();
        assert_eq!(parsed.stats.rows, 7);
        assert_eq!(parsed.stats.malformed, 5);
        assert_eq!(parsed.samples.len(), 2);
    }

    #[test]
    fn reorders_and_warns() {
        let parsed = parse_trace(b"timestamp,a\n3,3\n1,1\n2,2\n").unwrap();
        let ts: Vec<_> = parsed.samples.iter().map(|s| s.timestamp).collect();
        assert_eq!(ts, [1, 2, 3]);
        assert_eq!(parsed.stats.out_of_order, 1);
        assert!(!parsed.warnings.is_empty());
    }

    #[test]
    fn duplicate_timestamp_keeps_first_against_set_oracle() {
        let text = "timestamp,a\n1,10\n2,20\n2,99\n3,30\n1,77\n";
        let parsed = parse_trace(text.as_bytes()).unwrap();
        // oracle: first occurrence of each timestamp wins
        let mut seen = BTreeMap::new();
        let mut dropped = 0;
        for line in text.lines().skip(1) {
            let (t, w) = line.split_once(',').unwrap();
            if seen.contains_key(t) {
                dropped += 1;
            } else {
                seen.insert(t.to_owned(), w.parse::<f64>().unwrap());
            }
        }
        assert_eq!(parsed.stats.duplicates, dropped);
        let got: Vec<_> = parsed.samples.iter().map(|s| (s.timestamp.to_string(), s.power.unwrap())).collect();
        let want: Vec<_> = seen.into_iter().collect();
        assert_eq!(got, want);
    }

    #[test]
    fn single_day_check() {
        let tz: Tz = "Europe/Rome".parse().unwrap();
        // 2025-03-05 00:00 Rome = 1741129200
        let ok = parse_trace(b"timestamp,a\n1741129200,1\n1741215599,1\n").unwrap();
        assert!(ok.check_single_day(tz).unwrap().is_some());
        let two = parse_trace(b"timestamp,a\n1741129199,1\n1741129200,1\n").unwrap();
        assert_eq!(two.check_single_day(tz), Err(IngestError::MultipleDays(2)));
    }

    #[test]
    fn resample_constant_and_mean() {
        let flat = constant("a", 0..4, 100.0);
        let out = resample(&flat, 4).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].power, Some(100.0));

        let steps: Vec<_> = [0.0, 0.0, 200.0, 200.0]
            .iter()
            .enumerate()
            .map(|(t, &w)| PowerSample::new("a", t as i64, Some(w)))
            .collect();
        assert_eq!(resample(&steps, 4).unwrap()[0].power, Some(100.0));
    }

    #[test]
    fn resample_missing_bins_and_errors() {
        let s = vec![PowerSample::new("a", 0, None), PowerSample::new("a", 1, None), PowerSample::new("a", 5, Some(4.0))];
        let out = resample(&s, 4).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].power, None);
        assert_eq!(out[1].power, Some(4.0));
        assert_eq!(resample(&s, 0), Err(IngestError::BadPeriod(0)));
    }

    #[test]
    fn merge_constant_channels() {
        let out = merge_channels(&[constant("a", 0..10, 50.0), constant("b", 0..10, 50.0)], None, &"agg".into()).unwrap();
        assert!(out.iter().all(|s| s.power == Some(100.0)));
        let only = merge_channels(&[constant("a", 0..10, 42.0), vec![]], None, &"agg".into()).unwrap();
        assert!(only.iter().all(|s| s.power == Some(42.0)));
        assert_eq!(only.len(), 10);
    }

    #[test]
    fn merge_rejects_mixed_directions() {
        let mut pv = constant("pv", 0..3, 10.0);
        for s in &mut pv {
            s.direction = Direction::Production;
        }
        assert_eq!(
            merge_channels(&[constant("a", 0..3, 1.0), pv], None, &"agg".into()),
            Err(IngestError::MixedDirections)
        );
    }

    #[test]
    fn merge_staggered_matches_dense_grid() {
        let a: Vec<_> = (0..60).step_by(3).map(|t| PowerSample::new("a", t, Some(10.0 + t as f64))).collect();
        let b: Vec<_> = (1..60).step_by(4).map(|t| PowerSample::new("b", t, Some(100.0 - t as f64))).collect();
        let merged = merge_channels(&[a.clone(), b.clone()], Some(&[1.0, 2.0]), &"agg".into()).unwrap();
        // oracle: per-second scan for the latest reading no older than 5 s
        let latest = |series: &[PowerSample], t: i64| {
            (0..=5).find_map(|back| series.iter().find(|s| s.timestamp == t - back).and_then(|s| s.power))
        };
        for s in &merged {
            let want = latest(&a, s.timestamp).unwrap_or(0.0) + 2.0 * latest(&b, s.timestamp).unwrap_or(0.0);
            assert!((s.power.unwrap() - want).abs() < 1e-9, "t={}", s.timestamp);
        }
    }

    #[test]
    fn merge_drops_stale_readings() {
        let a = constant("a", [0, 20].into_iter(), 10.0);
        let b = constant("b", [7].into_iter(), 5.0);
        let merged = merge_channels(&[a, b], None, &"agg".into()).unwrap();
        let powers: Vec<_> = merged.iter().map(|s| s.power).collect();
        assert_eq!(powers, [Some(10.0), Some(5.0), Some(10.0)]);
    }
}
