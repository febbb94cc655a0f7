//! Rectangular (sample-and-hold) integration of power readings.

use crate::model::{PowerSample, Timestamp};

/// Longest silence bridged by holding the last reading.
pub const MAX_BRIDGED_GAP_S: i64 = 5;

/// How long a reading is held before the next one.
///
/// A reading holds until the next reading when that arrives within `max_gap`
/// seconds, otherwise only for `nominal` seconds (one native sample period).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HoldPolicy {
    pub nominal: i64,
    pub max_gap: i64,
}

impl HoldPolicy {
    /// 1 Hz loggers with the standard gap bridging.
    pub const ONE_HZ: HoldPolicy = HoldPolicy {
        nominal: 1,
        max_gap: MAX_BRIDGED_GAP_S,
    };

    /// Policy for a regular series with the given period, e.g. resampled data.
    pub fn for_period(period: i64) -> HoldPolicy {
        HoldPolicy {
            nominal: period.max(1),
            max_gap: period.max(MAX_BRIDGED_GAP_S),
        }
    }
}

impl Default for HoldPolicy {
    fn default() -> Self {
        HoldPolicy::ONE_HZ
    }
}

/// A reading and the half-open interval `[start, end)` over which it holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Held {
    pub start: Timestamp,
    pub end: Timestamp,
    pub power: f64,
}

/// Hold intervals for the present (non-missing) readings of a time-sorted series.
pub fn hold_intervals<'a>(
    samples: &'a [PowerSample],
    policy: HoldPolicy,
) -> impl Iterator<Item = Held> + 'a {
    let mut present = samples
        .iter()
        .filter_map(|s| s.power.map(|p| (s.timestamp, p)))
        .peekable();
    std::iter::from_fn(move || {
        let (t, p) = present.next()?;
        let end = match present.peek() {
            Some(&(next, _)) if next - t <= policy.max_gap => next,
            _ => t + policy.nominal,
        };
        Some(Held { start: t, end, power: p })
    })
}

/// Energy and observed time over a window.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Integral {
    pub wh: f64,
    pub observed_s: i64,
}

impl Integral {
    pub fn kwh(&self) -> f64 {
        self.wh / 1000.0
    }
}

/// Integrates readings over `[from, to)`. Readings before `from` count only
/// for the part of their hold that falls inside the window.
pub fn integrate(samples: &[PowerSample], from: Timestamp, to: Timestamp, policy: HoldPolicy) -> Integral {
    let mut out = Integral::default();
    for h in hold_intervals(samples, policy) {
        if h.start >= to {
            break;
        }
        let lo = h.start.max(from);
        let hi = h.end.min(to);
        if hi > lo {
            out.wh += h.power * (hi - lo) as f64 / 3600.0;
            out.observed_s += hi - lo;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(points: &[(i64, Option<f64>)]) -> Vec<PowerSample> {
        points.iter().map(|&(t, p)| PowerSample::new("c", t, p)).collect()
    }

    #[test]
    fn short_gaps_bridged_long_gaps_not() {
        let s = series(&[(0, Some(100.0)), (4, Some(100.0)), (20, Some(100.0))]);
        let held: Vec<_> = hold_intervals(&s, HoldPolicy::ONE_HZ).collect();
        assert_eq!((held[0].start, held[0].end), (0, 4));
        assert_eq!((held[1].start, held[1].end), (4, 5));
        assert_eq!((held[2].start, held[2].end), (20, 21));
        let i = integrate(&s, 0, 100, HoldPolicy::ONE_HZ);
        assert_eq!(i.observed_s, 6);
        assert!((i.wh - 600.0 / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn missing_values_are_gaps() {
        let s = series(&[(0, Some(50.0)), (1, None), (2, Some(50.0))]);
        let i = integrate(&s, 0, 10, HoldPolicy::ONE_HZ);
        assert_eq!(i.observed_s, 3);
    }

    #[test]
    fn window_clips_holds() {
        let s = series(&[(0, Some(3600.0)), (4, Some(3600.0))]);
        let i = integrate(&s, 2, 4, HoldPolicy::ONE_HZ);
        assert_eq!(i.observed_s, 2);
        assert!((i.wh - 2.0).abs() < 1e-12);
    }
}
