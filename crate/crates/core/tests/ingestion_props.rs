use hems_core::ingestion::{parse_trace, resample, write_trace};
use hems_core::{ChannelId, PowerSample};
use proptest::prelude::*;

fn rows() -> impl Strategy<Value = Vec<(i64, Vec<Option<f64>>)>> {
    prop::collection::vec(
        (1i64..5, prop::collection::vec(prop::option::weighted(0.9, 0.0f64..5000.0), 3)),
        1..200,
    )
    .prop_map(|steps| {
        let mut t = 1_741_000_000;
        steps
            .into_iter()
            .map(|(dt, v)| {
                t += dt;
                (t, v)
            })
            .collect()
    })
}

fn samples_of(channels: &[ChannelId], rows: &[(i64, Vec<Option<f64>>)]) -> Vec<PowerSample> {
    rows.iter()
        .flat_map(|(t, vs)| channels.iter().zip(vs).map(move |(c, v)| PowerSample::new(c.clone(), *t, *v)))
        .collect()
}

proptest! {
    #[test]
    fn write_then_parse_round_trips(rows in rows()) {
        let channels: Vec<ChannelId> = ["a", "b", "c"].into_iter().map(ChannelId::from).collect();
        let samples = samples_of(&channels, &rows);
        let text = write_trace(&channels, &samples);
        let parsed = parse_trace(text.as_bytes()).unwrap();
        prop_assert_eq!(&parsed.channels, &channels);
        prop_assert_eq!(parsed.stats.malformed, 0);
        prop_assert_eq!(parsed.samples, samples);
    }

    #[test]
    fn resample_is_idempotent(rows in rows(), period in 1i64..600) {
        let channels: Vec<ChannelId> = ["a", "b", "c"].into_iter().map(ChannelId::from).collect();
        let samples = samples_of(&channels, &rows);
        let once = resample(&samples, period).unwrap();
        let twice = resample(&once, period).unwrap();
        prop_assert_eq!(&once, &twice);
        for s in &once {
            prop_assert_eq!(s.timestamp.rem_euclid(period), 0);
        }
    }

    #[test]
    fn shuffled_rows_parse_like_sorted(rows in rows(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let channels: Vec<ChannelId> = ["a", "b", "c"].into_iter().map(ChannelId::from).collect();
        let text = write_trace(&channels, &samples_of(&channels, &rows));
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        lines.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        let a = parse_trace(text.as_bytes()).unwrap();
        let b = parse_trace(shuffled.as_bytes()).unwrap();
        prop_assert_eq!(a.samples, b.samples);
    }
}

#[test]
fn one_malformed_row_in_a_hundred() {
    let mut text = String::from("timestamp,a\n");
    for i in 0..100 {
        if i == 42 {
            text.push_str("oops,12\n");
        } else {
            text.push_str(&format!("{},{}\n", 1_741_000_000 + i, i));
        }
    }
    let parsed = parse_trace(text.as_bytes()).unwrap();
    assert_eq!(parsed.samples.len(), 99);
    assert_eq!(parsed.stats.malformed, 1);
}
