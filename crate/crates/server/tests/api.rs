use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use chrono::{TimeZone, Utc};
use hems_server::api::{router, ROUTES};
use hems_server::{Clock, Config, Engine};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const WRITE: &str = "write-token-0123456789";
const READ: &str = "read-token-0123456789";
const OTHER: &str = "other-household-token-01";

// Mon 2025-03-03 00:00 Europe/Rome
const MONDAY: i64 = 1_740_956_400;

fn config(dir: &Path) -> Config {
    let text = format!(
        r#"
data_dir = "{}"

[[households]]
id = "home"
timezone = "Europe/Rome"

[[households.users]]
id = "anna"
token = "{WRITE}"
scopes = ["read", "write"]

[[households.users]]
id = "bruno"
token = "{READ}"
scopes = ["read"]

[[households.channels]]
id = "mains"

[[households.devices]]
device_id = "tv"
device_type = "television"
room = "living room"
mobility = "fixed"
curtailable = true
user_driven = true
has_standby = true
credit_eur = 5.0

[[households]]
id = "flat"
timezone = "Europe/Rome"

[[households.users]]
id = "carla"
token = "{OTHER}"
scopes = ["read", "write"]
"#,
        dir.join("data").display()
    );
    Config::parse(&text, dir).unwrap()
}

struct Harness {
    _dir: tempfile::TempDir,
    app: axum::Router,
}

impl Harness {
    fn new(now: i64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let engine = Engine::open(config(dir.path()), Clock::Fixed(now)).unwrap();
        Harness {
            app: router(Arc::new(engine)),
            _dir: dir,
        }
    }

    async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(format!("/api/v1{path}"));
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, value)
    }
}

fn iso(t: i64) -> String {
    Utc.timestamp_opt(t, 0).unwrap().to_rfc3339()
}

fn samples(from: i64, n: i64, w: impl Fn(i64) -> f64) -> Vec<Value> {
    (0..n).map(|i| json!({"t": iso(from + i), "w": w(i)})).collect()
}

#[tokio::test]
async fn every_route_requires_a_token() {
    let h = Harness::new(MONDAY);
    for (method, path) in ROUTES {
        let path = path.replace("{id}", "x").replace("{device}", "tv");
        let m = Method::from_bytes(method.as_bytes()).unwrap();
        let body = (*method != "GET").then(|| json!({}));
        let (status, body_json) = h.call(m.clone(), &path, None, body.clone()).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED, "{method} {path}");
        assert!(body_json["error"].is_string());
        let (status, _) = h.call(m, &path, Some("not-a-real-token-at-all"), body).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED, "{method} {path}");
    }
}

#[tokio::test]
async fn scopes_are_enforced() {
    let h = Harness::new(MONDAY);
    let body = json!({"channel_id": "mains", "samples": samples(MONDAY, 3, |_| 100.0)});
    let (status, _) = h.call(Method::POST, "/readings", Some(READ), Some(body.clone())).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = h.call(Method::GET, "/devices", Some(READ), None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = h.call(Method::POST, "/readings", Some(WRITE), Some(body)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn ingest_is_idempotent() {
    let h = Harness::new(MONDAY + 86_400);
    let body = json!({"channel_id": "mains", "samples": samples(MONDAY, 100, |i| i as f64)});
    let (status, first) = h.call(Method::POST, "/readings", Some(WRITE), Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((first["accepted"].as_u64(), first["duplicates"].as_u64()), (Some(100), Some(0)));
    let (_, again) = h.call(Method::POST, "/readings", Some(WRITE), Some(body)).await;
    assert_eq!((again["accepted"].as_u64(), again["duplicates"].as_u64()), (Some(0), Some(100)));
}

#[tokio::test]
async fn one_bad_row_in_a_hundred() {
    let h = Harness::new(MONDAY + 86_400);
    let mut rows = samples(MONDAY, 100, |_| 50.0);
    rows[37] = json!({"t": "yesterday-ish", "w": 50.0});
    let (status, report) = h
        .call(Method::POST, "/readings", Some(WRITE), Some(json!({"channel_id": "mains", "samples": rows})))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["accepted"], 99);
    assert_eq!(report["rejected"], 1);
    assert_eq!(report["errors"][0]["index"], 37);
    assert!(report["errors"][0]["message"].as_str().unwrap().starts_with("t:"));
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let h = Harness::new(MONDAY);
    let (status, _) = h.call(Method::POST, "/readings", Some(WRITE), Some(json!({"samples": 3}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let all_bad = json!({"channel_id": "mains", "samples": [{"w": 1.0}]});
    let (status, body) = h.call(Method::POST, "/readings", Some(WRITE), Some(all_bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("row 0"));
    let unknown = json!({"channel_id": "nope", "samples": samples(MONDAY, 1, |_| 1.0)});
    let (status, _) = h.call(Method::POST, "/readings", Some(WRITE), Some(unknown)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn households_are_isolated() {
    let h = Harness::new(MONDAY);
    let (status, devices) = h.call(Method::GET, "/devices", Some(OTHER), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(devices, json!([]));
    let body = json!({"channel_id": "tv", "samples": samples(MONDAY, 3, |_| 1.0)});
    let (status, _) = h.call(Method::POST, "/readings", Some(OTHER), Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn detection_pricing_and_credit() {
    // TV on 110 W from 10:00 to 11:00 (T1), idle otherwise; readings run on to 12:00
    let h = Harness::new(MONDAY + 86_400);
    let start = MONDAY + 9 * 3600;
    let rows = samples(start, 3 * 3600, |i| if (3600..7200).contains(&i) { 110.0 } else { 6.5 });
    let (_, r) = h
        .call(Method::POST, "/readings", Some(WRITE), Some(json!({"channel_id": "tv", "samples": rows})))
        .await;
    assert_eq!(r["accepted"], 3 * 3600);

    let (status, events) = h.call(Method::GET, "/events?device=tv", Some(READ), None).await;
    assert_eq!(status, StatusCode::OK);
    let events = events.as_array().unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0]["t_start"], iso(start + 3600).replace("+00:00", "Z"));
    assert_eq!(events[0]["duration_s"], 3600);
    assert_eq!(events[0]["energy_kwh"], 0.11);
    // no aggregate consumption here beyond 3 h of one device, so the household is C1
    let cost = 0.11 * 0.127512;
    assert!((events[0]["cost_eur"].as_f64().unwrap() - (cost * 1e4f64).round() / 1e4).abs() < 1e-12);

    let (_, devices) = h.call(Method::GET, "/devices", Some(READ), None).await;
    let credit = devices[0]["credit_eur"].as_f64().unwrap();
    assert!((credit - (5.0 - cost)).abs() < 1e-5, "{credit}");

    // re-reading does not charge again
    h.call(Method::GET, "/events", Some(READ), None).await;
    let (_, devices) = h.call(Method::GET, "/devices", Some(READ), None).await;
    assert_eq!(devices[0]["credit_eur"].as_f64().unwrap(), credit);
}

#[tokio::test]
async fn external_events() {
    let h = Harness::new(MONDAY + 86_400);
    let ev = json!({"device_id": "tv", "t_start": iso(MONDAY + 20 * 3600), "duration_s": 1800, "energy_kwh": 0.05});
    let (status, created) = h.call(Method::POST, "/events", Some(WRITE), Some(ev.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["source"], "external");
    let (status, _) = h.call(Method::POST, "/events", Some(WRITE), Some(ev)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let ghost = json!({"device_id": "ghost", "t_start": iso(MONDAY), "duration_s": 60, "energy_kwh": 0.05});
    let (status, _) = h.call(Method::POST, "/events", Some(WRITE), Some(ghost)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn device_registration_and_patch() {
    let h = Harness::new(MONDAY);
    let kettle = json!({
        "device_id": "kettle", "device_type": "water kettle", "room": "kitchen", "mobility": "portable",
        "curtailable": true, "user_driven": true, "has_standby": false
    });
    let (status, _) = h.call(Method::POST, "/devices", Some(WRITE), Some(kettle.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, _) = h.call(Method::POST, "/devices", Some(WRITE), Some(kettle)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = h
        .call(Method::PATCH, "/devices/kettle", Some(WRITE), Some(json!({"room": "garage of doom"})))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, patched) = h
        .call(Method::PATCH, "/devices/kettle", Some(WRITE), Some(json!({"room": "living room"})))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(patched["room"], "living room");
    let (status, _) = h.call(Method::PATCH, "/devices/none", Some(WRITE), Some(json!({}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn feedback_is_read_your_writes() {
    let h = Harness::new(MONDAY + 86_400);
    let rows = samples(MONDAY, 3600, |_| 6.57);
    h.call(Method::POST, "/readings", Some(WRITE), Some(json!({"channel_id": "tv", "samples": rows})))
        .await;

    let (status, list) = h.call(Method::GET, "/advices", Some(READ), None).await;
    assert_eq!(status, StatusCode::OK);
    let advice = &list["advices"][0];
    assert_eq!(advice["advice_id"], "standby:tv");
    assert_eq!(advice["score"], 0);
    assert!((advice["params"]["kwh_year"].as_f64().unwrap() - 57.5532).abs() < 1e-9);
    assert!(advice["message"].as_str().unwrap().contains("57.6 kWh"));

    let (status, resp) = h
        .call(Method::POST, "/advices/standby:tv/feedback", Some(READ), Some(json!({"action": "accept"})))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp["changed"], json!(["standby:tv"]));
    let (_, list) = h.call(Method::GET, "/advices", Some(READ), None).await;
    assert_eq!(list["advices"][0]["score"], 1);

    // the other user's book is separate
    let (_, list) = h.call(Method::GET, "/advices", Some(WRITE), None).await;
    assert_eq!(list["advices"][0]["score"], 0);

    let (status, _) = h
        .call(Method::POST, "/advices/standby:tv/feedback", Some(READ), Some(json!({"action": "reject"})))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    h.call(Method::POST, "/advices/standby:tv/feedback", Some(READ), Some(json!({"action": "converted"})))
        .await;
    let (_, list) = h.call(Method::GET, "/advices", Some(READ), None).await;
    assert_eq!(list["advices"], json!([]));
    let (status, _) = h
        .call(Method::POST, "/advices/standby:tv/feedback", Some(READ), Some(json!({"action": "accept"})))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = h
        .call(Method::POST, "/advices/nope/feedback", Some(READ), Some(json!({"action": "accept"})))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn analytics_endpoints() {
    let now = MONDAY + 2 * 86_400 + 12 * 3600;
    let h = Harness::new(now);
    // two full days at 500 W, then half of today at 1000 W
    for day in 0..2 {
        let rows = samples(MONDAY + day * 86_400, 86_400, |_| 500.0);
        h.call(Method::POST, "/readings", Some(WRITE), Some(json!({"channel_id": "mains", "samples": rows})))
            .await;
    }
    let rows = samples(MONDAY + 2 * 86_400, 12 * 3600, |_| 1000.0);
    h.call(Method::POST, "/readings", Some(WRITE), Some(json!({"channel_id": "mains", "samples": rows})))
        .await;

    let (status, day) = h.call(Method::GET, "/summary/day?date=2025-03-03", Some(READ), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(day["consumption_kwh"], 12.0);
    assert_eq!(day["slot_kwh"]["T1"], 5.5);
    assert_eq!(day["slot_kwh"]["T2"], 6.5);

    let (status, est) = h.call(Method::GET, "/estimate/today", Some(READ), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(est["prior_days"], 2);
    assert_eq!(est["consumption_so_far_kwh"], 12.0);
    // prior days: 12 kWh total, 6 kWh by noon; today already used 12 kWh, so nothing is left to add
    assert_eq!(est["consumption_kwh"], 12.0);

    for path in ["/itemization?period=week", "/slots/distribution?month=2025-03", "/usage/tv?period=week"] {
        let (status, _) = h.call(Method::GET, path, Some(READ), None).await;
        assert_eq!(status, StatusCode::OK, "{path}");
    }
    let (status, _) = h.call(Method::GET, "/itemization?period=fortnight", Some(READ), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let engine = Engine::open(config(dir.path()), Clock::Fixed(MONDAY)).unwrap();
        let rows: Vec<_> = (0..10).map(|i| (MONDAY + i, Some(42.0))).collect();
        engine.ingest_samples(&"home".into(), &"mains".into(), &rows).unwrap();
    }
    let engine = Engine::open(config(dir.path()), Clock::Fixed(MONDAY)).unwrap();
    let rows: Vec<_> = (0..10).map(|i| (MONDAY + i, Some(42.0))).collect();
    let again = engine.ingest_samples(&"home".into(), &"mains".into(), &rows).unwrap();
    assert_eq!((again.accepted, again.duplicates), (0, 10));
}

#[tokio::test]
async fn stream_is_event_stream() {
    let h = Harness::new(MONDAY);
    let req = Request::builder()
        .uri("/api/v1/stream")
        .header("authorization", format!("Bearer {READ}"))
        .body(Body::empty())
        .unwrap();
    let resp = h.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
}
