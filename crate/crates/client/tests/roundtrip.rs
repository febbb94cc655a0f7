use std::sync::Arc;

use chrono::{TimeZone, Utc};
use hems_client::{Client, ClientError};
use hems_core::advisor::FeedbackAction;
use hems_core::wire::{FeedbackRequest, ReadingRow, ReadingsRequest};
use hems_server::{Clock, Config, Engine};

const TOKEN: &str = "client-test-token-0123";
const MONDAY: i64 = 1_740_956_400;

async fn start() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
data_dir = "data"

[[households]]
id = "home"
timezone = "Europe/Rome"

[[households.users]]
id = "anna"
token = "{TOKEN}"
scopes = ["read", "write"]

[[households.devices]]
device_id = "tv"
device_type = "television"
room = "living room"
mobility = "fixed"
curtailable = true
user_driven = true
has_standby = true
"#
    );
    let cfg = Config::parse(&text, dir.path()).unwrap();
    let engine = Arc::new(Engine::open(cfg, Clock::Fixed(MONDAY + 86_400)).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(hems_server::api::serve(engine, listener));
    (dir, format!("http://{addr}"))
}

#[tokio::test]
async fn client_talks_to_server() {
    let (_dir, url) = start().await;
    let client = Client::new(&url, TOKEN).unwrap();
    let samples = (0..600)
        .map(|i| ReadingRow {
            t: Utc.timestamp_opt(MONDAY + 10 * 3600 + i, 0).unwrap().fixed_offset(),
            w: Some(if (100..400).contains(&i) { 120.0 } else { 5.0 }),
        })
        .collect();
    let report = client
        .post_readings(&ReadingsRequest {
            channel_id: "tv".into(),
            samples,
        })
        .await
        .unwrap();
    assert_eq!(report.accepted, 600);

    let events = client.events(Some("tv"), None, None).await.unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].duration_s, 300);

    let advices = client.advices().await.unwrap();
    assert_eq!(advices.advices[0].advice_id, "standby:tv");
    client
        .feedback(
            "standby:tv",
            &FeedbackRequest {
                action: FeedbackAction::Accept,
                cause: None,
            },
        )
        .await
        .unwrap();
    assert_eq!(client.advices().await.unwrap().advices[0].score, 1);
    assert_eq!(client.devices().await.unwrap().len(), 1);
    client.itemization("week").await.unwrap();
    client.slot_distribution(Some("2025-03")).await.unwrap();
    client.usage("tv", "week").await.unwrap();
}

#[tokio::test]
async fn api_errors_carry_status_and_message() {
    let (_dir, url) = start().await;
    let bad = Client::new(&url, "wrong-token-wrong-token").unwrap();
    match bad.devices().await {
        Err(ClientError::Api { status, message }) => {
            assert_eq!(status.as_u16(), 401);
            assert!(message.contains("token"));
        }
        other => panic!("{other:?}"),
    }
    let good = Client::new(&url, TOKEN).unwrap();
    match good.usage("ghost", "week").await {
        Err(ClientError::Api { status, .. }) => assert_eq!(status.as_u16(), 404),
        other => panic!("{other:?}"),
    }
}
