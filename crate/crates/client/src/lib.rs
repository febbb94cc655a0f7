//! Typed client for the `/api/v1` HTTP interface.

use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use hems_core::wire::{
    AdvicesResponse, DaySummary, DeviceDto, DevicePatch, ErrorBody, EstimateResponse, EventDto, ExternalEventRequest,
    FeedbackRequest, FeedbackResponse, IngestReport, ItemizationResponse, ReadingsRequest, SlotDistributionResponse,
    UsageResponse, API_PREFIX,
};
use reqwest::{Method, StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid server url: {0}")]
    Url(String),
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server answered {status}: {message}")]
    Api { status: StatusCode, message: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone)]
pub struct Client {
    http: reqwest::Client,
    base: Url,
    token: String,
}

impl fmt::Debug for Client {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Client")
            .field("base", &self.base.as_str())
            .field("token", &"<redacted>")
            .finish()
    }
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str, token: impl Into<String>) -> Result<Self> {
        let mut base = Url::parse(base).map_err(|e| ClientError::Url(e.to_string()))?;
        if !base.path().ends_with('/') {
            let p = format!("{}/", base.path());
            base.set_path(&p);
        }
        Ok(Client {
            http: reqwest::Client::new(),
            base,
            token: token.into(),
        })
    }

    fn url(&self, path: &str, query: &[(&str, String)]) -> Result<Url> {
        let mut url = self
            .base
            .join(&format!("{}{path}", API_PREFIX.trim_start_matches('/')))
            .map_err(|e| ClientError::Url(e.to_string()))?;
        if !query.is_empty() {
            url.query_pairs_mut().extend_pairs(query.iter().map(|(k, v)| (*k, v.as_str())));
        }
        Ok(url)
    }

    async fn send<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        query: &[(&str, String)],
        body: Option<&B>,
    ) -> Result<T> {
        let mut req = self.http.request(method, self.url(path, query)?).bearer_auth(&self.token);
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map_or(text, |b| b.error);
        Err(ClientError::Api { status, message })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T> {
        self.send::<(), T>(Method::GET, path, query, None).await
    }

    pub async fn post_readings(&self, req: &ReadingsRequest) -> Result<IngestReport> {
        self.send(Method::POST, "/readings", &[], Some(req)).await
    }

    pub async fn post_event(&self, req: &ExternalEventRequest) -> Result<EventDto> {
        self.send(Method::POST, "/events", &[], Some(req)).await
    }

    pub async fn events(
        &self,
        device: Option<&str>,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
    ) -> Result<Vec<EventDto>> {
        let mut q = Vec::new();
        if let Some(d) = device {
            q.push(("device", d.to_owned()));
        }
        if let Some(t) = from {
            q.push(("from", t.to_rfc3339()));
        }
        if let Some(t) = to {
            q.push(("to", t.to_rfc3339()));
        }
        self.get("/events", &q).await
    }

    pub async fn devices(&self) -> Result<Vec<DeviceDto>> {
        self.get("/devices", &[]).await
    }

    pub async fn register_device(&self, device: &DeviceDto) -> Result<DeviceDto> {
        self.send(Method::POST, "/devices", &[], Some(device)).await
    }

    pub async fn patch_device(&self, id: &str, patch: &DevicePatch) -> Result<DeviceDto> {
        self.send(Method::PATCH, &format!("/devices/{id}"), &[], Some(patch)).await
    }

    pub async fn day_summary(&self, date: Option<NaiveDate>) -> Result<DaySummary> {
        let q: Vec<_> = date.map(|d| ("date", d.to_string())).into_iter().collect();
        self.get("/summary/day", &q).await
    }

    pub async fn itemization(&self, period: &str) -> Result<ItemizationResponse> {
        self.get("/itemization", &[("period", period.to_owned())]).await
    }

    pub async fn estimate_today(&self) -> Result<EstimateResponse> {
        self.get("/estimate/today", &[]).await
    }

    /// `month` as `YYYY-MM`; the server's current month when `None`.
    pub async fn slot_distribution(&self, month: Option<&str>) -> Result<SlotDistributionResponse> {
        let q: Vec<_> = month.map(|m| ("month", m.to_owned())).into_iter().collect();
        self.get("/slots/distribution", &q).await
    }

    pub async fn advices(&self) -> Result<AdvicesResponse> {
        self.get("/advices", &[]).await
    }

    pub async fn feedback(&self, advice_id: &str, req: &FeedbackRequest) -> Result<FeedbackResponse> {
        self.send(Method::POST, &format!("/advices/{advice_id}/feedback"), &[], Some(req))
            .await
    }

    pub async fn usage(&self, device: &str, period: &str) -> Result<UsageResponse> {
        self.get(&format!("/usage/{device}"), &[("period", period.to_owned())]).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn urls_keep_base_path() {
        let c = Client::new("http://localhost:9000/hems", "t").unwrap();
        let u = c.url("/advices", &[("period", "a b".into())]).unwrap();
        assert_eq!(u.as_str(), "http://localhost:9000/hems/api/v1/advices?period=a+b");
        assert!(!format!("{c:?}").contains("\"t\""));
    }
}
