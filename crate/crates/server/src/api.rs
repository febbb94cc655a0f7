//! Routes under `/api/v1`.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use chrono::{DateTime, Datelike, FixedOffset, NaiveDate};
use futures::Stream;
use hems_core::analytics::{local_date, PeriodKind};
use hems_core::wire::{
    DeviceDto, DevicePatch, ErrorBody, ExternalEventRequest, FeedbackRequest, IngestReport, RowError, API_PREFIX,
};
use hems_core::{ChannelId, DeviceId, Scope, Timestamp};
use serde::Deserialize;
use serde_json::Value;

use crate::engine::{Engine, Principal};
use crate::error::EngineError;

const MAX_BODY_BYTES: usize = 32 * 1024 * 1024;

#[derive(Debug)]
pub enum ApiError {
    Unauthorized,
    Forbidden,
    BadRequest(String),
    Engine(EngineError),
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError::Engine(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::Unauthorized => (StatusCode::UNAUTHORIZED, "missing or invalid bearer token".to_owned()),
            ApiError::Forbidden => (StatusCode::FORBIDDEN, "token lacks the required scope".to_owned()),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Engine(e) => {
                let status = match &e {
                    EngineError::NotFound(_) => StatusCode::NOT_FOUND,
                    EngineError::Invalid(_) => StatusCode::BAD_REQUEST,
                    EngineError::Conflict(_) => StatusCode::CONFLICT,
                    EngineError::NoHistory(_) => StatusCode::UNPROCESSABLE_ENTITY,
                    EngineError::Config(_) | EngineError::Storage(_) | EngineError::Corrupt(_) => {
                        tracing::error!(error = %e, "request failed");
                        StatusCode::INTERNAL_SERVER_ERROR
                    }
                };
                (status, e.to_string())
            }
        };
        let mut resp = (status, Json(ErrorBody { error: message })).into_response();
        if status == StatusCode::UNAUTHORIZED {
            resp.headers_mut()
                .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
        }
        resp
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// The caller behind the request's bearer token.
pub struct Auth(pub Principal);

impl Auth {
    fn require(&self, scope: Scope) -> Result<&Principal, ApiError> {
        if self.0.can(scope) {
            Ok(&self.0)
        } else {
            Err(ApiError::Forbidden)
        }
    }
}

impl FromRequestParts<Arc<Engine>> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, engine: &Arc<Engine>) -> Result<Self, ApiError> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or(ApiError::Unauthorized)?;
        engine.authenticate(token).map(Auth).ok_or(ApiError::Unauthorized)
    }
}

async fn blocking<T, F>(engine: &Arc<Engine>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = Arc::clone(engine);
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::Engine(EngineError::Corrupt(format!("worker panicked: {e}"))))?
        .map(Json)
        .map_err(ApiError::from)
}

pub fn router(engine: Arc<Engine>) -> Router {
    let api = Router::new()
        .route("/readings", post(post_readings))
        .route("/events", post(post_event).get(get_events))
        .route("/devices", get(get_devices).post(post_device))
        .route("/devices/{id}", patch(patch_device))
        .route("/summary/day", get(get_day_summary))
        .route("/itemization", get(get_itemization))
        .route("/estimate/today", get(get_estimate))
        .route("/slots/distribution", get(get_slots))
        .route("/advices", get(get_advices))
        .route("/advices/{id}/feedback", post(post_feedback))
        .route("/usage/{device}", get(get_usage))
        .route("/stream", get(stream));
    Router::new()
        .nest(API_PREFIX, api)
        .route("/healthz", get(|| async { "ok" }))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(engine)
}

/// Every routed (method, path) pair, for sweeps and docs.
pub const ROUTES: &[(&str, &str)] = &[
    ("POST", "/readings"),
    ("POST", "/events"),
    ("GET", "/events"),
    ("GET", "/devices"),
    ("POST", "/devices"),
    ("PATCH", "/devices/{id}"),
    ("GET", "/summary/day"),
    ("GET", "/itemization"),
    ("GET", "/estimate/today"),
    ("GET", "/slots/distribution"),
    ("GET", "/advices"),
    ("POST", "/advices/{id}/feedback"),
    ("GET", "/usage/{device}"),
    ("GET", "/stream"),
];

fn parse_row(v: &Value) -> Result<(Timestamp, Option<f64>), String> {
    let obj = v.as_object().ok_or("row is not an object")?;
    let t = match obj.get("t") {
        Some(Value::String(s)) => DateTime::parse_from_rfc3339(s)
            .map_err(|e| format!("t: {e}"))?
            .timestamp(),
        Some(Value::Number(n)) => n.as_i64().ok_or("t: not an integer epoch")?,
        _ => return Err("t: missing".into()),
    };
    let w = match obj.get("w") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => match n.as_f64() {
            Some(w) if w.is_finite() && w >= 0.0 => Some(w),
            _ => return Err("w: must be a non-negative number".into()),
        },
        Some(_) => return Err("w: must be a number or null".into()),
    };
    Ok((t, w))
}

#[derive(Deserialize)]
struct ReadingsBody {
    channel_id: String,
    samples: Vec<Value>,
}

async fn post_readings(
    State(engine): State<Arc<Engine>>,
    auth: Auth,
    body: Result<Json<ReadingsBody>, JsonRejection>,
) -> ApiResult<IngestReport> {
    let household = auth.require(Scope::Write)?.household.clone();
    let Json(body) = body?;
    let mut rows = Vec::with_capacity(body.samples.len());
    let mut errors = Vec::new();
    for (index, v) in body.samples.iter().enumerate() {
        match parse_row(v) {
            Ok(r) => rows.push(r),
            Err(message) => errors.push(RowError { index, message }),
        }
    }
    if rows.is_empty() && !errors.is_empty() {
        return Err(ApiError::BadRequest(format!(
            "no valid rows; first error at row {}: {}",
            errors[0].index, errors[0].message
        )));
    }
    let channel = ChannelId::new(body.channel_id);
    blocking(&engine, move |e| {
        let mut report = e.ingest_samples(&household, &channel, &rows)?;
        report.rejected = errors.len();
        report.errors = errors;
        Ok(report)
    })
    .await
}

async fn post_event(
    State(engine): State<Arc<Engine>>,
    auth: Auth,
    body: Result<Json<ExternalEventRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let household = auth.require(Scope::Write)?.household.clone();
    let Json(req) = body?;
    let dto = blocking(&engine, move |e| e.add_external_event(&household, &req)).await?;
    Ok((StatusCode::CREATED, dto))
}

#[derive(Deserialize)]
struct EventsQuery {
    device: Option<String>,
    from: Option<DateTime<FixedOffset>>,
    to: Option<DateTime<FixedOffset>>,
}

async fn get_events(
    State(engine): State<Arc<Engine>>,
    auth: Auth,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Vec<hems_core::wire::EventDto>> {
    let household = auth.require(Scope::Read)?.household.clone();
    let device = q.device.map(DeviceId::new);
    let (from, to) = (q.from.map(|t| t.timestamp()), q.to.map(|t| t.timestamp()));
    blocking(&engine, move |e| e.events(&household, device.as_ref(), from, to)).await
}

async fn get_devices(State(engine): State<Arc<Engine>>, auth: Auth) -> ApiResult<Vec<DeviceDto>> {
    let household = auth.require(Scope::Read)?.household.clone();
    blocking(&engine, move |e| e.devices(&household)).await
}

async fn post_device(
    State(engine): State<Arc<Engine>>,
    auth: Auth,
    body: Result<Json<DeviceDto>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let household = auth.require(Scope::Write)?.household.clone();
    let Json(dto) = body?;
    let created = blocking(&engine, move |e| e.register_device(&household, dto)).await?;
    Ok((StatusCode::CREATED, created))
}

async fn patch_device(
    State(engine): State<Arc<Engine>>,
    auth: Auth,
    Path(id): Path<String>,
    body: Result<Json<DevicePatch>, JsonRejection>,
) -> ApiResult<DeviceDto> {
    let household = auth.require(Scope::Write)?.household.clone();
    let Json(p) = body?;
    blocking(&engine, move |e| e.patch_device(&household, &DeviceId::new(id), &p)).await
}

#[derive(Deserialize)]
struct DayQuery {
    date: Option<NaiveDate>,
}

async fn get_day_summary(
    State(engine): State<Arc<Engine>>,
    auth: Auth,
    Query(q): Query<DayQuery>,
) -> ApiResult<hems_core::wire::DaySummary> {
    let household = auth.require(Scope::Read)?.household.clone();
    blocking(&engine, move |e| {
        let date = match q.date {
            Some(d) => d,
            None => local_date(e.now(), e.timezone(&household)?),
        };
        e.day_summary(&household, date)
    })
    .await
}

#[derive(Deserialize)]
struct PeriodQuery {
    period: Option<String>,
}

fn period_kind(q: &PeriodQuery) -> Result<PeriodKind, ApiError> {
    q.period
        .as_deref()
        .unwrap_or("month")
        .parse()
        .map_err(ApiError::BadRequest)
}

async fn get_itemization(
    State(engine): State<Arc<Engine>>,
    auth: Auth,
    Query(q): Query<PeriodQuery>,
) -> ApiResult<hems_core::wire::ItemizationResponse> {
    let household = auth.require(Scope::Read)?.household.clone();
    let kind = period_kind(&q)?;
    blocking(&engine, move |e| e.itemization(&household, kind, e.now())).await
}

async fn get_estimate(State(engine): State<Arc<Engine>>, auth: Auth) -> ApiResult<hems_core::wire::EstimateResponse> {
    let household = auth.require(Scope::Read)?.household.clone();
    blocking(&engine, move |e| e.estimate_today(&household, e.now())).await
}

#[derive(Deserialize)]
struct MonthQuery {
    month: Option<String>,
}

fn parse_month(s: &str) -> Result<(i32, u32), ApiError> {
    let bad = || ApiError::BadRequest(format!("month must be YYYY-MM, got '{s}'"));
    let (y, m) = s.split_once('-').ok_or_else(bad)?;
    let (y, m) = (y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?);
    if !(1..=12).contains(&m) {
        return Err(bad());
    }
    Ok((y, m))
}

async fn get_slots(
    State(engine): State<Arc<Engine>>,
    auth: Auth,
    Query(q): Query<MonthQuery>,
) -> ApiResult<hems_core::wire::SlotDistributionResponse> {
    let household = auth.require(Scope::Read)?.household.clone();
    let month = q.month.as_deref().map(parse_month).transpose()?;
    blocking(&engine, move |e| {
        let (y, m) = match month {
            Some(ym) => ym,
            None => {
                let d = local_date(e.now(), e.timezone(&household)?);
                (d.year(), d.month())
            }
        };
        e.slot_distribution(&household, y, m)
    })
    .await
}

async fn get_advices(State(engine): State<Arc<Engine>>, auth: Auth) -> ApiResult<hems_core::wire::AdvicesResponse> {
    let p = auth.require(Scope::Read)?.clone();
    blocking(&engine, move |e| e.advices(&p.household, &p.user, e.now())).await
}

async fn post_feedback(
    State(engine): State<Arc<Engine>>,
    auth: Auth,
    Path(id): Path<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<hems_core::wire::FeedbackResponse> {
    let p = auth.require(Scope::Read)?.clone();
    let Json(req) = body?;
    blocking(&engine, move |e| e.feedback(&p.household, &p.user, &id, &req, e.now())).await
}

async fn get_usage(
    State(engine): State<Arc<Engine>>,
    auth: Auth,
    Path(device): Path<String>,
    Query(q): Query<PeriodQuery>,
) -> ApiResult<hems_core::wire::UsageResponse> {
    let household = auth.require(Scope::Read)?.household.clone();
    let kind = period_kind(&q)?;
    blocking(&engine, move |e| e.usage(&household, &DeviceId::new(device), kind, e.now())).await
}

/// Server-sent events for the caller's household.
async fn stream(
    State(engine): State<Arc<Engine>>,
    auth: Auth,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let household = auth.require(Scope::Read)?.household.clone();
    let rx = engine.subscribe();
    let events = futures::stream::unfold((rx, household), |(mut rx, household)| async move {
        loop {
            match rx.recv().await {
                Ok((h, msg)) if h == household => {
                    let event = Event::default().json_data(&msg).unwrap_or_default();
                    return Some((Ok(event), (rx, household)));
                }
                Ok(_) => continue,
                Err(tokio::sync::broadcast::error::RecvError::Lagged(_)) => continue,
                Err(tokio::sync::broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

/// Serves until the listener fails or the task is dropped.
pub async fn serve(engine: Arc<Engine>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).await
}
