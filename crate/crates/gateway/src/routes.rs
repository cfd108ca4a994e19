//! `/v1` handlers. Each is a thin translation between HTTP and one
//! [`Household`] call, so payloads are exactly the module results.

use std::io::Cursor;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::Json;
use hearth_core::exposure::SeriesFilter;
use hearth_core::flowcap::{parse_device_map, Device, DeviceId};
use hearth_core::guard::{Blocklist, BlocklistSource, DirectiveExport, DirectiveId, DirectiveState};
use hearth_core::household::{DirectiveDraft, Pace};
use hearth_core::resolver::HomeRegion;
use hearth_core::store::{FlowQuery, RedactionScope};
use hearth_core::{Household, HouseholdError, Stage, TimeWindow};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult};
use crate::extract::{ApiJson, ApiQuery};
use crate::AppState;

pub const DEFAULT_FLOW_LIMIT: usize = 1000;
pub const MAX_FLOW_LIMIT: usize = 100_000;

/// Runs a household call off the async workers.
async fn blocking<T, F>(app: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Household) -> Result<T, HouseholdError> + Send + 'static,
{
    let h = app.household.clone();
    tokio::task::spawn_blocking(move || f(&h))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

fn window(start_ms: Option<i64>, end_ms: Option<i64>) -> ApiResult<TimeWindow> {
    let all = TimeWindow::all();
    TimeWindow::new(start_ms.unwrap_or(all.start_ms), end_ms.unwrap_or(all.end_ms))
        .map_err(|e| ApiError::validation("end_ms", e.to_string()))
}

fn filter(device: Option<String>, company: Option<String>) -> SeriesFilter {
    SeriesFilter {
        device: device.map(DeviceId),
        company,
    }
}

// ---- health and stage ----

pub async fn health(State(app): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "stage": app.household.stage().stage(),
        "last_seq": app.household.events().last_seq(),
    }))
}

pub async fn get_stage(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.household.stage())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetStage {
    pub stage: Stage,
    #[serde(default)]
    pub allow_regression: bool,
}

pub async fn set_stage(
    State(app): State<AppState>,
    headers: HeaderMap,
    ApiJson(body): ApiJson<SetStage>,
) -> ApiResult<impl IntoResponse> {
    app.authorize(&headers)?;
    Ok(Json(app.household.set_stage(body.stage, body.allow_regression)?))
}

// ---- devices, companies, fixtures, replay ----

pub async fn devices(State(app): State<AppState>) -> Json<Vec<Device>> {
    Json(app.household.devices())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rename {
    pub name: String,
}

pub async fn rename_device(
    State(app): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<Rename>,
) -> ApiResult<Json<Device>> {
    Ok(Json(app.household.rename_device(&DeviceId(id), &body.name)?))
}

pub async fn companies(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.household.companies())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadFixtures {
    pub path: PathBuf,
}

pub async fn load_fixtures(
    State(app): State<AppState>,
    ApiJson(body): ApiJson<LoadFixtures>,
) -> ApiResult<Json<Value>> {
    let loaded = blocking(&app, move |h| h.load_fixtures(&body.path)).await?;
    Ok(Json(json!({ "loaded": loaded })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Replay {
    /// Capture file on the gateway host.
    pub path: PathBuf,
    /// Device map text (`MAC<TAB>name` per line).
    #[serde(default)]
    pub device_map: String,
    /// Capture-time speedup; absent means as fast as possible.
    #[serde(default)]
    pub speed: Option<f64>,
}

pub async fn replay(State(app): State<AppState>, ApiJson(body): ApiJson<Replay>) -> ApiResult<impl IntoResponse> {
    let map = parse_device_map(&body.device_map).map_err(|e| ApiError::validation("device_map", e.to_string()))?;
    let pace = match body.speed {
        None => Pace::AsFastAsPossible,
        Some(s) if s.is_finite() && s > 0.0 => Pace::Speed(s),
        Some(s) => {
            return Err(ApiError::validation(
                "speed",
                format!("must be a positive number, got {s}"),
            ))
        }
    };
    let summary = blocking(&app, move |h| h.replay_pcap(&body.path, &map, pace)).await?;
    Ok(Json(summary))
}

// ---- flows ----

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowsQuery {
    pub device: Option<String>,
    pub company: Option<String>,
    pub start_ms: Option<i64>,
    pub end_ms: Option<i64>,
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

impl FlowsQuery {
    fn query(&self) -> ApiResult<FlowQuery> {
        let windowed = self.start_ms.is_some() || self.end_ms.is_some();
        Ok(FlowQuery {
            device: self.device.clone().map(DeviceId),
            company: self.company.clone(),
            window: if windowed {
                Some(window(self.start_ms, self.end_ms)?)
            } else {
                None
            },
        })
    }
}

#[derive(Debug, Serialize)]
pub struct FlowPage {
    pub total: usize,
    pub offset: usize,
    pub flows: Vec<hearth_core::store::StoredFlow>,
}

pub async fn flows(State(app): State<AppState>, ApiQuery(q): ApiQuery<FlowsQuery>) -> ApiResult<Json<FlowPage>> {
    let query = q.query()?;
    let limit = q.limit.unwrap_or(DEFAULT_FLOW_LIMIT);
    if limit > MAX_FLOW_LIMIT {
        return Err(ApiError::validation("limit", format!("at most {MAX_FLOW_LIMIT}")));
    }
    let offset = q.offset.unwrap_or(0);
    let all = app.household.flows(&query);
    Ok(Json(FlowPage {
        total: all.len(),
        offset,
        flows: all.into_iter().skip(offset).take(limit).collect(),
    }))
}

pub async fn export_flows(
    State(app): State<AppState>,
    ApiQuery(q): ApiQuery<FlowsQuery>,
) -> ApiResult<impl IntoResponse> {
    if q.offset.is_some() || q.limit.is_some() {
        return Err(ApiError::validation("limit", "exports are not paged"));
    }
    let query = q.query()?;
    let body = blocking(&app, move |h| {
        let mut out = Vec::new();
        h.export_flows(&query, &mut out)?;
        Ok(out)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

pub async fn import_flows(State(app): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let summary = blocking(&app, move |h| h.import_flows(Cursor::new(body))).await?;
    Ok(Json(summary))
}

// ---- exposure ----

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesQuery {
    pub device: Option<String>,
    pub company: Option<String>,
    pub start_ms: Option<i64>,
    pub end_ms: Option<i64>,
    pub width_ms: Option<i64>,
}

pub async fn buckets(State(app): State<AppState>, ApiQuery(q): ApiQuery<SeriesQuery>) -> ApiResult<impl IntoResponse> {
    if q.width_ms.is_some() {
        return Err(ApiError::validation("width_ms", "buckets have a fixed width"));
    }
    let w = window(q.start_ms, q.end_ms)?;
    Ok(Json(app.household.buckets(&filter(q.device, q.company), &w)))
}

/// An open-ended series covers the stored buckets rather than all time.
pub async fn timeseries(
    State(app): State<AppState>,
    ApiQuery(q): ApiQuery<SeriesQuery>,
) -> ApiResult<impl IntoResponse> {
    let f = filter(q.device, q.company);
    let (mut start, mut end) = (q.start_ms, q.end_ms);
    if start.is_none() || end.is_none() {
        let buckets = app.household.buckets(&f, &window(start, end)?);
        let Some(lo) = buckets.iter().map(|b| b.bucket_start_ms).min() else {
            return Ok(Json(Vec::new()));
        };
        let hi = buckets
            .iter()
            .map(|b| b.bucket_start_ms + b.bucket_width_ms)
            .max()
            .unwrap_or(lo + 1);
        start = start.or(Some(lo));
        end = end.or(Some(hi));
    }
    let w = window(start, end)?;
    let width = q.width_ms.unwrap_or(app.household.config().store.bucket_width_ms);
    Ok(Json(app.household.timeseries(&f, &w, width)?))
}

pub async fn profile(State(app): State<AppState>, ApiQuery(q): ApiQuery<SeriesQuery>) -> ApiResult<impl IntoResponse> {
    if q.width_ms.is_some() {
        return Err(ApiError::validation("width_ms", "profiles are not bucketed"));
    }
    let w = window(q.start_ms, q.end_ms)?;
    Ok(Json(app.household.profile(&filter(q.device, q.company), &w)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportQuery {
    pub start_ms: Option<i64>,
    pub end_ms: Option<i64>,
    pub top_n: Option<u32>,
    pub home_region: Option<String>,
}

pub async fn report(State(app): State<AppState>, ApiQuery(q): ApiQuery<ReportQuery>) -> ApiResult<impl IntoResponse> {
    let w = window(q.start_ms, q.end_ms)?;
    let home = q
        .home_region
        .as_deref()
        .map(str::parse::<HomeRegion>)
        .transpose()
        .map_err(|e| ApiError::validation("home_region", e.to_string()))?;
    Ok(Json(app.household.stats_report(
        &w,
        q.top_n.unwrap_or(3),
        home.as_ref(),
    )?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareQuery {
    pub a_start_ms: i64,
    pub a_end_ms: i64,
    pub b_start_ms: i64,
    pub b_end_ms: i64,
    pub device: Option<String>,
    pub company: Option<String>,
}

pub async fn compare(State(app): State<AppState>, ApiQuery(q): ApiQuery<CompareQuery>) -> ApiResult<impl IntoResponse> {
    let a = TimeWindow::new(q.a_start_ms, q.a_end_ms).map_err(|e| ApiError::validation("a_end_ms", e.to_string()))?;
    let b = TimeWindow::new(q.b_start_ms, q.b_end_ms).map_err(|e| ApiError::validation("b_end_ms", e.to_string()))?;
    Ok(Json(app.household.compare_periods(
        &a,
        &b,
        &filter(q.device, q.company),
    )))
}

// ---- directives and blocklists ----

pub async fn directives(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.household.directives())
}

pub async fn directive(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.household.directive(&DirectiveId(id))?))
}

pub async fn create_directive(
    State(app): State<AppState>,
    ApiJson(draft): ApiJson<DirectiveDraft>,
) -> ApiResult<impl IntoResponse> {
    let d = app.household.create_directive(draft)?;
    Ok((StatusCode::CREATED, Json(d)))
}

async fn set_state(app: AppState, id: String, state: DirectiveState) -> ApiResult<Json<Value>> {
    let (directive, version) = blocking(&app, move |h| h.set_directive_state(&DirectiveId(id), state)).await?;
    Ok(Json(json!({ "directive": directive, "ruleset_version": version })))
}

pub async fn enable_directive(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    set_state(app, id, DirectiveState::Enabled).await
}

pub async fn disable_directive(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    set_state(app, id, DirectiveState::Disabled).await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreviewWindow {
    pub start_ms: Option<i64>,
    pub end_ms: Option<i64>,
}

#[derive(Debug, Deserialize)]
pub struct DraftPreview {
    #[serde(flatten)]
    pub draft: DirectiveDraft,
    pub start_ms: Option<i64>,
    pub end_ms: Option<i64>,
}

pub async fn preview_draft(
    State(app): State<AppState>,
    ApiJson(body): ApiJson<DraftPreview>,
) -> ApiResult<impl IntoResponse> {
    let w = window(body.start_ms, body.end_ms)?;
    let p = blocking(&app, move |h| h.preview(Err(&body.draft), &w)).await?;
    Ok(Json(p))
}

pub async fn preview_directive(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    // The window is optional, so an empty body is fine.
    let pw: PreviewWindow = if body.iter().all(u8::is_ascii_whitespace) {
        PreviewWindow::default()
    } else {
        crate::extract::parse_json(&body)?
    };
    let w = window(pw.start_ms, pw.end_ms)?;
    let p = blocking(&app, move |h| h.preview(Ok(&DirectiveId(id)), &w)).await?;
    Ok(Json(p))
}

pub async fn suggestions(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.household.suggestions(&DirectiveId(id))?))
}

pub async fn export_directives(State(app): State<AppState>) -> Json<DirectiveExport> {
    Json(app.household.export_directives())
}

pub async fn import_directives(
    State(app): State<AppState>,
    ApiJson(export): ApiJson<DirectiveExport>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.household.import_directives(export)?))
}

pub async fn blocklists(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.household.blocklists())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PutBlocklist {
    pub name: String,
    /// One company name or CIDR prefix per line.
    pub text: String,
}

pub async fn put_blocklist(
    State(app): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<PutBlocklist>,
) -> ApiResult<impl IntoResponse> {
    let list = Blocklist::parse(&id, &body.name, BlocklistSource::User, &body.text).map_err(HouseholdError::from)?;
    Ok(Json(app.household.put_blocklist(list)?))
}

pub async fn enable_blocklist(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.household.set_blocklist_enabled(&id, true)?))
}

pub async fn disable_blocklist(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.household.set_blocklist_enabled(&id, false)?))
}

pub async fn ruleset(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.household.ruleset().as_ref().clone())
}

// ---- curriculum ----

pub async fn curriculum(State(app): State<AppState>) -> Json<Value> {
    Json(json!({
        "modules": app.household.curriculum_modules(),
        "due": app.household.curriculum_due(),
    }))
}

pub async fn curriculum_due(State(app): State<AppState>) -> Json<Value> {
    Json(json!({ "due": app.household.curriculum_due() }))
}

pub async fn curriculum_context(
    State(app): State<AppState>,
    ApiQuery(q): ApiQuery<PreviewWindow>,
) -> ApiResult<impl IntoResponse> {
    let w = window(q.start_ms, q.end_ms)?;
    Ok(Json(app.household.curriculum_context(&w)))
}

pub async fn render_module(
    State(app): State<AppState>,
    Path(id): Path<String>,
    ApiQuery(q): ApiQuery<PreviewWindow>,
) -> ApiResult<impl IntoResponse> {
    let w = window(q.start_ms, q.end_ms)?;
    Ok(Json(app.household.render_module(&id, &w)?))
}

pub async fn complete_module(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.household.complete_module(&id)?))
}

// ---- redaction ----

pub async fn redact(
    State(app): State<AppState>,
    ApiJson(scope): ApiJson<RedactionScope>,
) -> ApiResult<impl IntoResponse> {
    let r = blocking(&app, move |h| h.redact(scope)).await?;
    Ok((StatusCode::CREATED, Json(r)))
}

pub async fn audit(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.household.audit_log())
}
