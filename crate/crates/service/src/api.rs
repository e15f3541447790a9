//! HTTP routes. Every route except login requires `Authorization: Bearer <token>`;
//! mutating routes honour an `Idempotency-Key` (or `X-Request-Id`) header.

use std::sync::Arc;

use axum::extract::{FromRef, FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{async_trait, Json, Router};
use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use firetrace_core::bayes::Evidence;
use firetrace_core::federation::FederatedQuery;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::cases::{CaseStatus, PinnedRecord};
use crate::detector::{FirearmIdReport, ParcelAnalysisReport};
use crate::error::ApiError;
use crate::reports::ReportQuery;
use crate::state::{AppState, Caller, EntityFilter};

pub type Shared = Arc<AppState>;

#[async_trait]
impl<S> FromRequestParts<S> for Caller
where
    Shared: FromRef<S>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        let state = Shared::from_ref(state);
        let token = bearer(&parts.headers).ok_or_else(|| ApiError::from(crate::auth::AuthError::InvalidToken))?;
        state.caller(token, Utc::now())
    }
}

fn bearer(h: &HeaderMap) -> Option<&str> {
    h.get("authorization")?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

fn request_id(h: &HeaderMap) -> Option<&str> {
    h.get("idempotency-key").or_else(|| h.get("x-request-id")).and_then(|v| v.to_str().ok())
}

fn reply((status, body): (u16, Value)) -> Response {
    (StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), Json(body)).into_response()
}

fn to_json<T: serde::Serialize>(v: T) -> Result<Value, ApiError> {
    serde_json::to_value(v).map_err(ApiError::internal)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/auth/login", post(login))
        .route("/auth/logout", post(logout))
        .route("/auth/session", get(session))
        .route("/portal/services", get(portal_services))
        .route("/reports", get(list_reports).post(create_report))
        .route("/reports/:id", get(get_report).delete(delete_report))
        .route("/reports/:id/share", post(share_report))
        .route("/reports/:id/export", get(export_report))
        .route("/ingest/parcel", post(ingest_parcel))
        .route("/ingest/firearm", post(ingest_firearm))
        .route("/entities", get(list_entities))
        .route("/entities/:id", get(get_entity))
        .route("/correlations", get(correlations))
        .route("/clusters", get(clusters))
        .route("/evaluate/priority", get(stored_priorities).post(adhoc_priority))
        .route("/evaluate/similar", get(similar_get).post(similar_post))
        .route("/incidents", get(incidents))
        .route("/risk", get(risk))
        .route("/chain", get(chain))
        .route("/federated/query", post(federated_query))
        .route("/cases", get(list_cases).post(create_case))
        .route("/cases/:id", get(get_case))
        .route("/cases/:id/pin", post(pin))
        .route("/cases/:id/unpin", post(unpin))
        .route("/cases/:id/status", post(case_status))
        .route("/cases/:id/report", post(case_report))
        .with_state(state)
}

#[derive(Deserialize)]
struct Login {
    username: String,
    secret: String,
}

async fn login(State(s): State<Shared>, Json(b): Json<Login>) -> Result<Json<Value>, ApiError> {
    let session = s.auth.authenticate(&b.username, &b.secret, Utc::now())?;
    Ok(Json(to_json(session)?))
}

async fn logout(State(s): State<Shared>, _c: Caller, h: HeaderMap) -> Json<Value> {
    let done = bearer(&h).is_some_and(|t| s.auth.logout(t));
    Json(json!({"logged_out": done}))
}

async fn session(c: Caller) -> Json<Value> {
    Json(json!({"user": c.user, "role": c.role}))
}

async fn portal_services(_c: Caller) -> Json<Value> {
    Json(json!({"services": [
        {"id": "graph_mining", "title": "Entity graph", "endpoints": ["/entities", "/correlations", "/clusters"]},
        {"id": "situation_evaluator", "title": "Event priority", "endpoints": ["/evaluate/priority", "/evaluate/similar"]},
        {"id": "incident_tracker", "title": "Incidents and risk", "endpoints": ["/incidents", "/risk"]},
        {"id": "chain_analysis", "title": "Ledger analysis", "endpoints": ["/chain"]},
        {"id": "fusion_gateway", "title": "Information sharing", "endpoints": ["/federated/query"]},
        {"id": "case_workbench", "title": "Cases", "endpoints": ["/cases"]},
    ]}))
}

#[derive(Deserialize, Default)]
struct ReportParams {
    from: Option<String>,
    to: Option<String>,
    service: Option<String>,
    title: Option<String>,
}

/// RFC 3339 instants or plain dates; a plain `to` date includes that whole day.
fn parse_instant(field: &str, s: &str, end_of_day: bool) -> Result<DateTime<Utc>, ApiError> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| ApiError::bad_filter(format!("`{field}` is not a date: {s}")))?;
    let t = if end_of_day { NaiveTime::from_hms_nano_opt(23, 59, 59, 999_999_999).expect("valid") } else { NaiveTime::MIN };
    Ok(d.and_time(t).and_utc())
}

async fn list_reports(State(s): State<Shared>, c: Caller, Query(p): Query<ReportParams>) -> Result<Json<Value>, ApiError> {
    let q = ReportQuery {
        from: p.from.as_deref().map(|v| parse_instant("from", v, false)).transpose()?,
        to: p.to.as_deref().map(|v| parse_instant("to", v, true)).transpose()?,
        service: p.service,
        title: p.title,
    };
    let reports: Vec<Value> = s
        .reports
        .search(&c.user, &q)
        .into_iter()
        .map(|r| {
            let owner = r.owner == c.user;
            let mut v = serde_json::to_value(r).expect("report serializes");
            v["read_only"] = json!(!owner);
            v
        })
        .collect();
    Ok(Json(json!({"items": reports})))
}

#[derive(Deserialize)]
struct NewReport {
    title: String,
    service: String,
    #[serde(default)]
    payload: Value,
}

async fn create_report(State(s): State<Shared>, c: Caller, h: HeaderMap, Json(b): Json<NewReport>) -> Response {
    let st = s.clone();
    let caller = c.clone();
    reply(
        s.idempotent(&c, request_id(&h), move || {
            let r = st.reports.create(&caller.user, &b.service, &b.title, b.payload, Utc::now());
            st.persist()?;
            to_json(r)
        })
        .await,
    )
}

async fn get_report(State(s): State<Shared>, c: Caller, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    Ok(Json(to_json(s.reports.get(&c.user, &id)?)?))
}

async fn export_report(State(s): State<Shared>, c: Caller, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    Ok(Json(s.reports.get(&c.user, &id)?.payload))
}

async fn delete_report(State(s): State<Shared>, c: Caller, h: HeaderMap, Path(id): Path<String>) -> Response {
    let st = s.clone();
    let user = c.user.clone();
    reply(
        s.idempotent(&c, request_id(&h), move || {
            let r = st.reports.delete(&user, &id)?;
            st.persist()?;
            Ok(json!({"deleted": r.id}))
        })
        .await,
    )
}

#[derive(Deserialize)]
struct Share {
    users: Vec<String>,
}

async fn share_report(State(s): State<Shared>, c: Caller, h: HeaderMap, Path(id): Path<String>, Json(b): Json<Share>) -> Response {
    let st = s.clone();
    let user = c.user.clone();
    reply(
        s.idempotent(&c, request_id(&h), move || {
            let r = st.reports.share(&user, &id, &b.users)?;
            st.persist()?;
            to_json(r)
        })
        .await,
    )
}

async fn ingest_parcel(State(s): State<Shared>, c: Caller, h: HeaderMap, Json(b): Json<ParcelAnalysisReport>) -> Response {
    let st = s.clone();
    let caller = c.clone();
    reply(s.idempotent(&c, request_id(&h), move || to_json(st.ingest_parcel(&caller, &b, Utc::now())?)).await)
}

async fn ingest_firearm(State(s): State<Shared>, c: Caller, h: HeaderMap, Json(b): Json<FirearmIdReport>) -> Response {
    let st = s.clone();
    let caller = c.clone();
    reply(s.idempotent(&c, request_id(&h), move || to_json(st.ingest_firearm(&caller, &b, Utc::now())?)).await)
}

async fn list_entities(State(s): State<Shared>, _c: Caller, Query(f): Query<EntityFilter>) -> Result<Json<Value>, ApiError> {
    let page = blocking(move || s.entities(&f)).await??;
    Ok(Json(to_json(page)?))
}

async fn get_entity(State(s): State<Shared>, _c: Caller, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    Ok(Json(to_json(s.entity(&id)?)?))
}

#[derive(Deserialize, Default)]
struct CorrelationParams {
    min_score: Option<f64>,
    entity: Option<String>,
}

async fn correlations(State(s): State<Shared>, _c: Caller, Query(p): Query<CorrelationParams>) -> Result<Json<Value>, ApiError> {
    let run = blocking(move || s.correlations()).await??;
    let edges: Vec<_> = run
        .edges
        .iter()
        .filter(|e| p.min_score.is_none_or(|m| e.score >= m))
        .filter(|e| p.entity.as_ref().is_none_or(|id| &e.a == id || &e.b == id))
        .collect();
    Ok(Json(json!({"entity_count": run.entity_count, "edges": edges})))
}

async fn clusters(State(s): State<Shared>, _c: Caller) -> Result<Json<Value>, ApiError> {
    let run = blocking(move || s.correlations()).await??;
    Ok(Json(to_json(&run.clusters)?))
}

#[derive(Deserialize, Default)]
struct PriorityParams {
    event_id: Option<String>,
}

async fn stored_priorities(State(s): State<Shared>, _c: Caller, Query(p): Query<PriorityParams>) -> Result<Json<Value>, ApiError> {
    let (ok, failed) = blocking(move || s.pipeline.evaluate_events()).await??;
    match p.event_id {
        None => Ok(Json(json!({"items": ok, "failures": failed}))),
        Some(id) => {
            if let Some(e) = ok.iter().find(|e| e.event_id == id) {
                return Ok(Json(to_json(e)?));
            }
            if let Some(f) = failed.iter().find(|f| f.event_id == id) {
                return Err(ApiError::bad_request(&f.error));
            }
            Err(ApiError::not_found("UnknownEntity", format!("no event `{id}`")))
        }
    }
}

#[derive(Deserialize)]
struct EvidenceBody {
    #[serde(default)]
    evidence: Evidence,
}

async fn adhoc_priority(State(s): State<Shared>, _c: Caller, Json(b): Json<EvidenceBody>) -> Result<Json<Value>, ApiError> {
    Ok(Json(s.priority(&b.evidence)?))
}

#[derive(Deserialize, Default)]
struct SimilarBody {
    evidence: Option<Evidence>,
    event_id: Option<String>,
    k: Option<usize>,
}

async fn similar(s: Shared, b: SimilarBody) -> Result<Json<Value>, ApiError> {
    let items = blocking(move || s.similar(b.evidence, b.event_id.as_deref(), b.k.unwrap_or(5))).await??;
    Ok(Json(json!({"items": items})))
}

async fn similar_get(State(s): State<Shared>, _c: Caller, Query(p): Query<SimilarBody>) -> Result<Json<Value>, ApiError> {
    similar(s, p).await
}

async fn similar_post(State(s): State<Shared>, _c: Caller, Json(b): Json<SimilarBody>) -> Result<Json<Value>, ApiError> {
    similar(s, b).await
}

#[derive(Deserialize, Default)]
struct IncidentParams {
    country: Option<String>,
    incident_type: Option<String>,
}

async fn incidents(State(s): State<Shared>, _c: Caller, Query(p): Query<IncidentParams>) -> Result<Json<Value>, ApiError> {
    let run = blocking(move || s.incidents()).await?;
    let items: Vec<Value> = run
        .extractions
        .iter()
        .filter(|x| p.country.as_ref().is_none_or(|c| x.record.location.country.as_ref() == Some(c)))
        .map(to_json)
        .collect::<Result<_, _>>()?;
    let items: Vec<Value> = items
        .into_iter()
        .filter(|v| p.incident_type.as_ref().is_none_or(|t| v["record"]["incident_type"] == json!(t)))
        .collect();
    Ok(Json(json!({"eligible": run.eligible, "rejected": run.rejected, "items": items})))
}

async fn risk(State(s): State<Shared>, _c: Caller) -> Result<Json<Value>, ApiError> {
    let run = blocking(move || s.incidents()).await?;
    Ok(Json(to_json(run.risk)?))
}

async fn chain(State(s): State<Shared>, _c: Caller) -> Result<Json<Value>, ApiError> {
    let run = blocking(move || s.pipeline.chain()).await??;
    Ok(Json(to_json(run)?))
}

async fn federated_query(State(s): State<Shared>, c: Caller, Json(q): Json<FederatedQuery>) -> Result<Json<Value>, ApiError> {
    let res = blocking(move || s.federated(&c, &q)).await??;
    Ok(Json(to_json(res)?))
}

async fn list_cases(State(s): State<Shared>, c: Caller) -> Result<Json<Value>, ApiError> {
    Ok(Json(json!({"items": s.cases.list(&c.user)})))
}

#[derive(Deserialize)]
struct NewCase {
    objective: String,
}

async fn create_case(State(s): State<Shared>, c: Caller, h: HeaderMap, Json(b): Json<NewCase>) -> Response {
    let st = s.clone();
    let user = c.user.clone();
    reply(
        s.idempotent(&c, request_id(&h), move || {
            let case = st.cases.create(&user, &b.objective, Utc::now());
            st.persist()?;
            to_json(case)
        })
        .await,
    )
}

async fn get_case(State(s): State<Shared>, c: Caller, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    Ok(Json(to_json(s.cases.get(&c.user, &id)?)?))
}

async fn pin(State(s): State<Shared>, c: Caller, h: HeaderMap, Path(id): Path<String>, Json(rec): Json<PinnedRecord>) -> Response {
    let st = s.clone();
    let caller = c.clone();
    reply(
        s.idempotent(&c, request_id(&h), move || {
            let case = st.cases.pin(&caller.user, &id, rec, |r| st.resolve_record(&caller, r).is_some())?;
            st.persist()?;
            to_json(case)
        })
        .await,
    )
}

async fn unpin(State(s): State<Shared>, c: Caller, h: HeaderMap, Path(id): Path<String>, Json(rec): Json<PinnedRecord>) -> Response {
    let st = s.clone();
    let user = c.user.clone();
    reply(
        s.idempotent(&c, request_id(&h), move || {
            let case = st.cases.unpin(&user, &id, &rec)?;
            st.persist()?;
            to_json(case)
        })
        .await,
    )
}

#[derive(Deserialize)]
struct StatusBody {
    status: CaseStatus,
}

async fn case_status(State(s): State<Shared>, c: Caller, h: HeaderMap, Path(id): Path<String>, Json(b): Json<StatusBody>) -> Response {
    let st = s.clone();
    let user = c.user.clone();
    reply(
        s.idempotent(&c, request_id(&h), move || {
            let case = st.cases.transition(&user, &id, b.status)?;
            st.persist()?;
            to_json(case)
        })
        .await,
    )
}

#[derive(Deserialize, Default)]
struct ReportBody {
    title: Option<String>,
}

async fn case_report(State(s): State<Shared>, c: Caller, h: HeaderMap, Path(id): Path<String>, body: Option<Json<ReportBody>>) -> Response {
    let st = s.clone();
    let caller = c.clone();
    let title = body.and_then(|b| b.0.title);
    reply(
        s.idempotent(&c, request_id(&h), move || {
            let r = st.cases.generate_report(
                &caller.user,
                &id,
                title.as_deref(),
                &st.reports,
                |p| st.resolve_record(&caller, p),
                Utc::now(),
            )?;
            st.persist()?;
            to_json(r)
        })
        .await,
    )
}
