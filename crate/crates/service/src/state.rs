//! Service state and the operations behind each endpoint.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use chrono::{DateTime, NaiveDate, Utc};
use firetrace_core::bayes::{query_similar_events, EventObservation, Evidence, SimilarEvent};
use firetrace_core::config::Config;
use firetrace_core::domain::{parse_iso_date, Continent, EntityKind};
use firetrace_core::federation::{load_store, FederatedQuery, FederatedResult, Filter, Gateway, Targets};
use firetrace_core::graph::IngestMessage;
use firetrace_core::pipeline::{evidence_for, CorrelationRun, IncidentRun, Pipeline};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::auth::{AuthService, Session, UserFile};
use crate::cases::{CaseStore, PinnedRecord};
use crate::detector::{FirearmIdReport, ParcelAnalysisReport, DETECTOR_TOPIC};
use crate::error::ApiError;
use crate::reports::ReportStore;

/// Who is calling; produced by token validation before any handler runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caller {
    pub user: String,
    pub role: String,
}

impl From<Session> for Caller {
    fn from(s: Session) -> Self {
        Caller { user: s.user, role: s.role }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityFilter {
    pub from: Option<String>,
    pub to: Option<String>,
    pub country: Option<String>,
    pub firearm_class: Option<String>,
    pub source: Option<String>,
    pub kind: Option<String>,
    pub cursor: Option<String>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub topic: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub id: String,
    pub kind: EntityKind,
    pub name: Option<String>,
    pub username: Option<String>,
    pub date: Option<NaiveDate>,
    pub country: Option<String>,
    pub firearm_model: Option<String>,
    pub firearm_type: Option<String>,
    pub firearm_class: String,
    pub continent: Continent,
    pub source: Option<String>,
    pub attributes: BTreeMap<String, String>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub report_id: String,
    pub record_ids: Vec<String>,
}

fn sort_key(v: &EntityView) -> (String, String) {
    (v.date.map(|d| d.to_string()).unwrap_or_default(), v.id.clone())
}

fn encode_cursor(k: &(String, String)) -> String {
    hex::encode(format!("{}\n{}", k.0, k.1))
}

fn decode_cursor(c: &str) -> Result<(String, String), ApiError> {
    let bytes = hex::decode(c).map_err(|_| ApiError::bad_filter("malformed cursor"))?;
    let s = String::from_utf8(bytes).map_err(|_| ApiError::bad_filter("malformed cursor"))?;
    let (d, id) = s.split_once('\n').ok_or_else(|| ApiError::bad_filter("malformed cursor"))?;
    Ok((d.into(), id.into()))
}

fn parse_bound(field: &str, v: &Option<String>) -> Result<Option<NaiveDate>, ApiError> {
    match v.as_deref() {
        None | Some("") => Ok(None),
        Some(s) => parse_iso_date(s).map(Some).ok_or_else(|| ApiError::bad_filter(format!("`{field}` is not a date: {s}"))),
    }
}

type Cached<T> = Mutex<Option<(u64, Arc<T>)>>;
type Replies = Mutex<HashMap<(String, String), Arc<tokio::sync::Mutex<Option<(u16, Value)>>>>>;

pub struct AppState {
    pub pipeline: Pipeline,
    pub auth: AuthService,
    pub reports: ReportStore,
    pub cases: CaseStore,
    pub gateway: Gateway,
    data_dir: Option<PathBuf>,
    detector_offset: AtomicU64,
    idempotency: Replies,
    correlation: Cached<CorrelationRun>,
    observations: Cached<Vec<EventObservation>>,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState").field("pipeline", &self.pipeline).field("gateway", &self.gateway).finish()
    }
}

impl AppState {
    pub fn new(pipeline: Pipeline, auth: AuthService, gateway: Gateway) -> AppState {
        let snap = pipeline.snapshot();
        let last = snap
            .nodes()
            .filter_map(|n| snap.cursor(&n.id))
            .filter(|c| c.topic == DETECTOR_TOPIC)
            .map(|c| c.offset)
            .max()
            .unwrap_or(0);
        AppState {
            pipeline,
            auth,
            reports: ReportStore::default(),
            cases: CaseStore::default(),
            gateway,
            data_dir: None,
            detector_offset: AtomicU64::new(last + 1),
            idempotency: Mutex::default(),
            correlation: Mutex::default(),
            observations: Mutex::default(),
        }
    }

    /// Loads users, federated stores and any saved reports and cases named by the config.
    pub fn from_config(config: Config) -> anyhow::Result<AppState> {
        let users = match &config.service.users {
            Some(p) => UserFile::load(&config.resolve(p)).with_context(|| format!("loading users from {}", p.display()))?.users,
            None => Vec::new(),
        };
        let auth = AuthService::new(users, config.service.token_ttl_secs, config.service.lockout_after);
        let gateway = Gateway::new(config.policy()?, Duration::from_millis(config.federation.timeout_ms));
        for p in &config.federation.stores {
            let (d, adapter) = load_store(&config.resolve(p))?;
            gateway.register_store(d, adapter)?;
        }
        let data_dir = config.service.data_dir.as_ref().map(|d| config.resolve(d));
        let pipeline = Pipeline::new(config)?;
        let mut state = AppState::new(pipeline, auth, gateway);
        if let Some(dir) = data_dir {
            fs::create_dir_all(&dir)?;
            if let Ok(text) = fs::read_to_string(dir.join("reports.json")) {
                state.reports = ReportStore::from_json(&text)?;
            }
            if let Ok(text) = fs::read_to_string(dir.join("cases.json")) {
                state.cases = CaseStore::from_json(&text)?;
            }
            state.data_dir = Some(dir);
        }
        Ok(state)
    }

    pub fn caller(&self, token: &str, now: DateTime<Utc>) -> Result<Caller, ApiError> {
        Ok(self.auth.validate(token, now)?.into())
    }

    /// Writes reports, cases and the graph to the data directory, when there is one.
    pub fn persist(&self) -> Result<(), ApiError> {
        let Some(dir) = &self.data_dir else { return Ok(()) };
        let write = |name: &str, text: String| fs::write(dir.join(name), text).map_err(ApiError::internal);
        write("reports.json", self.reports.to_json().map_err(ApiError::internal)?)?;
        write("cases.json", self.cases.to_json().map_err(ApiError::internal)?)?;
        self.pipeline.flush().map_err(ApiError::from)
    }

    /// Replays the stored response for a repeated `(user, request id)` and
    /// runs `f` once otherwise. Concurrent retries wait for the first.
    pub async fn idempotent<F>(&self, caller: &Caller, request_id: Option<&str>, f: F) -> (u16, Value)
    where
        F: FnOnce() -> Result<Value, ApiError>,
    {
        let run = || match f() {
            Ok(v) => (200, v),
            Err(e) => (e.status, json!({"error": e.error, "message": e.message})),
        };
        let Some(rid) = request_id else { return run() };
        let slot = self.idempotency.lock().entry((caller.user.clone(), rid.to_string())).or_default().clone();
        let mut guard = slot.lock().await;
        if let Some(done) = guard.as_ref() {
            return done.clone();
        }
        let out = run();
        *guard = Some(out.clone());
        out
    }

    fn cached<T>(&self, cell: &Cached<T>, compute: impl FnOnce() -> Result<T, ApiError>) -> Result<Arc<T>, ApiError> {
        let version = self.pipeline.snapshot().version();
        let mut g = cell.lock();
        if let Some((v, val)) = g.as_ref() {
            if *v == version {
                return Ok(val.clone());
            }
        }
        let val = Arc::new(compute()?);
        *g = Some((version, val.clone()));
        Ok(val)
    }

    pub fn correlations(&self) -> Result<Arc<CorrelationRun>, ApiError> {
        self.cached(&self.correlation, || Ok(self.pipeline.correlate()?))
    }

    pub fn observations(&self) -> Result<Arc<Vec<EventObservation>>, ApiError> {
        self.cached(&self.observations, || Ok(self.pipeline.observations()?))
    }

    pub fn entity_views(&self) -> Vec<EntityView> {
        let snap = self.pipeline.snapshot();
        let mut views: Vec<EntityView> = self
            .pipeline
            .entities()
            .into_iter()
            .map(|e| {
                let r = e.record;
                EntityView {
                    provenance: snap.cursor(&r.id).map(|c| Provenance { topic: c.topic.clone(), offset: c.offset }),
                    id: r.id,
                    kind: r.kind,
                    name: r.name,
                    username: r.username,
                    date: r.date,
                    country: r.country,
                    firearm_model: r.firearm_model,
                    firearm_type: r.firearm_type,
                    firearm_class: e.abstracted.firearm_class,
                    continent: e.abstracted.continent,
                    source: r.source.map(|s| s.as_str().to_string()),
                    attributes: r.attributes,
                }
            })
            .collect();
        views.sort_by_key(sort_key);
        views
    }

    /// Filtered entities in `(date, id)` order; undated agents sort first.
    pub fn entities(&self, f: &EntityFilter) -> Result<Page<EntityView>, ApiError> {
        let from = parse_bound("from", &f.from)?;
        let to = parse_bound("to", &f.to)?;
        let kind = match f.kind.as_deref() {
            None | Some("") => None,
            Some(k) => Some(k.parse::<EntityKind>().map_err(|_| ApiError::bad_filter(format!("unknown kind `{k}`")))?),
        };
        let limit = f.limit.unwrap_or(self.pipeline.config().service.page_size);
        if limit == 0 {
            return Err(ApiError::bad_filter("limit must be positive"));
        }
        let after = f.cursor.as_deref().map(decode_cursor).transpose()?;

        let matching = self.entity_views().into_iter().filter(|v| {
            (from.is_none() && to.is_none() || v.date.is_some_and(|d| from.is_none_or(|x| d >= x) && to.is_none_or(|x| d <= x)))
                && f.country.as_ref().is_none_or(|c| v.country.as_ref() == Some(c))
                && f.firearm_class.as_ref().is_none_or(|c| &v.firearm_class == c)
                && f.source.as_ref().is_none_or(|s| v.source.as_ref() == Some(s))
                && kind.is_none_or(|k| v.kind == k)
                && after.as_ref().is_none_or(|a| sort_key(v) > *a)
        });
        let mut items: Vec<EntityView> = matching.take(limit + 1).collect();
        let next_cursor = if items.len() > limit {
            items.truncate(limit);
            items.last().map(|v| encode_cursor(&sort_key(v)))
        } else {
            None
        };
        Ok(Page { items, next_cursor })
    }

    pub fn entity(&self, id: &str) -> Result<EntityView, ApiError> {
        self.entity_views()
            .into_iter()
            .find(|v| v.id == id)
            .ok_or_else(|| ApiError::not_found("UnknownEntity", format!("unknown entity `{id}`")))
    }

    pub fn priority(&self, evidence: &Evidence) -> Result<Value, ApiError> {
        let net = self.pipeline.network().ok_or_else(|| ApiError::from(firetrace_core::pipeline::PipelineError::NoNetwork))?;
        let obs = EventObservation::evaluate(net, "query", evidence.clone()).map_err(ApiError::bad_request)?;
        Ok(json!({"evidence": obs.evidence, "priority": obs.priority, "cause_posterior": obs.cause_posterior}))
    }

    /// Ranks stored events against explicit traces or against a stored event's evidence.
    pub fn similar(&self, evidence: Option<Evidence>, event_id: Option<&str>, k: usize) -> Result<Vec<SimilarEvent>, ApiError> {
        let net = self.pipeline.network().ok_or_else(|| ApiError::from(firetrace_core::pipeline::PipelineError::NoNetwork))?;
        let traces = match (evidence, event_id) {
            (Some(e), _) => e,
            (None, Some(id)) => evidence_for(&self.entity(id)?.attributes, net),
            (None, None) => return Err(ApiError::bad_request("give `evidence` or `event_id`")),
        };
        let store = self.observations()?;
        let others: Vec<EventObservation> = store.iter().filter(|o| Some(o.event_id.as_str()) != event_id).cloned().collect();
        query_similar_events(net, &traces, &others, k).map_err(ApiError::bad_request)
    }

    pub fn incidents(&self) -> IncidentRun {
        self.pipeline.incidents()
    }

    pub fn federated(&self, caller: &Caller, q: &FederatedQuery) -> Result<FederatedResult, ApiError> {
        Ok(self.gateway.execute(q, &caller.role)?)
    }

    fn next_offsets(&self, n: usize) -> u64 {
        self.detector_offset.fetch_add(n as u64, Ordering::SeqCst)
    }

    fn ingest_events(&self, msgs: Vec<IngestMessage>) -> Result<Vec<String>, ApiError> {
        let ids = msgs.iter().map(|m| m.key.clone()).collect();
        let stats = self.pipeline.ingest_messages(msgs).map_err(ApiError::from)?;
        if stats.rejected > 0 {
            return Err(ApiError::internal(format!("{} detector events were quarantined", stats.rejected)));
        }
        Ok(ids)
    }

    /// Validates before storing anything; invalid reports leave no trace.
    pub fn ingest_parcel(&self, caller: &Caller, r: &ParcelAnalysisReport, now: DateTime<Utc>) -> Result<IngestReceipt, ApiError> {
        r.validate(&self.pipeline.config().service.parcel_classes)?;
        let payload = serde_json::to_value(r).map_err(ApiError::internal)?;
        let report = self.reports.create(&caller.user, "parcel_analysis", &format!("Parcel scan {}", r.image_id), payload, now);
        let date = r.captured.unwrap_or_else(|| now.date_naive());
        let msgs = r.to_messages(&report.id, date, self.next_offsets(r.detections.len()));
        let record_ids = self.ingest_events(msgs)?;
        self.persist()?;
        Ok(IngestReceipt { report_id: report.id, record_ids })
    }

    pub fn ingest_firearm(&self, caller: &Caller, r: &FirearmIdReport, now: DateTime<Utc>) -> Result<IngestReceipt, ApiError> {
        let svc = &self.pipeline.config().service;
        r.validate(&svc.firearm_types, svc.max_candidates)?;
        let payload = serde_json::to_value(r).map_err(ApiError::internal)?;
        let report = self.reports.create(&caller.user, "firearm_id", &format!("Firearm identification {}", r.image_id), payload, now);
        let date = r.captured.unwrap_or_else(|| now.date_naive());
        let msgs = r.to_messages(&report.id, date, self.next_offsets(1));
        let record_ids = self.ingest_events(msgs)?;
        self.persist()?;
        Ok(IngestReceipt { report_id: report.id, record_ids })
    }

    /// The current content of a pinned record with its provenance, if it exists.
    pub fn resolve_record(&self, caller: &Caller, p: &PinnedRecord) -> Option<Value> {
        if p.source == "graph" {
            let snap = self.pipeline.snapshot();
            let node = snap.node(&p.record_id)?;
            let cursor = snap.cursor(&p.record_id);
            return Some(json!({
                "label": node.label,
                "properties": node.properties,
                "provenance": cursor.map(|c| json!({"topic": c.topic, "offset": c.offset})),
            }));
        }
        let q = FederatedQuery {
            filters: vec![Filter::eq("id", &p.record_id)],
            projection: Vec::new(),
            targets: Targets::Stores(vec![p.source.clone()]),
        };
        let res = self.gateway.execute(&q, &caller.role).ok()?;
        let row = res.rows.into_iter().next()?;
        Some(json!({"properties": row.fields, "provenance": row.provenance}))
    }
}
