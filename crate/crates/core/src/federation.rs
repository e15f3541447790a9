//! Federated queries over several agency stores: schema mapping,
//! deny-by-default access control, concurrent scatter-gather and merging.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical fields every store mapping must cover.
pub const REQUIRED_FIELDS: [&str; 4] = ["id", "date", "country", "firearm_model"];

pub type Row = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    Eq,
    Range,
    Contains,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    Eq { value: String },
    /// Inclusive bounds; numeric when both sides parse as numbers, lexicographic otherwise.
    Range { min: Option<String>, max: Option<String> },
    /// Case-insensitive substring.
    Contains { value: String },
}

impl Predicate {
    pub fn op(&self) -> FilterOp {
        match self {
            Predicate::Eq { .. } => FilterOp::Eq,
            Predicate::Range { .. } => FilterOp::Range,
            Predicate::Contains { .. } => FilterOp::Contains,
        }
    }

    pub fn matches(&self, v: Option<&str>) -> bool {
        let Some(v) = v else { return false };
        match self {
            Predicate::Eq { value } => v == value,
            Predicate::Contains { value } => v.to_lowercase().contains(&value.to_lowercase()),
            Predicate::Range { min, max } => {
                let ge = |bound: &str| match (v.parse::<f64>(), bound.parse::<f64>()) {
                    (Ok(a), Ok(b)) => a >= b,
                    _ => v >= bound,
                };
                let le = |bound: &str| match (v.parse::<f64>(), bound.parse::<f64>()) {
                    (Ok(a), Ok(b)) => a <= b,
                    _ => v <= bound,
                };
                min.as_deref().is_none_or(ge) && max.as_deref().is_none_or(le)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    pub field: String,
    #[serde(flatten)]
    pub predicate: Predicate,
}

impl Filter {
    pub fn eq(field: &str, value: &str) -> Self {
        Filter { field: field.into(), predicate: Predicate::Eq { value: value.into() } }
    }

    pub fn range(field: &str, min: Option<&str>, max: Option<&str>) -> Self {
        Filter { field: field.into(), predicate: Predicate::Range { min: min.map(Into::into), max: max.map(Into::into) } }
    }

    pub fn contains(field: &str, value: &str) -> Self {
        Filter { field: field.into(), predicate: Predicate::Contains { value: value.into() } }
    }
}

pub fn row_matches(row: &Row, filters: &[Filter]) -> bool {
    filters.iter().all(|f| f.predicate.matches(row.get(&f.field).map(String::as_str)))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Targets {
    #[default]
    #[serde(rename = "ALL")]
    All,
    #[serde(untagged)]
    Stores(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FederatedQuery {
    #[serde(default)]
    pub filters: Vec<Filter>,
    /// Canonical fields to return; empty means every field the role may read.
    #[serde(default)]
    pub projection: Vec<String>,
    #[serde(default)]
    pub targets: Targets,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreDescriptor {
    pub id: String,
    pub name: String,
    /// Canonical field to store column.
    pub mapping: BTreeMap<String, String>,
    pub capabilities: BTreeSet<FilterOp>,
    #[serde(default = "yes")]
    pub reachable: bool,
}

fn yes() -> bool {
    true
}

impl StoreDescriptor {
    pub fn missing_fields(&self) -> Vec<String> {
        REQUIRED_FIELDS.iter().filter(|f| !self.mapping.contains_key(**f)).map(|f| f.to_string()).collect()
    }

    pub fn to_canonical(&self, row: &Row) -> Row {
        self.mapping.iter().filter_map(|(c, s)| row.get(s).map(|v| (c.clone(), v.clone()))).collect()
    }

    pub fn to_store(&self, row: &Row) -> Row {
        self.mapping.iter().filter_map(|(c, s)| row.get(c).map(|v| (s.clone(), v.clone()))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("store offline")]
    Offline,
    #[error("store I/O failure: {0}")]
    Io(String),
}

/// The narrow contract every simulated agency store implements. Filters and
/// rows use the store's own column names.
pub trait StoreAdapter: Send + Sync {
    fn probe(&self) -> Result<(), AdapterError>;
    fn query(&self, filters: &[Filter]) -> Result<Vec<Row>, AdapterError>;
    /// Inserts or replaces the row whose `id_column` matches.
    fn write(&self, row: Row, id_column: &str) -> Result<(), AdapterError>;
}

/// Store backed by a comma-separated table file.
#[derive(Debug)]
pub struct CsvTableAdapter {
    path: Option<PathBuf>,
    headers: RwLock<Vec<String>>,
    rows: RwLock<Vec<Row>>,
    online: AtomicBool,
    latency: RwLock<Duration>,
    requests: AtomicUsize,
}

impl CsvTableAdapter {
    pub fn from_rows(headers: Vec<String>, rows: Vec<Row>) -> Self {
        CsvTableAdapter {
            path: None,
            headers: RwLock::new(headers),
            rows: RwLock::new(rows),
            online: AtomicBool::new(true),
            latency: RwLock::new(Duration::ZERO),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, AdapterError> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| AdapterError::Io(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = rdr.headers().map_err(|e| AdapterError::Io(e.to_string()))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| AdapterError::Io(e.to_string()))?;
            rows.push(headers.iter().cloned().zip(rec.iter().map(String::from)).filter(|(_, v)| !v.is_empty()).collect());
        }
        let mut a = Self::from_rows(headers, rows);
        a.path = Some(path.to_path_buf());
        Ok(a)
    }

    pub fn set_online(&self, online: bool) {
        self.online.store(online, Ordering::SeqCst);
    }

    pub fn set_latency(&self, d: Duration) {
        *self.latency.write() = d;
    }

    /// Number of probe, query and write calls received.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn rows(&self) -> Vec<Row> {
        self.rows.read().clone()
    }

    fn enter(&self) -> Result<(), AdapterError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let d = *self.latency.read();
        if !d.is_zero() {
            thread::sleep(d);
        }
        if self.online.load(Ordering::SeqCst) {
            Ok(())
        } else {
            Err(AdapterError::Offline)
        }
    }

    fn save(&self) -> Result<(), AdapterError> {
        let Some(path) = &self.path else { return Ok(()) };
        let io = |e: csv::Error| AdapterError::Io(e.to_string());
        let headers = self.headers.read().clone();
        let tmp = path.with_extension("tmp");
        {
            let mut w = csv::Writer::from_path(&tmp).map_err(io)?;
            w.write_record(&headers).map_err(io)?;
            for r in self.rows.read().iter() {
                w.write_record(headers.iter().map(|h| r.get(h).map(String::as_str).unwrap_or(""))).map_err(io)?;
            }
            w.flush().map_err(|e| AdapterError::Io(e.to_string()))?;
        }
        fs::rename(&tmp, path).map_err(|e| AdapterError::Io(e.to_string()))
    }
}

impl StoreAdapter for CsvTableAdapter {
    fn probe(&self) -> Result<(), AdapterError> {
        self.enter()
    }

    fn query(&self, filters: &[Filter]) -> Result<Vec<Row>, AdapterError> {
        self.enter()?;
        Ok(self.rows.read().iter().filter(|r| row_matches(r, filters)).cloned().collect())
    }

    fn write(&self, row: Row, id_column: &str) -> Result<(), AdapterError> {
        self.enter()?;
        {
            let mut headers = self.headers.write();
            for k in row.keys() {
                if !headers.contains(k) {
                    headers.push(k.clone());
                }
            }
        }
        {
            let mut rows = self.rows.write();
            match rows.iter_mut().find(|r| r.get(id_column).is_some() && r.get(id_column) == row.get(id_column)) {
                Some(existing) => *existing = row,
                None => rows.push(row),
            }
        }
        self.save()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Read,
    Share,
}

/// Grants of one role. `"*"` in `stores` or `fields` grants all of them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleGrant {
    pub stores: BTreeSet<String>,
    pub fields: BTreeSet<String>,
    pub operations: BTreeSet<Operation>,
}

impl RoleGrant {
    pub fn allows_store(&self, store: &str, op: Operation) -> bool {
        self.operations.contains(&op) && (self.stores.contains("*") || self.stores.contains(store))
    }

    pub fn allows_field(&self, field: &str) -> bool {
        self.fields.contains("*") || self.fields.contains(field)
    }
}

/// Role name to grants; unknown roles are granted nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessPolicy {
    #[serde(default)]
    pub roles: BTreeMap<String, RoleGrant>,
}

impl AccessPolicy {
    pub fn grant(&self, role: &str) -> RoleGrant {
        self.roles.get(role).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreStatus {
    Ok,
    Denied,
    Unreachable,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederatedRow {
    pub fields: Row,
    /// Contributing store ids, sorted.
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FederatedResult {
    pub rows: Vec<FederatedRow>,
    pub statuses: BTreeMap<String, StoreStatus>,
    pub dedup_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FederationError {
    #[error("store mapping lacks required canonical fields: {0:?}")]
    IncompleteMapping(Vec<String>),
    #[error("store `{0}` failed its health probe")]
    UnhealthyStore(String),
    #[error("unknown store `{0}`")]
    UnknownStore(String),
    #[error("no targeted store is accessible to this role")]
    NoAccessibleStores,
    #[error("role may not filter on field `{0}`")]
    FieldDenied(String),
    #[error("role lacks `share` on store `{0}`")]
    PolicyDenied(String),
    #[error("destination store `{0}` is unreachable")]
    DestinationUnreachable(String),
    #[error("record lacks an `id`")]
    MissingId,
}

/// Collapses rows that agree on `(id, date, country)`; the first store in id
/// order wins on conflicting values and every contributor is listed in
/// provenance. Output is ordered by `(date, id)`.
pub fn merge(per_store: &BTreeMap<String, Vec<Row>>) -> (Vec<FederatedRow>, usize) {
    let mut merged: BTreeMap<(String, String, String), FederatedRow> = BTreeMap::new();
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut dedup = 0;
    for (store, rows) in per_store {
        for row in rows {
            let f = |k: &str| row.get(k).cloned().unwrap_or_default();
            let key = (f("id"), f("date"), f("country"));
            match merged.get_mut(&key) {
                Some(existing) => {
                    dedup += 1;
                    for (k, v) in row {
                        existing.fields.entry(k.clone()).or_insert_with(|| v.clone());
                    }
                    if !existing.provenance.contains(store) {
                        existing.provenance.push(store.clone());
                        existing.provenance.sort();
                    }
                }
                None => {
                    order.push(key.clone());
                    merged.insert(key, FederatedRow { fields: row.clone(), provenance: vec![store.clone()] });
                }
            }
        }
    }
    let mut rows: Vec<FederatedRow> = order.into_iter().map(|k| merged.remove(&k).expect("key recorded")).collect();
    rows.sort_by(|a, b| {
        let k = |r: &FederatedRow| (r.fields.get("date").cloned(), r.fields.get("id").cloned());
        k(a).cmp(&k(b))
    });
    (rows, dedup)
}

struct Registered {
    descriptor: StoreDescriptor,
    adapter: Arc<dyn StoreAdapter>,
}

/// Registry, policy and scatter-gather execution.
pub struct Gateway {
    stores: RwLock<BTreeMap<String, Arc<Registered>>>,
    policy: RwLock<AccessPolicy>,
    timeout: Duration,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("stores", &self.store_ids()).field("timeout", &self.timeout).finish()
    }
}

fn with_timeout<T: Send + 'static>(timeout: Duration, job: impl FnOnce() -> T + Send + 'static) -> Option<T> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let _ = tx.send(job());
    });
    rx.recv_timeout(timeout).ok()
}

impl Gateway {
    pub fn new(policy: AccessPolicy, timeout: Duration) -> Self {
        Gateway { stores: RwLock::default(), policy: RwLock::new(policy), timeout }
    }

    pub fn set_policy(&self, policy: AccessPolicy) {
        *self.policy.write() = policy;
    }

    pub fn store_ids(&self) -> Vec<String> {
        self.stores.read().keys().cloned().collect()
    }

    pub fn descriptor(&self, id: &str) -> Option<StoreDescriptor> {
        self.stores.read().get(id).map(|r| r.descriptor.clone())
    }

    /// Adds or replaces a store after checking its mapping and health.
    pub fn register_store(
        &self,
        descriptor: StoreDescriptor,
        adapter: Arc<dyn StoreAdapter>,
    ) -> Result<String, FederationError> {
        let missing = descriptor.missing_fields();
        if !missing.is_empty() {
            return Err(FederationError::IncompleteMapping(missing));
        }
        let probe = adapter.clone();
        match with_timeout(self.timeout, move || probe.probe()) {
            Some(Ok(())) => {}
            _ => return Err(FederationError::UnhealthyStore(descriptor.id)),
        }
        let id = descriptor.id.clone();
        self.stores.write().insert(id.clone(), Arc::new(Registered { descriptor, adapter }));
        Ok(id)
    }

    pub fn execute(&self, query: &FederatedQuery, role: &str) -> Result<FederatedResult, FederationError> {
        let grant = self.policy.read().grant(role);
        let registry = self.stores.read().clone();
        let targets: Vec<String> = match &query.targets {
            Targets::All => registry.keys().cloned().collect(),
            Targets::Stores(ids) => {
                let set: BTreeSet<String> = ids.iter().cloned().collect();
                if let Some(unknown) = set.iter().find(|s| !registry.contains_key(*s)) {
                    return Err(FederationError::UnknownStore(unknown.clone()));
                }
                set.into_iter().collect()
            }
        };
        let mut statuses = BTreeMap::new();
        let mut allowed = Vec::new();
        for t in &targets {
            if grant.allows_store(t, Operation::Read) {
                allowed.push(t.clone());
            } else {
                statuses.insert(t.clone(), StoreStatus::Denied);
            }
        }
        if allowed.is_empty() {
            return Err(FederationError::NoAccessibleStores);
        }
        if let Some(f) = query.filters.iter().find(|f| !grant.allows_field(&f.field)) {
            return Err(FederationError::FieldDenied(f.field.clone()));
        }

        let deadline = Instant::now() + self.timeout;
        let mut pending = Vec::new();
        for id in allowed {
            let reg = registry[&id].clone();
            let d = &reg.descriptor;
            if !d.reachable {
                statuses.insert(id, StoreStatus::Unreachable);
                continue;
            }
            let translated: Option<Vec<Filter>> = query
                .filters
                .iter()
                .map(|f| {
                    let col = d.mapping.get(&f.field)?;
                    d.capabilities.contains(&f.predicate.op()).then(|| Filter { field: col.clone(), predicate: f.predicate.clone() })
                })
                .collect();
            let Some(filters) = translated else {
                statuses.insert(id, StoreStatus::Unsupported);
                continue;
            };
            let (tx, rx) = mpsc::channel();
            thread::spawn(move || {
                let _ = tx.send(reg.adapter.query(&filters).map(|rows| {
                    rows.iter().map(|r| reg.descriptor.to_canonical(r)).collect::<Vec<Row>>()
                }));
            });
            pending.push((id, rx));
        }
        let mut per_store = BTreeMap::new();
        for (id, rx) in pending {
            let left = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(left) {
                Ok(Ok(rows)) => {
                    statuses.insert(id.clone(), StoreStatus::Ok);
                    per_store.insert(id, rows);
                }
                _ => {
                    statuses.insert(id, StoreStatus::Unreachable);
                }
            }
        }
        let (mut rows, dedup_count) = merge(&per_store);
        for r in &mut rows {
            r.fields.retain(|k, _| grant.allows_field(k) && (query.projection.is_empty() || query.projection.contains(k)));
        }
        Ok(FederatedResult { rows, statuses, dedup_count })
    }

    /// Writes a canonical record into `to_store`; repeated shares of the same id replace it.
    pub fn share_record(&self, record: &Row, from_store: &str, to_store: &str, role: &str) -> Result<(), FederationError> {
        let grant = self.policy.read().grant(role);
        let registry = self.stores.read().clone();
        for s in [from_store, to_store] {
            if !registry.contains_key(s) {
                return Err(FederationError::UnknownStore(s.to_string()));
            }
            if !grant.allows_store(s, Operation::Share) {
                return Err(FederationError::PolicyDenied(s.to_string()));
            }
        }
        if record.get("id").is_none_or(|v| v.is_empty()) {
            return Err(FederationError::MissingId);
        }
        let dest = registry[to_store].clone();
        if !dest.descriptor.reachable {
            return Err(FederationError::DestinationUnreachable(to_store.to_string()));
        }
        let row = dest.descriptor.to_store(record);
        let id_col = dest.descriptor.mapping["id"].clone();
        match with_timeout(self.timeout, move || dest.adapter.write(row, &id_col)) {
            Some(Ok(())) => Ok(()),
            _ => Err(FederationError::DestinationUnreachable(to_store.to_string())),
        }
    }
}

/// On-disk store fixture: descriptor fields plus the table file, relative to the mapping file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreFile {
    pub id: String,
    pub name: String,
    pub table: PathBuf,
    pub mapping: BTreeMap<String, String>,
    pub capabilities: BTreeSet<FilterOp>,
    #[serde(default = "yes")]
    pub reachable: bool,
}

#[derive(Debug, Error)]
pub enum StoreFileError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

/// Loads a mapping file (TOML) and its table into a descriptor and adapter.
pub fn load_store(mapping_path: &Path) -> Result<(StoreDescriptor, Arc<CsvTableAdapter>), StoreFileError> {
    let text = fs::read_to_string(mapping_path)
        .map_err(|source| StoreFileError::Read { path: mapping_path.to_path_buf(), source })?;
    let f: StoreFile =
        toml::from_str(&text).map_err(|source| StoreFileError::Parse { path: mapping_path.to_path_buf(), source })?;
    let table = mapping_path.parent().unwrap_or(Path::new(".")).join(&f.table);
    let adapter = Arc::new(CsvTableAdapter::open(table)?);
    let d = StoreDescriptor { id: f.id, name: f.name, mapping: f.mapping, capabilities: f.capabilities, reachable: f.reachable };
    Ok((d, adapter))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pairs: &[(&str, &str)]) -> Row {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn descriptor(id: &str, prefix: &str) -> StoreDescriptor {
        StoreDescriptor {
            id: id.into(),
            name: id.to_uppercase(),
            mapping: REQUIRED_FIELDS.iter().map(|f| (f.to_string(), format!("{prefix}{f}"))).collect(),
            capabilities: [FilterOp::Eq, FilterOp::Range, FilterOp::Contains].into_iter().collect(),
            reachable: true,
        }
    }

    fn adapter(prefix: &str, rows: &[[&str; 4]]) -> Arc<CsvTableAdapter> {
        let headers: Vec<String> = REQUIRED_FIELDS.iter().map(|f| format!("{prefix}{f}")).collect();
        let rows = rows.iter().map(|r| headers.iter().cloned().zip(r.iter().map(|v| v.to_string())).collect()).collect();
        Arc::new(CsvTableAdapter::from_rows(headers, rows))
    }

    fn policy() -> AccessPolicy {
        let all = RoleGrant {
            stores: ["*".to_string()].into(),
            fields: ["*".to_string()].into(),
            operations: [Operation::Read, Operation::Share].into(),
        };
        let narrow = RoleGrant {
            stores: ["a".to_string()].into(),
            fields: ["id".to_string(), "date".to_string()].into(),
            operations: [Operation::Read].into(),
        };
        AccessPolicy { roles: [("admin".to_string(), all), ("analyst".to_string(), narrow)].into() }
    }

    fn gateway() -> (Gateway, Arc<CsvTableAdapter>, Arc<CsvTableAdapter>) {
        let g = Gateway::new(policy(), Duration::from_secs(2));
        let a = adapter("a_", &[["1", "2023-01-01", "FR", "Glock 17"], ["2", "2023-02-01", "DE", "AK-47"]]);
        let b = adapter("b_", &[["1", "2023-01-01", "FR", "Glock 17"], ["3", "2022-12-01", "IT", "CZ 75"]]);
        g.register_store(descriptor("a", "a_"), a.clone()).unwrap();
        g.register_store(descriptor("b", "b_"), b.clone()).unwrap();
        (g, a, b)
    }

    #[test]
    fn merges_and_dedups() {
        let (g, _, _) = gateway();
        let r = g.execute(&FederatedQuery::default(), "admin").unwrap();
        let ids: Vec<&str> = r.rows.iter().map(|r| r.fields["id"].as_str()).collect();
        assert_eq!(ids, ["3", "1", "2"]);
        assert_eq!(r.dedup_count, 1);
        assert_eq!(r.rows[1].provenance, ["a", "b"]);
    }

    #[test]
    fn denied_stores_are_never_contacted() {
        let (g, a, b) = gateway();
        let before = b.request_count();
        let r = g.execute(&FederatedQuery::default(), "analyst").unwrap();
        assert_eq!(b.request_count(), before);
        assert!(a.request_count() > 1);
        assert_eq!(r.statuses["b"], StoreStatus::Denied);
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|r| r.fields.keys().all(|k| k == "id" || k == "date")));
        assert_eq!(g.execute(&FederatedQuery::default(), "nobody"), Err(FederationError::NoAccessibleStores));
    }

    #[test]
    fn offline_store_is_isolated() {
        let (g, _, b) = gateway();
        b.set_online(false);
        let r = g.execute(&FederatedQuery::default(), "admin").unwrap();
        assert_eq!(r.statuses["b"], StoreStatus::Unreachable);
        assert_eq!(r.statuses["a"], StoreStatus::Ok);
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn filters_translate_to_store_columns() {
        let (g, _, _) = gateway();
        let q = FederatedQuery { filters: vec![Filter::range("date", Some("2023-01-01"), None)], ..Default::default() };
        let r = g.execute(&q, "admin").unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|r| r.fields["date"].as_str() >= "2023-01-01"));
    }

    #[test]
    fn registration_checks() {
        let g = Gateway::new(policy(), Duration::from_millis(100));
        let mut d = descriptor("x", "");
        d.mapping.remove("country");
        assert_eq!(
            g.register_store(d, adapter("", &[])),
            Err(FederationError::IncompleteMapping(vec!["country".into()]))
        );
        let slow = adapter("", &[]);
        slow.set_latency(Duration::from_millis(400));
        assert_eq!(g.register_store(descriptor("x", ""), slow), Err(FederationError::UnhealthyStore("x".into())));
    }

    #[test]
    fn share_is_policy_checked_and_idempotent() {
        let (g, _, b) = gateway();
        let rec = row(&[("id", "9"), ("date", "2024-01-01"), ("country", "NL"), ("firearm_model", "Uzi")]);
        assert_eq!(g.share_record(&rec, "a", "b", "analyst"), Err(FederationError::PolicyDenied("a".into())));
        assert_eq!(b.rows().len(), 2);
        g.share_record(&rec, "a", "b", "admin").unwrap();
        g.share_record(&rec, "a", "b", "admin").unwrap();
        assert_eq!(b.rows().len(), 3);
        let q = FederatedQuery { filters: vec![Filter::eq("id", "9")], targets: Targets::Stores(vec!["b".into()]), ..Default::default() };
        assert_eq!(g.execute(&q, "admin").unwrap().rows.len(), 1);
    }

    #[test]
    fn targets_serde() {
        let q: FederatedQuery = serde_json::from_str(r#"{"targets":"ALL"}"#).unwrap();
        assert_eq!(q.targets, Targets::All);
        let q: FederatedQuery =
            serde_json::from_str(r#"{"targets":["a"],"filters":[{"field":"id","op":"eq","value":"1"}]}"#).unwrap();
        assert_eq!(q.targets, Targets::Stores(vec!["a".into()]));
        assert_eq!(q.filters[0], Filter::eq("id", "1"));
    }
}
