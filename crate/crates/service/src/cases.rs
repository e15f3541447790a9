//! Analyst cases: pinned records, review workflow and report snapshots.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::reports::{Report, ReportStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Open,
    UnderReview,
    Reported,
}

impl CaseStatus {
    fn next(self) -> Option<CaseStatus> {
        match self {
            CaseStatus::Open => Some(CaseStatus::UnderReview),
            CaseStatus::UnderReview => Some(CaseStatus::Reported),
            CaseStatus::Reported => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PinnedRecord {
    /// `graph` for graph nodes, otherwise a federated store id.
    pub source: String,
    pub record_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub owner: String,
    pub objective: String,
    pub pinned: Vec<PinnedRecord>,
    pub status: CaseStatus,
    pub created: DateTime<Utc>,
    pub reports: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaseError {
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("only the owner may do this")]
    NotOwner,
    #[error("cannot move a case from {from:?} to {to:?}")]
    InvalidTransition { from: CaseStatus, to: CaseStatus },
    #[error("record `{1}` not found in `{0}`")]
    UnknownRecord(String, String),
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Inner {
    next: u64,
    cases: BTreeMap<String, Case>,
}

#[derive(Debug, Default)]
pub struct CaseStore {
    inner: RwLock<Inner>,
}

impl CaseStore {
    pub fn create(&self, owner: &str, objective: &str, now: DateTime<Utc>) -> Case {
        let mut g = self.inner.write();
        g.next += 1;
        let c = Case {
            id: format!("case-{:06}", g.next),
            owner: owner.into(),
            objective: objective.into(),
            pinned: Vec::new(),
            status: CaseStatus::Open,
            created: now,
            reports: Vec::new(),
        };
        g.cases.insert(c.id.clone(), c.clone());
        c
    }

    pub fn list(&self, user: &str) -> Vec<Case> {
        self.inner.read().cases.values().filter(|c| c.owner == user).cloned().collect()
    }

    pub fn get(&self, user: &str, id: &str) -> Result<Case, CaseError> {
        match self.inner.read().cases.get(id) {
            Some(c) if c.owner == user => Ok(c.clone()),
            Some(_) => Err(CaseError::NotOwner),
            None => Err(CaseError::UnknownCase(id.into())),
        }
    }

    fn edit<T>(&self, user: &str, id: &str, f: impl FnOnce(&mut Case) -> Result<T, CaseError>) -> Result<T, CaseError> {
        let mut g = self.inner.write();
        let c = g.cases.get_mut(id).ok_or_else(|| CaseError::UnknownCase(id.into()))?;
        if c.owner != user {
            return Err(CaseError::NotOwner);
        }
        f(c)
    }

    fn ensure_editable(c: &Case) -> Result<(), CaseError> {
        if c.status == CaseStatus::Reported {
            return Err(CaseError::InvalidTransition { from: c.status, to: c.status });
        }
        Ok(())
    }

    /// `exists` is consulted before anything changes; pinning twice is a no-op.
    pub fn pin(&self, user: &str, id: &str, rec: PinnedRecord, exists: impl FnOnce(&PinnedRecord) -> bool) -> Result<Case, CaseError> {
        self.edit(user, id, |c| {
            Self::ensure_editable(c)?;
            if !exists(&rec) {
                return Err(CaseError::UnknownRecord(rec.source, rec.record_id));
            }
            if !c.pinned.contains(&rec) {
                c.pinned.push(rec);
            }
            Ok(c.clone())
        })
    }

    pub fn unpin(&self, user: &str, id: &str, rec: &PinnedRecord) -> Result<Case, CaseError> {
        self.edit(user, id, |c| {
            Self::ensure_editable(c)?;
            c.pinned.retain(|p| p != rec);
            Ok(c.clone())
        })
    }

    pub fn transition(&self, user: &str, id: &str, to: CaseStatus) -> Result<Case, CaseError> {
        self.edit(user, id, |c| {
            if c.status.next() != Some(to) {
                return Err(CaseError::InvalidTransition { from: c.status, to });
            }
            c.status = to;
            Ok(c.clone())
        })
    }

    /// Snapshots the case and its pinned records into a new report and marks
    /// the case reported, stepping through review when still open.
    pub fn generate_report(
        &self,
        user: &str,
        id: &str,
        title: Option<&str>,
        reports: &ReportStore,
        resolve: impl Fn(&PinnedRecord) -> Option<Value>,
        now: DateTime<Utc>,
    ) -> Result<Report, CaseError> {
        self.edit(user, id, |c| {
            Self::ensure_editable(c)?;
            let records: Vec<Value> = c
                .pinned
                .iter()
                .map(|p| {
                    json!({
                        "source": p.source,
                        "record_id": p.record_id,
                        "record": resolve(p).unwrap_or(Value::Null),
                    })
                })
                .collect();
            let payload = json!({
                "case_id": c.id,
                "objective": c.objective,
                "status_at_snapshot": c.status,
                "records": records,
            });
            let title = title.map(str::to_string).unwrap_or_else(|| format!("Case {}: {}", c.id, c.objective));
            let report = reports.create(user, "case_workbench", &title, payload, now);
            c.status = CaseStatus::Reported;
            c.reports.push(report.id.clone());
            Ok(report)
        })
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&*self.inner.read())
    }

    pub fn from_json(text: &str) -> serde_json::Result<CaseStore> {
        Ok(CaseStore { inner: RwLock::new(serde_json::from_str(text)?) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str) -> PinnedRecord {
        PinnedRecord { source: "graph".into(), record_id: id.into() }
    }

    #[test]
    fn workflow_and_snapshot() {
        let cases = CaseStore::default();
        let reports = ReportStore::default();
        let now = Utc::now();
        let c = cases.create("ana", "Glock route", now);
        for id in ["a", "b", "c"] {
            cases.pin("ana", &c.id, rec(id), |_| true).unwrap();
        }
        assert!(matches!(cases.pin("ana", &c.id, rec("zz"), |_| false), Err(CaseError::UnknownRecord(..))));
        assert_eq!(cases.pin("bo", &c.id, rec("d"), |_| true), Err(CaseError::NotOwner));
        let r = cases.generate_report("ana", &c.id, None, &reports, |p| Some(json!({"id": p.record_id})), now).unwrap();
        assert_eq!(r.payload["records"].as_array().unwrap().len(), 3);
        assert_eq!(
            cases.pin("ana", &c.id, rec("d"), |_| true),
            Err(CaseError::InvalidTransition { from: CaseStatus::Reported, to: CaseStatus::Reported })
        );
        assert_eq!(reports.get("ana", &r.id).unwrap().payload, r.payload);
    }

    #[test]
    fn transitions_are_forward_only() {
        let cases = CaseStore::default();
        let c = cases.create("ana", "x", Utc::now());
        assert!(cases.transition("ana", &c.id, CaseStatus::Reported).is_err());
        cases.transition("ana", &c.id, CaseStatus::UnderReview).unwrap();
        assert!(cases.transition("ana", &c.id, CaseStatus::Open).is_err());
        cases.transition("ana", &c.id, CaseStatus::Reported).unwrap();
        assert!(cases.transition("ana", &c.id, CaseStatus::Reported).is_err());
        assert_eq!(cases.get("ana", "case-9"), Err(CaseError::UnknownCase("case-9".into())));
    }
}
