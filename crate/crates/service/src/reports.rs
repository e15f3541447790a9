//! Cross-service report store with owner-only delete and share.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub service: String,
    pub owner: String,
    pub created: DateTime<Utc>,
    pub shared_with: BTreeSet<String>,
    pub title: String,
    pub payload: Value,
}

impl Report {
    pub fn visible_to(&self, user: &str) -> bool {
        self.owner == user || self.shared_with.contains(user)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("only the owner may do this")]
    NotOwner,
    #[error("unknown report `{0}`")]
    UnknownReport(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportQuery {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub service: Option<String>,
    /// Case-insensitive substring of the title.
    pub title: Option<String>,
}

impl ReportQuery {
    pub fn matches(&self, r: &Report) -> bool {
        self.from.is_none_or(|f| r.created >= f)
            && self.to.is_none_or(|t| r.created <= t)
            && self.service.as_ref().is_none_or(|s| &r.service == s)
            && self.title.as_ref().is_none_or(|t| r.title.to_lowercase().contains(&t.to_lowercase()))
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Inner {
    next: u64,
    reports: BTreeMap<String, Report>,
}

#[derive(Debug, Default)]
pub struct ReportStore {
    inner: RwLock<Inner>,
}

impl ReportStore {
    pub fn create(&self, owner: &str, service: &str, title: &str, payload: Value, now: DateTime<Utc>) -> Report {
        let mut g = self.inner.write();
        g.next += 1;
        let r = Report {
            id: format!("rpt-{:06}", g.next),
            service: service.into(),
            owner: owner.into(),
            created: now,
            shared_with: BTreeSet::new(),
            title: title.into(),
            payload,
        };
        g.reports.insert(r.id.clone(), r.clone());
        r
    }

    pub fn len(&self) -> usize {
        self.inner.read().reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reports the user owns or was shared, oldest first.
    pub fn search(&self, user: &str, q: &ReportQuery) -> Vec<Report> {
        let mut out: Vec<Report> =
            self.inner.read().reports.values().filter(|r| r.visible_to(user) && q.matches(r)).cloned().collect();
        out.sort_by(|a, b| a.created.cmp(&b.created).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn get(&self, user: &str, id: &str) -> Result<Report, ReportError> {
        match self.inner.read().reports.get(id) {
            Some(r) if r.visible_to(user) => Ok(r.clone()),
            _ => Err(ReportError::UnknownReport(id.into())),
        }
    }

    pub fn delete(&self, user: &str, id: &str) -> Result<Report, ReportError> {
        let mut g = self.inner.write();
        match g.reports.get(id) {
            None => Err(ReportError::UnknownReport(id.into())),
            Some(r) if !r.visible_to(user) => Err(ReportError::UnknownReport(id.into())),
            Some(r) if r.owner != user => Err(ReportError::NotOwner),
            Some(_) => Ok(g.reports.remove(id).expect("present")),
        }
    }

    pub fn share(&self, user: &str, id: &str, with: &[String]) -> Result<Report, ReportError> {
        let mut g = self.inner.write();
        let r = match g.reports.get_mut(id) {
            Some(r) if r.visible_to(user) => r,
            _ => return Err(ReportError::UnknownReport(id.into())),
        };
        if r.owner != user {
            return Err(ReportError::NotOwner);
        }
        r.shared_with.extend(with.iter().filter(|u| *u != user).cloned());
        Ok(r.clone())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&*self.inner.read())
    }

    pub fn from_json(text: &str) -> serde_json::Result<ReportStore> {
        Ok(ReportStore { inner: RwLock::new(serde_json::from_str(text)?) })
    }
}
