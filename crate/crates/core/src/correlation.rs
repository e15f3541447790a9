//! Criterion-weighted pairwise correlation scoring and DBSCAN clustering.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AbstractedEntity, Continent, EncodingError, EncodingSchema, EntityRecord, FeatureVector};

/// Minimum normalized edit similarity for a fuzzy criterion to hold.
pub const FUZZY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionAttribute {
    Name,
    Username,
    Quarter,
    Continent,
    FirearmClass,
}

impl fmt::Display for CriterionAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CriterionAttribute::Name => "name",
            CriterionAttribute::Username => "username",
            CriterionAttribute::Quarter => "quarter",
            CriterionAttribute::Continent => "continent",
            CriterionAttribute::FirearmClass => "firearm_class",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Exact,
    Fuzzy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCriterion")]
pub struct CorrelationCriterion {
    pub attribute: CriterionAttribute,
    pub comparator: Comparator,
    pub weight: f64,
}

#[derive(Deserialize)]
struct RawCriterion {
    attribute: CriterionAttribute,
    #[serde(default = "exact")]
    comparator: Comparator,
    weight: f64,
}

fn exact() -> Comparator {
    Comparator::Exact
}

impl TryFrom<RawCriterion> for CorrelationCriterion {
    type Error = CorrelationError;

    fn try_from(r: RawCriterion) -> Result<Self, CorrelationError> {
        CorrelationCriterion::new(r.attribute, r.comparator, r.weight)
    }
}

impl CorrelationCriterion {
    pub fn new(attribute: CriterionAttribute, comparator: Comparator, weight: f64) -> Result<Self, CorrelationError> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(CorrelationError::BadWeight(weight));
        }
        if comparator == Comparator::Fuzzy
            && !matches!(attribute, CriterionAttribute::Name | CriterionAttribute::Username)
        {
            return Err(CorrelationError::FuzzyNotAllowed(attribute));
        }
        Ok(CorrelationCriterion { attribute, comparator, weight })
    }

    pub fn exact(attribute: CriterionAttribute, weight: f64) -> Self {
        Self::new(attribute, Comparator::Exact, weight).expect("valid exact criterion")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrelationError {
    #[error("criteria list is empty")]
    EmptyCriteria,
    #[error("criterion weight must be positive and finite, got {0}")]
    BadWeight(f64),
    #[error("fuzzy comparison is only defined for name and username, not {0}")]
    FuzzyNotAllowed(CriterionAttribute),
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("feature vectors use different schemas or lengths")]
    MixedSchemas,
    #[error("invalid DBSCAN parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

/// A record together with its abstraction; the unit that gets correlated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationInput {
    pub record: EntityRecord,
    pub abstracted: AbstractedEntity,
}

impl CorrelationInput {
    pub fn id(&self) -> &str {
        &self.record.id
    }

    /// Value compared by a criterion; `None` means the attribute is absent and never matches.
    fn value(&self, attr: CriterionAttribute) -> Option<String> {
        match attr {
            CriterionAttribute::Name => self.record.name.clone(),
            CriterionAttribute::Username => self.record.username.clone(),
            CriterionAttribute::Quarter => self.abstracted.quarter.clone(),
            CriterionAttribute::Continent => match self.abstracted.continent {
                Continent::Unknown => None,
                c => Some(c.to_string()),
            },
            CriterionAttribute::FirearmClass => Some(self.abstracted.firearm_class.clone()),
        }
    }
}

fn satisfied(c: &CorrelationCriterion, a: &CorrelationInput, b: &CorrelationInput) -> bool {
    let (Some(va), Some(vb)) = (a.value(c.attribute), b.value(c.attribute)) else {
        return false;
    };
    let (va, vb) = (va.to_lowercase(), vb.to_lowercase());
    match c.comparator {
        Comparator::Exact => va == vb,
        Comparator::Fuzzy => strsim::normalized_levenshtein(&va, &vb) >= FUZZY_THRESHOLD,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub score: f64,
    pub matched: Vec<CriterionAttribute>,
}

/// Sum of satisfied criterion weights over the sum of all weights.
pub fn score_pair(
    a: &CorrelationInput,
    b: &CorrelationInput,
    criteria: &[CorrelationCriterion],
) -> Result<PairScore, CorrelationError> {
    if criteria.is_empty() {
        return Err(CorrelationError::EmptyCriteria);
    }
    let total: f64 = criteria.iter().map(|c| c.weight).sum();
    let mut hit = 0.0;
    let mut matched = Vec::new();
    for c in criteria {
        if satisfied(c, a, b) {
            hit += c.weight;
            if !matched.contains(&c.attribute) {
                matched.push(c.attribute);
            }
        }
    }
    Ok(PairScore { score: (hit / total).clamp(0.0, 1.0), matched })
}

/// A scored link between two entities; `a < b` lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEdge {
    pub a: String,
    pub b: String,
    pub score: f64,
    pub matched: Vec<CriterionAttribute>,
}

/// Every unordered pair of distinct entities scoring at least `threshold`,
/// sorted by `(a, b)`.
pub fn build_correlations(
    entities: &[CorrelationInput],
    criteria: &[CorrelationCriterion],
    threshold: f64,
) -> Result<Vec<CorrelationEdge>, CorrelationError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CorrelationError::InvalidThreshold(threshold));
    }
    if criteria.is_empty() {
        return Err(CorrelationError::EmptyCriteria);
    }
    let mut edges: Vec<CorrelationEdge> = (0..entities.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            (i + 1..entities.len()).filter_map(move |j| {
                let (x, y) = (&entities[i], &entities[j]);
                if x.id() == y.id() {
                    return None;
                }
                let s = score_pair(x, y, criteria).expect("criteria checked non-empty");
                if s.score < threshold {
                    return None;
                }
                let (a, b) = if x.id() < y.id() { (x.id(), y.id()) } else { (y.id(), x.id()) };
                Some(CorrelationEdge { a: a.to_string(), b: b.to_string(), score: s.score, matched: s.matched })
            })
        })
        .collect();
    edges.sort_by(|p, q| (&p.a, &p.b).cmp(&(&q.a, &q.b)));
    edges.dedup_by(|p, q| p.a == q.a && p.b == q.b);
    Ok(edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    /// Number of coordinates that differ.
    Hamming,
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Hamming => a.iter().zip(b).filter(|(x, y)| x != y).count() as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
    pub metric: Metric,
}

impl DbscanParams {
    pub fn validate(&self) -> Result<(), CorrelationError> {
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(CorrelationError::InvalidParams(format!("eps must be finite and >= 0, got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(CorrelationError::InvalidParams("min_pts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClusterLabel {
    Cluster(usize),
    Noise,
}

impl ClusterLabel {
    pub fn cluster(&self) -> Option<usize> {
        match self {
            ClusterLabel::Cluster(c) => Some(*c),
            ClusterLabel::Noise => None,
        }
    }
}

impl Serialize for ClusterLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ClusterLabel::Cluster(c) => s.serialize_u64(*c as u64),
            ClusterLabel::Noise => s.serialize_str("NOISE"),
        }
    }
}

impl<'de> Deserialize<'de> for ClusterLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "NOISE" => Ok(ClusterLabel::Noise),
            serde_json::Value::Number(n) => n
                .as_u64()
                .map(|c| ClusterLabel::Cluster(c as usize))
                .ok_or_else(|| serde::de::Error::custom("cluster label must be a non-negative integer")),
            other => Err(serde::de::Error::custom(format!("bad cluster label {other}"))),
        }
    }
}

/// Density-based clustering over raw coordinate rows.
///
/// A point is core when at least `min_pts` points (itself included) lie within
/// `eps` (inclusive). Clusters are numbered in discovery order; a border point
/// reachable from several clusters stays with the first one that claims it.
pub fn dbscan_rows(rows: &[Vec<f64>], p: &DbscanParams) -> Result<Vec<ClusterLabel>, CorrelationError> {
    p.validate()?;
    let n = rows.len();
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(CorrelationError::MixedSchemas);
        }
    }
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| p.metric.distance(&rows[i], &rows[j]) <= p.eps).collect())
        .collect();

    let mut labels: Vec<Option<ClusterLabel>> = vec![None; n];
    let mut next_cluster = 0;
    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        if neighbors[i].len() < p.min_pts {
            labels[i] = Some(ClusterLabel::Noise);
            continue;
        }
        let c = ClusterLabel::Cluster(next_cluster);
        next_cluster += 1;
        labels[i] = Some(c);
        let mut frontier: Vec<usize> = neighbors[i].clone();
        let mut k = 0;
        while k < frontier.len() {
            let q = frontier[k];
            k += 1;
            match labels[q] {
                Some(ClusterLabel::Noise) => labels[q] = Some(c),
                None => {
                    labels[q] = Some(c);
                    if neighbors[q].len() >= p.min_pts {
                        frontier.extend(neighbors[q].iter().copied());
                    }
                }
                Some(ClusterLabel::Cluster(_)) => {}
            }
        }
    }
    Ok(labels.into_iter().map(|l| l.expect("every point visited")).collect())
}

pub fn dbscan(points: &[FeatureVector], p: &DbscanParams) -> Result<Vec<ClusterLabel>, CorrelationError> {
    if let Some(first) = points.first() {
        if points.iter().any(|v| v.schema_id != first.schema_id) {
            return Err(CorrelationError::MixedSchemas);
        }
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|v| v.values.clone()).collect();
    dbscan_rows(&rows, p)
}

/// Entity id to cluster label, in input order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub entries: Vec<(String, ClusterLabel)>,
}

impl ClusterAssignment {
    pub fn new(ids: impl IntoIterator<Item = String>, labels: Vec<ClusterLabel>) -> Self {
        ClusterAssignment { entries: ids.into_iter().zip(labels).collect() }
    }

    pub fn cluster_count(&self) -> usize {
        self.entries.iter().filter_map(|(_, l)| l.cluster()).max().map_or(0, |m| m + 1)
    }

    pub fn label_of(&self, id: &str) -> Option<ClusterLabel> {
        self.entries.iter().find(|(i, _)| i == id).map(|(_, l)| *l)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn noise(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(|(_, l)| *l == ClusterLabel::Noise).map(|(i, _)| i.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub label: usize,
    pub size: usize,
    pub dominant_continent: Continent,
    pub dominant_firearm_class: String,
    /// Quarter label (or `absent`) to member count.
    pub quarter_histogram: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityClusters {
    pub assignment: ClusterAssignment,
    pub summaries: Vec<ClusterSummary>,
}

fn dominant<K: Ord + Clone>(counts: &BTreeMap<K, usize>) -> K {
    // Ties go to the smallest key.
    let best = counts.values().copied().max().unwrap_or(0);
    counts.iter().find(|(_, &c)| c == best).map(|(k, _)| k.clone()).expect("non-empty cluster")
}

/// DBSCAN over the encoded entities, with a summary per cluster.
pub fn cluster_entities(
    entities: &[AbstractedEntity],
    p: &DbscanParams,
    schema: &EncodingSchema,
) -> Result<EntityClusters, CorrelationError> {
    let vectors = entities.iter().map(|e| schema.encode(e)).collect::<Result<Vec<_>, _>>()?;
    let labels = dbscan(&vectors, p)?;
    let assignment = ClusterAssignment::new(entities.iter().map(|e| e.entity_id.clone()), labels);

    let mut summaries = Vec::new();
    for label in 0..assignment.cluster_count() {
        let members: Vec<&AbstractedEntity> = entities
            .iter()
            .zip(&assignment.entries)
            .filter(|(_, (_, l))| *l == ClusterLabel::Cluster(label))
            .map(|(e, _)| e)
            .collect();
        let mut continents = BTreeMap::new();
        let mut classes = BTreeMap::new();
        let mut quarters = BTreeMap::new();
        for m in &members {
            *continents.entry(m.continent).or_insert(0) += 1;
            *classes.entry(m.firearm_class.clone()).or_insert(0) += 1;
            *quarters.entry(m.quarter.clone().unwrap_or_else(|| "absent".into())).or_insert(0) += 1;
        }
        summaries.push(ClusterSummary {
            label,
            size: members.len(),
            dominant_continent: dominant(&continents),
            dominant_firearm_class: dominant(&classes),
            quarter_histogram: quarters,
        });
    }
    Ok(EntityClusters { assignment, summaries })
}
