//! Canonical entity types, record validation, attribute abstraction and
//! feature encoding.
//!
//! Everything downstream (graph store, correlation, clustering, service
//! endpoints) consumes the types defined here. All functions are pure.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder class for firearms outside the configured top-10 list.
pub const OTHER_CLASS: &str = "OTHER";

/// Whether an entity is an individual or an occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Agent,
    Event,
}

impl FromStr for EntityKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "agent" => Ok(EntityKind::Agent),
            "event" => Ok(EntityKind::Event),
            _ => Err(()),
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Agent => "agent",
            EntityKind::Event => "event",
        })
    }
}

/// Origin of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    DarkwebListing,
    Forum,
    News,
    Chain,
    DetectorReport,
    FederatedStore,
}

impl Source {
    pub const ALL: [Source; 6] = [
        Source::DarkwebListing,
        Source::Forum,
        Source::News,
        Source::Chain,
        Source::DetectorReport,
        Source::FederatedStore,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::DarkwebListing => "darkweb_listing",
            Source::Forum => "forum",
            Source::News => "news",
            Source::Chain => "chain",
            Source::DetectorReport => "detector_report",
            Source::FederatedStore => "federated_store",
        }
    }
}

impl FromStr for Source {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Source::ALL.iter().copied().find(|v| v.as_str() == s).ok_or(())
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An agent or event with firearm-related attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub kind: EntityKind,
    pub name: Option<String>,
    pub username: Option<String>,
    pub date: Option<NaiveDate>,
    pub country: Option<String>,
    pub firearm_model: Option<String>,
    pub firearm_type: Option<String>,
    /// `None` when the raw record did not say; ingestion fills it from the topic.
    pub source: Option<Source>,
    pub attributes: BTreeMap<String, String>,
}

/// Keys with a dedicated field in [`EntityRecord`]; everything else lands in `attributes`.
pub const RECORD_KEYS: [&str; 9] = [
    "id",
    "kind",
    "name",
    "username",
    "date",
    "country",
    "firearm_model",
    "firearm_type",
    "source",
];

impl EntityRecord {
    /// Flattens the record back into the raw map form accepted by [`validate_record`].
    pub fn to_raw(&self) -> BTreeMap<String, String> {
        let mut raw = self.attributes.clone();
        raw.insert("id".into(), self.id.clone());
        raw.insert("kind".into(), self.kind.to_string());
        let optional = [
            ("name", self.name.clone()),
            ("username", self.username.clone()),
            ("date", self.date.map(|d| d.format("%Y-%m-%d").to_string())),
            ("country", self.country.clone()),
            ("firearm_model", self.firearm_model.clone()),
            ("firearm_type", self.firearm_type.clone()),
            ("source", self.source.map(|s| s.to_string())),
        ];
        for (k, v) in optional {
            if let Some(v) = v {
                raw.insert(k.into(), v);
            }
        }
        raw
    }
}

/// A single problem found while validating a raw record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum FieldViolation {
    MissingField { field: String },
    BadDate { value: String },
    BadCountry { value: String },
    BadKind { value: String },
    BadSource { value: String },
}

impl fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldViolation::MissingField { field } => write!(f, "missing field `{field}`"),
            FieldViolation::BadDate { value } => write!(f, "bad date `{value}` (expected YYYY-MM-DD)"),
            FieldViolation::BadCountry { value } => {
                write!(f, "bad country `{value}` (expected ISO-3166 alpha-2)")
            }
            FieldViolation::BadKind { value } => write!(f, "bad kind `{value}`"),
            FieldViolation::BadSource { value } => write!(f, "bad source `{value}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("empty record")]
    Empty,
    #[error("invalid record: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldViolation>),
}

impl RecordError {
    pub fn violations(&self) -> &[FieldViolation] {
        match self {
            RecordError::Empty => &[],
            RecordError::Invalid(v) => v,
        }
    }
}

fn non_empty(raw: &BTreeMap<String, String>, key: &str) -> Option<String> {
    raw.get(key)
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(str::to_string)
}

/// Parses a strict ISO-8601 calendar date (`YYYY-MM-DD`).
pub fn parse_iso_date(s: &str) -> Option<NaiveDate> {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return None;
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

fn is_alpha2(s: &str) -> bool {
    s.len() == 2 && s.bytes().all(|b| b.is_ascii_uppercase())
}

/// Validates a raw string map into an [`EntityRecord`], reporting every
/// violated field at once.
pub fn validate_record(raw: &BTreeMap<String, String>) -> Result<EntityRecord, RecordError> {
    if raw.is_empty() {
        return Err(RecordError::Empty);
    }
    let mut violations = Vec::new();

    let id = non_empty(raw, "id");
    if id.is_none() {
        violations.push(FieldViolation::MissingField { field: "id".into() });
    }

    let kind = match non_empty(raw, "kind") {
        None => {
            violations.push(FieldViolation::MissingField { field: "kind".into() });
            None
        }
        Some(k) => match k.parse::<EntityKind>() {
            Ok(kind) => Some(kind),
            Err(()) => {
                violations.push(FieldViolation::BadKind { value: k });
                None
            }
        },
    };

    let name = non_empty(raw, "name");
    let username = non_empty(raw, "username");

    let date = match non_empty(raw, "date") {
        None => None,
        Some(d) => match parse_iso_date(&d) {
            Some(date) => Some(date),
            None => {
                violations.push(FieldViolation::BadDate { value: d });
                None
            }
        },
    };
    let date_present = non_empty(raw, "date").is_some();

    match kind {
        Some(EntityKind::Agent) if name.is_none() && username.is_none() => {
            violations.push(FieldViolation::MissingField { field: "name|username".into() });
        }
        Some(EntityKind::Event) if !date_present => {
            violations.push(FieldViolation::MissingField { field: "date".into() });
        }
        _ => {}
    }

    let country = match non_empty(raw, "country") {
        None => None,
        Some(c) if is_alpha2(&c) => Some(c),
        Some(c) => {
            violations.push(FieldViolation::BadCountry { value: c });
            None
        }
    };

    let source = match non_empty(raw, "source") {
        None => None,
        Some(s) => match s.parse::<Source>() {
            Ok(src) => Some(src),
            Err(()) => {
                violations.push(FieldViolation::BadSource { value: s });
                None
            }
        },
    };

    if !violations.is_empty() {
        return Err(RecordError::Invalid(violations));
    }

    let attributes = raw
        .iter()
        .filter(|(k, _)| !RECORD_KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    Ok(EntityRecord {
        id: id.expect("checked above"),
        kind: kind.expect("checked above"),
        name,
        username,
        date,
        country,
        firearm_model: non_empty(raw, "firearm_model"),
        firearm_type: non_empty(raw, "firearm_type"),
        source,
        attributes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Continent {
    Africa,
    Asia,
    Europe,
    NorthAmerica,
    SouthAmerica,
    Oceania,
    Unknown,
}

impl Continent {
    pub const ALL: [Continent; 7] = [
        Continent::Africa,
        Continent::Asia,
        Continent::Europe,
        Continent::NorthAmerica,
        Continent::SouthAmerica,
        Continent::Oceania,
        Continent::Unknown,
    ];
}

impl fmt::Display for Continent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

const AFRICA: &str = "DZ AO BJ BW BF BI CV CM CF TD KM CG CD CI DJ EG GQ ER SZ ET GA GM GH GN GW \
KE LS LR LY MG MW ML MR MU YT MA MZ NA NE NG RE RW SH ST SN SC SL SO ZA SS SD TZ TG TN UG EH ZM ZW";
const ASIA: &str = "AF AM AZ BH BD BT BN KH CN CY GE HK IN ID IR IQ IL JP JO KZ KW KG LA LB MO MY \
MV MN MM NP KP OM PK PS PH QA SA SG KR LK SY TW TJ TH TL TR TM AE UZ VN YE";
const EUROPE: &str = "AX AL AD AT BY BE BA BG HR CZ DK EE FO FI FR DE GI GR GG HU IS IE IM IT JE \
XK LV LI LT LU MT MD MC ME NL MK NO PL PT RO RU SM RS SK SI ES SJ SE CH UA GB VA";
const NORTH_AMERICA: &str = "AI AG AW BS BB BZ BM BQ VG CA KY CR CU CW DM DO SV GL GD GP GT HT HN \
JM MQ MX MS NI PA PR BL KN LC MF PM VC SX TT TC US VI";
const SOUTH_AMERICA: &str = "AR BO BR CL CO EC FK GF GY PY PE SR UY VE";
const OCEANIA: &str = "AS AU CK FJ PF GU KI MH FM NR NC NZ NU NF MP PW PG PN WS SB TK TO TV UM VU WF";

/// The bundled ISO-3166 alpha-2 to continent table.
pub fn default_continents() -> HashMap<String, Continent> {
    let mut map = HashMap::new();
    for (codes, continent) in [
        (AFRICA, Continent::Africa),
        (ASIA, Continent::Asia),
        (EUROPE, Continent::Europe),
        (NORTH_AMERICA, Continent::NorthAmerica),
        (SOUTH_AMERICA, Continent::SouthAmerica),
        (OCEANIA, Continent::Oceania),
    ] {
        for code in codes.split_whitespace() {
            map.insert(code.to_string(), continent);
        }
    }
    map
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("top-10 list must contain exactly 10 classes, got {0}")]
    WrongClassCount(usize),
    #[error("duplicate class `{0}` in top-10 list")]
    DuplicateClass(String),
    #[error("model `{model}` maps to `{class}`, which is neither a top-10 class nor OTHER")]
    UnknownTarget { model: String, class: String },
}

/// Firearm model to class mapping over a fixed list of ten classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyFile", into = "TaxonomyFile")]
pub struct FirearmTaxonomy {
    model_to_class: BTreeMap<String, String>,
    top10: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaxonomyFile {
    top10: Vec<String>,
    #[serde(default)]
    model_to_class: BTreeMap<String, String>,
}

impl TryFrom<TaxonomyFile> for FirearmTaxonomy {
    type Error = TaxonomyError;

    fn try_from(f: TaxonomyFile) -> Result<Self, TaxonomyError> {
        FirearmTaxonomy::new(f.top10, f.model_to_class)
    }
}

impl From<FirearmTaxonomy> for TaxonomyFile {
    fn from(t: FirearmTaxonomy) -> Self {
        TaxonomyFile { top10: t.top10, model_to_class: t.model_to_class }
    }
}

impl FirearmTaxonomy {
    pub fn new(
        top10: Vec<String>,
        model_to_class: BTreeMap<String, String>,
    ) -> Result<Self, TaxonomyError> {
        if top10.len() != 10 {
            return Err(TaxonomyError::WrongClassCount(top10.len()));
        }
        for (i, c) in top10.iter().enumerate() {
            if top10[..i].contains(c) {
                return Err(TaxonomyError::DuplicateClass(c.clone()));
            }
        }
        for (model, class) in &model_to_class {
            if class != OTHER_CLASS && !top10.contains(class) {
                return Err(TaxonomyError::UnknownTarget { model: model.clone(), class: class.clone() });
            }
        }
        Ok(FirearmTaxonomy { model_to_class, top10 })
    }

    pub fn top10(&self) -> &[String] {
        &self.top10
    }

    /// The class vocabulary used for encoding: the ten classes followed by OTHER.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v = self.top10.clone();
        v.push(OTHER_CLASS.to_string());
        v
    }

    /// Exact-match lookup. The model name is tried first; a firearm type that is
    /// itself mapped, or that names a top-10 class, is the fallback.
    pub fn classify(&self, model: Option<&str>, firearm_type: Option<&str>) -> String {
        if let Some(class) = model.and_then(|m| self.model_to_class.get(m)) {
            return class.clone();
        }
        if let Some(t) = firearm_type {
            if let Some(class) = self.model_to_class.get(t) {
                return class.clone();
            }
            if let Some(class) = self.top10.iter().find(|c| c.eq_ignore_ascii_case(t)) {
                return class.clone();
            }
        }
        OTHER_CLASS.to_string()
    }
}

/// The coarse view of an entity used by correlation and clustering.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AbstractedEntity {
    pub entity_id: String,
    /// `YYYY-Qn`; `None` when the record carries no date.
    pub quarter: Option<String>,
    pub year: Option<i32>,
    pub continent: Continent,
    pub firearm_class: String,
}

impl AbstractedEntity {
    /// Quarter of year (1..=4), parsed back out of the quarter label.
    pub fn quarter_of_year(&self) -> Option<u32> {
        self.quarter.as_deref().and_then(|q| q.rsplit_once("-Q")).and_then(|(_, n)| n.parse().ok())
    }
}

/// Calendar quarter (1..=4) of a month (1..=12).
pub fn quarter_of_month(month: u32) -> u32 {
    month.div_ceil(3)
}

pub fn quarter_label(date: NaiveDate) -> String {
    format!("{}-Q{}", date.year(), quarter_of_month(date.month()))
}

pub fn abstract_entity(
    e: &EntityRecord,
    tax: &FirearmTaxonomy,
    continents: &HashMap<String, Continent>,
) -> AbstractedEntity {
    AbstractedEntity {
        entity_id: e.id.clone(),
        quarter: e.date.map(quarter_label),
        year: e.date.map(|d| d.year()),
        continent: e
            .country
            .as_deref()
            .and_then(|c| continents.get(c).copied())
            .unwrap_or(Continent::Unknown),
        firearm_class: tax.classify(e.firearm_model.as_deref(), e.firearm_type.as_deref()),
    }
}

/// Category vocabularies and year range that fix the layout of a [`FeatureVector`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSchema {
    pub schema_id: String,
    pub firearm_classes: Vec<String>,
    pub year_min: i32,
    pub year_max: i32,
}

/// Slots in the quarter-of-year block: Q1..Q4 then "absent".
pub const QUARTER_SLOTS: usize = 5;

impl EncodingSchema {
    pub fn new(schema_id: impl Into<String>, tax: &FirearmTaxonomy, year_min: i32, year_max: i32) -> Self {
        EncodingSchema {
            schema_id: schema_id.into(),
            firearm_classes: tax.vocabulary(),
            year_min,
            year_max,
        }
    }

    pub fn len(&self) -> usize {
        Continent::ALL.len() + self.firearm_classes.len() + QUARTER_SLOTS + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn continent_block(&self) -> std::ops::Range<usize> {
        0..Continent::ALL.len()
    }

    pub fn class_block(&self) -> std::ops::Range<usize> {
        let s = Continent::ALL.len();
        s..s + self.firearm_classes.len()
    }

    pub fn quarter_block(&self) -> std::ops::Range<usize> {
        let s = self.class_block().end;
        s..s + QUARTER_SLOTS
    }

    pub fn year_slot(&self) -> usize {
        self.quarter_block().end
    }

    /// One-hot continent, firearm class and quarter-of-year, plus the year scaled
    /// so that `year_min` maps to 0 and `year_max` to 1. Absent dates set the
    /// "absent" quarter slot and a year value of 0.
    pub fn encode(&self, a: &AbstractedEntity) -> Result<FeatureVector, EncodingError> {
        let mut values = vec![0.0; self.len()];
        let ci = Continent::ALL.iter().position(|c| *c == a.continent).expect("closed enum");
        values[self.continent_block().start + ci] = 1.0;

        let fi = self
            .firearm_classes
            .iter()
            .position(|c| *c == a.firearm_class)
            .ok_or_else(|| EncodingError::UnknownCategory(a.firearm_class.clone()))?;
        values[self.class_block().start + fi] = 1.0;

        let qslot = match a.quarter_of_year() {
            Some(q) => (q - 1) as usize,
            None => QUARTER_SLOTS - 1,
        };
        values[self.quarter_block().start + qslot] = 1.0;

        if let Some(year) = a.year {
            let span = (self.year_max - self.year_min).max(1) as f64;
            values[self.year_slot()] = (year - self.year_min) as f64 / span;
        }

        Ok(FeatureVector { values, schema_id: self.schema_id.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("unknown encoding schema `{0}`")]
    UnknownSchema(String),
    #[error("firearm class `{0}` is not in the schema vocabulary")]
    UnknownCategory(String),
}

/// Registered encoding layouts, looked up by `schema_id`.
#[derive(Debug, Clone, Default)]
pub struct SchemaRegistry {
    schemas: HashMap<String, EncodingSchema>,
}

impl SchemaRegistry {
    pub fn register(&mut self, schema: EncodingSchema) {
        self.schemas.insert(schema.schema_id.clone(), schema);
    }

    pub fn get(&self, schema_id: &str) -> Result<&EncodingSchema, EncodingError> {
        self.schemas
            .get(schema_id)
            .ok_or_else(|| EncodingError::UnknownSchema(schema_id.to_string()))
    }

    pub fn encode(&self, a: &AbstractedEntity, schema_id: &str) -> Result<FeatureVector, EncodingError> {
        self.get(schema_id)?.encode(a)
    }
}

pub fn encode_features(a: &AbstractedEntity, schema: &EncodingSchema) -> Result<FeatureVector, EncodingError> {
    schema.encode(a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_id: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    pub(crate) fn fixture_taxonomy() -> FirearmTaxonomy {
        let top10 = [
            "pistol", "revolver", "rifle", "shotgun", "submachine_gun", "assault_rifle",
            "machine_gun", "sniper_rifle", "grenade_launcher", "converted_blank",
        ]
        .map(String::from)
        .to_vec();
        let models = [("Glock 17", "pistol"), ("AK-47", "assault_rifle"), ("Zoraki 917", "converted_blank")]
            .iter()
            .map(|(m, c)| (m.to_string(), c.to_string()))
            .collect();
        FirearmTaxonomy::new(top10, models).unwrap()
    }

    #[test]
    fn minimal_event_validates() {
        let r = validate_record(&raw(&[("id", "e1"), ("kind", "event"), ("date", "2023-05-14"), ("country", "FR")]))
            .unwrap();
        assert_eq!(r.kind, EntityKind::Event);
        assert_eq!(r.date, NaiveDate::from_ymd_opt(2023, 5, 14));
        assert_eq!(r.country.as_deref(), Some("FR"));
    }

    #[test]
    fn agent_without_name_or_username() {
        let err = validate_record(&raw(&[("id", "a1"), ("kind", "agent")])).unwrap_err();
        assert_eq!(err.violations(), &[FieldViolation::MissingField { field: "name|username".into() }]);
    }

    #[test]
    fn non_iso_date_rejected() {
        let err = validate_record(&raw(&[("id", "e2"), ("kind", "event"), ("date", "14/05/2023"), ("country", "FR")]))
            .unwrap_err();
        assert_eq!(err.violations(), &[FieldViolation::BadDate { value: "14/05/2023".into() }]);
    }

    #[test]
    fn every_violation_reported() {
        let err = validate_record(&raw(&[("kind", "event"), ("date", "2023-13-01"), ("country", "France")]))
            .unwrap_err();
        let v = err.violations();
        assert!(v.contains(&FieldViolation::MissingField { field: "id".into() }));
        assert!(v.contains(&FieldViolation::BadDate { value: "2023-13-01".into() }));
        assert!(v.contains(&FieldViolation::BadCountry { value: "France".into() }));
        assert_eq!(validate_record(&BTreeMap::new()), Err(RecordError::Empty));
    }

    #[test]
    fn raw_round_trip() {
        let r = validate_record(&raw(&[
            ("id", "a9"),
            ("kind", "agent"),
            ("username", "ghost"),
            ("country", "DE"),
            ("channel", "darknet"),
        ]))
        .unwrap();
        assert_eq!(validate_record(&r.to_raw()).unwrap(), r);
        assert_eq!(r.attributes.get("channel").map(String::as_str), Some("darknet"));
    }

    #[test]
    fn quarters_partition_months() {
        let mut counts = [0; 4];
        for m in 1..=12 {
            counts[(quarter_of_month(m) - 1) as usize] += 1;
        }
        assert_eq!(counts, [3, 3, 3, 3]);
        assert_eq!(quarter_of_month(5), 2);
    }

    #[test]
    fn abstraction_branches() {
        let tax = fixture_taxonomy();
        let continents = default_continents();
        let mut e = validate_record(&raw(&[
            ("id", "e1"),
            ("kind", "event"),
            ("date", "2023-05-14"),
            ("country", "FR"),
            ("firearm_model", "Glock 17"),
        ]))
        .unwrap();
        let a = abstract_entity(&e, &tax, &continents);
        assert_eq!(a.quarter.as_deref(), Some("2023-Q2"));
        assert_eq!(a.year, Some(2023));
        assert_eq!(a.continent, Continent::Europe);
        assert_eq!(a.firearm_class, "pistol");

        e.firearm_model = Some("Unlisted Special".into());
        assert_eq!(abstract_entity(&e, &tax, &continents).firearm_class, OTHER_CLASS);

        e.country = Some("ZZ".into());
        assert_eq!(abstract_entity(&e, &tax, &continents).continent, Continent::Unknown);
    }

    #[test]
    fn abstraction_is_idempotent() {
        let tax = fixture_taxonomy();
        let continents = default_continents();
        let e = validate_record(&raw(&[("id", "a1"), ("kind", "agent"), ("name", "X"), ("firearm_type", "Rifle")]))
            .unwrap();
        let a1 = abstract_entity(&e, &tax, &continents);
        let a2 = abstract_entity(&e, &tax, &continents);
        assert_eq!(a1, a2);
        assert_eq!(a1.quarter, None);
        assert_eq!(a1.firearm_class, "rifle");
    }

    #[test]
    fn taxonomy_invariants() {
        let tax = fixture_taxonomy();
        let mut short = tax.top10().to_vec();
        short.pop();
        assert_eq!(FirearmTaxonomy::new(short, BTreeMap::new()), Err(TaxonomyError::WrongClassCount(9)));
        let mut dup = tax.top10().to_vec();
        dup[9] = "pistol".into();
        assert!(matches!(FirearmTaxonomy::new(dup, BTreeMap::new()), Err(TaxonomyError::DuplicateClass(_))));
        let bad = [("X".to_string(), "laser".to_string())].into_iter().collect();
        assert!(matches!(
            FirearmTaxonomy::new(tax.top10().to_vec(), bad),
            Err(TaxonomyError::UnknownTarget { .. })
        ));
    }

    #[test]
    fn continent_table_has_no_duplicates() {
        let total: usize = [AFRICA, ASIA, EUROPE, NORTH_AMERICA, SOUTH_AMERICA, OCEANIA]
            .iter()
            .map(|s| s.split_whitespace().count())
            .sum();
        assert_eq!(default_continents().len(), total);
    }

    fn ent(id: &str, q: Option<&str>, continent: Continent, class: &str) -> AbstractedEntity {
        AbstractedEntity {
            entity_id: id.into(),
            quarter: q.map(String::from),
            year: q.map(|q| q[..4].parse().unwrap()),
            continent,
            firearm_class: class.into(),
        }
    }

    #[test]
    fn encoding_matches_hand_table() {
        let schema = EncodingSchema::new("v1", &fixture_taxonomy(), 2020, 2024);
        // Layout: 7 continent slots | 11 class slots | 5 quarter slots | year.
        // Each row lists (continent slot, class slot, quarter slot, year value).
        let table: [(AbstractedEntity, usize, usize, usize, f64); 6] = [
            (ent("a", Some("2023-Q2"), Continent::Europe, "pistol"), 2, 0, 1, 0.75),
            (ent("b", Some("2020-Q1"), Continent::Africa, "rifle"), 0, 2, 0, 0.0),
            (ent("c", Some("2024-Q4"), Continent::Oceania, "converted_blank"), 5, 9, 3, 1.0),
            (ent("d", None, Continent::Unknown, OTHER_CLASS), 6, 10, 4, 0.0),
            (ent("e", Some("2022-Q3"), Continent::NorthAmerica, "shotgun"), 3, 3, 2, 0.5),
            (ent("f", Some("2021-Q4"), Continent::SouthAmerica, "machine_gun"), 4, 6, 3, 0.25),
        ];
        for (a, cs, fs, qs, year) in table {
            let v = schema.encode(&a).unwrap().values;
            let mut expected = vec![0.0; 24];
            expected[cs] = 1.0;
            expected[7 + fs] = 1.0;
            expected[18 + qs] = 1.0;
            expected[23] = year;
            assert_eq!(v, expected, "entity {}", a.entity_id);
        }
    }

    #[test]
    fn encoding_is_local_and_deterministic() {
        let schema = EncodingSchema::new("v1", &fixture_taxonomy(), 2020, 2024);
        let a = ent("a", Some("2023-Q2"), Continent::Europe, "pistol");
        let b = ent("b", Some("2023-Q2"), Continent::Asia, "pistol");
        let va = schema.encode(&a).unwrap();
        assert_eq!(va, schema.encode(&a).unwrap());
        let vb = schema.encode(&b).unwrap();
        let differing: Vec<usize> = (0..va.values.len()).filter(|&i| va.values[i] != vb.values[i]).collect();
        assert!(differing.iter().all(|i| schema.continent_block().contains(i)));
        assert_eq!(differing.len(), 2);
    }

    #[test]
    fn registry_rejects_unknown_schema() {
        let mut reg = SchemaRegistry::default();
        reg.register(EncodingSchema::new("v1", &fixture_taxonomy(), 2020, 2024));
        let a = ent("a", None, Continent::Unknown, OTHER_CLASS);
        assert!(reg.encode(&a, "v1").is_ok());
        assert_eq!(reg.encode(&a, "v2"), Err(EncodingError::UnknownSchema("v2".into())));
        let bad = ent("a", None, Continent::Unknown, "laser");
        assert!(matches!(reg.encode(&bad, "v1"), Err(EncodingError::UnknownCategory(_))));
    }
}
