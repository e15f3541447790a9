//! Firearm incident tracking over news articles: eligibility filtering,
//! structured incident extraction and per-quarter risk indicators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::sync::OnceLock;

use chrono::{Datelike, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::domain::{parse_iso_date, quarter_label};
use crate::text::{count_pattern, parse_count, TermMatcher};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub published: Option<NaiveDate>,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IncidentError {
    #[error("article is missing `url`")]
    MissingUrl,
    #[error("published date `{0}` is not an ISO-8601 date")]
    BadPublished(String),
    #[error("article {0} has neither an in-text date nor a published date")]
    NoDate(String),
    #[error("no records to aggregate")]
    NoRecords,
}

impl NewsArticle {
    /// Builds an article from a cleansed payload map (`url`, `title`, `body`, `published`, `source`).
    pub fn from_map(m: &BTreeMap<String, String>) -> Result<NewsArticle, IncidentError> {
        let url = m.get("url").map(|s| s.trim()).filter(|s| !s.is_empty()).ok_or(IncidentError::MissingUrl)?;
        let published = match m.get("published").map(|s| s.trim()).filter(|s| !s.is_empty()) {
            None => None,
            Some(p) => Some(parse_iso_date(p).ok_or_else(|| IncidentError::BadPublished(p.to_string()))?),
        };
        let field = |k: &str| m.get(k).cloned().unwrap_or_default();
        Ok(NewsArticle { url: url.to_string(), title: field("title"), body: field("body"), published, source: field("source") })
    }

    fn full_text(&self) -> String {
        format!("{}\n{}", self.title, self.body)
    }
}

/// Reads one JSON article per line; blank lines are skipped.
pub fn read_articles<R: BufRead>(r: R) -> Result<Vec<NewsArticle>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// Source of articles; the corpus reader stands in for a live fetcher.
pub trait ArticleFetcher {
    fn fetch(&self) -> Result<Vec<NewsArticle>, String>;
}

#[derive(Debug, Clone)]
pub struct CorpusFetcher {
    pub path: std::path::PathBuf,
}

impl ArticleFetcher for CorpusFetcher {
    fn fetch(&self) -> Result<Vec<NewsArticle>, String> {
        let f = std::fs::File::open(&self.path).map_err(|e| format!("{}: {e}", self.path.display()))?;
        read_articles(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentType {
    Seizure,
    Homicide,
    Shooting,
    ArmedRobbery,
}

impl IncidentType {
    /// Highest priority first.
    pub const PRIORITY: [IncidentType; 4] =
        [IncidentType::Homicide, IncidentType::Shooting, IncidentType::ArmedRobbery, IncidentType::Seizure];

    pub fn as_str(&self) -> &'static str {
        match self {
            IncidentType::Seizure => "seizure",
            IncidentType::Homicide => "homicide",
            IncidentType::Shooting => "shooting",
            IncidentType::ArmedRobbery => "armed_robbery",
        }
    }
}

impl fmt::Display for IncidentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EligibilityCriteria {
    pub incident_keywords: BTreeMap<IncidentType, Vec<String>>,
    pub firearm_keywords: Vec<String>,
    /// Minimum body length in characters.
    pub min_body_len: usize,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for EligibilityCriteria {
    fn default() -> Self {
        let mut kw = BTreeMap::new();
        kw.insert(IncidentType::Homicide, strings(&["homicide", "murder", "murdered", "killed", "killing"]));
        kw.insert(IncidentType::Shooting, strings(&["shooting", "shot", "opened fire", "gunfire", "shots fired"]));
        kw.insert(
            IncidentType::ArmedRobbery,
            strings(&["armed robbery", "robbery", "robbed", "hold-up", "held up", "heist"]),
        );
        kw.insert(IncidentType::Seizure, strings(&["seized", "seizure", "confiscated", "intercepted", "recovered"]));
        EligibilityCriteria {
            incident_keywords: kw,
            firearm_keywords: strings(&[
                "firearm", "firearms", "gun", "guns", "handgun", "handguns", "pistol", "pistols", "revolver",
                "revolvers", "rifle", "rifles", "assault rifle", "assault rifles", "shotgun", "shotguns",
                "submachine gun", "submachine guns", "kalashnikov", "kalashnikovs", "ak-47", "glock", "weapon",
                "weapons", "ammunition",
            ]),
            min_body_len: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooShort,
    MissingDate,
    NoIncidentKeyword,
    NoFirearmKeyword,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::TooShort => "too_short",
            RejectReason::MissingDate => "missing_date",
            RejectReason::NoIncidentKeyword => "no_incident_keyword",
            RejectReason::NoFirearmKeyword => "no_firearm_keyword",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EligibilityOutcome {
    pub eligible: Vec<NewsArticle>,
    pub rejected: Vec<(NewsArticle, RejectReason)>,
}

/// Compiled matchers for one set of criteria.
#[derive(Debug, Clone)]
pub struct IncidentMatchers {
    incident: Vec<(IncidentType, TermMatcher)>,
    firearm: TermMatcher,
    min_body_len: usize,
}

impl IncidentMatchers {
    pub fn new(c: &EligibilityCriteria) -> Self {
        let incident = IncidentType::PRIORITY
            .iter()
            .map(|t| (*t, TermMatcher::new(c.incident_keywords.get(t).into_iter().flatten())))
            .collect();
        IncidentMatchers { incident, firearm: TermMatcher::new(&c.firearm_keywords), min_body_len: c.min_body_len }
    }

    /// First failing check in the order: length, date, incident keyword, firearm keyword.
    pub fn check(&self, a: &NewsArticle) -> Option<RejectReason> {
        let body = a.body.trim();
        if body.chars().count() < self.min_body_len.max(1) {
            return Some(RejectReason::TooShort);
        }
        if a.published.is_none() {
            return Some(RejectReason::MissingDate);
        }
        if !self.incident.iter().any(|(_, m)| m.contains_any(body)) {
            return Some(RejectReason::NoIncidentKeyword);
        }
        if !self.firearm.contains_any(body) {
            return Some(RejectReason::NoFirearmKeyword);
        }
        None
    }

    pub fn incident_type(&self, text: &str) -> Option<IncidentType> {
        self.incident.iter().find(|(_, m)| m.contains_any(text)).map(|(t, _)| *t)
    }
}

pub fn filter_eligible(articles: Vec<NewsArticle>, criteria: &EligibilityCriteria) -> EligibilityOutcome {
    let m = IncidentMatchers::new(criteria);
    let mut out = EligibilityOutcome::default();
    for a in articles {
        match m.check(&a) {
            None => out.eligible.push(a),
            Some(r) => out.rejected.push((a, r)),
        }
    }
    out
}

/// Country names and cities, both mapped to ISO alpha-2 codes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gazetteer {
    pub countries: BTreeMap<String, String>,
    pub cities: BTreeMap<String, String>,
}

impl Gazetteer {
    pub fn builtin() -> Self {
        let countries = [
            ("Netherlands", "NL"), ("Belgium", "BE"), ("France", "FR"), ("Germany", "DE"), ("Italy", "IT"),
            ("Spain", "ES"), ("Portugal", "PT"), ("Greece", "GR"), ("Sweden", "SE"), ("Denmark", "DK"),
            ("Ireland", "IE"), ("United Kingdom", "GB"), ("Poland", "PL"), ("Austria", "AT"),
            ("Czech Republic", "CZ"), ("Slovakia", "SK"), ("Croatia", "HR"), ("Serbia", "RS"), ("Bulgaria", "BG"),
            ("Romania", "RO"), ("Hungary", "HU"), ("Albania", "AL"), ("Finland", "FI"), ("Norway", "NO"),
            ("Switzerland", "CH"), ("Ukraine", "UA"), ("Turkey", "TR"),
        ];
        let cities = [
            ("Rotterdam", "NL"), ("Amsterdam", "NL"), ("The Hague", "NL"), ("Utrecht", "NL"), ("Antwerp", "BE"),
            ("Brussels", "BE"), ("Liege", "BE"), ("Paris", "FR"), ("Marseille", "FR"), ("Lyon", "FR"),
            ("Berlin", "DE"), ("Hamburg", "DE"), ("Munich", "DE"), ("Frankfurt", "DE"), ("Rome", "IT"),
            ("Naples", "IT"), ("Milan", "IT"), ("Madrid", "ES"), ("Barcelona", "ES"), ("Lisbon", "PT"),
            ("Athens", "GR"), ("Thessaloniki", "GR"), ("Piraeus", "GR"), ("Stockholm", "SE"),
            ("Gothenburg", "SE"), ("Malmo", "SE"), ("Copenhagen", "DK"), ("Dublin", "IE"), ("London", "GB"),
            ("Manchester", "GB"), ("Warsaw", "PL"), ("Vienna", "AT"), ("Prague", "CZ"), ("Zagreb", "HR"),
            ("Belgrade", "RS"), ("Sofia", "BG"), ("Bucharest", "RO"), ("Budapest", "HU"), ("Tirana", "AL"),
            ("Helsinki", "FI"), ("Oslo", "NO"), ("Zurich", "CH"), ("Kyiv", "UA"), ("Istanbul", "TR"),
        ];
        let own = |xs: &[(&str, &str)]| xs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        Gazetteer { countries: own(&countries), cities: own(&cities) }
    }

    /// Country code and optional city of the first place mention. When the
    /// first mention is a country, the first city of that country (if any) fills the city.
    pub fn locate(&self, text: &str) -> Option<(String, Option<String>)> {
        let countries = TermMatcher::new(self.countries.keys());
        let cities = TermMatcher::new(self.cities.keys());
        let first_country = countries.first(text);
        let first_city = cities.first(text);
        let city_first = match (&first_country, &first_city) {
            (Some(c), Some(t)) => t.start < c.start,
            (None, Some(_)) => true,
            _ => false,
        };
        if city_first {
            let city = first_city?.term;
            return Some((self.cities[&city].clone(), Some(city)));
        }
        let country = first_country?.term;
        let code = self.countries[&country].clone();
        let city = cities.find_all(text).into_iter().map(|h| h.term).find(|c| self.cities[c] == code);
        Some((code, city))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    /// ISO alpha-2; `None` when no place was recognised.
    pub country: Option<String>,
    pub city: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub incident_type: IncidentType,
    pub date: NaiveDate,
    pub location: Location,
    pub firearm: Option<String>,
    pub victims: Option<u32>,
    pub perpetrators: Option<u32>,
    pub source_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionWarning {
    NoLocationFound,
    NoIncidentType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub record: IncidentRecord,
    pub warnings: Vec<ExtractionWarning>,
}

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september", "october", "november",
    "december",
];

fn date_res() -> &'static [Regex; 4] {
    static RES: OnceLock<[Regex; 4]> = OnceLock::new();
    RES.get_or_init(|| {
        let months = MONTHS.join("|");
        [
            Regex::new(r"\b(\d{4})-(\d{2})-(\d{2})\b").unwrap(),
            Regex::new(r"\b(\d{1,2})/(\d{1,2})/(\d{4})\b").unwrap(),
            Regex::new(&format!(r"(?i)\b(\d{{1,2}})\s+({months})\s+(\d{{4}})\b")).unwrap(),
            Regex::new(&format!(r"(?i)\b({months})\s+(\d{{1,2}}),?\s+(\d{{4}})\b")).unwrap(),
        ]
    })
}

fn month_index(m: &str) -> Option<u32> {
    MONTHS.iter().position(|x| x.eq_ignore_ascii_case(m)).map(|i| i as u32 + 1)
}

/// The earliest parseable date written in the text.
pub fn find_text_date(text: &str) -> Option<NaiveDate> {
    let mut found: Vec<(usize, NaiveDate)> = Vec::new();
    for (k, re) in date_res().iter().enumerate() {
        for c in re.captures_iter(text) {
            let n = |i: usize| c[i].parse::<u32>().ok();
            let date = match k {
                0 => NaiveDate::from_ymd_opt(c[1].parse().ok()?, n(2)?, n(3)?),
                1 => NaiveDate::from_ymd_opt(c[3].parse().ok()?, n(2)?, n(1)?),
                2 => NaiveDate::from_ymd_opt(c[3].parse().ok()?, month_index(&c[2])?, n(1)?),
                _ => NaiveDate::from_ymd_opt(c[3].parse().ok()?, month_index(&c[1])?, n(2)?),
            };
            if let Some(d) = date {
                found.push((c.get(0).unwrap().start(), d));
            }
        }
    }
    found.into_iter().min_by_key(|(pos, _)| *pos).map(|(_, d)| d)
}

fn count_res() -> &'static (Regex, Regex) {
    static RES: OnceLock<(Regex, Regex)> = OnceLock::new();
    RES.get_or_init(|| {
        let n = count_pattern();
        let victims = r"victims?|casualties|people\s+(?:killed|injured|wounded|dead)|dead|injured|wounded";
        let perps = r"suspects?|perpetrators?|attackers?|gunm[ae]n|robbers?|assailants?|offenders?";
        (
            Regex::new(&format!(r"(?i)\b({n})\s+(?:[a-z-]+\s+)?(?:{victims})\b")).unwrap(),
            Regex::new(&format!(r"(?i)\b({n})\s+(?:[a-z-]+\s+)?(?:{perps})\b")).unwrap(),
        )
    })
}

fn first_count(re: &Regex, text: &str) -> Option<u32> {
    re.captures_iter(text).find_map(|c| parse_count(&c[1]))
}

/// Extracts a structured incident from an eligible article.
pub fn extract_incident(
    article: &NewsArticle,
    matchers: &IncidentMatchers,
    gazetteer: &Gazetteer,
) -> Result<Extraction, IncidentError> {
    let text = article.full_text();
    let mut warnings = Vec::new();
    let incident_type = matchers.incident_type(&text).unwrap_or_else(|| {
        warnings.push(ExtractionWarning::NoIncidentType);
        IncidentType::Seizure
    });
    let date = find_text_date(&text)
        .or(article.published)
        .ok_or_else(|| IncidentError::NoDate(article.url.clone()))?;
    let location = match gazetteer.locate(&text) {
        Some((country, city)) => Location { country: Some(country), city },
        None => {
            warnings.push(ExtractionWarning::NoLocationFound);
            Location { country: None, city: None }
        }
    };
    let firearm = matchers.firearm.first(&text).map(|h| text[h.start..h.end].to_lowercase());
    let (vre, pre) = count_res();
    Ok(Extraction {
        record: IncidentRecord {
            incident_type,
            date,
            location,
            firearm,
            victims: first_count(vre, &text),
            perpetrators: first_count(pre, &text),
            source_url: article.url.clone(),
        },
        warnings,
    })
}

fn serialize_z<S: Serializer>(z: &f64, s: S) -> Result<S::Ok, S::Error> {
    if z.is_infinite() {
        s.serialize_str(if *z > 0.0 { "+inf" } else { "-inf" })
    } else {
        s.serialize_f64(*z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskIndicator {
    pub country: String,
    pub quarter: String,
    pub incident_type: IncidentType,
    pub count: usize,
    pub baseline_quarters: usize,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    /// `+inf` when the baseline has zero variance and the count exceeds its mean.
    #[serde(serialize_with = "serialize_z")]
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RedFlag {
    pub indicator: RiskIndicator,
    pub threshold: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RiskReport {
    pub indicators: Vec<RiskIndicator>,
    pub red_flags: Vec<RedFlag>,
}

fn quarter_index(d: NaiveDate) -> i32 {
    d.year() * 4 + (d.month() as i32 - 1) / 3
}

fn index_label(i: i32) -> String {
    let d = NaiveDate::from_ymd_opt(i.div_euclid(4), (i.rem_euclid(4) * 3 + 1) as u32, 1).expect("valid quarter");
    quarter_label(d)
}

/// Counts incidents per (country, quarter, type). Each country-type series
/// spans its first to last observed quarter, with empty quarters counted as
/// zero; a cell's baseline is every other quarter of that span. Records
/// without a country are left out.
pub fn compute_risk_indicators(records: &[IncidentRecord], z_threshold: f64) -> Result<RiskReport, IncidentError> {
    if records.is_empty() {
        return Err(IncidentError::NoRecords);
    }
    let mut series: BTreeMap<(String, IncidentType), BTreeMap<i32, usize>> = BTreeMap::new();
    for r in records {
        if let Some(c) = &r.location.country {
            *series.entry((c.clone(), r.incident_type)).or_default().entry(quarter_index(r.date)).or_default() += 1;
        }
    }
    let mut report = RiskReport::default();
    for ((country, ty), counts) in &series {
        let (lo, hi) = (*counts.keys().next().unwrap(), *counts.keys().next_back().unwrap());
        let dense: Vec<(i32, usize)> = (lo..=hi).map(|q| (q, counts.get(&q).copied().unwrap_or(0))).collect();
        for &(q, count) in &dense {
            if count == 0 {
                continue;
            }
            let base: Vec<f64> = dense.iter().filter(|(o, _)| *o != q).map(|(_, c)| *c as f64).collect();
            let (mean, std) = if base.is_empty() {
                (0.0, 0.0)
            } else {
                let m = base.iter().sum::<f64>() / base.len() as f64;
                let v = base.iter().map(|x| (x - m).powi(2)).sum::<f64>() / base.len() as f64;
                (m, v.sqrt())
            };
            let z = if std > 0.0 {
                (count as f64 - mean) / std
            } else if (count as f64) > mean && !base.is_empty() {
                f64::INFINITY
            } else {
                0.0
            };
            let ind = RiskIndicator {
                country: country.clone(),
                quarter: index_label(q),
                incident_type: *ty,
                count,
                baseline_quarters: base.len(),
                baseline_mean: mean,
                baseline_std: std,
                z_score: z,
            };
            if base.len() >= 2 && z >= z_threshold {
                report.red_flags.push(RedFlag { indicator: ind.clone(), threshold: z_threshold });
            }
            report.indicators.push(ind);
        }
    }
    Ok(report)
}

/// Distinct incident types in priority order that the text mentions.
pub fn matched_types(matchers: &IncidentMatchers, text: &str) -> BTreeSet<IncidentType> {
    matchers.incident.iter().filter(|(_, m)| m.contains_any(text)).map(|(t, _)| *t).collect()
}
