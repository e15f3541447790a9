//! Checks the extractors against the hand-labelled fixture corpora. Each
//! check returns the number of documents and one line per mismatch.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use chrono::NaiveDate;
use firetrace_core::config::NluConfig;
use firetrace_core::incident::{
    extract_incident, filter_eligible, EligibilityCriteria, Gazetteer, IncidentMatchers, NewsArticle,
};
use firetrace_core::nlu::forum::{run_cascade, ForumThread, Intent, ThreadEntity};
use firetrace_core::nlu::listing::{extract_specs, parse_listing, ListingRecord, Ruleset, Specs};
use serde::Deserialize;

pub type Tally = (usize, Vec<String>);

fn corpus(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus").join(rel)
}

fn load<T: for<'de> Deserialize<'de>>(rel: &str) -> T {
    serde_json::from_str(&fs::read_to_string(corpus(rel)).unwrap()).unwrap()
}

fn differ<T: PartialEq + std::fmt::Debug>(out: &mut Vec<String>, doc: &str, field: &str, got: T, want: T) {
    if got != want {
        out.push(format!("{doc} {field}: got {got:?}, want {want:?}"));
    }
}

#[derive(Deserialize)]
struct ListingLabel {
    file: String,
    #[serde(flatten)]
    record: ListingRecord,
}

pub fn listings() -> Tally {
    let labels: Vec<ListingLabel> = load("listings/labels.json");
    let cfg = NluConfig::default();
    let rules = Ruleset::new(cfg.listing_rules.clone()).unwrap();
    let mut bad = Vec::new();
    for l in &labels {
        let html = fs::read_to_string(corpus(&format!("listings/{}", l.file))).unwrap();
        match parse_listing(&html, &rules, &cfg.specs) {
            Ok(got) => differ(&mut bad, &l.file, "record", got, l.record.clone()),
            Err(e) => bad.push(format!("{}: {e}", l.file)),
        }
    }
    (labels.len(), bad)
}

#[derive(Deserialize)]
struct SpecCase {
    text: String,
    labels: Specs,
}

pub fn specs() -> Tally {
    let cases: Vec<SpecCase> = load("specs.json");
    let g = NluConfig::default().specs;
    let mut bad = Vec::new();
    for c in &cases {
        differ(&mut bad, &c.text, "specs", extract_specs(&c.text, &g), c.labels.clone());
    }
    (cases.len(), bad)
}

#[derive(Deserialize)]
struct ThreadLabels {
    relevant: bool,
    suspicious: Option<bool>,
    intents: Vec<Intent>,
    entities: Option<Vec<ThreadEntity>>,
    summary: Option<String>,
}

#[derive(Deserialize)]
struct ThreadCase {
    thread: ForumThread,
    labels: ThreadLabels,
}

pub fn threads() -> Tally {
    let cases: Vec<ThreadCase> = load("threads.json");
    let cfg = NluConfig::default();
    let (rel, sus) = (cfg.relevance().unwrap(), cfg.suspicion().unwrap());
    let mut bad = Vec::new();
    for c in &cases {
        let id = c.thread.id.as_str();
        let v = match run_cascade(&c.thread, &rel, &sus, &cfg.intents, &cfg.thread, cfg.summary_budget) {
            Ok(v) => v,
            Err(e) => {
                bad.push(format!("{id}: {e}"));
                continue;
            }
        };
        if !v.is_consistent() {
            bad.push(format!("{id}: inconsistent verdict"));
        }
        differ(&mut bad, id, "relevant", v.relevant, c.labels.relevant);
        differ(&mut bad, id, "suspicious", v.suspicious, c.labels.suspicious);
        differ(&mut bad, id, "intents", &v.intents, &c.labels.intents);
        differ(&mut bad, id, "entities", v.extraction.as_ref().map(|x| &x.entities), c.labels.entities.as_ref());
        differ(&mut bad, id, "summary", v.extraction.as_ref().map(|x| &x.summary), c.labels.summary.as_ref());
    }
    (cases.len(), bad)
}

#[derive(Deserialize)]
struct ArticleCase {
    article: NewsArticle,
    labels: BTreeMap<String, serde_json::Value>,
}

pub fn articles() -> Tally {
    let cases: Vec<ArticleCase> = load("articles.json");
    let criteria = EligibilityCriteria::default();
    let matchers = IncidentMatchers::new(&criteria);
    let places = Gazetteer::builtin();
    let outcome = filter_eligible(cases.iter().map(|c| c.article.clone()).collect(), &criteria);
    let rejected: BTreeMap<&str, &str> = outcome.rejected.iter().map(|(a, r)| (a.url.as_str(), r.as_str())).collect();
    let mut bad = Vec::new();
    if outcome.eligible.len() + outcome.rejected.len() != cases.len() {
        bad.push("eligibility split lost articles".into());
    }
    for c in &cases {
        let url = c.article.url.as_str();
        if let Some(reason) = c.labels.get("rejected") {
            differ(&mut bad, url, "rejected", rejected.get(url).copied(), reason.as_str());
            continue;
        }
        if let Some(r) = rejected.get(url) {
            bad.push(format!("{url}: unexpectedly rejected ({r})"));
            continue;
        }
        let r = match extract_incident(&c.article, &matchers, &places) {
            Ok(x) => x.record,
            Err(e) => {
                bad.push(format!("{url}: {e}"));
                continue;
            }
        };
        let s = |k: &str| c.labels[k].as_str().map(str::to_string);
        let n = |k: &str| c.labels[k].as_u64().map(|v| v as u32);
        differ(&mut bad, url, "incident_type", Some(r.incident_type.as_str().to_string()), s("incident_type"));
        differ(&mut bad, url, "date", Some(r.date), s("date").map(|d| d.parse::<NaiveDate>().unwrap()));
        differ(&mut bad, url, "country", r.location.country, s("country"));
        differ(&mut bad, url, "city", r.location.city, s("city"));
        differ(&mut bad, url, "firearm", r.firearm, s("firearm"));
        differ(&mut bad, url, "victims", r.victims, n("victims"));
        differ(&mut bad, url, "perpetrators", r.perpetrators, n("perpetrators"));
    }
    (cases.len(), bad)
}
