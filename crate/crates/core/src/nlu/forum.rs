//! Forum thread cascade: relevance, then suspiciousness, then per-message
//! intent, then entity extraction and an extractive summary.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::listing::{currency_split, Price, SpecGazetteer};
use super::NluError;
use crate::incident::Gazetteer;
use crate::text::TermMatcher;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForumMessage {
    pub author: String,
    /// UTC seconds.
    pub timestamp: i64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForumThread {
    pub id: String,
    pub messages: Vec<ForumMessage>,
}

impl ForumThread {
    pub fn full_text(&self) -> String {
        self.messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// Pluggable text scorer: `score` in [0, 1], positive when `score >= threshold`.
pub trait TextClassifier: Send + Sync {
    fn score(&self, text: &str) -> Result<f64, NluError>;
    fn threshold(&self) -> f64;

    fn classify(&self, text: &str) -> Result<bool, NluError> {
        Ok(self.score(text)? >= self.threshold())
    }
}

/// Sum of the weights of distinct lexicon terms present in the text,
/// clamped to [0, 1]. Negative weights pull the score down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedLexicon {
    pub name: String,
    pub terms: BTreeMap<String, f64>,
    pub threshold: f64,
}

impl WeightedLexicon {
    /// `threshold` must be positive so that text without hits is negative.
    pub fn new(name: &str, terms: BTreeMap<String, f64>, threshold: f64) -> Result<Self, NluError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(NluError::InvalidThreshold(threshold));
        }
        Ok(WeightedLexicon { name: name.into(), terms, threshold })
    }

    pub fn from_pairs(name: &str, pairs: &[(&str, f64)], threshold: f64) -> Result<Self, NluError> {
        Self::new(name, pairs.iter().map(|(t, w)| (t.to_string(), *w)).collect(), threshold)
    }

    fn hits(&self, text: &str) -> Vec<String> {
        let mut hits: Vec<String> = TermMatcher::new(self.terms.keys()).find_all(text).into_iter().map(|h| h.term).collect();
        hits.sort();
        hits.dedup();
        hits
    }

    fn raw_score(&self, text: &str) -> f64 {
        self.hits(text).iter().map(|t| self.terms[t]).sum()
    }
}

impl TextClassifier for WeightedLexicon {
    fn score(&self, text: &str) -> Result<f64, NluError> {
        if self.terms.is_empty() {
            return Err(NluError::UnloadedLexicon(self.name.clone()));
        }
        Ok(self.raw_score(text).clamp(0.0, 1.0))
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Offer,
    Request,
    Exchange,
    Other,
}

impl Intent {
    /// Tie-break order, highest first.
    pub const PRIORITY: [Intent; 3] = [Intent::Offer, Intent::Request, Intent::Exchange];
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Intent::Offer => "offer",
            Intent::Request => "request",
            Intent::Exchange => "exchange",
            Intent::Other => "other",
        })
    }
}

pub trait IntentClassifier: Send + Sync {
    fn intent(&self, text: &str) -> Intent;
}

/// One weighted lexicon per intent; the highest score wins, ties go to the
/// earlier intent in [`Intent::PRIORITY`], and no hit at all means `other`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconIntentClassifier {
    pub offer: BTreeMap<String, f64>,
    pub request: BTreeMap<String, f64>,
    pub exchange: BTreeMap<String, f64>,
}

impl LexiconIntentClassifier {
    fn lexicon(&self, i: Intent) -> &BTreeMap<String, f64> {
        match i {
            Intent::Offer => &self.offer,
            Intent::Request => &self.request,
            _ => &self.exchange,
        }
    }
}

impl IntentClassifier for LexiconIntentClassifier {
    fn intent(&self, text: &str) -> Intent {
        let mut best = (Intent::Other, 0.0);
        for i in Intent::PRIORITY {
            let lex = self.lexicon(i);
            let mut hits: Vec<String> = TermMatcher::new(lex.keys()).find_all(text).into_iter().map(|h| h.term).collect();
            hits.sort();
            hits.dedup();
            let s: f64 = hits.iter().map(|t| lex[t]).sum();
            if s > best.1 {
                best = (i, s);
            }
        }
        best.0
    }
}

pub fn recognize_intent(message: &str, clf: &dyn IntentClassifier) -> Intent {
    clf.intent(message)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Firearm,
    Price,
    Location,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadEntity {
    pub kind: EntityKind,
    /// Canonical term, price text, or ISO country code with optional city.
    pub value: String,
    pub message_index: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub price: Option<Price>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadExtraction {
    pub entities: Vec<ThreadEntity>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeVerdict {
    pub relevant: bool,
    pub suspicious: Option<bool>,
    /// One label per message; empty unless the thread is suspicious.
    pub intents: Vec<Intent>,
    pub extraction: Option<ThreadExtraction>,
}

impl CascadeVerdict {
    /// `suspicious` only when relevant; intents only when suspicious.
    pub fn is_consistent(&self) -> bool {
        (self.suspicious.is_none() || self.relevant) && (self.intents.is_empty() || self.suspicious == Some(true))
    }
}

/// Relevance then suspiciousness; irrelevant threads never reach the second stage.
pub fn classify_thread(
    thread: &ForumThread,
    relevance: &dyn TextClassifier,
    suspicion: &dyn TextClassifier,
) -> Result<CascadeVerdict, NluError> {
    let text = thread.full_text();
    let relevant = !thread.messages.is_empty() && relevance.classify(&text)?;
    let suspicious = if relevant { Some(suspicion.classify(&text)?) } else { None };
    Ok(CascadeVerdict { relevant, suspicious, intents: Vec::new(), extraction: None })
}

/// Terms used by thread extraction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThreadGazetteer {
    pub firearm_terms: Vec<String>,
    pub specs: SpecGazetteer,
    pub places: Gazetteer,
}

impl ThreadGazetteer {
    pub fn builtin() -> Self {
        let terms = [
            "pistol", "pistols", "handgun", "handguns", "revolver", "rifle", "rifles", "shotgun", "ammo",
            "ammunition", "rounds", "mags", "magazine", "suppressor", "silencer", "piece", "strap",
        ];
        ThreadGazetteer {
            firearm_terms: terms.iter().map(|s| s.to_string()).collect(),
            specs: SpecGazetteer::builtin(),
            places: Gazetteer::builtin(),
        }
    }
}

fn price_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?:[€$£]\s?\d+(?:,\d{3})*(?:\.\d+)?)|(?:\b\d+(?:,\d{3})*(?:\.\d+)?\s?(?:€|(?:EUR|USD|GBP|BTC|ETH|XMR|eur|usd|gbp|btc|eth|xmr)\b))")
            .unwrap()
    })
}

fn truncate_chars(s: &str, budget: usize) -> String {
    s.chars().take(budget).collect()
}

/// Entities and extractive summary of a suspicious thread.
pub fn extract_thread_info(
    thread: &ForumThread,
    verdict: &CascadeVerdict,
    gazetteer: &ThreadGazetteer,
    char_budget: usize,
) -> Result<ThreadExtraction, NluError> {
    if verdict.suspicious != Some(true) {
        return Err(NluError::PreconditionUnmet("thread is not suspicious".into()));
    }
    if !verdict.intents.iter().any(|i| *i != Intent::Other) {
        return Err(NluError::PreconditionUnmet("no offer, request or exchange intent".into()));
    }
    let firearms =
        TermMatcher::new(gazetteer.firearm_terms.iter().chain(&gazetteer.specs.models).chain(gazetteer.specs.slang.keys()));
    let mut entities = Vec::new();
    for (idx, m) in thread.messages.iter().enumerate() {
        for h in firearms.find_all(&m.text) {
            let value = gazetteer.specs.canonical(&h.term);
            entities.push(ThreadEntity { kind: EntityKind::Firearm, value, message_index: idx, price: None });
        }
        for p in price_re().find_iter(&m.text) {
            let text = p.as_str().trim().to_string();
            let price = currency_split(&text.to_uppercase());
            entities.push(ThreadEntity { kind: EntityKind::Price, value: text, message_index: idx, price });
        }
        if let Some((country, city)) = gazetteer.places.locate(&m.text) {
            let value = match city {
                Some(c) => format!("{country}:{c}"),
                None => country,
            };
            entities.push(ThreadEntity { kind: EntityKind::Location, value, message_index: idx, price: None });
        }
    }
    let mut parts = Vec::new();
    for (idx, m) in thread.messages.iter().enumerate() {
        let carries = verdict.intents.get(idx).is_some_and(|i| *i != Intent::Other);
        if idx == 0 || carries {
            parts.push(m.text.trim());
        }
    }
    Ok(ThreadExtraction { entities, summary: truncate_chars(&parts.join(" "), char_budget) })
}

/// Runs every cascade stage the thread qualifies for.
pub fn run_cascade(
    thread: &ForumThread,
    relevance: &dyn TextClassifier,
    suspicion: &dyn TextClassifier,
    intents: &dyn IntentClassifier,
    gazetteer: &ThreadGazetteer,
    char_budget: usize,
) -> Result<CascadeVerdict, NluError> {
    let mut v = classify_thread(thread, relevance, suspicion)?;
    if v.suspicious == Some(true) {
        v.intents = thread.messages.iter().map(|m| recognize_intent(&m.text, intents)).collect();
        v.extraction = match extract_thread_info(thread, &v, gazetteer, char_budget) {
            Ok(x) => Some(x),
            Err(NluError::PreconditionUnmet(_)) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thread(texts: &[&str]) -> ForumThread {
        ForumThread {
            id: "t".into(),
            messages: texts
                .iter()
                .enumerate()
                .map(|(i, t)| ForumMessage { author: format!("u{i}"), timestamp: 1_700_000_000 + i as i64, text: t.to_string() })
                .collect(),
        }
    }

    fn relevance() -> WeightedLexicon {
        WeightedLexicon::from_pairs("relevance", &[("glock", 0.6), ("pistol", 0.5), ("ammo", 0.4), ("loadout", -0.8), ("respawn", -0.8)], 0.5).unwrap()
    }

    fn suspicion() -> WeightedLexicon {
        WeightedLexicon::from_pairs("suspicion", &[("selling", 0.7), ("dm me", 0.4), ("no questions", 0.5)], 0.5).unwrap()
    }

    fn intents() -> LexiconIntentClassifier {
        let m = |xs: &[&str]| xs.iter().map(|s| (s.to_string(), 1.0)).collect();
        LexiconIntentClassifier { offer: m(&["selling", "for sale"]), request: m(&["looking for", "need"]), exchange: m(&["trade", "swap"]) }
    }

    #[test]
    fn game_thread_is_irrelevant() {
        let v = classify_thread(&thread(&["best pistol loadout after the respawn patch?"]), &relevance(), &suspicion()).unwrap();
        assert_eq!(v, CascadeVerdict { relevant: false, suspicious: None, intents: vec![], extraction: None });
    }

    #[test]
    fn offer_thread_is_suspicious() {
        let t = thread(&["selling glock 17, €800, ships from Antwerp, dm me", "price ok?", "need ammo too"]);
        let v = run_cascade(&t, &relevance(), &suspicion(), &intents(), &ThreadGazetteer::builtin(), 500).unwrap();
        assert_eq!((v.relevant, v.suspicious), (true, Some(true)));
        assert_eq!(v.intents, [Intent::Offer, Intent::Other, Intent::Request]);
        assert!(v.is_consistent());
        let x = v.extraction.unwrap();
        assert!(x.entities.iter().any(|e| e.kind == EntityKind::Firearm && e.value == "Glock 17"));
        let price = x.entities.iter().find(|e| e.kind == EntityKind::Price).unwrap();
        assert_eq!(price.price, Some(Price { amount: 800.0, currency: "EUR".into() }));
        assert!(x.entities.iter().any(|e| e.kind == EntityKind::Location && e.value == "BE:Antwerp"));
        assert_eq!(x.summary, "selling glock 17, €800, ships from Antwerp, dm me need ammo too");
    }

    #[test]
    fn empty_thread_and_unloaded_lexicon() {
        let v = classify_thread(&thread(&[]), &relevance(), &suspicion()).unwrap();
        assert!(!v.relevant);
        let empty = WeightedLexicon::new("relevance", BTreeMap::new(), 0.5).unwrap();
        assert_eq!(
            classify_thread(&thread(&["x"]), &empty, &suspicion()).unwrap_err(),
            NluError::UnloadedLexicon("relevance".into())
        );
    }

    #[test]
    fn intent_priority_and_default() {
        assert_eq!(recognize_intent("selling, DM me", &intents()), Intent::Offer);
        assert_eq!(recognize_intent("hello there", &intents()), Intent::Other);
        assert_eq!(recognize_intent("selling or looking for a trade", &intents()), Intent::Offer);
        assert_eq!(recognize_intent("need one, looking for a deal", &intents()), Intent::Request);
    }

    #[test]
    fn extraction_preconditions_and_budget() {
        let t = thread(&["selling pistol 300 EUR"]);
        let mut v = CascadeVerdict { relevant: true, suspicious: Some(true), intents: vec![Intent::Other], extraction: None };
        assert!(matches!(extract_thread_info(&t, &v, &ThreadGazetteer::builtin(), 10), Err(NluError::PreconditionUnmet(_))));
        v.intents = vec![Intent::Offer];
        let x = extract_thread_info(&t, &v, &ThreadGazetteer::builtin(), 0).unwrap();
        assert_eq!(x.summary, "");
        assert_eq!(x.entities.len(), 2);
    }
}
