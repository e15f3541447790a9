//! TOML configuration for the whole platform. Relative paths are resolved
//! against the directory holding the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{parse_network, validate_network, BayesNet};
use crate::chain::{FlagRules, LinkParams};
use crate::correlation::{Comparator, CorrelationCriterion, CriterionAttribute, DbscanParams, Metric};
use crate::domain::{EncodingSchema, FirearmTaxonomy, TaxonomyError};
use crate::federation::AccessPolicy;
use crate::graph::CleanseConfig;
use crate::incident::{EligibilityCriteria, Gazetteer};
use crate::nlu::{DetectorVocabulary, HtmlRule, LexiconIntentClassifier, NluError, SpecGazetteer, ThreadGazetteer, WeightedLexicon};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("network {path}: {message}")]
    Network { path: PathBuf, message: String },
    #[error("nlu: {0}")]
    Nlu(#[from] NluError),
    #[error("{0}")]
    Invalid(String),
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })
}

/// Reads and parses a TOML file.
pub fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    toml::from_str(&read(path)?).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyConfig {
    pub top10: Vec<String>,
    #[serde(default)]
    pub model_to_class: BTreeMap<String, String>,
}

impl Default for TaxonomyConfig {
    fn default() -> Self {
        let top10 = [
            "pistol", "revolver", "rifle", "shotgun", "submachine_gun", "assault_rifle", "machine_gun", "sniper_rifle",
            "grenade_launcher", "converted_blank",
        ];
        let models = [
            ("Glock 17", "pistol"), ("Glock 19", "pistol"), ("CZ 75", "pistol"), ("Beretta 92", "pistol"),
            ("Makarov", "pistol"), ("Tokarev TT-33", "pistol"), ("Colt 1911", "pistol"), ("Walther PPK", "pistol"),
            ("Smith & Wesson Model 29", "revolver"), ("AK-47", "assault_rifle"), ("AKM", "assault_rifle"),
            ("AR-15", "assault_rifle"), ("M4", "assault_rifle"), ("HK416", "assault_rifle"), ("Skorpion", "submachine_gun"),
            ("Uzi", "submachine_gun"), ("MP5", "submachine_gun"), ("Remington 870", "shotgun"), ("Mossberg 500", "shotgun"),
            ("Zoraki 917", "converted_blank"),
        ];
        TaxonomyConfig {
            top10: top10.iter().map(|s| s.to_string()).collect(),
            model_to_class: models.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    pub schema_id: String,
    pub year_min: i32,
    pub year_max: i32,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig { schema_id: "abstract-v1".into(), year_min: 2015, year_max: 2030 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationConfig {
    pub criteria: Vec<CorrelationCriterion>,
    pub threshold: f64,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        let c = |a, cmp, w| CorrelationCriterion::new(a, cmp, w).expect("valid default criterion");
        CorrelationConfig {
            criteria: vec![
                c(CriterionAttribute::Name, Comparator::Fuzzy, 2.0),
                c(CriterionAttribute::Username, Comparator::Fuzzy, 2.0),
                c(CriterionAttribute::Quarter, Comparator::Exact, 1.0),
                c(CriterionAttribute::Continent, Comparator::Exact, 1.0),
                c(CriterionAttribute::FirearmClass, Comparator::Exact, 1.0),
            ],
            threshold: 0.4,
        }
    }
}

fn default_dbscan() -> DbscanParams {
    DbscanParams { eps: 1.5, min_pts: 2, metric: Metric::Euclidean }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IncidentConfig {
    pub criteria: EligibilityCriteria,
    pub gazetteer: Gazetteer,
    pub z_threshold: f64,
}

impl Default for IncidentConfig {
    fn default() -> Self {
        IncidentConfig { criteria: EligibilityCriteria::default(), gazetteer: Gazetteer::builtin(), z_threshold: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconConfig {
    pub threshold: f64,
    pub terms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NluConfig {
    pub listing_rules: Vec<HtmlRule>,
    pub specs: SpecGazetteer,
    pub thread: ThreadGazetteer,
    pub relevance: LexiconConfig,
    pub suspicion: LexiconConfig,
    pub intents: LexiconIntentClassifier,
    pub summary_budget: usize,
    pub detectors: DetectorVocabulary,
}

fn lexicon(pairs: &[(&str, f64)], threshold: f64) -> LexiconConfig {
    LexiconConfig { threshold, terms: pairs.iter().map(|(t, w)| (t.to_string(), *w)).collect() }
}

impl Default for NluConfig {
    fn default() -> Self {
        use crate::nlu::PostProcess::*;
        let words = |xs: &[&str]| xs.iter().map(|s| (s.to_string(), 1.0)).collect();
        NluConfig {
            listing_rules: vec![
                HtmlRule::new("title", "h1.listing-title", Text),
                HtmlRule::new("price", ".price", CurrencySplit),
                HtmlRule::new("seller", ".vendor", Text),
                HtmlRule::new("shipping", ".shipping", Text),
                HtmlRule::new("description", ".description", Text),
                HtmlRule::new("url", "link[rel=canonical]", Text).attr("href"),
            ],
            specs: SpecGazetteer::builtin(),
            thread: ThreadGazetteer::builtin(),
            relevance: lexicon(
                &[("glock", 0.6), ("pistol", 0.5), ("rifle", 0.5), ("ammo", 0.4), ("gun", 0.4), ("respawn", -0.8), ("loadout", -0.8)],
                0.5,
            ),
            suspicion: lexicon(&[("selling", 0.6), ("dm me", 0.4), ("no questions", 0.5), ("looking for", 0.5)], 0.5),
            intents: LexiconIntentClassifier {
                offer: words(&["selling", "for sale", "wts"]),
                request: words(&["looking for", "wtb", "need"]),
                exchange: words(&["trade", "swap"]),
            },
            summary_budget: 280,
            detectors: DetectorVocabulary::builtin(),
        }
    }
}

impl NluConfig {
    pub fn relevance(&self) -> Result<WeightedLexicon, NluError> {
        WeightedLexicon::new("relevance", self.relevance.terms.clone(), self.relevance.threshold)
    }

    pub fn suspicion(&self) -> Result<WeightedLexicon, NluError> {
        WeightedLexicon::new("suspicion", self.suspicion.terms.clone(), self.suspicion.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub flags: FlagRules,
    pub watchlist: Vec<String>,
    pub link: LinkParamsConfig,
    /// Known listing prices (USD) used to annotate cross-chain links.
    pub price_catalog: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkParamsConfig {
    pub window_hours: i64,
    pub tolerance_usd: f64,
}

impl Default for LinkParamsConfig {
    fn default() -> Self {
        let d = LinkParams::default();
        LinkParamsConfig { window_hours: d.window / 3600, tolerance_usd: d.tolerance }
    }
}

impl LinkParamsConfig {
    pub fn params(&self) -> LinkParams {
        LinkParams { window: self.window_hours * 3600, tolerance: self.tolerance_usd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    /// Store mapping files.
    pub stores: Vec<PathBuf>,
    pub policy: Option<PathBuf>,
    pub timeout_ms: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig { stores: Vec::new(), policy: None, timeout_ms: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub users: Option<PathBuf>,
    pub token_ttl_secs: i64,
    pub lockout_after: u32,
    /// Object classes accepted in parcel analysis reports.
    pub parcel_classes: Vec<String>,
    /// Firearm types accepted in firearm identification reports.
    pub firearm_types: Vec<String>,
    pub max_candidates: usize,
    pub page_size: usize,
    /// Where the graph, quarantine and service state live; in memory when absent.
    pub data_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let parcel = [
            "Revolver", "Shotgun", "Pistol", "Rifle", "Submachine_Gun", "Knife", "Grenade", "Ammunition", "Magazine",
            "Gun_Part",
        ];
        let types = [
            "pistol", "revolver", "rifle", "shotgun", "submachine_gun", "assault_rifle", "machine_gun", "sniper_rifle",
            "grenade_launcher", "converted_blank",
        ];
        ServiceConfig {
            users: None,
            token_ttl_secs: 8 * 3600,
            lockout_after: 5,
            parcel_classes: parcel.iter().map(|s| s.to_string()).collect(),
            firearm_types: types.iter().map(|s| s.to_string()).collect(),
            max_candidates: 5,
            page_size: 50,
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(default)]
    pub taxonomy: TaxonomyConfig,
    #[serde(default)]
    pub encoding: EncodingConfig,
    #[serde(default)]
    pub correlation: CorrelationConfig,
    #[serde(default = "default_dbscan")]
    pub dbscan: DbscanParams,
    /// Bayesian network definition file.
    pub network: Option<PathBuf>,
    #[serde(default)]
    pub cleanse: CleanseConfig,
    #[serde(default)]
    pub incidents: IncidentConfig,
    #[serde(default)]
    pub nlu: NluConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub service: ServiceConfig,
    /// Directory for resolving relative paths; set by [`Config::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            taxonomy: TaxonomyConfig::default(),
            encoding: EncodingConfig::default(),
            correlation: CorrelationConfig::default(),
            dbscan: default_dbscan(),
            network: None,
            cleanse: CleanseConfig::default(),
            incidents: IncidentConfig::default(),
            nlu: NluConfig::default(),
            chain: ChainConfig::default(),
            federation: FederationConfig::default(),
            service: ServiceConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
        let path = path.as_ref();
        let mut cfg: Config = load_toml(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.check()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Validates the parts that have invariants of their own.
    pub fn check(&self) -> Result<(), ConfigError> {
        self.taxonomy()?;
        self.dbscan.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.correlation.criteria.is_empty() {
            return Err(ConfigError::Invalid("correlation.criteria is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.correlation.threshold) {
            return Err(ConfigError::Invalid(format!("correlation.threshold {} outside [0, 1]", self.correlation.threshold)));
        }
        if self.encoding.year_min > self.encoding.year_max {
            return Err(ConfigError::Invalid("encoding.year_min exceeds year_max".into()));
        }
        let classes: BTreeSet<&String> = self.service.parcel_classes.iter().collect();
        if classes.len() != 10 || self.service.parcel_classes.len() != 10 {
            return Err(ConfigError::Invalid("service.parcel_classes must list 10 distinct classes".into()));
        }
        self.nlu.relevance()?;
        self.nlu.suspicion()?;
        DetectorVocabulary::new(self.nlu.detectors.classes.clone(), self.nlu.detectors.secondary_subset.clone())?;
        Ok(())
    }

    pub fn taxonomy(&self) -> Result<FirearmTaxonomy, ConfigError> {
        Ok(FirearmTaxonomy::new(self.taxonomy.top10.clone(), self.taxonomy.model_to_class.clone())?)
    }

    pub fn schema(&self) -> Result<EncodingSchema, ConfigError> {
        let tax = self.taxonomy()?;
        Ok(EncodingSchema::new(self.encoding.schema_id.clone(), &tax, self.encoding.year_min, self.encoding.year_max))
    }

    /// Loads and validates the configured Bayesian network.
    pub fn network(&self) -> Result<Option<BayesNet>, ConfigError> {
        let Some(p) = &self.network else { return Ok(None) };
        let path = self.resolve(p);
        let net = parse_network(&read(&path)?).map_err(|e| ConfigError::Network { path: path.clone(), message: e.to_string() })?;
        let violations = validate_network(&net);
        if !violations.is_empty() {
            let msg = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
            return Err(ConfigError::Network { path, message: msg });
        }
        Ok(Some(net))
    }

    pub fn policy(&self) -> Result<AccessPolicy, ConfigError> {
        match &self.federation.policy {
            None => Ok(AccessPolicy::default()),
            Some(p) => load_toml(&self.resolve(p)),
        }
    }
}
