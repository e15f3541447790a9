//! End-to-end orchestration: ingest files into the graph, then correlate,
//! cluster and evaluate what the graph holds.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{BayesNet, Evidence, EventObservation};
use crate::chain::{build_profiles, flag_transactions, link_cross_chain, preprocess, read_csv, Chain, ChainTx, CrossChainLink, TxFlag, Watchlist};
use crate::config::{Config, ConfigError};
use crate::correlation::{build_correlations, cluster_entities, CorrelationEdge, CorrelationError, CorrelationInput, EntityClusters};
use crate::domain::{abstract_entity, default_continents, validate_record, Continent, EncodingSchema, EntityKind, FirearmTaxonomy};
use crate::graph::ingest::{read_messages, topic_for_path, QuarantineEntry};
use crate::graph::{GraphError, GraphSnapshot, GraphStore, IngestMessage, IngestStats, Ingestor, RawPayload};
use crate::incident::{compute_risk_indicators, extract_incident, filter_eligible, Extraction, IncidentMatchers, NewsArticle, RiskReport};
use crate::nlu::{parse_listing, ListingRecord, NluError, Ruleset};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Nlu(#[from] NluError),
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("no Bayesian network configured")]
    NoNetwork,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRun {
    pub entity_count: usize,
    pub edges: Vec<CorrelationEdge>,
    pub clusters: EntityClusters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEvaluation {
    pub event_id: String,
    pub evidence: Evidence,
    pub priority: f64,
    pub cause_posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFailure {
    pub event_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncidentRun {
    pub eligible: usize,
    pub rejected: Vec<(String, String)>,
    pub extractions: Vec<Extraction>,
    pub risk: RiskReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainRun {
    pub transactions: usize,
    pub addresses: usize,
    pub flags: Vec<TxFlag>,
    pub links: Vec<CrossChainLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRun {
    pub priorities: Vec<EventEvaluation>,
    pub failures: Vec<EvaluationFailure>,
    pub incidents: IncidentRun,
    pub chain: ChainRun,
}

/// Stable per-record key for a parsed listing page.
pub fn listing_key(listing: &ListingRecord, fallback: &str) -> String {
    format!("listing:{}", listing.url.as_deref().unwrap_or(fallback))
}

/// A parsed listing as an agent record for the `listings` topic: the seller
/// becomes the agent and the offer details become attributes.
pub fn listing_payload(listing: &ListingRecord, key: &str) -> RawPayload {
    let mut p: Vec<(String, String)> = vec![("id".into(), key.into()), ("kind".into(), "agent".into())];
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            p.push((k.into(), v));
        }
    };
    push("username", Some(listing.seller.clone().unwrap_or_else(|| "unknown_vendor".into())));
    push("firearm_model", listing.specs.model.clone());
    push("source", Some("darkweb_listing".into()));
    push("title", Some(listing.title.clone()));
    push("listed_price", listing.price.as_ref().map(|pr| format!("{} {}", pr.amount, pr.currency)));
    push("caliber", listing.specs.caliber.clone());
    push("quantity", listing.specs.quantity.map(|q| q.to_string()));
    push("shipping", listing.shipping.clone());
    push("url", listing.url.clone());
    push("channel", Some("darknet".into()));
    RawPayload(p)
}

/// Network evidence read from a record's attributes: every attribute named
/// after a non-priority network node whose value is one of its states.
pub fn evidence_for(attributes: &BTreeMap<String, String>, net: &BayesNet) -> Evidence {
    net.nodes()
        .iter()
        .filter(|n| Some(n.name.as_str()) != net.priority_node())
        .filter_map(|n| {
            let v = attributes.get(&n.name)?;
            n.states.contains(v).then(|| (n.name.clone(), v.clone()))
        })
        .collect()
}

pub struct Pipeline {
    config: Config,
    taxonomy: FirearmTaxonomy,
    schema: EncodingSchema,
    continents: HashMap<String, Continent>,
    network: Option<BayesNet>,
    ruleset: Ruleset,
    ingestor: Ingestor,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("schema", &self.schema.schema_id).finish()
    }
}

impl Pipeline {
    /// Builds the pipeline over an in-memory graph, or over files in
    /// `service.data_dir` when configured.
    pub fn new(config: Config) -> Result<Pipeline, PipelineError> {
        let store = match &config.service.data_dir {
            Some(d) => Arc::new(GraphStore::open(config.resolve(d).join("graph.ndjson"))?),
            None => Arc::new(GraphStore::in_memory()),
        };
        Self::with_store(config, store)
    }

    pub fn with_store(config: Config, store: Arc<GraphStore>) -> Result<Pipeline, PipelineError> {
        config.check()?;
        let mut ingestor = Ingestor::new(store, config.cleanse.clone());
        if let Some(d) = &config.service.data_dir {
            ingestor = ingestor.with_quarantine_file(config.resolve(d).join("quarantine.ndjson"))?;
        }
        Ok(Pipeline {
            taxonomy: config.taxonomy()?,
            schema: config.schema()?,
            continents: default_continents(),
            network: config.network()?,
            ruleset: Ruleset::new(config.nlu.listing_rules.clone())?,
            ingestor,
            config,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn network(&self) -> Option<&BayesNet> {
        self.network.as_ref()
    }

    pub fn taxonomy(&self) -> &FirearmTaxonomy {
        &self.taxonomy
    }

    pub fn ingestor(&self) -> &Ingestor {
        &self.ingestor
    }

    pub fn snapshot(&self) -> Arc<GraphSnapshot> {
        self.ingestor.store().snapshot()
    }

    pub fn ingest_messages(&self, messages: Vec<IngestMessage>) -> Result<IngestStats, PipelineError> {
        Ok(self.ingestor.ingest(messages)?)
    }

    /// Ingests one input file. Newline-delimited JSON files take their topic
    /// from the file name (`news.ndjson`, `chain.btc.jsonl`, ...); `chain.*.csv`
    /// files are ledger tables; `.html` files are marketplace pages.
    pub fn ingest_file(&self, path: &Path) -> Result<IngestStats, PipelineError> {
        let input_err = |message: String| PipelineError::Input { path: path.display().to_string(), message };
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext.eq_ignore_ascii_case("html") || ext.eq_ignore_ascii_case("htm") {
            let html = fs::read_to_string(path).map_err(|e| input_err(e.to_string()))?;
            let listing = parse_listing(&html, &self.ruleset, &self.config.nlu.specs).map_err(|e| input_err(e.to_string()))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("page");
            let key = listing_key(&listing, stem);
            let msg = IngestMessage::new("listings", key.clone(), 1, listing_payload(&listing, &key));
            return self.ingest_messages(vec![msg]);
        }
        let topic = topic_for_path(path).ok_or_else(|| input_err("cannot infer topic from file name".into()))?;
        let file = fs::File::open(path).map_err(|e| input_err(e.to_string()))?;
        if ext.eq_ignore_ascii_case("csv") {
            let chain = if topic == "chain.btc" { Chain::Btc } else { Chain::Eth };
            let (txs, bad) = read_csv(file).map_err(|e| input_err(e.to_string()))?;
            let mut stats = IngestStats { consumed: bad.len(), rejected: bad.len(), ..Default::default() };
            for b in bad {
                self.ingestor.quarantine_entry(QuarantineEntry {
                    topic: topic.into(),
                    key: String::new(),
                    offset: b.row as u64,
                    reason: "malformed_row".into(),
                    detail: b.reason,
                    payload: RawPayload::default(),
                });
            }
            let msgs = txs
                .into_iter()
                .enumerate()
                .map(|(i, tx)| IngestMessage::new(chain.topic(), tx.txid.clone(), i as u64 + 1, tx_payload(&tx)))
                .collect();
            stats.add(self.ingest_messages(msgs)?);
            return Ok(stats);
        }
        let read = read_messages(BufReader::new(file), topic).map_err(|e| input_err(e.to_string()))?;
        let mut stats = IngestStats { consumed: read.malformed.len(), rejected: read.malformed.len(), ..Default::default() };
        for m in read.malformed {
            self.ingestor.quarantine_entry(m);
        }
        stats.add(self.ingest_messages(read.messages)?);
        Ok(stats)
    }

    pub fn ingest_files<P: AsRef<Path>>(&self, paths: &[P]) -> Result<IngestStats, PipelineError> {
        let mut stats = IngestStats::default();
        for p in paths {
            stats.add(self.ingest_file(p.as_ref())?);
        }
        Ok(stats)
    }

    pub fn flush(&self) -> Result<(), PipelineError> {
        Ok(self.ingestor.flush()?)
    }

    /// Agents and events in the graph, abstracted, ordered by id.
    pub fn entities(&self) -> Vec<CorrelationInput> {
        let snap = self.snapshot();
        snap.nodes()
            .filter(|n| n.label == "agent" || n.label == "event")
            .filter_map(|n| validate_record(&n.properties).ok())
            .map(|record| {
                let abstracted = abstract_entity(&record, &self.taxonomy, &self.continents);
                CorrelationInput { record, abstracted }
            })
            .collect()
    }

    pub fn correlate(&self) -> Result<CorrelationRun, PipelineError> {
        let entities = self.entities();
        let edges = build_correlations(&entities, &self.config.correlation.criteria, self.config.correlation.threshold)?;
        let abstracted: Vec<_> = entities.iter().map(|e| e.abstracted.clone()).collect();
        let clusters = cluster_entities(&abstracted, &self.config.dbscan, &self.schema)?;
        Ok(CorrelationRun { entity_count: entities.len(), edges, clusters })
    }

    /// Priority and cause posterior for every event in the graph.
    pub fn evaluate_events(&self) -> Result<(Vec<EventEvaluation>, Vec<EvaluationFailure>), PipelineError> {
        let net = self.network.as_ref().ok_or(PipelineError::NoNetwork)?;
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        for e in self.entities().into_iter().filter(|e| e.record.kind == EntityKind::Event) {
            let evidence = evidence_for(&e.record.attributes, net);
            match EventObservation::evaluate(net, e.record.id.clone(), evidence) {
                Ok(o) => ok.push(EventEvaluation {
                    event_id: o.event_id,
                    evidence: o.evidence,
                    priority: o.priority,
                    cause_posterior: o.cause_posterior,
                }),
                Err(err) => failed.push(EvaluationFailure { event_id: e.record.id, error: err.to_string() }),
            }
        }
        Ok((ok, failed))
    }

    pub fn observations(&self) -> Result<Vec<EventObservation>, PipelineError> {
        Ok(self
            .evaluate_events()?
            .0
            .into_iter()
            .map(|e| EventObservation { event_id: e.event_id, evidence: e.evidence, priority: e.priority, cause_posterior: e.cause_posterior })
            .collect())
    }

    pub fn articles(&self) -> Vec<NewsArticle> {
        self.snapshot()
            .nodes()
            .filter(|n| n.label == "news_article")
            .filter_map(|n| NewsArticle::from_map(&n.properties).ok())
            .collect()
    }

    pub fn incidents(&self) -> IncidentRun {
        let cfg = &self.config.incidents;
        let outcome = filter_eligible(self.articles(), &cfg.criteria);
        let matchers = IncidentMatchers::new(&cfg.criteria);
        let extractions: Vec<Extraction> =
            outcome.eligible.iter().filter_map(|a| extract_incident(a, &matchers, &cfg.gazetteer).ok()).collect();
        let records: Vec<_> = extractions.iter().map(|x| x.record.clone()).collect();
        let risk = compute_risk_indicators(&records, cfg.z_threshold).unwrap_or_default();
        IncidentRun {
            eligible: outcome.eligible.len(),
            rejected: outcome.rejected.into_iter().map(|(a, r)| (a.url, r.as_str().to_string())).collect(),
            extractions,
            risk,
        }
    }

    pub fn transactions(&self) -> Vec<ChainTx> {
        self.snapshot()
            .nodes()
            .filter(|n| n.label == "transaction")
            .filter_map(|n| ChainTx::from_map(&n.properties).ok())
            .collect()
    }

    pub fn chain(&self) -> Result<ChainRun, PipelineError> {
        let cfg = &self.config.chain;
        let txs = preprocess(self.transactions()).txs;
        let profiles = build_profiles(&txs);
        let (btc, eth): (Vec<_>, Vec<_>) = profiles.iter().cloned().partition(|p| p.chain == Chain::Btc);
        let watchlist = Watchlist::new(cfg.watchlist.iter().map(|a| (a.clone(), a.clone())));
        let flags = flag_transactions(&txs, &watchlist, &cfg.flags);
        let links = link_cross_chain(&btc, &eth, &cfg.price_catalog, &cfg.link.params())
            .map_err(|e| PipelineError::Input { path: "chain".into(), message: e.to_string() })?;
        Ok(ChainRun { transactions: txs.len(), addresses: profiles.len(), flags, links })
    }

    pub fn evaluate(&self) -> Result<EvaluationRun, PipelineError> {
        let (priorities, failures) = self.evaluate_events()?;
        Ok(EvaluationRun { priorities, failures, incidents: self.incidents(), chain: self.chain()? })
    }
}

fn tx_payload(tx: &ChainTx) -> RawPayload {
    [
        ("chain", tx.chain.to_string()),
        ("txid", tx.txid.clone()),
        ("from", tx.from.clone()),
        ("to", tx.to.clone()),
        ("amount", tx.amount.to_string()),
        ("usd_value", tx.usd_value.to_string()),
        ("timestamp", tx.timestamp.to_string()),
    ]
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::parse_network;

    const NET: &str = "node cause {a, b}\nnode priority {high, low} <- cause\nnode channel {darknet, surface} <- cause\n\
        prob cause = 0.5 0.5\nprob priority | a = 0.9 0.1\nprob priority | b = 0.2 0.8\n\
        prob channel | a = 0.8 0.2\nprob channel | b = 0.3 0.7\n\
        designate priority = priority high\ndesignate cause = cause\n";

    #[test]
    fn evidence_uses_matching_attributes_only() {
        let net = parse_network(NET).unwrap();
        let attrs: BTreeMap<String, String> = [("channel", "darknet"), ("priority", "high"), ("cause", "zzz"), ("other", "x")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let ev = evidence_for(&attrs, &net);
        assert_eq!(ev, [("channel".to_string(), "darknet".to_string())].into_iter().collect());
    }

    #[test]
    fn ingest_then_correlate_in_memory() {
        let p = Pipeline::new(Config::default()).unwrap();
        let ev = |id: &str, name: &str| {
            let payload = [("id", id), ("kind", "agent"), ("name", name), ("country", "FR"), ("firearm_model", "Glock 17")];
            IngestMessage::new("forums", id, 1, payload.into_iter().collect())
        };
        p.ingest_messages(vec![ev("a1", "Jon Smith"), ev("a2", "John Smith"), ev("a3", "Zed")]).unwrap();
        let run = p.correlate().unwrap();
        assert_eq!(run.entity_count, 3);
        assert!(run.edges.iter().any(|e| e.a == "a1" && e.b == "a2"));
        assert_eq!(p.evaluate_events().unwrap_err().to_string(), PipelineError::NoNetwork.to_string());
    }
}

