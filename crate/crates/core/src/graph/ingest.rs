//! Keyed, idempotent ingestion of topic messages into the graph store.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cleanse::{CleanseConfig, RawPayload};
use super::store::{Cursor, GraphError, GraphStore, PropertyEdge, PropertyNode, WriteBatch, WriteOp};
use crate::chain::{Chain, ChainTx};
use crate::domain::{validate_record, Source};
use crate::incident::{IncidentError, NewsArticle};

pub const TOPICS: [&str; 6] = ["listings", "forums", "news", "chain.btc", "chain.eth", "detector_reports"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestMessage {
    pub topic: String,
    pub key: String,
    pub payload: RawPayload,
    pub offset: u64,
}

impl IngestMessage {
    pub fn new(topic: impl Into<String>, key: impl Into<String>, offset: u64, payload: RawPayload) -> Self {
        IngestMessage { topic: topic.into(), key: key.into(), payload, offset }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub consumed: usize,
    pub upserted: usize,
    pub rejected: usize,
    /// Messages whose key already holds an equal or newer offset.
    pub duplicates: usize,
}

impl IngestStats {
    pub fn add(&mut self, o: IngestStats) {
        self.consumed += o.consumed;
        self.upserted += o.upserted;
        self.rejected += o.rejected;
        self.duplicates += o.duplicates;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub topic: String,
    pub key: String,
    pub offset: u64,
    pub reason: String,
    pub detail: String,
    pub payload: RawPayload,
}

/// Rejected messages, one entry per `(topic, offset)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Quarantine {
    entries: BTreeMap<(String, u64), QuarantineEntry>,
}

impl Quarantine {
    pub fn insert(&mut self, e: QuarantineEntry) {
        self.entries.entry((e.topic.clone(), e.offset)).or_insert(e);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &QuarantineEntry> {
        self.entries.values()
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in self.entries.values() {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> std::io::Result<Quarantine> {
        let mut q = Quarantine::default();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            q.insert(serde_json::from_str(&line).map_err(std::io::Error::from)?);
        }
        Ok(q)
    }
}

/// Why a message was rejected: a short machine reason plus detail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub reason: &'static str,
    pub detail: String,
}

fn reject(reason: &'static str, detail: impl Into<String>) -> Rejection {
    Rejection { reason, detail: detail.into() }
}

fn entity_source(topic: &str) -> Option<Source> {
    match topic {
        "listings" => Some(Source::DarkwebListing),
        "forums" => Some(Source::Forum),
        "detector_reports" => Some(Source::DetectorReport),
        _ => None,
    }
}

pub fn tx_node_id(chain: Chain, txid: &str) -> String {
    format!("tx:{chain}:{txid}")
}

pub fn address_node_id(chain: Chain, address: &str) -> String {
    format!("addr:{chain}:{address}")
}

/// Turns a cleansed, validated message into the record write it implies.
pub fn prepare(msg: &IngestMessage, cleanse: &CleanseConfig) -> Result<WriteOp, Rejection> {
    if msg.key.trim().is_empty() {
        return Err(reject("empty_key", "message key is empty"));
    }
    if !TOPICS.contains(&msg.topic.as_str()) {
        return Err(reject("unknown_topic", format!("unknown topic `{}`", msg.topic)));
    }
    let clean = cleanse.cleanse(&msg.payload).map_err(|e| reject(e.reason(), e.to_string()))?;
    let mut map = clean.to_map();
    let cursor = Cursor { offset: msg.offset, topic: msg.topic.clone() };
    let record = |node, aux_nodes, edges| WriteOp::Record { key: msg.key.clone(), cursor: cursor.clone(), node, aux_nodes, edges };

    if let Some(source) = entity_source(&msg.topic) {
        let id = map.entry("id".into()).or_insert_with(|| msg.key.clone());
        if *id != msg.key {
            return Err(reject("key_mismatch", format!("record id `{id}` differs from key `{}`", msg.key)));
        }
        map.entry("source".into()).or_insert_with(|| source.as_str().to_string());
        let rec = validate_record(&map).map_err(|e| reject("invalid_record", e.to_string()))?;
        let mut node = PropertyNode::new(rec.id.clone(), rec.kind.to_string());
        node.properties = rec.to_raw();
        return Ok(record(node, vec![], vec![]));
    }

    if msg.topic == "news" {
        map.entry("url".into()).or_insert_with(|| msg.key.clone());
        let article = NewsArticle::from_map(&map).map_err(|e| {
            let reason = match e {
                IncidentError::MissingUrl => "missing_url",
                _ => "invalid_article",
            };
            reject(reason, e.to_string())
        })?;
        if article.url != msg.key {
            return Err(reject("key_mismatch", format!("url `{}` differs from key `{}`", article.url, msg.key)));
        }
        let mut node = PropertyNode::new(msg.key.clone(), "news_article");
        node.properties = map;
        return Ok(record(node, vec![], vec![]));
    }

    let chain = if msg.topic == "chain.btc" { Chain::Btc } else { Chain::Eth };
    let declared = map.entry("chain".into()).or_insert_with(|| chain.to_string()).clone();
    if declared.parse::<Chain>() != Ok(chain) {
        return Err(reject("chain_mismatch", format!("chain `{declared}` on topic `{}`", msg.topic)));
    }
    map.entry("txid".into()).or_insert_with(|| msg.key.clone());
    let tx = ChainTx::from_map(&map).map_err(|e| reject("invalid_transaction", e))?;
    if tx.txid != msg.key {
        return Err(reject("key_mismatch", format!("txid `{}` differs from key `{}`", tx.txid, msg.key)));
    }
    let from = chain.normalize_address(&tx.from);
    let to = chain.normalize_address(&tx.to);
    let tx_id = tx_node_id(chain, &tx.txid);
    let node = PropertyNode::new(tx_id.clone(), "transaction")
        .with("chain", chain.to_string())
        .with("txid", tx.txid.clone())
        .with("from", from.clone())
        .with("to", to.clone())
        .with("amount", tx.amount.to_string())
        .with("usd_value", tx.usd_value.to_string())
        .with("timestamp", tx.timestamp.to_string());
    let addr = |a: &str| PropertyNode::new(address_node_id(chain, a), "address").with("chain", chain.to_string()).with("address", a);
    let mut aux = vec![addr(&from)];
    if to != from {
        aux.push(addr(&to));
    }
    let edges = vec![
        PropertyEdge::new(address_node_id(chain, &from), tx_id.clone(), "sent"),
        PropertyEdge::new(tx_id, address_node_id(chain, &to), "received_by"),
    ];
    Ok(record(node, aux, edges))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Messages per committed write batch.
    pub batch_size: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { batch_size: 256 }
    }
}

/// Single committer over a shared store; message preparation runs in parallel.
#[derive(Debug)]
pub struct Ingestor {
    store: Arc<GraphStore>,
    cleanse: CleanseConfig,
    options: IngestOptions,
    quarantine: Mutex<Quarantine>,
    quarantine_path: Option<PathBuf>,
}

impl Ingestor {
    pub fn new(store: Arc<GraphStore>, cleanse: CleanseConfig) -> Self {
        Ingestor { store, cleanse, options: IngestOptions::default(), quarantine: Mutex::default(), quarantine_path: None }
    }

    pub fn with_options(mut self, options: IngestOptions) -> Self {
        self.options = options;
        self
    }

    /// Loads and later rewrites a newline-delimited quarantine file.
    pub fn with_quarantine_file(mut self, path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = path.as_ref().to_path_buf();
        if path.exists() {
            *self.quarantine.lock() = Quarantine::read_ndjson(std::io::BufReader::new(fs::File::open(&path)?))?;
        }
        self.quarantine_path = Some(path);
        Ok(self)
    }

    pub fn store(&self) -> &Arc<GraphStore> {
        &self.store
    }

    pub fn quarantine(&self) -> Quarantine {
        self.quarantine.lock().clone()
    }

    pub fn quarantine_entry(&self, entry: QuarantineEntry) {
        self.quarantine.lock().insert(entry);
    }

    pub fn ingest<I: IntoIterator<Item = IngestMessage>>(&self, messages: I) -> Result<IngestStats, GraphError> {
        let messages: Vec<IngestMessage> = messages.into_iter().collect();
        let mut stats = IngestStats::default();
        for chunk in messages.chunks(self.options.batch_size.max(1)) {
            let prepared: Vec<Result<WriteOp, Rejection>> =
                chunk.par_iter().map(|m| prepare(m, &self.cleanse)).collect();
            let mut batch = WriteBatch::new();
            for (msg, p) in chunk.iter().zip(prepared) {
                stats.consumed += 1;
                match p {
                    Ok(op) => {
                        batch.push(op);
                    }
                    Err(r) => {
                        stats.rejected += 1;
                        self.quarantine_entry(QuarantineEntry {
                            topic: msg.topic.clone(),
                            key: msg.key.clone(),
                            offset: msg.offset,
                            reason: r.reason.to_string(),
                            detail: r.detail,
                            payload: msg.payload.clone(),
                        });
                    }
                }
            }
            let outcome = self.store.commit(batch)?;
            stats.upserted += outcome.applied_records;
            stats.duplicates += outcome.stale_records;
        }
        Ok(stats)
    }

    /// Persists the graph and the quarantine file, if configured.
    pub fn flush(&self) -> Result<(), GraphError> {
        self.store.persist()?;
        if let Some(path) = &self.quarantine_path {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut w = BufWriter::new(fs::File::create(path)?);
            self.quarantine.lock().write_ndjson(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }
}

/// Parsed input lines plus entries for lines that are not JSON objects.
#[derive(Debug, Clone, Default)]
pub struct ReadOutcome {
    pub messages: Vec<IngestMessage>,
    pub malformed: Vec<QuarantineEntry>,
}

fn default_key(topic: &str, payload: &RawPayload) -> Option<String> {
    let field = match topic {
        "news" => "url",
        "chain.btc" | "chain.eth" => "txid",
        _ => "id",
    };
    payload.get(field).map(|s| s.trim().to_string())
}

/// Reads newline-delimited JSON. A line is either an envelope
/// `{"topic", "key", "offset", "payload"}` or a bare record, which is assigned
/// `default_topic`, a key from its id field and its 1-based line number as offset.
pub fn read_messages<R: BufRead>(r: R, default_topic: &str) -> std::io::Result<ReadOutcome> {
    let mut out = ReadOutcome::default();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |detail: String| QuarantineEntry {
            topic: default_topic.to_string(),
            key: String::new(),
            offset: line_no,
            reason: "malformed_json".into(),
            detail,
            payload: RawPayload(vec![("line".into(), line.clone())]),
        };
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                out.malformed.push(malformed(e.to_string()));
                continue;
            }
        };
        let is_envelope = value.get("payload").is_some_and(|p| p.is_object());
        if is_envelope {
            match serde_json::from_value::<IngestMessage>(value) {
                Ok(m) => out.messages.push(m),
                Err(e) => out.malformed.push(malformed(e.to_string())),
            }
        } else if value.is_object() {
            let payload: RawPayload = serde_json::from_str(&line).map_err(std::io::Error::from)?;
            let key = default_key(default_topic, &payload).unwrap_or_default();
            out.messages.push(IngestMessage::new(default_topic, key, line_no, payload));
        } else {
            out.malformed.push(malformed("line is not a JSON object".into()));
        }
    }
    Ok(out)
}

/// Topic implied by a file name such as `chain.btc.ndjson` or `news.jsonl`.
pub fn topic_for_path(path: &Path) -> Option<&'static str> {
    let name = path.file_name()?.to_str()?;
    TOPICS.iter().copied().filter(|t| name.starts_with(t)).max_by_key(|t| t.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(id: &str, country: &str, offset: u64) -> IngestMessage {
        let payload = [("id", id), ("kind", "event"), ("date", "14/05/2023"), ("country", country)].into_iter().collect();
        IngestMessage::new("listings", id, offset, payload)
    }

    #[test]
    fn duplicate_delivery_is_idempotent() {
        let ing = Ingestor::new(Arc::new(GraphStore::in_memory()), CleanseConfig::default());
        let stats = ing.ingest(vec![event("e1", "fr", 1), event("e1", "fr", 1)]).unwrap();
        assert_eq!(stats, IngestStats { consumed: 2, upserted: 1, rejected: 0, duplicates: 1 });
        let snap = ing.store().snapshot();
        assert_eq!(snap.node_count(), 1);
        let n = snap.node("e1").unwrap();
        assert_eq!(n.properties.get("country").map(String::as_str), Some("FR"));
        assert_eq!(n.properties.get("date").map(String::as_str), Some("2023-05-14"));
        assert_eq!(n.properties.get("source").map(String::as_str), Some("darkweb_listing"));
    }

    #[test]
    fn invalid_payload_is_quarantined() {
        let ing = Ingestor::new(Arc::new(GraphStore::in_memory()), CleanseConfig::default());
        let bad = IngestMessage::new("forums", "a1", 1, [("kind", "agent")].into_iter().collect());
        let stats = ing.ingest(vec![bad.clone(), bad]).unwrap();
        assert_eq!(stats.rejected, 2);
        let q = ing.quarantine();
        assert_eq!(q.len(), 1);
        assert_eq!(q.entries().next().unwrap().reason, "invalid_record");
        assert_eq!(ing.store().snapshot().node_count(), 0);
    }

    #[test]
    fn later_offset_wins_regardless_of_order() {
        let a = Ingestor::new(Arc::new(GraphStore::in_memory()), CleanseConfig::default());
        let b = Ingestor::new(Arc::new(GraphStore::in_memory()), CleanseConfig::default());
        a.ingest(vec![event("e1", "FR", 1), event("e1", "DE", 2)]).unwrap();
        b.ingest(vec![event("e1", "DE", 2), event("e1", "FR", 1)]).unwrap();
        assert_eq!(a.store().snapshot().export_bytes(), b.store().snapshot().export_bytes());
        assert_eq!(a.store().snapshot().node("e1").unwrap().properties["country"], "DE");
    }

    #[test]
    fn transactions_link_addresses() {
        let ing = Ingestor::new(Arc::new(GraphStore::in_memory()), CleanseConfig::default());
        let tx = |txid: &str, to: &str, off| {
            let p = [("txid", txid), ("from", "0xAB"), ("to", to), ("amount", "1.5"), ("usd_value", "3000"), ("timestamp", "1700000000")];
            IngestMessage::new("chain.eth", txid, off, p.into_iter().collect())
        };
        ing.ingest(vec![tx("t1", "0xCD", 1)]).unwrap();
        let snap = ing.store().snapshot();
        assert!(snap.contains_edge("addr:eth:0xab", "tx:eth:t1", "sent"));
        assert!(snap.contains_edge("tx:eth:t1", "addr:eth:0xcd", "received_by"));
        ing.ingest(vec![tx("t1", "0xEF", 2)]).unwrap();
        let snap = ing.store().snapshot();
        assert!(snap.node("addr:eth:0xcd").is_none());
        assert_eq!(snap.node_count(), 3);
        snap.check_integrity().unwrap();
    }

    #[test]
    fn reads_envelopes_and_bare_records() {
        let input = concat!(
            "{\"topic\":\"news\",\"key\":\"u1\",\"offset\":7,\"payload\":{\"url\":\"u1\",\"body\":\"x\"}}\n",
            "{\"id\":\"e9\",\"kind\":\"event\",\"date\":\"2023-01-01\"}\n",
            "not json\n"
        );
        let out = read_messages(input.as_bytes(), "forums").unwrap();
        assert_eq!(out.messages.len(), 2);
        assert_eq!((out.messages[0].topic.as_str(), out.messages[0].offset), ("news", 7));
        assert_eq!((out.messages[1].key.as_str(), out.messages[1].offset), ("e9", 2));
        assert_eq!(out.malformed.len(), 1);
        assert_eq!(out.malformed[0].reason, "malformed_json");
    }

    #[test]
    fn topic_from_file_name() {
        assert_eq!(topic_for_path(Path::new("x/chain.btc.ndjson")), Some("chain.btc"));
        assert_eq!(topic_for_path(Path::new("news.jsonl")), Some("news"));
        assert_eq!(topic_for_path(Path::new("other.jsonl")), None);
    }
}
