//! Copy-on-write property graph with atomic write batches.
//!
//! Readers hold an `Arc<GraphSnapshot>` and never observe a partially
//! applied batch. Writers are serialized through a single commit lock.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Properties = BTreeMap<String, String>;

/// Property on ingest-created edges naming the record key that produced them.
pub const ORIGIN_PROPERTY: &str = "origin";

/// Marks nodes that exist only because some record references them; they are
/// dropped once no edge touches them.
pub const AUX_PROPERTY: &str = "aux";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyNode {
    pub id: String,
    pub label: String,
    pub properties: Properties,
}

impl PropertyNode {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        PropertyNode { id: id.into(), label: label.into(), properties: Properties::new() }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.properties.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyEdge {
    pub src: String,
    pub dst: String,
    pub relation: String,
    pub properties: Properties,
}

impl PropertyEdge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, relation: impl Into<String>) -> Self {
        PropertyEdge { src: src.into(), dst: dst.into(), relation: relation.into(), properties: Properties::new() }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.properties.insert(key.into(), value.into());
        self
    }

    pub fn key(&self) -> EdgeKey {
        (self.src.clone(), self.dst.clone(), self.relation.clone())
    }
}

pub type EdgeKey = (String, String, String);

/// Position of a record in its topic; larger cursors win.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cursor {
    pub offset: u64,
    pub topic: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("edge {src} -[{relation}]-> {dst} references missing node `{missing}`")]
    DanglingEdge { src: String, dst: String, relation: String, missing: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
}

impl From<io::Error> for GraphError {
    fn from(e: io::Error) -> Self {
        GraphError::StorageUnavailable(e.to_string())
    }
}

/// Immutable view of the graph at one committed version.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphSnapshot {
    nodes: BTreeMap<String, PropertyNode>,
    edges: BTreeMap<EdgeKey, PropertyEdge>,
    adjacency: BTreeMap<String, BTreeSet<EdgeKey>>,
    cursors: BTreeMap<String, Cursor>,
    version: u64,
}

impl GraphSnapshot {
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn node(&self, id: &str) -> Option<&PropertyNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &PropertyNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &PropertyEdge> {
        self.edges.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_edge(&self, src: &str, dst: &str, relation: &str) -> bool {
        self.edges.contains_key(&(src.to_string(), dst.to_string(), relation.to_string()))
    }

    /// Latest applied cursor for an ingest key.
    pub fn cursor(&self, key: &str) -> Option<&Cursor> {
        self.cursors.get(key)
    }

    /// Undirected neighbours of a node.
    pub fn neighbors(&self, id: &str) -> BTreeSet<&str> {
        self.adjacency
            .get(id)
            .into_iter()
            .flatten()
            .map(|(s, d, _)| if s == id { d.as_str() } else { s.as_str() })
            .collect()
    }

    /// Nodes within `k` undirected hops of `id`, plus every edge between them.
    pub fn neighborhood(&self, id: &str, k: usize) -> Result<GraphSnapshot, GraphError> {
        if !self.nodes.contains_key(id) {
            return Err(GraphError::UnknownNode(id.to_string()));
        }
        let mut seen: BTreeSet<&str> = BTreeSet::from([id]);
        let mut queue = VecDeque::from([(id, 0usize)]);
        while let Some((cur, depth)) = queue.pop_front() {
            if depth == k {
                continue;
            }
            for next in self.neighbors(cur) {
                if seen.insert(next) {
                    queue.push_back((next, depth + 1));
                }
            }
        }
        let mut sub = GraphSnapshot { version: self.version, ..Default::default() };
        for n in &seen {
            sub.nodes.insert(n.to_string(), self.nodes[*n].clone());
        }
        for (key, edge) in &self.edges {
            if seen.contains(key.0.as_str()) && seen.contains(key.1.as_str()) {
                sub.insert_edge(edge.clone());
            }
        }
        Ok(sub)
    }

    /// Every edge endpoint exists and the adjacency index agrees with the edge set.
    pub fn check_integrity(&self) -> Result<(), GraphError> {
        for e in self.edges.values() {
            for end in [&e.src, &e.dst] {
                if !self.nodes.contains_key(end) {
                    return Err(GraphError::DanglingEdge {
                        src: e.src.clone(),
                        dst: e.dst.clone(),
                        relation: e.relation.clone(),
                        missing: end.clone(),
                    });
                }
            }
        }
        let indexed: usize = self.adjacency.values().map(BTreeSet::len).sum();
        let expected: usize = self.edges.keys().map(|(s, d, _)| if s == d { 1 } else { 2 }).sum();
        if indexed != expected {
            return Err(GraphError::StorageUnavailable("adjacency index out of sync".into()));
        }
        Ok(())
    }

    fn insert_edge(&mut self, edge: PropertyEdge) {
        let key = edge.key();
        self.adjacency.entry(edge.src.clone()).or_default().insert(key.clone());
        self.adjacency.entry(edge.dst.clone()).or_default().insert(key.clone());
        self.edges.insert(key, edge);
    }

    fn remove_edge(&mut self, key: &EdgeKey) {
        if self.edges.remove(key).is_some() {
            for end in [&key.0, &key.1] {
                if let Some(set) = self.adjacency.get_mut(end) {
                    set.remove(key);
                    if set.is_empty() {
                        self.adjacency.remove(end);
                    }
                }
            }
        }
    }

    /// Deterministic newline-delimited export: nodes, edges, then ingest cursors,
    /// each in key order. The version counter is not part of the export.
    pub fn export<W: Write>(&self, mut w: W) -> io::Result<()> {
        for n in self.nodes.values() {
            serde_json::to_writer(&mut w, &ExportLine::Node(n.clone()))?;
            w.write_all(b"\n")?;
        }
        for e in self.edges.values() {
            serde_json::to_writer(&mut w, &ExportLine::Edge(e.clone()))?;
            w.write_all(b"\n")?;
        }
        for (key, c) in &self.cursors {
            serde_json::to_writer(&mut w, &ExportLine::Cursor { key: key.clone(), cursor: c.clone() })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn export_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.export(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn import<R: BufRead>(r: R) -> Result<GraphSnapshot, GraphError> {
        let mut snap = GraphSnapshot::default();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ExportLine = serde_json::from_str(&line)
                .map_err(|e| GraphError::StorageUnavailable(format!("corrupt export line: {e}")))?;
            match parsed {
                ExportLine::Node(n) => {
                    snap.nodes.insert(n.id.clone(), n);
                }
                ExportLine::Edge(e) => snap.insert_edge(e),
                ExportLine::Cursor { key, cursor } => {
                    snap.cursors.insert(key, cursor);
                }
            }
        }
        snap.check_integrity()?;
        Ok(snap)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ExportLine {
    Node(PropertyNode),
    Edge(PropertyEdge),
    Cursor {
        key: String,
        #[serde(flatten)]
        cursor: Cursor,
    },
}

/// One operation inside a write batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteOp {
    /// Last-writer-wins node replacement.
    UpsertNode(PropertyNode),
    /// Merges properties into an existing node, creating it if needed.
    MergeNode(PropertyNode),
    UpsertEdge(PropertyEdge),
    /// A keyed ingest record. Applied only when `cursor` is newer than the
    /// cursor last applied for `key`; on apply, edges previously created by
    /// the same key are replaced.
    Record {
        key: String,
        cursor: Cursor,
        node: PropertyNode,
        aux_nodes: Vec<PropertyNode>,
        edges: Vec<PropertyEdge>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WriteBatch {
    pub ops: Vec<WriteOp>,
}

impl WriteBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, op: WriteOp) -> &mut Self {
        self.ops.push(op);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CommitOutcome {
    pub version: u64,
    /// `Record` ops that were applied.
    pub applied_records: usize,
    /// `Record` ops skipped because an equal or newer cursor was already applied.
    pub stale_records: usize,
}

fn apply(snap: &mut GraphSnapshot, op: WriteOp, outcome: &mut CommitOutcome) -> Result<(), GraphError> {
    match op {
        WriteOp::UpsertNode(n) => {
            snap.nodes.insert(n.id.clone(), n);
        }
        WriteOp::MergeNode(n) => match snap.nodes.get_mut(&n.id) {
            Some(existing) => {
                existing.label = n.label;
                existing.properties.extend(n.properties);
            }
            None => {
                snap.nodes.insert(n.id.clone(), n);
            }
        },
        WriteOp::UpsertEdge(e) => {
            for end in [&e.src, &e.dst] {
                if !snap.nodes.contains_key(end) {
                    return Err(GraphError::DanglingEdge {
                        src: e.src.clone(),
                        dst: e.dst.clone(),
                        relation: e.relation.clone(),
                        missing: end.clone(),
                    });
                }
            }
            snap.insert_edge(e);
        }
        WriteOp::Record { key, cursor, node, aux_nodes, edges } => {
            if snap.cursors.get(&key).is_some_and(|c| *c >= cursor) {
                outcome.stale_records += 1;
                return Ok(());
            }
            let owned: Vec<EdgeKey> = snap
                .edges
                .iter()
                .filter(|(_, e)| e.properties.get(ORIGIN_PROPERTY) == Some(&key))
                .map(|(k, _)| k.clone())
                .collect();
            for k in &owned {
                snap.remove_edge(k);
            }
            for k in &owned {
                for end in [&k.0, &k.1] {
                    let orphan = !snap.adjacency.contains_key(end)
                        && snap.nodes.get(end).is_some_and(|n| n.properties.contains_key(AUX_PROPERTY));
                    if orphan {
                        snap.nodes.remove(end);
                    }
                }
            }
            snap.nodes.insert(node.id.clone(), node);
            for mut aux in aux_nodes {
                aux.properties.insert(AUX_PROPERTY.into(), "true".into());
                apply(snap, WriteOp::MergeNode(aux), outcome)?;
            }
            for mut e in edges {
                e.properties.insert(ORIGIN_PROPERTY.into(), key.clone());
                apply(snap, WriteOp::UpsertEdge(e), outcome)?;
            }
            snap.cursors.insert(key, cursor);
            outcome.applied_records += 1;
        }
    }
    Ok(())
}

/// File-backed graph store with in-memory indexes.
#[derive(Debug, Default)]
pub struct GraphStore {
    current: RwLock<Arc<GraphSnapshot>>,
    commit_lock: Mutex<()>,
    path: Option<PathBuf>,
}

impl GraphStore {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates on first [`GraphStore::persist`]) a store backed by an export file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = path.as_ref().to_path_buf();
        let snap = if path.exists() {
            GraphSnapshot::import(BufReader::new(fs::File::open(&path)?))?
        } else {
            GraphSnapshot::default()
        };
        Ok(GraphStore { current: RwLock::new(Arc::new(snap)), commit_lock: Mutex::new(()), path: Some(path) })
    }

    pub fn snapshot(&self) -> Arc<GraphSnapshot> {
        self.current.read().clone()
    }

    /// Applies every op or none of them.
    pub fn commit(&self, batch: WriteBatch) -> Result<CommitOutcome, GraphError> {
        let _guard = self.commit_lock.lock();
        let base = self.snapshot();
        if batch.is_empty() {
            return Ok(CommitOutcome { version: base.version, ..Default::default() });
        }
        let mut next = (*base).clone();
        let mut outcome = CommitOutcome::default();
        for op in batch.ops {
            apply(&mut next, op, &mut outcome)?;
        }
        next.version = base.version + 1;
        outcome.version = next.version;
        *self.current.write() = Arc::new(next);
        Ok(outcome)
    }

    pub fn upsert_node(&self, node: PropertyNode) -> Result<u64, GraphError> {
        let mut b = WriteBatch::new();
        b.push(WriteOp::UpsertNode(node));
        self.commit(b).map(|o| o.version)
    }

    pub fn upsert_edge(&self, edge: PropertyEdge) -> Result<u64, GraphError> {
        let mut b = WriteBatch::new();
        b.push(WriteOp::UpsertEdge(edge));
        self.commit(b).map(|o| o.version)
    }

    /// Writes the current snapshot to the backing file (write-then-rename).
    pub fn persist(&self) -> Result<(), GraphError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let snap = self.snapshot();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            snap.export(&mut w)?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> GraphStore {
        let store = GraphStore::in_memory();
        for id in ["a", "b", "c"] {
            store.upsert_node(PropertyNode::new(id, "agent")).unwrap();
        }
        store.upsert_edge(PropertyEdge::new("a", "b", "knows")).unwrap();
        store.upsert_edge(PropertyEdge::new("b", "c", "knows")).unwrap();
        store
    }

    #[test]
    fn last_writer_wins_on_nodes() {
        let store = GraphStore::in_memory();
        let v1 = store.upsert_node(PropertyNode::new("n", "agent").with("alias", "x")).unwrap();
        let v2 = store.upsert_node(PropertyNode::new("n", "agent").with("alias", "y")).unwrap();
        assert!(v2 > v1);
        let snap = store.snapshot();
        assert_eq!(snap.node_count(), 1);
        assert_eq!(snap.node("n").unwrap().properties["alias"], "y");
    }

    #[test]
    fn dangling_edge_rejected_and_batch_atomic() {
        let store = GraphStore::in_memory();
        store.upsert_node(PropertyNode::new("a", "agent")).unwrap();
        let err = store.upsert_edge(PropertyEdge::new("a", "zz", "knows")).unwrap_err();
        assert!(matches!(err, GraphError::DanglingEdge { ref missing, .. } if missing == "zz"));

        let before = store.snapshot();
        let mut b = WriteBatch::new();
        b.push(WriteOp::UpsertNode(PropertyNode::new("b", "agent")));
        b.push(WriteOp::UpsertEdge(PropertyEdge::new("b", "nope", "knows")));
        assert!(store.commit(b).is_err());
        assert_eq!(*store.snapshot(), *before);
    }

    #[test]
    fn neighborhood_on_path() {
        let store = path3();
        let snap = store.snapshot();
        let n0 = snap.neighborhood("a", 0).unwrap();
        assert_eq!(n0.node_count(), 1);
        assert_eq!(n0.edge_count(), 0);
        let n1 = snap.neighborhood("a", 1).unwrap();
        assert_eq!(n1.nodes().map(|n| n.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!(n1.contains_edge("a", "b", "knows"));
        assert_eq!(n1.edge_count(), 1);
        let n2 = snap.neighborhood("a", 2).unwrap();
        assert!(n2.contains_edge("a", "b", "knows") && n2.contains_edge("b", "c", "knows"));
        assert_eq!(snap.neighborhood("zz", 1).unwrap_err(), GraphError::UnknownNode("zz".into()));
    }

    #[test]
    fn record_ops_respect_cursors() {
        let store = GraphStore::in_memory();
        let rec = |offset: u64, v: &str| WriteOp::Record {
            key: "k".into(),
            cursor: Cursor { offset, topic: "t".into() },
            node: PropertyNode::new("k", "event").with("v", v),
            aux_nodes: vec![PropertyNode::new("x", "addr")],
            edges: vec![PropertyEdge::new("k", "x", "mentions")],
        };
        let o = store.commit(WriteBatch { ops: vec![rec(2, "new"), rec(1, "old"), rec(2, "dup")] }).unwrap();
        assert_eq!((o.applied_records, o.stale_records), (1, 2));
        let snap = store.snapshot();
        assert_eq!(snap.node("k").unwrap().properties["v"], "new");
        assert_eq!(snap.edge_count(), 1);
        assert_eq!(snap.edges().next().unwrap().properties[ORIGIN_PROPERTY], "k");
    }

    #[test]
    fn export_import_round_trip() {
        let snap = path3().snapshot();
        let bytes = snap.export_bytes();
        let back = GraphSnapshot::import(bytes.as_slice()).unwrap();
        assert_eq!(back.export_bytes(), bytes);
        back.check_integrity().unwrap();
    }

    #[test]
    fn persist_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.jsonl");
        let store = GraphStore::open(&path).unwrap();
        store.upsert_node(PropertyNode::new("a", "agent")).unwrap();
        store.persist().unwrap();
        let reopened = GraphStore::open(&path).unwrap();
        assert_eq!(reopened.snapshot().node_count(), 1);
    }
}
