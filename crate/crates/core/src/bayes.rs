//! Discrete Bayesian network with exact inference by variable elimination.
//!
//! The network encodes modus-operandi knowledge: one designated binary
//! `priority` node scores events, and a designated `cause` node carries the
//! latent operating pattern whose posterior drives event similarity.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Allowed deviation of a CPT row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Observed node states.
pub type Evidence = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub states: Vec<String>,
    pub parents: Vec<String>,
    /// One distribution per parent-state combination, in mixed-radix order
    /// with the first parent most significant.
    pub cpt: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum NetworkViolation {
    DuplicateNode { node: String },
    NoStates { node: String },
    DuplicateState { node: String, state: String },
    UnknownParent { node: String, parent: String },
    Cycle { nodes: Vec<String> },
    WrongRowCount { node: String, expected: usize, got: usize },
    WrongRowLength { node: String, row: String, expected: usize, got: usize },
    BadProbability { node: String, row: String, value: f64 },
    Normalization { node: String, row: String, sum: f64 },
}

impl fmt::Display for NetworkViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkViolation::DuplicateNode { node } => write!(f, "node `{node}` declared twice"),
            NetworkViolation::NoStates { node } => write!(f, "node `{node}` has no states"),
            NetworkViolation::DuplicateState { node, state } => write!(f, "node `{node}` repeats state `{state}`"),
            NetworkViolation::UnknownParent { node, parent } => write!(f, "node `{node}` has unknown parent `{parent}`"),
            NetworkViolation::Cycle { nodes } => write!(f, "cycle through {}", nodes.join(" -> ")),
            NetworkViolation::WrongRowCount { node, expected, got } => {
                write!(f, "node `{node}` needs {expected} CPT rows, has {got}")
            }
            NetworkViolation::WrongRowLength { node, row, expected, got } => {
                write!(f, "node `{node}` row [{row}] needs {expected} entries, has {got}")
            }
            NetworkViolation::BadProbability { node, row, value } => {
                write!(f, "node `{node}` row [{row}] has invalid probability {value}")
            }
            NetworkViolation::Normalization { node, row, sum } => {
                write!(f, "node `{node}` row [{row}] sums to {sum}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("network is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidNetwork(Vec<NetworkViolation>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` has no state `{state}`")]
    InvalidState { node: String, state: String },
    #[error("query node `{0}` is also observed")]
    EvidenceOnQueryNode(String),
    #[error("evidence has zero probability under the network")]
    InconsistentEvidence,
    #[error("network designates no priority node with a `high` state")]
    MissingPriorityNode,
    #[error("network designates no cause node")]
    MissingCauseNode,
    #[error("elimination order must list every hidden variable exactly once")]
    BadEliminationOrder,
}

/// Immutable discrete network. Build with [`BayesNet::new`]; inference refuses
/// to run on networks that fail [`validate_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct BayesNet {
    nodes: Vec<NodeSpec>,
    index: HashMap<String, usize>,
    parent_ids: Vec<Vec<usize>>,
    topo: Vec<usize>,
    violations: Vec<NetworkViolation>,
    priority_node: Option<String>,
    priority_state: String,
    cause_node: Option<String>,
}

impl BayesNet {
    pub fn new(nodes: Vec<NodeSpec>) -> Self {
        let mut index = HashMap::new();
        let mut violations = Vec::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.name.clone(), i).is_some() {
                violations.push(NetworkViolation::DuplicateNode { node: n.name.clone() });
            }
        }
        let mut parent_ids = Vec::with_capacity(nodes.len());
        for n in &nodes {
            let mut ids = Vec::new();
            for p in &n.parents {
                match index.get(p) {
                    Some(&i) => ids.push(i),
                    None => violations.push(NetworkViolation::UnknownParent { node: n.name.clone(), parent: p.clone() }),
                }
            }
            parent_ids.push(ids);
        }
        let (topo, cycles) = topo_order(&nodes, &parent_ids);
        violations.extend(cycles);
        for (i, n) in nodes.iter().enumerate() {
            check_cpt(n, &parent_ids[i], &nodes, &mut violations);
        }
        BayesNet {
            nodes,
            index,
            parent_ids,
            topo,
            violations,
            priority_node: None,
            priority_state: "high".into(),
            cause_node: None,
        }
    }

    pub fn with_priority(mut self, node: impl Into<String>, high_state: impl Into<String>) -> Self {
        self.priority_node = Some(node.into());
        self.priority_state = high_state.into();
        self
    }

    pub fn with_cause(mut self, node: impl Into<String>) -> Self {
        self.cause_node = Some(node.into());
        self
    }

    pub fn priority_node(&self) -> Option<&str> {
        self.priority_node.as_deref()
    }

    pub fn cause_node(&self) -> Option<&str> {
        self.cause_node.as_deref()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.index.get(name).map(|&i| &self.nodes[i])
    }

    pub fn states(&self, name: &str) -> Option<&[String]> {
        self.node(name).map(|n| n.states.as_slice())
    }

    /// `P(node = state | parents = parent_states)`, all given as indices.
    pub fn prob(&self, node: &str, state: usize, parent_states: &[usize]) -> Option<f64> {
        let i = *self.index.get(node)?;
        let row = row_index(&self.parent_ids[i], parent_states, &self.nodes)?;
        self.nodes[i].cpt.get(row)?.get(state).copied()
    }

    fn check_evidence(&self, evidence: &Evidence) -> Result<Vec<(usize, usize)>, InferenceError> {
        evidence
            .iter()
            .map(|(node, state)| {
                let i = *self.index.get(node).ok_or_else(|| InferenceError::UnknownNode(node.clone()))?;
                let s = self.nodes[i]
                    .states
                    .iter()
                    .position(|x| x == state)
                    .ok_or_else(|| InferenceError::InvalidState { node: node.clone(), state: state.clone() })?;
                Ok((i, s))
            })
            .collect()
    }

    /// Hidden variables in reverse topological order, the default elimination order.
    fn default_order(&self, query: usize, observed: &BTreeSet<usize>) -> Vec<usize> {
        self.topo.iter().rev().copied().filter(|v| *v != query && !observed.contains(v)).collect()
    }
}

fn topo_order(nodes: &[NodeSpec], parents: &[Vec<usize>]) -> (Vec<usize>, Vec<NetworkViolation>) {
    let n = nodes.len();
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    ready.reverse();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    if order.len() == n {
        return (order, Vec::new());
    }
    let mut cyclic: Vec<String> = (0..n).filter(|&i| indegree[i] > 0).map(|i| nodes[i].name.clone()).collect();
    cyclic.sort();
    (order, vec![NetworkViolation::Cycle { nodes: cyclic }])
}

fn row_label(parents: &[usize], combo: usize, nodes: &[NodeSpec]) -> String {
    let mut parts = Vec::new();
    let mut rest = combo;
    for &p in parents.iter().rev() {
        let card = nodes[p].states.len().max(1);
        parts.push(format!("{}={}", nodes[p].name, nodes[p].states.get(rest % card).map_or("?", |s| s)));
        rest /= card;
    }
    parts.reverse();
    parts.join(", ")
}

fn row_index(parents: &[usize], states: &[usize], nodes: &[NodeSpec]) -> Option<usize> {
    if parents.len() != states.len() {
        return None;
    }
    let mut idx = 0;
    for (&p, &s) in parents.iter().zip(states) {
        let card = nodes[p].states.len();
        if s >= card {
            return None;
        }
        idx = idx * card + s;
    }
    Some(idx)
}

fn check_cpt(n: &NodeSpec, parents: &[usize], nodes: &[NodeSpec], out: &mut Vec<NetworkViolation>) {
    if n.states.is_empty() {
        out.push(NetworkViolation::NoStates { node: n.name.clone() });
        return;
    }
    for (i, s) in n.states.iter().enumerate() {
        if n.states[..i].contains(s) {
            out.push(NetworkViolation::DuplicateState { node: n.name.clone(), state: s.clone() });
        }
    }
    if parents.len() != n.parents.len() {
        return; // unknown parent already reported; row layout is undefined
    }
    let expected: usize = parents.iter().map(|&p| nodes[p].states.len()).product();
    if n.cpt.len() != expected {
        out.push(NetworkViolation::WrongRowCount { node: n.name.clone(), expected, got: n.cpt.len() });
    }
    for (r, row) in n.cpt.iter().enumerate().take(expected) {
        let label = row_label(parents, r, nodes);
        if row.len() != n.states.len() {
            out.push(NetworkViolation::WrongRowLength {
                node: n.name.clone(),
                row: label,
                expected: n.states.len(),
                got: row.len(),
            });
            continue;
        }
        if let Some(&bad) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            out.push(NetworkViolation::BadProbability { node: n.name.clone(), row: label, value: bad });
            continue;
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            out.push(NetworkViolation::Normalization { node: n.name.clone(), row: label, sum });
        }
    }
}

/// Every structural and CPT problem in the network; empty when valid.
pub fn validate_network(net: &BayesNet) -> Vec<NetworkViolation> {
    net.violations.clone()
}

/// A table over a sorted set of variables; the last variable varies fastest.
#[derive(Debug, Clone)]
struct Factor {
    vars: Vec<usize>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

impl Factor {
    fn from_node(net: &BayesNet, v: usize) -> Factor {
        let mut scope: Vec<usize> = net.parent_ids[v].clone();
        scope.push(v);
        let cards_of = |x: usize| net.nodes[x].states.len();
        let mut vars = scope.clone();
        vars.sort_unstable();
        let cards: Vec<usize> = vars.iter().map(|&x| cards_of(x)).collect();
        let size: usize = cards.iter().product();
        let mut values = vec![0.0; size];
        let mut assignment = vec![0usize; vars.len()];
        for slot in values.iter_mut() {
            let state_of = |x: usize| assignment[vars.iter().position(|&y| y == x).expect("in scope")];
            let parent_states: Vec<usize> = net.parent_ids[v].iter().map(|&p| state_of(p)).collect();
            let row = row_index(&net.parent_ids[v], &parent_states, &net.nodes).expect("valid row");
            *slot = net.nodes[v].cpt[row][state_of(v)];
            advance(&mut assignment, &cards);
        }
        Factor { vars, cards, values }
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.vars.len()];
        for i in (0..self.vars.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.cards[i + 1];
        }
        s
    }

    /// Keeps only entries consistent with `var = state` and drops `var`.
    fn reduce(&self, var: usize, state: usize) -> Factor {
        let Some(pos) = self.vars.iter().position(|&v| v == var) else {
            return self.clone();
        };
        let strides = self.strides();
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut assignment = vec![0usize; vars.len()];
        for _ in 0..size {
            let mut idx = state * strides[pos];
            for (k, &a) in assignment.iter().enumerate() {
                let orig = if k < pos { k } else { k + 1 };
                idx += a * strides[orig];
            }
            values.push(self.values[idx]);
            advance(&mut assignment, &cards);
        }
        Factor { vars, cards, values }
    }

    fn product(&self, other: &Factor) -> Factor {
        let mut vars: Vec<usize> = self.vars.iter().chain(&other.vars).copied().collect();
        vars.sort_unstable();
        vars.dedup();
        let cards: Vec<usize> = vars
            .iter()
            .map(|v| {
                self.vars
                    .iter()
                    .position(|x| x == v)
                    .map(|i| self.cards[i])
                    .unwrap_or_else(|| other.cards[other.vars.iter().position(|x| x == v).expect("in union")])
            })
            .collect();
        let map = |f: &Factor| -> Vec<(usize, usize)> {
            let st = f.strides();
            f.vars.iter().enumerate().map(|(i, v)| (vars.iter().position(|x| x == v).expect("in union"), st[i])).collect()
        };
        let (ma, mb) = (map(self), map(other));
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut assignment = vec![0usize; vars.len()];
        for _ in 0..size {
            let ia: usize = ma.iter().map(|&(pos, s)| assignment[pos] * s).sum();
            let ib: usize = mb.iter().map(|&(pos, s)| assignment[pos] * s).sum();
            values.push(self.values[ia] * other.values[ib]);
            advance(&mut assignment, &cards);
        }
        Factor { vars, cards, values }
    }

    fn sum_out(&self, var: usize) -> Factor {
        let Some(pos) = self.vars.iter().position(|&v| v == var) else {
            return self.clone();
        };
        let card = self.cards[pos];
        let mut acc: Option<Factor> = None;
        for s in 0..card {
            let slice = self.reduce(var, s);
            acc = Some(match acc {
                None => slice,
                Some(mut a) => {
                    for (x, y) in a.values.iter_mut().zip(slice.values) {
                        *x += y;
                    }
                    a
                }
            });
        }
        acc.expect("card >= 1")
    }
}

fn advance(assignment: &mut [usize], cards: &[usize]) {
    for i in (0..assignment.len()).rev() {
        assignment[i] += 1;
        if assignment[i] < cards[i] {
            return;
        }
        assignment[i] = 0;
    }
}

fn eliminate(
    net: &BayesNet,
    query: usize,
    observed: &[(usize, usize)],
    order: &[usize],
) -> Result<Vec<f64>, InferenceError> {
    let mut factors: Vec<Factor> = (0..net.nodes.len())
        .map(|v| {
            let mut f = Factor::from_node(net, v);
            for &(var, state) in observed {
                f = f.reduce(var, state);
            }
            f
        })
        .collect();
    for &var in order {
        let (touching, rest): (Vec<Factor>, Vec<Factor>) = factors.into_iter().partition(|f| f.vars.contains(&var));
        factors = rest;
        if let Some(first) = touching.first() {
            let joined = touching[1..].iter().fold(first.clone(), |acc, f| acc.product(f));
            factors.push(joined.sum_out(var));
        }
    }
    let result = factors
        .iter()
        .skip(1)
        .fold(factors[0].clone(), |acc, f| acc.product(f));
    debug_assert_eq!(result.vars, vec![query]);
    let z: f64 = result.values.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(InferenceError::InconsistentEvidence);
    }
    Ok(result.values.iter().map(|v| v / z).collect())
}

fn prepare(
    net: &BayesNet,
    query: &str,
    evidence: &Evidence,
) -> Result<(usize, Vec<(usize, usize)>), InferenceError> {
    if !net.violations.is_empty() {
        return Err(InferenceError::InvalidNetwork(net.violations.clone()));
    }
    let q = *net.index.get(query).ok_or_else(|| InferenceError::UnknownNode(query.to_string()))?;
    if evidence.contains_key(query) {
        return Err(InferenceError::EvidenceOnQueryNode(query.to_string()));
    }
    Ok((q, net.check_evidence(evidence)?))
}

/// Exact posterior `P(query | evidence)` over the query's states.
pub fn infer_posterior(net: &BayesNet, query: &str, evidence: &Evidence) -> Result<Vec<f64>, InferenceError> {
    let (q, observed) = prepare(net, query, evidence)?;
    let observed_set: BTreeSet<usize> = observed.iter().map(|(v, _)| *v).collect();
    let order = net.default_order(q, &observed_set);
    eliminate(net, q, &observed, &order)
}

/// As [`infer_posterior`], eliminating hidden variables in the given order.
pub fn infer_posterior_with_order(
    net: &BayesNet,
    query: &str,
    evidence: &Evidence,
    order: &[String],
) -> Result<Vec<f64>, InferenceError> {
    let (q, observed) = prepare(net, query, evidence)?;
    let observed_set: BTreeSet<usize> = observed.iter().map(|(v, _)| *v).collect();
    let ids: Vec<usize> = order
        .iter()
        .map(|n| net.index.get(n).copied().ok_or_else(|| InferenceError::UnknownNode(n.clone())))
        .collect::<Result<_, _>>()?;
    let mut expected = net.default_order(q, &observed_set);
    let mut given = ids.clone();
    expected.sort_unstable();
    given.sort_unstable();
    if expected != given {
        return Err(InferenceError::BadEliminationOrder);
    }
    eliminate(net, q, &observed, &ids)
}

/// `P(priority = high | evidence)`.
pub fn event_priority(net: &BayesNet, evidence: &Evidence) -> Result<f64, InferenceError> {
    let node = net.priority_node.as_deref().ok_or(InferenceError::MissingPriorityNode)?;
    let states = net.states(node).ok_or(InferenceError::MissingPriorityNode)?;
    let high = states.iter().position(|s| *s == net.priority_state).ok_or(InferenceError::MissingPriorityNode)?;
    Ok(infer_posterior(net, node, evidence)?[high])
}

pub fn cause_posterior(net: &BayesNet, evidence: &Evidence) -> Result<Vec<f64>, InferenceError> {
    let node = net.cause_node.as_deref().ok_or(InferenceError::MissingCauseNode)?;
    if net.node(node).is_none() {
        return Err(InferenceError::MissingCauseNode);
    }
    infer_posterior(net, node, evidence)
}

/// Cosine overlap of two distributions, clamped to `[0, 1]`.
pub fn cosine(p: &[f64], q: &[f64]) -> f64 {
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nq = q.iter().map(|b| b * b).sum::<f64>().sqrt();
    if np == 0.0 || nq == 0.0 {
        return 0.0;
    }
    (dot / (np * nq)).clamp(0.0, 1.0)
}

/// Cosine overlap of the cause-node posteriors under the two evidence sets.
pub fn event_similarity(net: &BayesNet, e1: &Evidence, e2: &Evidence) -> Result<f64, InferenceError> {
    let p = cause_posterior(net, e1)?;
    let q = cause_posterior(net, e2)?;
    Ok(cosine(&p, &q))
}

/// A stored event with its inference results cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventObservation {
    pub event_id: String,
    pub evidence: Evidence,
    pub priority: f64,
    pub cause_posterior: Vec<f64>,
}

impl EventObservation {
    pub fn evaluate(net: &BayesNet, event_id: impl Into<String>, evidence: Evidence) -> Result<Self, InferenceError> {
        Ok(EventObservation {
            event_id: event_id.into(),
            priority: event_priority(net, &evidence)?,
            cause_posterior: cause_posterior(net, &evidence)?,
            evidence,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarEvent {
    pub event_id: String,
    pub similarity: f64,
}

/// Ranks stored events by how well their cause posterior matches the one
/// implied by `traces`. Ties break on event id; at most `k` are returned.
pub fn query_similar_events(
    net: &BayesNet,
    traces: &Evidence,
    store: &[EventObservation],
    k: usize,
) -> Result<Vec<SimilarEvent>, InferenceError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let target = cause_posterior(net, traces)?;
    let mut ranked: Vec<SimilarEvent> = store
        .iter()
        .map(|e| SimilarEvent { event_id: e.event_id.clone(), similarity: cosine(&target, &e.cause_posterior) })
        .collect();
    ranked.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.event_id.cmp(&b.event_id)));
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

/// Parses the textual network format:
///
/// ```text
/// # comment
/// node channel {darknet, surface_web, offline} <- modus_operandi
/// prob modus_operandi = 0.3 0.3 0.25 0.15
/// prob channel | diversion = 0.5 0.3 0.2
/// designate priority = priority high
/// designate cause = modus_operandi
/// ```
///
/// `prob` rows name parent states in parent order; rows may appear in any
/// order and missing rows are reported by [`validate_network`].
pub fn parse_network(text: &str) -> Result<BayesNet, ParseError> {
    let mut nodes: Vec<NodeSpec> = Vec::new();
    let mut rows: Vec<(usize, String, Vec<String>, Vec<f64>)> = Vec::new();
    let mut priority: Option<(String, String)> = None;
    let mut cause: Option<String> = None;
    let err = |line: usize, message: String| ParseError { line, message };

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match keyword {
            "node" => {
                let open = rest.find('{').ok_or_else(|| err(line_no, "expected `{` before state list".into()))?;
                let close = rest.find('}').ok_or_else(|| err(line_no, "expected `}` after state list".into()))?;
                let name = rest[..open].trim();
                if name.is_empty() {
                    return Err(err(line_no, "node name missing".into()));
                }
                let states: Vec<String> =
                    rest[open + 1..close].split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                let tail = rest[close + 1..].trim();
                let parents = match tail.strip_prefix("<-") {
                    Some(p) => p.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                    None if tail.is_empty() => Vec::new(),
                    None => return Err(err(line_no, format!("unexpected `{tail}` after state list"))),
                };
                nodes.push(NodeSpec { name: name.to_string(), states, parents, cpt: Vec::new() });
            }
            "prob" => {
                let (lhs, rhs) = rest.split_once('=').ok_or_else(|| err(line_no, "expected `=`".into()))?;
                let (name, parent_states) = match lhs.split_once('|') {
                    Some((n, ps)) => (n.trim(), ps.split(',').map(|s| s.trim().to_string()).collect()),
                    None => (lhs.trim(), Vec::new()),
                };
                let values = rhs
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|_| err(line_no, format!("bad probability `{v}`"))))
                    .collect::<Result<Vec<_>, _>>()?;
                rows.push((line_no, name.to_string(), parent_states, values));
            }
            "designate" => {
                let (role, target) = rest.split_once('=').ok_or_else(|| err(line_no, "expected `=`".into()))?;
                let target: Vec<&str> = target.split_whitespace().collect();
                match (role.trim(), target.as_slice()) {
                    ("priority", [node, high]) => priority = Some((node.to_string(), high.to_string())),
                    ("priority", [node]) => priority = Some((node.to_string(), "high".into())),
                    ("cause", [node]) => cause = Some(node.to_string()),
                    (r, _) => return Err(err(line_no, format!("bad designation `{r}`"))),
                }
            }
            other => return Err(err(line_no, format!("unknown keyword `{other}`"))),
        }
    }

    let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.name.clone(), i)).collect();
    let mut tables: Vec<BTreeMap<usize, Vec<f64>>> = vec![BTreeMap::new(); nodes.len()];
    for (line_no, name, parent_states, values) in rows {
        let &i = index.get(&name).ok_or_else(|| err(line_no, format!("`prob` for undeclared node `{name}`")))?;
        let node = &nodes[i];
        if parent_states.len() != node.parents.len() {
            return Err(err(
                line_no,
                format!("node `{name}` has {} parents, row names {}", node.parents.len(), parent_states.len()),
            ));
        }
        let mut idx = 0;
        for (p, s) in node.parents.iter().zip(&parent_states) {
            let &pi = index.get(p).ok_or_else(|| err(line_no, format!("unknown parent `{p}`")))?;
            let states = &nodes[pi].states;
            let si = states.iter().position(|x| x == s).ok_or_else(|| err(line_no, format!("`{p}` has no state `{s}`")))?;
            idx = idx * states.len() + si;
        }
        if tables[i].insert(idx, values).is_some() {
            return Err(err(line_no, format!("duplicate row for `{name}`")));
        }
    }
    for (node, table) in nodes.iter_mut().zip(tables) {
        // Rows are laid out densely; a gap truncates the table so the
        // validator reports the missing combination count.
        let mut expected = 0;
        for (idx, row) in table {
            if idx != expected {
                break;
            }
            node.cpt.push(row);
            expected += 1;
        }
    }
    let mut net = BayesNet::new(nodes);
    if let Some((node, high)) = priority {
        net = net.with_priority(node, high);
    }
    if let Some(c) = cause {
        net = net.with_cause(c);
    }
    Ok(net)
}

/// Serializes a network back into the textual format.
pub fn format_network(net: &BayesNet) -> String {
    let mut out = String::new();
    for n in &net.nodes {
        let _ = write!(out, "node {} {{{}}}", n.name, n.states.join(", "));
        if !n.parents.is_empty() {
            let _ = write!(out, " <- {}", n.parents.join(", "));
        }
        out.push('\n');
    }
    for (i, n) in net.nodes.iter().enumerate() {
        for (r, row) in n.cpt.iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            if n.parents.is_empty() {
                let _ = writeln!(out, "prob {} = {}", n.name, vals.join(" "));
            } else {
                let label = row_label(&net.parent_ids[i], r, &net.nodes);
                let states: Vec<&str> = label.split(", ").map(|kv| kv.split_once('=').map_or(kv, |(_, v)| v)).collect();
                let _ = writeln!(out, "prob {} | {} = {}", n.name, states.join(", "), vals.join(" "));
            }
        }
    }
    if let Some(p) = &net.priority_node {
        let _ = writeln!(out, "designate priority = {} {}", p, net.priority_state);
    }
    if let Some(c) = &net.cause_node {
        let _ = writeln!(out, "designate cause = {c}");
    }
    out
}
