//! Brute-force reference implementations shared by the integration and
//! acceptance suites. The only library calls are small accessors: metric
//! distance, basis evaluation, CPT lookup, column mapping and row filtering.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use firetrace_core::bayes::{BayesNet, Evidence, NodeSpec};
use firetrace_core::chain::{AddressProfile, Basis, LinkParams};
use firetrace_core::correlation::{ClusterLabel, Comparator, CorrelationCriterion, CorrelationInput, CriterionAttribute, DbscanParams};
use firetrace_core::federation::{row_matches, FederatedRow, Filter, Row, StoreDescriptor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn levenshtein(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Satisfied weight over total weight, straight from the criterion definitions.
pub fn correlation_score(x: &CorrelationInput, y: &CorrelationInput, c: &[CorrelationCriterion]) -> f64 {
    let continent = |e: &CorrelationInput| {
        let s = e.abstracted.continent.to_string();
        (s != "Unknown").then_some(s)
    };
    let mut hit = 0.0;
    for k in c {
        let (a, b) = match k.attribute {
            CriterionAttribute::Name => (x.record.name.clone(), y.record.name.clone()),
            CriterionAttribute::Username => (x.record.username.clone(), y.record.username.clone()),
            CriterionAttribute::Quarter => (x.abstracted.quarter.clone(), y.abstracted.quarter.clone()),
            CriterionAttribute::Continent => (continent(x), continent(y)),
            CriterionAttribute::FirearmClass => {
                (Some(x.abstracted.firearm_class.clone()), Some(y.abstracted.firearm_class.clone()))
            }
        };
        let ok = match (a, b) {
            (Some(a), Some(b)) => {
                let (a, b) = (a.to_lowercase(), b.to_lowercase());
                match k.comparator {
                    Comparator::Exact => a == b,
                    Comparator::Fuzzy => {
                        let longest = a.chars().count().max(b.chars().count());
                        longest == 0 || 1.0 - levenshtein(&a, &b) as f64 / longest as f64 >= 0.8
                    }
                }
            }
            _ => false,
        };
        if ok {
            hit += k.weight;
        }
    }
    hit / c.iter().map(|k| k.weight).sum::<f64>()
}

/// All pairs `i < j` scoring at least `threshold`, ordered by id pair.
pub fn correlation_edges(es: &[CorrelationInput], c: &[CorrelationCriterion], threshold: f64) -> Vec<(String, String, f64)> {
    let mut want = Vec::new();
    for i in 0..es.len() {
        for j in i + 1..es.len() {
            let s = correlation_score(&es[i], &es[j], c);
            if s >= threshold {
                let (a, b) = (es[i].record.id.clone(), es[j].record.id.clone());
                want.push(if a <= b { (a, b, s) } else { (b, a, s) });
            }
        }
    }
    want.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    want
}

/// Density clusters recomputed from scratch: core points joined by eps-edges
/// form the clusters, non-core points within eps of a core are border points.
pub fn dbscan_check(rows: &[Vec<f64>], p: &DbscanParams, labels: &[ClusterLabel]) -> Result<(), String> {
    let n = rows.len();
    if labels.len() != n {
        return Err(format!("{} labels for {n} points", labels.len()));
    }
    let near = |i: usize, j: usize| p.metric.distance(&rows[i], &rows[j]) <= p.eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= p.min_pts).collect();
    let mut comp: Vec<usize> = (0..n).collect();
    fn find(c: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while c[r] != r {
            r = c[r];
        }
        c[x] = r;
        r
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut comp, i), find(&mut comp, j));
                comp[a] = b;
            }
        }
    }
    let mut comp_to_label: BTreeMap<usize, usize> = BTreeMap::new();
    for i in (0..n).filter(|&i| core[i]) {
        let Some(l) = labels[i].cluster() else { return Err(format!("core point {i} labelled noise")) };
        let root = find(&mut comp, i);
        if *comp_to_label.entry(root).or_insert(l) != l {
            return Err(format!("core component split at point {i}"));
        }
    }
    let distinct: BTreeSet<usize> = comp_to_label.values().copied().collect();
    if distinct.len() != comp_to_label.len() {
        return Err("two core components share a label".into());
    }
    for i in (0..n).filter(|&i| !core[i]) {
        let reachable: BTreeSet<usize> =
            (0..n).filter(|&j| core[j] && near(i, j)).map(|j| comp_to_label[&find(&mut comp, j)]).collect();
        match labels[i] {
            ClusterLabel::Noise if reachable.is_empty() => {}
            ClusterLabel::Cluster(l) if reachable.contains(&l) => {}
            other => return Err(format!("point {i} labelled {other:?}, reachable clusters {reachable:?}")),
        }
    }
    Ok(())
}

/// Random DAG with 2..=`max_nodes` nodes, 2-3 states each and at most 3
/// parents. `v0` is the cause and `s0` of the last node is the high priority.
pub fn random_net(seed: u64, max_nodes: usize) -> BayesNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_nodes);
    let mut nodes: Vec<NodeSpec> = Vec::new();
    for i in 0..n {
        let card = rng.gen_range(2..=3);
        let mut candidates: Vec<usize> = (0..i).collect();
        candidates.shuffle(&mut rng);
        let parents: Vec<usize> = candidates.into_iter().take(rng.gen_range(0..=3.min(i))).collect();
        let rows: usize = parents.iter().map(|&p| nodes[p].states.len()).product();
        let cpt = (0..rows)
            .map(|_| {
                let raw: Vec<f64> = (0..card).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                let mut row: Vec<f64> = raw.iter().map(|v| v / s).collect();
                let head: f64 = row[..card - 1].iter().sum();
                row[card - 1] = 1.0 - head;
                row
            })
            .collect();
        nodes.push(NodeSpec {
            name: format!("v{i}"),
            states: (0..card).map(|s| format!("s{s}")).collect(),
            parents: parents.iter().map(|p| format!("v{p}")).collect(),
            cpt,
        });
    }
    let mut named = nodes.clone();
    named.shuffle(&mut rng);
    BayesNet::new(named).with_cause("v0").with_priority(format!("v{}", n - 1), "s0")
}

/// Each non-query node observed with probability 0.4.
pub fn random_evidence(net: &BayesNet, query: &str, seed: u64) -> Evidence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut ev = Evidence::new();
    for n in net.nodes().iter().filter(|n| n.name != query) {
        if rng.gen_bool(0.4) {
            ev.insert(n.name.clone(), n.states[rng.gen_range(0..n.states.len())].clone());
        }
    }
    ev
}

/// `P(query | evidence)` by summing the full joint.
pub fn enumerate(net: &BayesNet, query: &str, evidence: &Evidence) -> Vec<f64> {
    let nodes = net.nodes();
    let cards: Vec<usize> = nodes.iter().map(|n| n.states.len()).collect();
    let pos = |name: &str| nodes.iter().position(|n| n.name == name).unwrap();
    let q = pos(query);
    let mut out = vec![0.0; cards[q]];
    let total: usize = cards.iter().product();
    for mut code in 0..total {
        let mut assign = vec![0; nodes.len()];
        for (i, c) in cards.iter().enumerate() {
            assign[i] = code % c;
            code /= c;
        }
        if evidence.iter().any(|(k, v)| nodes[pos(k)].states[assign[pos(k)]] != *v) {
            continue;
        }
        let mut p = 1.0;
        for (i, n) in nodes.iter().enumerate() {
            let ps: Vec<usize> = n.parents.iter().map(|name| assign[pos(name)]).collect();
            p *= net.prob(&n.name, assign[i], &ps).unwrap();
        }
        out[assign[q]] += p;
    }
    let z: f64 = out.iter().sum();
    out.iter().map(|v| v / z).collect()
}

/// Least squares through the normal equations, solved by Gaussian elimination
/// with partial pivoting.
pub fn normal_equations(basis: Basis, k: usize, t: &[f64], y: &[f64]) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = t.iter().map(|&x| basis.eval(k, x)).collect();
    let mut m = vec![vec![0.0; k + 1]; k];
    for (r, yi) in rows.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                m[i][j] += r[i] * r[j];
            }
            m[i][k] += r[i] * yi;
        }
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=k {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    (0..k).map(|i| m[i][k] / m[i][i]).collect()
}

/// Every BTC/ETH address pair satisfying the window and tolerance predicates.
pub fn link_scan(btc: &[AddressProfile], eth: &[AddressProfile], p: &LinkParams) -> BTreeSet<(String, String)> {
    let mut want = BTreeSet::new();
    for b in btc {
        for e in eth {
            let dt = e.first_seen - b.last_seen;
            if dt >= 0 && dt <= p.window && (b.total_usd_out - e.total_usd_in).abs() <= p.tolerance {
                want.insert((b.address.clone(), e.address.clone()));
            }
        }
    }
    want
}

pub type MergedRows = BTreeMap<(String, String, String), (Row, BTreeSet<String>)>;

/// Per-store union: canonicalize each table, apply the filters, then collapse
/// rows sharing `(id, date, country)`, the lowest store id taking precedence
/// field by field. Stores lacking a filter field or operation contribute nothing.
pub fn federated_union(stores: &[(StoreDescriptor, Vec<Row>)], filters: &[Filter]) -> MergedRows {
    let mut sorted: Vec<&(StoreDescriptor, Vec<Row>)> = stores.iter().collect();
    sorted.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let mut out = MergedRows::new();
    for (d, rows) in sorted {
        if !filters.iter().all(|f| d.mapping.contains_key(&f.field) && d.capabilities.contains(&f.predicate.op())) {
            continue;
        }
        for raw in rows {
            let row = d.to_canonical(raw);
            if !row_matches(&row, filters) {
                continue;
            }
            let g = |k: &str| row.get(k).cloned().unwrap_or_default();
            let entry = out.entry((g("id"), g("date"), g("country"))).or_insert_with(|| (Row::new(), BTreeSet::new()));
            for (k, v) in &row {
                entry.0.entry(k.clone()).or_insert_with(|| v.clone());
            }
            entry.1.insert(d.id.clone());
        }
    }
    out
}

/// Gateway output in the same shape as [`federated_union`]; duplicate keys are an error.
pub fn merged_rows(rows: &[FederatedRow]) -> Result<MergedRows, String> {
    let mut m = MergedRows::new();
    for r in rows {
        let g = |k: &str| r.fields.get(k).cloned().unwrap_or_default();
        let key = (g("id"), g("date"), g("country"));
        if m.insert(key.clone(), (r.fields.clone(), r.provenance.iter().cloned().collect())).is_some() {
            return Err(format!("duplicate merged row {key:?}"));
        }
    }
    Ok(m)
}
