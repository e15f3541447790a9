//! Cryptocurrency ledger analysis: preprocessing, per-address behavioural
//! profiles, functional (basis-expansion) representation of balance trends,
//! activity clustering and classification, rule-based flagging and BTC to ETH
//! cross-chain linking.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{dbscan_rows, ClusterAssignment, CorrelationError, DbscanParams};

const SECONDS_PER_DAY: f64 = 86_400.0;

/// Ridge added to the normal equations when the design matrix is rank deficient.
pub const SINGULAR_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chain {
    Btc,
    Eth,
}

impl Chain {
    pub fn topic(&self) -> &'static str {
        match self {
            Chain::Btc => "chain.btc",
            Chain::Eth => "chain.eth",
        }
    }

    /// ETH hex addresses and BTC bech32 addresses are case-insensitive and
    /// normalized to lowercase; base58 BTC addresses are case-sensitive.
    pub fn normalize_address(&self, addr: &str) -> String {
        let addr = addr.trim();
        match self {
            Chain::Eth => addr.to_ascii_lowercase(),
            Chain::Btc => {
                let lower = addr.to_ascii_lowercase();
                if lower.starts_with("bc1") || lower.starts_with("tb1") {
                    lower
                } else {
                    addr.to_string()
                }
            }
        }
    }
}

impl FromStr for Chain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "btc" => Ok(Chain::Btc),
            "eth" => Ok(Chain::Eth),
            other => Err(format!("unknown chain `{other}`")),
        }
    }
}

impl fmt::Display for Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Chain::Btc => "btc",
            Chain::Eth => "eth",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTx {
    pub chain: Chain,
    pub txid: String,
    pub from: String,
    pub to: String,
    /// Chain-native units.
    pub amount: f64,
    pub usd_value: f64,
    /// UTC seconds.
    pub timestamp: i64,
}

impl ChainTx {
    pub fn is_self_transfer(&self) -> bool {
        self.from == self.to
    }

    /// Checks the value invariants: non-empty ids, finite non-negative USD, positive timestamp.
    pub fn check(&self) -> Result<(), String> {
        if self.txid.trim().is_empty() {
            return Err("empty txid".into());
        }
        if self.from.trim().is_empty() || self.to.trim().is_empty() {
            return Err("empty address".into());
        }
        if !(self.usd_value.is_finite() && self.usd_value >= 0.0) {
            return Err(format!("usd_value must be finite and >= 0, got {}", self.usd_value));
        }
        if !self.amount.is_finite() {
            return Err("amount must be finite".into());
        }
        if self.timestamp <= 0 {
            return Err(format!("timestamp must be > 0, got {}", self.timestamp));
        }
        Ok(())
    }

    /// Builds a transaction from a string map using the CSV column names.
    pub fn from_map(m: &BTreeMap<String, String>) -> Result<ChainTx, String> {
        let get = |k: &str| m.get(k).map(|v| v.trim()).ok_or_else(|| format!("missing field `{k}`"));
        let num = |k: &str| -> Result<f64, String> {
            let v = get(k)?;
            let v = v.strip_suffix("USD").unwrap_or(v).trim();
            v.parse::<f64>().map_err(|_| format!("field `{k}` is not a number: `{v}`"))
        };
        let chain: Chain = get("chain")?.parse()?;
        let tx = ChainTx {
            chain,
            txid: get("txid")?.to_string(),
            from: get("from")?.to_string(),
            to: get("to")?.to_string(),
            amount: num("amount")?,
            usd_value: num("usd_value")?,
            timestamp: get("timestamp")?
                .parse()
                .map_err(|_| format!("field `timestamp` is not an integer: `{}`", m["timestamp"]))?,
        };
        tx.check()?;
        Ok(tx)
    }
}

/// A row that could not be turned into a valid transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedRow {
    /// 1-based data row number (header excluded), or 0 for in-memory input.
    pub row: usize,
    pub reason: String,
}

/// Reads `chain,txid,from,to,amount,usd_value,timestamp` rows.
pub fn read_csv<R: Read>(r: R) -> Result<(Vec<ChainTx>, Vec<MalformedRow>), csv::Error> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let mut txs = Vec::new();
    let mut bad = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        match rec {
            Err(e) => bad.push(MalformedRow { row, reason: e.to_string() }),
            Ok(rec) => {
                let map: BTreeMap<String, String> =
                    headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect();
                match ChainTx::from_map(&map) {
                    Ok(tx) => txs.push(tx),
                    Err(reason) => bad.push(MalformedRow { row, reason }),
                }
            }
        }
    }
    Ok((txs, bad))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessed {
    pub txs: Vec<ChainTx>,
    pub quarantined: Vec<(ChainTx, String)>,
}

/// Drops repeated `(chain, txid)` (first kept), normalizes address case and
/// sorts by timestamp (stable).
pub fn preprocess(txs: Vec<ChainTx>) -> Preprocessed {
    let mut seen = HashSet::new();
    let mut out = Preprocessed::default();
    for mut tx in txs {
        if let Err(reason) = tx.check() {
            out.quarantined.push((tx, reason));
            continue;
        }
        if !seen.insert((tx.chain, tx.txid.clone())) {
            continue;
        }
        tx.from = tx.chain.normalize_address(&tx.from);
        tx.to = tx.chain.normalize_address(&tx.to);
        out.txs.push(tx);
    }
    out.txs.sort_by_key(|t| t.timestamp);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddressProfile {
    pub address: String,
    pub chain: Chain,
    pub first_seen: i64,
    pub last_seen: i64,
    /// Seconds between first and last activity.
    pub lifespan: i64,
    pub tx_count: usize,
    /// Transactions per day, over a window of at least one day.
    pub tx_frequency: f64,
    pub total_usd_in: f64,
    pub total_usd_out: f64,
    /// Distinct senders.
    pub degree_in: usize,
    /// Distinct receivers.
    pub degree_out: usize,
    /// Running net USD (in minus out) after each transaction touching the address.
    pub balance_series: Vec<(i64, f64)>,
}

impl AddressProfile {
    /// `chain:address`, unique across both chains.
    pub fn key(&self) -> String {
        format!("{}:{}", self.chain, self.address)
    }

    pub fn final_balance(&self) -> f64 {
        self.balance_series.last().map_or(0.0, |(_, b)| *b)
    }

    pub fn lifespan_days(&self) -> f64 {
        self.lifespan as f64 / SECONDS_PER_DAY
    }
}

#[derive(Default)]
struct ProfileAcc {
    first: i64,
    last: i64,
    count: usize,
    usd_in: f64,
    usd_out: f64,
    senders: BTreeSet<String>,
    receivers: BTreeSet<String>,
    series: Vec<(i64, f64)>,
    balance: f64,
}

/// One profile per `(chain, address)`, sorted by chain then address.
/// Expects preprocessed (time-ordered) input.
pub fn build_profiles(txs: &[ChainTx]) -> Vec<AddressProfile> {
    let mut accs: BTreeMap<(Chain, String), ProfileAcc> = BTreeMap::new();
    for tx in txs {
        let mut touch = |addr: &str, delta_in: f64, delta_out: f64, counterparty_in: Option<&str>, counterparty_out: Option<&str>| {
            let acc = accs.entry((tx.chain, addr.to_string())).or_insert_with(|| ProfileAcc {
                first: tx.timestamp,
                last: tx.timestamp,
                ..Default::default()
            });
            acc.first = acc.first.min(tx.timestamp);
            acc.last = acc.last.max(tx.timestamp);
            acc.count += 1;
            acc.usd_in += delta_in;
            acc.usd_out += delta_out;
            if let Some(s) = counterparty_in {
                acc.senders.insert(s.to_string());
            }
            if let Some(r) = counterparty_out {
                acc.receivers.insert(r.to_string());
            }
            acc.balance += delta_in - delta_out;
            acc.series.push((tx.timestamp, acc.balance));
        };
        if tx.is_self_transfer() {
            touch(&tx.from, tx.usd_value, tx.usd_value, Some(&tx.from), Some(&tx.to));
        } else {
            touch(&tx.from, 0.0, tx.usd_value, None, Some(&tx.to));
            touch(&tx.to, tx.usd_value, 0.0, Some(&tx.from), None);
        }
    }
    accs.into_iter()
        .map(|((chain, address), a)| {
            let lifespan = a.last - a.first;
            let days = (lifespan as f64 / SECONDS_PER_DAY).max(1.0);
            AddressProfile {
                address,
                chain,
                first_seen: a.first,
                last_seen: a.last,
                lifespan,
                tx_count: a.count,
                tx_frequency: a.count as f64 / days,
                total_usd_in: a.usd_in,
                total_usd_out: a.usd_out,
                degree_in: a.senders.len(),
                degree_out: a.receivers.len(),
                balance_series: a.series,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Monomials `1, t, t^2, ...`.
    Polynomial,
    /// Clamped uniform B-splines of degree `min(3, K - 1)`.
    Bspline,
}

impl Basis {
    /// Values of the `k` basis functions at `t` in `[0, 1]`.
    pub fn eval(&self, k: usize, t: f64) -> Vec<f64> {
        match self {
            Basis::Polynomial => {
                let mut out = Vec::with_capacity(k);
                let mut p = 1.0;
                for _ in 0..k {
                    out.push(p);
                    p *= t;
                }
                out
            }
            Basis::Bspline => bspline_basis(k, t),
        }
    }
}

fn bspline_basis(k: usize, t: f64) -> Vec<f64> {
    let degree = (k - 1).min(3);
    let interior = k - degree - 1;
    let mut knots = vec![0.0; degree + 1];
    for i in 1..=interior {
        knots.push(i as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, degree + 1));

    // Degree-0 functions; the right end belongs to the last non-empty span.
    let spans = knots.len() - 1;
    let mut b: Vec<f64> = (0..spans)
        .map(|i| {
            let (lo, hi) = (knots[i], knots[i + 1]);
            let inside = if t >= 1.0 { lo < hi && hi >= 1.0 } else { lo <= t && t < hi };
            if inside { 1.0 } else { 0.0 }
        })
        .collect();
    for d in 1..=degree {
        b = (0..spans - d)
            .map(|i| {
                let mut v = 0.0;
                let left = knots[i + d] - knots[i];
                if left > 0.0 {
                    v += (t - knots[i]) / left * b[i];
                }
                let right = knots[i + d + 1] - knots[i + 1];
                if right > 0.0 {
                    v += (knots[i + d + 1] - t) / right * b[i + 1];
                }
                v
            })
            .collect();
    }
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalCoeffs {
    pub address: String,
    pub basis: Basis,
    pub k: usize,
    pub coeffs: Vec<f64>,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    /// True when the design was rank deficient and the ridge-regularized
    /// normal equations were solved instead.
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("need at least {needed} points for {needed} basis terms, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("basis must have at least one term")]
    ZeroTerms,
    #[error("least-squares system could not be solved even with ridge {SINGULAR_RIDGE}")]
    SingularFit,
    #[error("non-finite value in series")]
    NonFinite,
    #[error("no functional coefficients for address `{0}`")]
    MissingCoeffs(String),
    #[error("classifier has not been fitted")]
    UnfittedClassifier,
    #[error("classifier training set is empty or inconsistent: {0}")]
    BadTrainingSet(String),
    #[error("window must be > 0 and tolerance >= 0")]
    InvalidLinkParams,
    #[error(transparent)]
    Clustering(#[from] CorrelationError),
}

/// Maps timestamps linearly onto `[0, 1]`. A single distinct timestamp maps to 0.
pub fn rescale_time(ts: &[i64]) -> Vec<f64> {
    let (Some(&lo), Some(&hi)) = (ts.iter().min(), ts.iter().max()) else {
        return Vec::new();
    };
    let span = (hi - lo) as f64;
    ts.iter().map(|&t| if span > 0.0 { (t - lo) as f64 / span } else { 0.0 }).collect()
}

/// Least-squares fit of a `k`-term basis to `(rescaled time, balance)`.
///
/// Full-rank designs are solved through the SVD; rank-deficient ones through
/// `(AᵀA + λI) c = Aᵀy` with `λ = SINGULAR_RIDGE`.
pub fn fit_functional(
    address: &str,
    series: &[(i64, f64)],
    basis: Basis,
    k: usize,
) -> Result<FunctionalCoeffs, ChainError> {
    if k == 0 {
        return Err(ChainError::ZeroTerms);
    }
    if series.len() < k {
        return Err(ChainError::InsufficientPoints { needed: k, got: series.len() });
    }
    if series.iter().any(|(_, y)| !y.is_finite()) {
        return Err(ChainError::NonFinite);
    }
    let ts: Vec<i64> = series.iter().map(|(t, _)| *t).collect();
    let t = rescale_time(&ts);
    let n = series.len();
    let a = DMatrix::from_fn(n, k, |i, j| basis.eval(k, t[i])[j]);
    let y = DVector::from_iterator(n, series.iter().map(|(_, v)| *v));

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank_tol = smax * (n.max(k) as f64) * f64::EPSILON;
    let full_rank = smax > 0.0 && svd.singular_values.iter().all(|&s| s > rank_tol);

    let (coeffs, regularized) = if full_rank {
        (svd.solve(&y, rank_tol).map_err(|_| ChainError::SingularFit)?, false)
    } else {
        let ata = a.transpose() * &a + DMatrix::identity(k, k) * SINGULAR_RIDGE;
        let aty = a.transpose() * &y;
        let c = ata.cholesky().ok_or(ChainError::SingularFit)?.solve(&aty);
        (c, true)
    };
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(ChainError::SingularFit);
    }
    let resid = &y - &a * &coeffs;
    let residual = (resid.norm_squared() / n as f64).sqrt();
    Ok(FunctionalCoeffs {
        address: address.to_string(),
        basis,
        k,
        coeffs: coeffs.iter().copied().collect(),
        residual,
        regularized,
    })
}

/// `[tx_frequency, ln(1 + usd_in), ln(1 + usd_out), lifespan_days, coeffs...]`.
/// Degree (network) features are deliberately absent.
pub fn activity_features(p: &AddressProfile, c: &FunctionalCoeffs) -> Vec<f64> {
    let mut v = vec![p.tx_frequency, p.total_usd_in.ln_1p(), p.total_usd_out.ln_1p(), p.lifespan_days()];
    v.extend(&c.coeffs);
    v
}

/// Column-wise z-scores. Constant columns become zero.
pub fn standardize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(width) = rows.first().map(Vec::len) else {
        return Vec::new();
    };
    let n = rows.len() as f64;
    let mut out = rows.to_vec();
    for j in 0..width {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for r in out.iter_mut() {
            r[j] = if sd > 0.0 { (r[j] - mean) / sd } else { 0.0 };
        }
    }
    out
}

/// Groups addresses by activity with DBSCAN over standardized
/// [`activity_features`]. Assignment ids are [`AddressProfile::key`].
pub fn cluster_addresses(
    profiles: &[AddressProfile],
    coeffs: &[FunctionalCoeffs],
    params: &DbscanParams,
) -> Result<ClusterAssignment, ChainError> {
    let by_addr: BTreeMap<&str, &FunctionalCoeffs> = coeffs.iter().map(|c| (c.address.as_str(), c)).collect();
    let rows = profiles
        .iter()
        .map(|p| {
            let key = p.key();
            by_addr
                .get(key.as_str())
                .or_else(|| by_addr.get(p.address.as_str()))
                .map(|c| activity_features(p, c))
                .ok_or(ChainError::MissingCoeffs(key))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let labels = dbscan_rows(&standardize(&rows), params)?;
    Ok(ClusterAssignment::new(profiles.iter().map(AddressProfile::key), labels))
}

/// Predicted activity label with a confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityPrediction {
    pub label: String,
    pub confidence: f64,
}

/// Pluggable activity classifier: fit on labelled feature rows, then predict.
pub trait ActivityClassifier {
    fn fit(&mut self, samples: &[(Vec<f64>, String)]) -> Result<(), ChainError>;
    fn predict(&self, features: &[f64]) -> Result<ActivityPrediction, ChainError>;
}

/// Nearest class centroid in training-standardized feature space.
///
/// Equidistant centroids resolve to the lexicographically smallest label.
/// Confidence is the softmax weight of the winning centroid over negative
/// distances.
#[derive(Debug, Clone, Default)]
pub struct NearestCentroid {
    fitted: Option<CentroidModel>,
}

#[derive(Debug, Clone)]
struct CentroidModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    centroids: BTreeMap<String, Vec<f64>>,
}

impl CentroidModel {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

impl ActivityClassifier for NearestCentroid {
    fn fit(&mut self, samples: &[(Vec<f64>, String)]) -> Result<(), ChainError> {
        let Some(width) = samples.first().map(|(x, _)| x.len()) else {
            return Err(ChainError::BadTrainingSet("no samples".into()));
        };
        if samples.iter().any(|(x, _)| x.len() != width || x.iter().any(|v| !v.is_finite())) {
            return Err(ChainError::BadTrainingSet("rows differ in width or contain non-finite values".into()));
        }
        let n = samples.len() as f64;
        let mean: Vec<f64> = (0..width).map(|j| samples.iter().map(|(x, _)| x[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..width)
            .map(|j| {
                let sd = (samples.iter().map(|(x, _)| (x[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        let mut model = CentroidModel { mean, scale, centroids: BTreeMap::new() };
        let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        for (x, label) in samples {
            let z = model.standardize(x);
            let e = sums.entry(label.clone()).or_insert_with(|| (vec![0.0; width], 0));
            for (acc, v) in e.0.iter_mut().zip(z) {
                *acc += v;
            }
            e.1 += 1;
        }
        model.centroids = sums
            .into_iter()
            .map(|(label, (sum, count))| (label, sum.into_iter().map(|s| s / count as f64).collect()))
            .collect();
        self.fitted = Some(model);
        Ok(())
    }

    fn predict(&self, features: &[f64]) -> Result<ActivityPrediction, ChainError> {
        let model = self.fitted.as_ref().ok_or(ChainError::UnfittedClassifier)?;
        if features.len() != model.mean.len() {
            return Err(ChainError::BadTrainingSet(format!(
                "expected {} features, got {}",
                model.mean.len(),
                features.len()
            )));
        }
        let z = model.standardize(features);
        let dists: Vec<(&String, f64)> = model
            .centroids
            .iter()
            .map(|(label, c)| (label, c.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()))
            .collect();
        // BTreeMap order makes the first minimum the smallest label; distances
        // within rounding noise of each other count as ties.
        let (best_label, best) = dists
            .iter()
            .fold(None::<(&String, f64)>, |acc, &(l, d)| match acc {
                Some((_, bd)) if bd <= d + 1e-12 * bd.max(1.0) => acc,
                _ => Some((l, d)),
            })
            .expect("at least one centroid");
        let weight_sum: f64 = dists.iter().map(|(_, d)| (best - d).exp()).sum();
        Ok(ActivityPrediction { label: best_label.clone(), confidence: 1.0 / weight_sum })
    }
}

pub fn classify_activity(
    profile: &AddressProfile,
    coeffs: &FunctionalCoeffs,
    classifier: &dyn ActivityClassifier,
) -> Result<ActivityPrediction, ChainError> {
    classifier.predict(&activity_features(profile, coeffs))
}

/// Suspicious addresses with a free-text note (user handle, case reference).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Watchlist {
    pub entries: BTreeMap<String, String>,
}

impl Watchlist {
    pub fn new<I, A, N>(entries: I) -> Self
    where
        I: IntoIterator<Item = (A, N)>,
        A: Into<String>,
        N: Into<String>,
    {
        Watchlist { entries: entries.into_iter().map(|(a, n)| (a.into(), n.into())).collect() }
    }

    pub fn contains(&self, addr: &str) -> bool {
        self.entries.contains_key(addr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagRule {
    /// Transaction touches a watchlisted address.
    Watchlist,
    /// `usd_value` at or above the configured threshold.
    HighValue,
    /// Transaction touches an address that has transacted with a watchlisted one.
    WatchlistCounterparty,
}

impl fmt::Display for FlagRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlagRule::Watchlist => "watchlist",
            FlagRule::HighValue => "high_value",
            FlagRule::WatchlistCounterparty => "watchlist_counterparty",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlagRules {
    pub watchlist: bool,
    /// `None` disables the rule (an infinite threshold).
    pub usd_threshold: Option<f64>,
    pub watchlist_counterparty: bool,
}

impl Default for FlagRules {
    fn default() -> Self {
        FlagRules { watchlist: true, usd_threshold: Some(10_000.0), watchlist_counterparty: true }
    }
}

impl FlagRules {
    pub fn none() -> Self {
        FlagRules { watchlist: false, usd_threshold: None, watchlist_counterparty: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TxFlag {
    pub chain: Chain,
    pub txid: String,
    pub rule: FlagRule,
    /// The address or amount that triggered the rule.
    pub evidence: String,
}

/// Applies every enabled rule; the result is sorted and free of duplicates.
pub fn flag_transactions(txs: &[ChainTx], watchlist: &Watchlist, rules: &FlagRules) -> Vec<TxFlag> {
    let mut flags = BTreeSet::new();
    let counterparties: BTreeMap<(Chain, &str), BTreeSet<&str>> = if rules.watchlist_counterparty {
        let mut m: BTreeMap<(Chain, &str), BTreeSet<&str>> = BTreeMap::new();
        for tx in txs {
            for (a, b) in [(&tx.from, &tx.to), (&tx.to, &tx.from)] {
                if watchlist.contains(b) && a != b {
                    m.entry((tx.chain, a.as_str())).or_default().insert(b.as_str());
                }
            }
        }
        m
    } else {
        BTreeMap::new()
    };
    for tx in txs {
        let flag = |rule, evidence: String| TxFlag { chain: tx.chain, txid: tx.txid.clone(), rule, evidence };
        for addr in [&tx.from, &tx.to] {
            if rules.watchlist && watchlist.contains(addr) {
                flags.insert(flag(FlagRule::Watchlist, addr.clone()));
            }
            if counterparties.contains_key(&(tx.chain, addr.as_str())) {
                flags.insert(flag(FlagRule::WatchlistCounterparty, addr.clone()));
            }
        }
        if let Some(th) = rules.usd_threshold {
            if tx.usd_value >= th {
                flags.insert(flag(FlagRule::HighValue, format!("{:.2}", tx.usd_value)));
            }
        }
    }
    flags.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossChainLink {
    pub btc_address: String,
    pub eth_address: String,
    /// Seconds from BTC last activity to ETH first activity.
    pub delta_t: i64,
    pub usd_gap: f64,
    pub matched_price: Option<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Seconds.
    pub window: i64,
    /// USD.
    pub tolerance: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams { window: 72 * 3600, tolerance: 5.0 }
    }
}

/// Pairs each BTC address that went quiet with ETH addresses that appeared
/// within `window` seconds afterwards carrying a matching USD amount.
///
/// A pair is emitted when `eth.first_seen ∈ [btc.last_seen, btc.last_seen + window]`
/// and `|btc.total_usd_out − eth.total_usd_in| ≤ tolerance`.
pub fn link_cross_chain(
    btc: &[AddressProfile],
    eth: &[AddressProfile],
    price_catalog: &[f64],
    params: &LinkParams,
) -> Result<Vec<CrossChainLink>, ChainError> {
    let LinkParams { window, tolerance } = *params;
    if window <= 0 || !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(ChainError::InvalidLinkParams);
    }
    let price_match = |amount: f64| -> Option<f64> {
        price_catalog
            .iter()
            .copied()
            .filter(|p| (p - amount).abs() <= tolerance)
            .min_by(|a, b| (a - amount).abs().total_cmp(&(b - amount).abs()).then(a.total_cmp(b)))
    };
    let mut links = Vec::new();
    for b in btc.iter().filter(|p| p.chain == Chain::Btc) {
        for e in eth.iter().filter(|p| p.chain == Chain::Eth) {
            let delta_t = e.first_seen - b.last_seen;
            if !(0..=window).contains(&delta_t) {
                continue;
            }
            let usd_gap = (b.total_usd_out - e.total_usd_in).abs();
            if usd_gap > tolerance {
                continue;
            }
            let matched_price = [price_match(b.total_usd_out), price_match(e.total_usd_in)]
                .into_iter()
                .flatten()
                .min_by(f64::total_cmp);
            let gap_term = if tolerance > 0.0 { usd_gap / tolerance } else { 0.0 };
            let score = (1.0 - (delta_t as f64 / window as f64) * 0.5 - gap_term * 0.5).clamp(0.0, 1.0);
            links.push(CrossChainLink {
                btc_address: b.address.clone(),
                eth_address: e.address.clone(),
                delta_t,
                usd_gap,
                matched_price,
                score,
            });
        }
    }
    links.sort_by(|x, y| (&x.btc_address, &x.eth_address).cmp(&(&y.btc_address, &y.eth_address)));
    Ok(links)
}
