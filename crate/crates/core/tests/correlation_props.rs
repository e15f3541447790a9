mod oracles;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use firetrace_core::config::Config;
use firetrace_core::correlation::{
    build_correlations, dbscan_rows, score_pair, Comparator, CorrelationCriterion, CorrelationInput,
    CriterionAttribute, DbscanParams, Metric,
};
use firetrace_core::domain::{abstract_entity, default_continents, EncodingSchema, EntityKind, EntityRecord};
use proptest::prelude::*;

const NAMES: [&str; 6] = ["Jan de Vries", "Jan de Vreis", "Marco Rossi", "Marco Rosi", "Ana Silva", "Olga Petrova"];
const COUNTRIES: [&str; 6] = ["NL", "BE", "IT", "BR", "US", "ZZ"];
const MODELS: [&str; 6] = ["Glock 17", "AK-47", "Remington 870", "Uzi", "Flintlock", "Makarov"];

fn record(i: usize, name: Option<usize>, user: Option<usize>, day: Option<u32>, country: usize, model: usize) -> EntityRecord {
    EntityRecord {
        id: format!("e{i:03}"),
        kind: if i.is_multiple_of(2) { EntityKind::Agent } else { EntityKind::Event },
        name: name.map(|n| NAMES[n].to_string()),
        username: user.map(|u| format!("user_{}", u % 4)),
        date: day.map(|d| NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Days::new(d as u64)),
        country: Some(COUNTRIES[country].to_string()),
        firearm_model: Some(MODELS[model].to_string()),
        firearm_type: None,
        source: None,
        attributes: BTreeMap::new(),
    }
}

fn inputs(raw: &[(Option<usize>, Option<usize>, Option<u32>, usize, usize)]) -> Vec<CorrelationInput> {
    let tax = Config::default().taxonomy().unwrap();
    let continents = default_continents();
    raw.iter()
        .enumerate()
        .map(|(i, &(n, u, d, c, m))| {
            let record = record(i, n, u, d, c, m);
            let abstracted = abstract_entity(&record, &tax, &continents);
            CorrelationInput { record, abstracted }
        })
        .collect()
}

fn entity_strategy() -> impl Strategy<Value = (Option<usize>, Option<usize>, Option<u32>, usize, usize)> {
    (
        proptest::option::of(0..NAMES.len()),
        proptest::option::of(0usize..8),
        proptest::option::of(0u32..900),
        0..COUNTRIES.len(),
        0..MODELS.len(),
    )
}

fn criteria(weights: &[f64; 5]) -> Vec<CorrelationCriterion> {
    vec![
        CorrelationCriterion::new(CriterionAttribute::Name, Comparator::Fuzzy, weights[0]).unwrap(),
        CorrelationCriterion::new(CriterionAttribute::Username, Comparator::Exact, weights[1]).unwrap(),
        CorrelationCriterion::exact(CriterionAttribute::Quarter, weights[2]),
        CorrelationCriterion::exact(CriterionAttribute::Continent, weights[3]),
        CorrelationCriterion::exact(CriterionAttribute::FirearmClass, weights[4]),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_symmetric_and_scale_invariant(
        raw in proptest::collection::vec(entity_strategy(), 2..12),
        weights in proptest::array::uniform5(0.1f64..5.0),
        c in 0.01f64..100.0,
    ) {
        let es = inputs(&raw);
        let base = criteria(&weights);
        let scaled = criteria(&weights.map(|w| w * c));
        for x in &es {
            for y in &es {
                let s = score_pair(x, y, &base).unwrap().score;
                prop_assert_eq!(s, score_pair(y, x, &base).unwrap().score);
                prop_assert!((s - score_pair(x, y, &scaled).unwrap().score).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }

    #[test]
    fn raising_threshold_never_adds_edges(
        raw in proptest::collection::vec(entity_strategy(), 2..15),
        weights in proptest::array::uniform5(0.1f64..5.0),
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
    ) {
        let es = inputs(&raw);
        let c = criteria(&weights);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let key = |e: &firetrace_core::correlation::CorrelationEdge| (e.a.clone(), e.b.clone());
        let low: BTreeSet<_> = build_correlations(&es, &c, lo).unwrap().iter().map(key).collect();
        let high: BTreeSet<_> = build_correlations(&es, &c, hi).unwrap().iter().map(key).collect();
        prop_assert!(high.is_subset(&low));
    }

    #[test]
    fn build_correlations_matches_all_pairs_oracle(
        raw in proptest::collection::vec(entity_strategy(), 0..30),
        weights in proptest::array::uniform5(0.1f64..5.0),
        threshold in 0.0f64..=1.0,
    ) {
        let es = inputs(&raw);
        let c = criteria(&weights);
        let got: Vec<(String, String, f64)> =
            build_correlations(&es, &c, threshold).unwrap().into_iter().map(|e| (e.a, e.b, e.score)).collect();
        let mut want = Vec::new();
        for i in 0..es.len() {
            for j in i + 1..es.len() {
                let s = oracles::correlation_score(&es[i], &es[j], &c);
                if s >= threshold {
                    want.push((es[i].record.id.clone(), es[j].record.id.clone(), s));
                }
            }
        }
        want.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!((&g.0, &g.1), (&w.0, &w.1));
            prop_assert!((g.2 - w.2).abs() <= 1e-12);
        }
    }

    #[test]
    fn encoding_is_injective_on_abstractions(raw in proptest::collection::vec(entity_strategy(), 2..20)) {
        let tax = Config::default().taxonomy().unwrap();
        let schema = EncodingSchema::new("s1", &tax, 2020, 2024);
        let es = inputs(&raw);
        for x in &es {
            for y in &es {
                let same = (&x.abstracted.quarter, x.abstracted.continent, &x.abstracted.firearm_class)
                    == (&y.abstracted.quarter, y.abstracted.continent, &y.abstracted.firearm_class);
                let vx = schema.encode(&x.abstracted).unwrap();
                let vy = schema.encode(&y.abstracted).unwrap();
                prop_assert_eq!(same, vx == vy);
                prop_assert_eq!(vx.values.len(), schema.len());
            }
        }
    }
}

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..4).prop_flat_map(|d| proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, d), 0..60))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dbscan_matches_brute_force_oracle(
        rows in rows_strategy(),
        eps in 0.0f64..3.0,
        min_pts in 1usize..6,
        hamming in any::<bool>(),
    ) {
        let metric = if hamming { Metric::Hamming } else { Metric::Euclidean };
        let rows: Vec<Vec<f64>> = if hamming {
            rows.into_iter().map(|r| r.into_iter().map(|v| v.round().clamp(-1.0, 1.0)).collect()).collect()
        } else {
            rows
        };
        let p = DbscanParams { eps, min_pts, metric };
        let labels = dbscan_rows(&rows, &p).unwrap();
        prop_assert_eq!(labels.len(), rows.len());
        if let Err(e) = oracles::dbscan_check(&rows, &p, &labels) {
            prop_assert!(false, "{}", e);
        }
    }
}

#[test]
fn dbscan_is_deterministic_on_grid() {
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64 * 0.4, (i / 7) as f64 * 2.5]).collect();
    let p = DbscanParams { eps: 0.5, min_pts: 3, metric: Metric::Euclidean };
    let a = dbscan_rows(&rows, &p).unwrap();
    assert_eq!(a, dbscan_rows(&rows, &p).unwrap());
    oracles::dbscan_check(&rows, &p, &a).unwrap();
}
