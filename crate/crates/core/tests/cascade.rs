use std::sync::atomic::{AtomicUsize, Ordering};

use firetrace_core::config::NluConfig;
use firetrace_core::nlu::forum::{run_cascade, ForumMessage, ForumThread, Intent, IntentClassifier, TextClassifier};
use firetrace_core::nlu::NluError;
use proptest::prelude::*;

/// Counts calls so the test can see which stages actually ran.
struct Counting<T> {
    inner: T,
    calls: AtomicUsize,
}

impl<T> Counting<T> {
    fn new(inner: T) -> Self {
        Counting { inner, calls: AtomicUsize::new(0) }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<T: TextClassifier> TextClassifier for Counting<T> {
    fn score(&self, text: &str) -> Result<f64, NluError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(text)
    }

    fn threshold(&self) -> f64 {
        self.inner.threshold()
    }
}

impl<T: IntentClassifier> IntentClassifier for Counting<T> {
    fn intent(&self, text: &str) -> Intent {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.intent(text)
    }
}

const SOUP: &[&str] = &[
    "glock", "pistol", "rifle", "ammo", "gun", "respawn", "loadout", "selling", "dm me", "no questions", "looking for",
    "wts", "wtb", "need", "trade", "swap", "for sale", "$450", "300 EUR", "0.01 btc", "Rotterdam", "Netherlands",
    "Berlin", "AK-47", "9mm", "hello", "the", "", " ", "\n", "\t", "!!!", "GLOCK", "Selling", "ammo?", "glocks",
];

fn message_text() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(String::new()),
        "[ \t\n]{1,4}",
        proptest::collection::vec(prop::sample::select(SOUP), 0..10).prop_map(|w| w.join(" ")),
        "[a-z .,$€0-9]{0,40}",
    ]
}

fn thread() -> impl Strategy<Value = ForumThread> {
    proptest::collection::vec(message_text(), 0..8).prop_map(|texts| ForumThread {
        id: "t".into(),
        messages: texts
            .into_iter()
            .enumerate()
            .map(|(i, text)| ForumMessage { author: format!("u{i}"), timestamp: 1_700_000_000 + i as i64, text })
            .collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn later_stages_only_see_earlier_positives(t in thread(), budget in 0usize..300) {
        let cfg = NluConfig::default();
        let rel = Counting::new(cfg.relevance().unwrap());
        let sus = Counting::new(cfg.suspicion().unwrap());
        let int = Counting::new(cfg.intents.clone());
        let v = run_cascade(&t, &rel, &sus, &int, &cfg.thread, budget).unwrap();
        prop_assert!(v.is_consistent());

        if t.messages.is_empty() {
            prop_assert!(!v.relevant);
        }
        if !v.relevant {
            prop_assert_eq!(sus.calls(), 0);
            prop_assert_eq!(v.suspicious, None);
        } else {
            prop_assert_eq!(sus.calls(), 1);
            prop_assert!(v.suspicious.is_some());
        }
        if v.suspicious == Some(true) {
            prop_assert_eq!(int.calls(), t.messages.len());
            prop_assert_eq!(v.intents.len(), t.messages.len());
        } else {
            prop_assert_eq!(int.calls(), 0);
            prop_assert!(v.intents.is_empty());
            prop_assert!(v.extraction.is_none());
        }
        let actionable = v.intents.iter().any(|i| *i != Intent::Other);
        prop_assert_eq!(v.extraction.is_some(), actionable);
        if let Some(x) = &v.extraction {
            prop_assert!(x.summary.chars().count() <= budget);
            prop_assert!(x.entities.iter().all(|e| e.message_index < t.messages.len()));
        }
    }

    #[test]
    fn whitespace_only_threads_never_pass_relevance(
        texts in proptest::collection::vec("[ \t\n]{0,5}", 0..6),
    ) {
        let cfg = NluConfig::default();
        let t = ForumThread {
            id: "w".into(),
            messages: texts.into_iter().map(|text| ForumMessage { author: "a".into(), timestamp: 0, text }).collect(),
        };
        let v = run_cascade(&t, &cfg.relevance().unwrap(), &cfg.suspicion().unwrap(), &cfg.intents, &cfg.thread, 280).unwrap();
        prop_assert!(!v.relevant && v.suspicious.is_none() && v.intents.is_empty() && v.extraction.is_none());
    }
}
