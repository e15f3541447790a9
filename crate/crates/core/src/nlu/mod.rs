//! Marketplace and forum text processing plus detector fusion.

pub mod forum;
pub mod fusion;
pub mod listing;

use thiserror::Error;

pub use forum::{
    classify_thread, extract_thread_info, recognize_intent, run_cascade, CascadeVerdict, ForumMessage, ForumThread,
    Intent, IntentClassifier, LexiconIntentClassifier, TextClassifier, ThreadExtraction, ThreadGazetteer,
    WeightedLexicon,
};
pub use fusion::{fuse_detectors, DetectorPrediction, DetectorVocabulary, FusedPrediction};
pub use listing::{extract_specs, parse_listing, HtmlRule, ListingRecord, PostProcess, Ruleset, SpecGazetteer, Specs};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NluError {
    #[error("malformed HTML: {0}")]
    MalformedHtml(String),
    #[error("required field `{0}` not found")]
    MissingRequiredField(&'static str),
    #[error("invalid selector for field `{field}`: {reason}")]
    InvalidSelector { field: String, reason: String },
    #[error("lexicon `{0}` has no terms loaded")]
    UnloadedLexicon(String),
    #[error("classifier threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("cascade precondition unmet: {0}")]
    PreconditionUnmet(String),
    #[error("class `{0}` is not in the detector vocabulary")]
    UnknownClass(String),
    #[error("detector `{0}` reported confidence outside [0, 1] or accuracy outside (0, 1)")]
    InvalidPrediction(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
}
