//! Core engines for a desk-scale firearms-trafficking intelligence fusion
//! platform: entity abstraction, a property-graph store with idempotent
//! ingestion, correlation scoring and density clustering, Bayesian situation
//! evaluation, cryptocurrency ledger analysis, marketplace and forum text
//! extraction, incident tracking, and a federated multi-agency query gateway.

pub mod bayes;
pub mod chain;
pub mod config;
pub mod correlation;
pub mod domain;
pub mod federation;
pub mod graph;
pub mod incident;
pub mod nlu;
pub mod pipeline;
pub mod text;
