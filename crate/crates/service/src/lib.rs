//! HTTP service, analyst report and case stores, and detector report intake
//! on top of `firetrace-core`.

pub mod api;
pub mod auth;
pub mod cases;
pub mod detector;
pub mod error;
pub mod reports;
pub mod state;

pub use api::router;
pub use state::AppState;
