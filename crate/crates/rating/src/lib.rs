//! Blinded rating sessions for candidate report texts.
//!
//! Each session shows a rater every part's candidate texts in a seeded random
//! order under opaque ids. Ratings go to an append-only JSONL journal per
//! session and are exported unblinded as rating records for the analysis.

mod api;
mod mosaic;
mod store;

pub use api::{router, serve, AppState};
pub use mosaic::{build_mosaic, MOSAIC_DOWNSAMPLE};
pub use store::{
    AuditEntry, BlindedText, PartCandidates, Progress, RatingStore, RatingTask, SessionState, StoredRating,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RatingError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("missing or wrong bearer token")]
    Unauthorized,
    #[error("storage: {0}")]
    Storage(String),
}

/// Environment variable holding the optional bearer token.
pub const TOKEN_ENV: &str = "RATING_TOKEN";
