//! Error categories and their process exit codes.

use eegmi_core::Error as CoreError;

pub const OK: i32 = 0;
pub const CONFIG: i32 = 2;
pub const DATA: i32 = 3;
pub const DIVERGENCE: i32 = 4;
pub const FETCH: i32 = 5;
pub const PARTIAL_FETCH: i32 = 6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("no record could be fetched: {0}")]
    FetchFailed(String),
    #[error("{failed} of {total} records failed to fetch")]
    PartialFetch { failed: usize, total: usize },
}

/// Walks the error chain for the first categorized cause.
pub fn code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => CONFIG,
                CliError::Data(_) => DATA,
                CliError::FetchFailed(_) => FETCH,
                CliError::PartialFetch { .. } => PARTIAL_FETCH,
            };
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e.root() {
                CoreError::Divergence { .. } => DIVERGENCE,
                CoreError::Fetch { .. } => FETCH,
                CoreError::Argument(_) => CONFIG,
                _ => DATA,
            };
        }
    }
    DATA
}
