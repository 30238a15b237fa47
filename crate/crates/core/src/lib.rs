//! EEG motor-imagery classification: EDF ingestion, spectral features, a
//! small neural-network engine with first-order optimizers, and the
//! training/evaluation protocol around them.

pub mod dsp;
pub mod edf;
pub mod error;
pub mod io;
pub mod nn;
pub mod optim;
pub mod par;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
