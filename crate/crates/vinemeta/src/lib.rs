//! Copula-based mixed models for network meta-analysis of diagnostic
//! accuracy: truncated C-vine likelihoods, maximum-likelihood fitting,
//! dataset simulation, and simulation-study drivers.

pub mod copula;
pub mod datagen;
pub mod error;
pub mod estimation;
pub mod io;
pub mod report;
pub mod model;
pub mod oracle;
pub mod simstudy;
pub mod stats;
pub mod vine;

pub use error::{Error, Result};
