//! Empirical checks of the width bounds for approximating ReLU networks by
//! subnetworks of wider random networks whose weights may be re-sampled.
//!
//! Everything here is `f64` and independent of the training engine.

mod bounds;
mod estimate;
mod net;
mod oracle;
mod suite;
mod witness;

use thiserror::Error;

use crate::config::ConfigError;

pub use bounds::{
    count_projection_pairs, projection, required_samples, required_width_deep,
    required_width_linear, required_width_scalar, LayerWidth,
};
pub use estimate::{two_sigma_floor, Estimate};
pub use net::{Grid, ResampledPair, Selection, Subnetwork, TargetNetwork};
pub use oracle::{brute_force_oracle, OracleResult, ORACLE_LIMIT};
pub use suite::{
    cover_trial, run_theory_suite, verify_sample_cover, write_suite, Check, CoverReport,
    CoverSuite, DeepSuite, LinearSuite, OracleSuite, PairSuite, RateSummary, ScalarSuite,
    SuiteReport, SuiteSummary, TheorySuiteConfig, TrialRow, WidthRow, WidthSuite, TRIAL_CSV_HEADER,
};
pub use witness::{
    witness_deep, witness_linear_map, witness_scalar, DeepInstance, DeepWitness, LinearWitness,
    ScalarWitness,
};

/// Slack added to every `error ≤ eps` comparison.
pub const SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("`{name}` must lie in {range}, got {value}")]
    Domain {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("hidden width {0} is odd")]
    OddWidth(usize),
    #[error("hidden width {width} is not a multiple of input dimension {d0}")]
    Divisibility { width: usize, d0: usize },
    #[error("layer {layer} has width {have}, below the required {need}")]
    Width { layer: usize, have: usize, need: usize },
    #[error("search space of {0:.3e} masks exceeds the oracle limit")]
    SearchSpace(f64),
    #[error("layer {layer} has Frobenius norm {norm} > 1")]
    Frobenius { layer: usize, norm: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_open_unit(name: &'static str, value: f64) -> Result<(), TheoryError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(TheoryError::Domain {
            name,
            value,
            range: "(0, 1)",
        })
    }
}

/// Accuracy targets of the width bounds may reach one.
pub(crate) fn check_eps(value: f64) -> Result<(), TheoryError> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(TheoryError::Domain {
            name: "eps",
            value,
            range: "(0, 1]",
        })
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<(), TheoryError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(TheoryError::Domain {
            name,
            value,
            range: "(0, inf)",
        })
    }
}

pub(crate) fn check_count(name: &'static str, value: usize) -> Result<(), TheoryError> {
    if value >= 1 {
        Ok(())
    } else {
        Err(TheoryError::Domain {
            name,
            value: 0.0,
            range: "[1, inf)",
        })
    }
}
