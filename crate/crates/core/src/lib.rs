//! Mean-variance portfolio optimization on factored covariances.
//!
//! The crate builds covariance factors from return panels, compresses them
//! with randomized sketches (Gaussian JL or CountSketch), conditions them
//! through truncation plus a ridge lift, and solves the long-only
//! mean-variance problem with a Nesterov-accelerated projected gradient
//! method whose projection onto the feasible set is exact.
//!
//! Module map:
//!
//! * [`panel`] ingestion, centering, synthetic controlled-spectrum panels
//! * [`sketch`] Gaussian JL and CountSketch embeddings
//! * [`spectrum`] thin SVD, energy curves, truncation-level rule
//! * [`model`] baseline / sketch / STR factor models and ridge selection
//! * [`projection`] projection onto simplex ∩ return halfspace
//! * [`solver`] the accelerated projected gradient solver
//! * [`oracle`] exact active-set enumeration for small instances
//! * [`metrics`] spectral errors, gaps, conditioning, annualized stats
//! * [`bench`] experiment harness behind the `mvstr` binary

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod panel;
pub mod projection;
pub mod sketch;
pub mod solver;
pub mod spectrum;

pub use error::{Error, Result};
pub use model::{FactorModel, ModelKind, RidgePolicy};
pub use panel::{CovarianceFactor, ReturnPanel, SyntheticSpec};
pub use projection::{FeasibleSet, ProjectionConfig};
pub use sketch::{SketchConfig, SketchKind, SketchedFactor};
pub use solver::{SolveResult, SolverConfig};
pub use spectrum::{SpectrumReport, ThinSvd, TruncationRule};
