//! Finite-grid diagnostics for expectation functions: inf-convolution
//! envelopes, Fatou-type inequalities under weakly converging measures,
//! epi-convergence checks and the Attouch-Wets distance.

pub mod apps;
pub mod battery;
pub mod cli;
pub mod envelope;
pub mod epi;
pub mod extreal;
pub mod integrand;
pub mod report;
pub mod space;

pub use epi::ApproximationScheme;
pub use extreal::{ExtReal, Trend};
pub use integrand::Integrand;
pub use report::{DiagnosticReport, Schedules, Stage, StageKind, Verdict};
pub use space::{DiscreteMeasure, MetricGrid};
