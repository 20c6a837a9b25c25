//! Experiment drivers: run configs, operator-norm probing, the boundedness
//! suite, kernel envelope fits and report emission.

pub mod config;
pub mod envelopes;
pub mod norm;
pub mod probes;
pub mod report;
pub mod suite;

pub use config::{derive_seed, RunConfig};
pub use envelopes::{fit_kernel_envelopes, EnvelopeReport};
pub use norm::{estimate_operator_norm, NormReport, Probe, MIN_PROBES};
pub use probes::ProbeZoo;
pub use report::{emit_reports, ReportBundle};
pub use suite::{run_theorem_a_suite, SuiteOutcome};
