//! Entanglement-distribution link modelling.
//!
//! - [`grid`]: ITU channel plans and conjugate-pair allocation.
//! - [`budget`]: analytic visibility, QBER and loss budgets.
//! - [`franson`]: unbalanced-interferometer timing and outcome statistics.
//! - [`montecarlo`]: seeded photon-pair and detector simulation.
//! - [`coincide`]: histograms, coincidence counting and fringe fits.
//! - [`pipeline`]: scan, count and fit in one call.
//! - [`presets`]: named operating points.
//! - [`tagfile`]: binary and CSV time-tag files.

pub mod budget;
pub mod coincide;
pub mod franson;
pub mod grid;
pub mod montecarlo;
pub mod pipeline;
pub mod presets;
pub mod tagfile;

pub use budget::{visibility, DarkProbs, DetectorSpec, LinkBudget, OperatingPoint, PerformanceEstimate};
pub use coincide::{count_coincidences, fit_fringe, histogram, AnalysisConfig, FringeFit, FringeScan};
pub use grid::{build_plan, ChannelPair, ChannelPlan, Grid};
pub use montecarlo::{simulate, SimConfig, SimOutput, TagStream};
