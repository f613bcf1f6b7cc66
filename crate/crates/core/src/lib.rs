//! Simulator and metrics harness for utility-scale PV plants operated under
//! hierarchical curtailment control.
//!
//! The crate is organised bottom-up:
//!
//! - [`ingest`]: irradiance, regulation-signal and scenario inputs
//! - [`pv`]: irradiance to AC power conversion (simulation ground truth)
//! - [`correlation`]: hourly Pearson matrices, virtual neighbours, clustering
//! - [`control`]: the three-layer direct / supervisor / adaptive controller
//! - [`grouping`]: the homogeneous per-group baseline controller
//! - [`dispatch`]: commitment schedule and regulation signal composition
//! - [`metrics`]: mileage, regulation energy, satisfaction, curve errors
//! - [`sim`]: run configuration, the time-stepping loop, traces, comparison

pub mod control;
pub mod correlation;
pub mod dispatch;
pub mod grouping;
pub mod ingest;
pub mod metrics;
pub mod pv;
pub mod series;
pub mod sim;
pub mod time;

pub use control::{ControlConfig, HierarchicalController};
pub use correlation::{CorrelationMatrix, NeighborOrder};
pub use ingest::{IrradianceDataset, RegulationSignal};
pub use metrics::MetricsReport;
pub use pv::PvArrayConfig;
pub use sim::{RunConfig, SimError};
