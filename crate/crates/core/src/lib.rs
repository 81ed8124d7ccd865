//! Analytical roofline simulator for vision-language-action (VLA) inference
//! on edge accelerators.
//!
//! A [`VlaModelSpec`] and [`RequestProfile`] are lowered into per-phase
//! operator graphs ([`opgraph`]), each operator is costed against a
//! [`HardwareSpec`] with a roofline model ([`roofline`]), and the
//! [`scheduler`] folds operator costs into phase latencies, end-to-end step
//! latency and robot control frequency.
//!
//! ```
//! use edgevla::{catalog_entry, step_latency, EvalOptions, RequestProfile, VlaModelSpec};
//!
//! let model = VlaModelSpec::molmoact_7b_class();
//! let orin = catalog_entry("Orin").unwrap();
//! let report = step_latency(&model, &orin, &RequestProfile::default(), &EvalOptions::default()).unwrap();
//! assert!(report.generation_share > 0.5);
//! ```

pub mod bundled;
pub mod cli;
pub mod config;
pub mod hw;
pub mod opgraph;
pub mod report;
pub mod roofline;
pub mod scheduler;
pub mod workload;

pub use config::ConfigError;
pub use hw::{builtin_catalog, catalog_entry, CapacityMode, Domain, HardwareSpec};
pub use opgraph::{Operator, Phase, PhaseGraph};
pub use roofline::{op_cost, Bound, OpCost};
pub use scheduler::{
    control_frequency_sweep, step_latency, EvalOptions, FrequencyMode, PhaseReport, StepReport,
};
pub use workload::{scale_to, RequestProfile, VlaModelSpec};
