//! Mean-field Schrödinger bridges between two densities in the plane,
//! learned by alternating forward and backward path simulation.
//!
//! * [`scenario`] describes a problem: marginals, noise, horizon, obstacles
//!   and the state cost.
//! * [`sde`] simulates paths in either direction.
//! * [`net`] holds the five networks, their exact divergences, Adam and
//!   checkpoints.
//! * [`losses`] has the IPF, temporal-difference and flow-matching
//!   objectives with their gradients.
//! * [`trainer`] runs the alternating loop and evaluates each stage.
//! * [`metrics`] scores sample sets, and [`cli`] is the `mfbridge` binary.
//!
//! ```
//! use mfbridge::scenario::make_vneck_spec;
//! use mfbridge::trainer::{train, TrainConfig, TrainIo};
//!
//! let mut spec = make_vneck_spec();
//! spec.dt = 0.1;
//! let cfg = TrainConfig { stages: 1, steps_per_stage: 2, k: 8, batch_on: 8, batch_off: 1, hidden: 4, eval_n: 8, ..TrainConfig::default() };
//! let report = train(&spec, &cfg, TrainIo::default()).unwrap().report;
//! println!("{:.3}", report.stages[1].eval.energy_distance);
//! ```

pub mod cli;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod scenario;
pub mod sde;
pub mod trainer;
