//! Self-supervised hallucination of dynamic obstacles for training
//! scan-history motion planners, plus the simulation benchmark used to
//! evaluate them.
//!
//! Pipeline: [`dataset::collect_open_space_plans`] →
//! [`halluc::train_hallucination`] → [`dataset::generate_dataset`] /
//! [`dataset::augment`] → [`planner::train_planner`] → [`bench::evaluate`].

pub mod autodiff;
pub mod bench;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod halluc;
pub mod io;
pub mod lidar;
pub mod optim;
pub mod planner;
pub mod rng;
pub mod safety;
pub mod viz;
pub mod world;

pub use error::{Error, Result};
