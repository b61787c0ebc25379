//! Next-location risk maps for crime series.
//!
//! Risk at a cell is a background KDE over recent crimes plus a triggering
//! kernel summed over the series' earlier offenses. The kernel decays with
//! time and distance and is scaled by a linear function of how the cells'
//! geographic features differ; its parameters are learned with a pairwise
//! ranking hinge loss.

pub mod background;
pub mod baselines;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod events;
pub mod geo_grid;
pub mod kernel;
pub mod pipeline;
pub mod risk;
pub mod scene;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
