//! Affordance transfer learning for human-object interaction detection on
//! synthetic worlds.

pub mod affordance;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod taxonomy;
pub mod verify;

pub use affordance::{AffordanceBank, AffordanceScores, HoiScorer};
pub use config::RunConfig;
pub use error::{AtlError, Result};
pub use geometry::BBox;
pub use pipeline::{HoiModel, TrainConfig};
pub use taxonomy::{MultiHot, Taxonomy};
