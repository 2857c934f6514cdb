//! Grid-world motion planning via next-frame video prediction.
//!
//! The pipeline: generate occupancy-grid worlds and near-optimal expert
//! paths (RRT*), encode each planning task as a multi-channel binary video
//! clip, train a stacked ConvLSTM to predict the next frame, then construct
//! paths online by repeatedly predicting the next-waypoint probability map
//! and committing the best collision-free candidate.

pub mod bench;
pub mod config;
pub mod dataset;
pub mod expert;
pub mod frames;
pub mod grid;
pub mod nn;
pub mod planner;
pub mod render;
pub mod util;

pub use frames::{Clip, Frame, PatchSpec};
pub use grid::{Cell, OccupancyGrid, Path};
pub use planner::PlanResult;
pub use util::RngSeed;
