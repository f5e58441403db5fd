//! LiDAR-only SLAM with point-to-plane ICP tracking and an online-trained
//! neural density map.

pub mod cli;
pub mod diff;
pub mod error;
pub mod field;
pub mod geometry;
pub mod losses;
pub mod mapper;
pub mod mesh_eval;
pub mod ply;
pub mod simulator;
pub mod tracker;

pub use error::{Error, Result};
