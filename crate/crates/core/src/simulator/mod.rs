//! Synthetic LiDAR datasets: triangle scenes, ray casting and trajectories.

pub mod bvh;
pub mod io;
mod lidar;
mod scene;
mod sequence;

pub use lidar::{cast_scan, LidarModel, LidarRay, LidarScan, RayCaster};
pub use scene::{box_room, courtyard, quad, Scene, Triangle};
pub use sequence::{
    generate_sequence, interpolate_trajectory, loop_trajectory, scan_stamps, Dataset, SimOptions,
    GT_MAP_VOXEL,
};
