//! Offline mesh extraction and evaluation metrics.

mod mesh;
mod metrics;
mod tables;

use std::collections::BTreeMap;
use std::path::Path;

pub use mesh::{extract_mesh, marching_cubes, weight_grid, Mesh, MeshConfig, VoxelGrid};
pub use metrics::{
    ape, ape_report, associate, depth_errors, depth_image, format_pgm16, l1_depth, map_metrics, render_scan_depth,
    sample_mesh, umeyama, ApeReport, MapMetrics,
};

use crate::error::{Error, Result};

/// Voxel size both maps are downsampled to before comparison.
pub const MAP_VOXEL: f64 = 0.05;
/// Default distance below which a point counts as matched.
pub const MAP_THRESHOLD: f64 = 0.1;

/// Writes `metrics` as one flat JSON object with sorted keys.
pub fn write_metrics(path: &Path, metrics: &BTreeMap<String, f64>) -> Result<()> {
    let text = serde_json::to_string_pretty(metrics).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
