//! On-disk dataset layout:
//!
//! ```text
//! DIR/metadata.json      lidar model, scene name, simulation options, scan stamps
//! DIR/scans/NNNNNN.csv   dir_x,dir_y,dir_z,range_or_-1,timestamp,az_idx,el_idx
//! DIR/gt_traj.tum        groundtruth pose per scan
//! DIR/gt_map.ply         groundtruth point cloud (vertices only)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lidar::{LidarModel, LidarRay, LidarScan};
use super::sequence::{Dataset, SimOptions};
use crate::error::{Error, Result};
use crate::geometry::{tum, PointCloud};
use crate::ply;

pub const SCAN_CSV_HEADER: &str = "dir_x,dir_y,dir_z,range_or_-1,timestamp,az_idx,el_idx";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub format_version: u32,
    pub scene: String,
    pub lidar: LidarModel,
    pub scan_rate: f64,
    pub seed: u64,
    pub options: SimOptions,
    pub stamps: Vec<f64>,
}

pub fn format_scan_csv(scan: &LidarScan) -> String {
    let mut s = String::with_capacity(scan.rays.len() * 80);
    s.push_str(SCAN_CSV_HEADER);
    s.push('\n');
    for r in &scan.rays {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.direction.x,
            r.direction.y,
            r.direction.z,
            r.range.unwrap_or(-1.0),
            r.timestamp,
            r.azimuth_index,
            r.elevation_index
        )
        .unwrap();
    }
    s
}

pub fn parse_scan_csv(text: &str, stamp: f64) -> Result<LidarScan> {
    let mut rays = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.starts_with("dir_x") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Parse(format!("scan row {}: expected 7 fields", i + 1)));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("scan row {}, field {}: {e}", i + 1, k + 1)))
        };
        let idx = |k: usize| -> Result<u32> {
            f[k].trim()
                .parse::<u32>()
                .map_err(|e| Error::Parse(format!("scan row {}, field {}: {e}", i + 1, k + 1)))
        };
        let range = num(3)?;
        rays.push(LidarRay {
            direction: nalgebra::Vector3::new(num(0)?, num(1)?, num(2)?),
            range: (range >= 0.0).then_some(range),
            timestamp: num(4)?,
            azimuth_index: idx(5)?,
            elevation_index: idx(6)?,
        });
    }
    Ok(LidarScan { rays, stamp })
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let scans_dir = dir.join("scans");
    std::fs::create_dir_all(&scans_dir).map_err(|e| Error::io(&scans_dir, e))?;
    let meta = DatasetMetadata {
        format_version: 1,
        scene: ds.scene_name.clone(),
        lidar: ds.lidar.clone(),
        scan_rate: ds.lidar.scan_rate,
        seed: ds.options.seed,
        options: ds.options.clone(),
        stamps: ds.stamps(),
    };
    let meta_path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    for (i, scan) in ds.scans.iter().enumerate() {
        let p = scans_dir.join(format!("{i:06}.csv"));
        std::fs::write(&p, format_scan_csv(scan)).map_err(|e| Error::io(&p, e))?;
    }
    tum::write_tum(&dir.join("gt_traj.tum"), &ds.gt_trajectory)?;
    ply::write_ply(&dir.join("gt_map.ply"), &ds.gt_map.points, &[])
}

/// Loads and validates a dataset; errors name the offending file.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let with_file = |p: &Path, e: Error| Error::Validation(format!("{}: {e}", p.display()));
    let meta_path = dir.join("metadata.json");
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| with_file(&meta_path, Error::io(&meta_path, e)))?;
    let meta: DatasetMetadata = serde_json::from_str(&text)
        .map_err(|e| with_file(&meta_path, Error::Parse(e.to_string())))?;
    meta.lidar.validate().map_err(|e| with_file(&meta_path, e))?;
    let mut scans = Vec::with_capacity(meta.stamps.len());
    for (i, &stamp) in meta.stamps.iter().enumerate() {
        let p = dir.join("scans").join(format!("{i:06}.csv"));
        let text = std::fs::read_to_string(&p).map_err(|e| with_file(&p, Error::io(&p, e)))?;
        let scan = parse_scan_csv(&text, stamp).map_err(|e| with_file(&p, e))?;
        if scan.rays.len() != meta.lidar.ray_count() {
            return Err(with_file(
                &p,
                Error::Parse(format!(
                    "expected {} rays, found {}",
                    meta.lidar.ray_count(),
                    scan.rays.len()
                )),
            ));
        }
        scans.push(scan);
    }
    let traj_path = dir.join("gt_traj.tum");
    let gt_trajectory = tum::read_tum(&traj_path).map_err(|e| with_file(&traj_path, e))?;
    let map_path = dir.join("gt_map.ply");
    let (pts, _) = ply::read_ply(&map_path).map_err(|e| with_file(&map_path, e))?;
    let ds = Dataset {
        scene_name: meta.scene,
        lidar: meta.lidar,
        options: meta.options,
        scans,
        gt_trajectory,
        gt_map: PointCloud::new(pts),
    };
    ds.validate()?;
    Ok(ds)
}
