//! Renders a short box-room loop and writes it as a dataset directory.
//!
//! ```text
//! cargo run --release --example simulate -- /tmp/room
//! ```

use std::path::PathBuf;

use ilslam::simulator::{box_room, generate_sequence, io, loop_trajectory, LidarModel, SimOptions};

fn main() -> ilslam::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ilslam_room"));
    let model = LidarModel::uniform(180, 16, -25.0, 25.0, 0.3, 40.0, 0.1, 5.0);
    let waypoints = loop_trajectory([0.0, 0.0], 2.0, 1.5, 10.0, 0.1);
    let options = SimOptions { range_noise_std: 0.01, seed: 7, ..SimOptions::default() };
    let ds = generate_sequence(&box_room(), &waypoints, &model, &options)?;

    let returns: usize = ds.scans.iter().map(|s| s.valid_count()).sum();
    println!("{} scans, {} returns in total", ds.scans.len(), returns);
    println!("groundtruth map: {} points", ds.gt_map.points.len());

    io::write_dataset(&out, &ds)?;
    let back = io::read_dataset(&out)?;
    assert_eq!(back.scans.len(), ds.scans.len());
    println!("wrote {}", out.display());
    Ok(())
}
