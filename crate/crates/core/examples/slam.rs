//! Full pipeline on a scaled box-room loop: tracking, windowed mapping,
//! trajectory error and rendered-depth error.
//!
//! Takes about a minute in release mode. Pass an output directory to keep
//! the trajectories, checkpoint and logs.

use ilslam::cli::{run_slam_on, write_slam_outputs, RunConfig};
use ilslam::field::WeightFormula;
use ilslam::mesh_eval::{ape, l1_depth};
use ilslam::simulator::{box_room, generate_sequence, loop_trajectory, LidarModel, SimOptions};

fn main() -> ilslam::Result<()> {
    let model = LidarModel::uniform(180, 16, -25.0, 25.0, 0.3, 40.0, 0.1, 5.0);
    let ds = generate_sequence(&box_room(), &loop_trajectory([0.0, 0.0], 2.0, 1.5, 10.0, 0.1), &model, &SimOptions::default())?;

    let mut cfg = RunConfig::default();
    cfg.deterministic_mode = true;
    cfg.field.weight_formula = WeightFormula::Alpha;
    cfg.loss.eps_min = 0.05;
    cfg.mapper.t_kf = 1.0;
    cfg.mapper.n_rays = 128;
    cfg.mapper.n_samples = 32;
    cfg.mapper.lr_grid = 0.01;
    cfg.mapper.lr_mlp = 0.005;
    cfg.mapper.lr_pose = 3e-4;

    let run = run_slam_on(&ds, &cfg)?;
    println!("{} frames, {} keyframes", run.frames.len(), run.mapper.keyframes().len());
    println!("APE odometry  {:.4} m", ape(&run.odom_trajectory, &run.gt_trajectory, 1e-3)?);
    println!("APE optimized {:.4} m", ape(&run.est_trajectory, &run.gt_trajectory, 1e-3)?);
    let l1 = l1_depth(run.mapper.field(), run.mapper.store(), &run.scans_at_estimates(), 3, 0, model.min_range, &cfg.eval.depth)?;
    println!("L1 depth      {l1:.4} m");

    if let Some(dir) = std::env::args().nth(1) {
        let out = write_slam_outputs(&run, &ds, &cfg, dir.as_ref())?;
        println!("outputs in {}", out.dir.display());
    }
    Ok(())
}
