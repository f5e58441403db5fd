//! Overfits a field to five box-room keyframes, meshes it, and scores the
//! mesh against the simulator's groundtruth surface samples.

use std::path::PathBuf;

use ilslam::cli::{field_config_for, RunConfig};
use ilslam::field::WeightFormula;
use ilslam::geometry::Pose;
use ilslam::mapper::{Mapper, MapperConfig};
use ilslam::mesh_eval::{extract_mesh, map_metrics, sample_mesh, MeshConfig, MAP_THRESHOLD, MAP_VOXEL};
use ilslam::simulator::{box_room, generate_sequence, loop_trajectory, LidarModel, SimOptions};
use ilslam::tracker::{segment_sky, TrackedFrame};

fn main() -> ilslam::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ilslam_room.ply"));
    let iters: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    let model = LidarModel::uniform(180, 16, -25.0, 25.0, 0.3, 40.0, 0.0, 5.0);
    let ds = generate_sequence(&box_room(), &loop_trajectory([0.0, 0.0], 2.0, 1.5, 10.0, 0.1), &model, &SimOptions::default())?;

    let mut cfg = RunConfig::default();
    cfg.field.weight_formula = WeightFormula::Alpha;
    cfg.loss.eps_min = 0.05;
    let mapper_cfg = MapperConfig {
        n_rays: 128,
        n_samples: 32,
        n_window: 5,
        lr_grid: 0.01,
        lr_mlp: 0.005,
        optimize_poses: false,
        ..cfg.mapper.clone()
    };
    let mut mapper = Mapper::new(mapper_cfg, cfg.loss.clone(), &field_config_for(&cfg.field, &ds), model.clone(), 0)?;
    for i in (0..ds.scans.len()).step_by(10) {
        let (stamp, pose) = ds.gt_trajectory[i];
        let scan = ds.scans[i].clone();
        let sky_mask = segment_sky(&scan, &pose, &model);
        mapper.add_keyframe(TrackedFrame {
            index: i,
            stamp,
            scan,
            pose,
            odometry: Pose::identity(),
            odom_pose: pose,
            sky_mask,
            icp_converged: true,
        });
    }
    let window: Vec<usize> = (0..mapper.keyframes().len()).rev().collect();
    for it in 0..iters {
        for &k in &window {
            mapper.keyframe_mut(k).update_count = (it / 50) as u32;
        }
        let s = mapper.step(&window);
        if it % 100 == 0 {
            println!("iter {it:>4} loss {:.4}", s.summary.total);
        }
    }

    let mesh = extract_mesh(mapper.field(), mapper.store(), &mapper.keyframe_poses(), &model, &MeshConfig::default())?;
    ilslam::ply::write_ply(&out, &mesh.vertices, &mesh.triangles)?;
    println!("{} vertices, {} triangles -> {}", mesh.vertices.len(), mesh.triangles.len(), out.display());

    let m = map_metrics(&sample_mesh(&mesh, MAP_VOXEL / 2.0, 0), &ds.gt_map, MAP_THRESHOLD, MAP_VOXEL)?;
    println!(
        "accuracy {:.4} m, completion {:.4} m, precision {:.3}, recall {:.3}",
        m.accuracy, m.completion, m.precision, m.recall
    );
    Ok(())
}
