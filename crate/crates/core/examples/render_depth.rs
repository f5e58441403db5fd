//! Fits one courtyard scan and writes rendered and measured range images
//! side by side as 16-bit PGM files.

use std::path::PathBuf;

use nalgebra::Vector3;

use ilslam::cli::{field_config_for, fit_frame};
use ilslam::field::{DepthRenderConfig, FieldConfig, WeightFormula};
use ilslam::geometry::Pose;
use ilslam::losses::LossConfig;
use ilslam::mapper::{Mapper, MapperConfig};
use ilslam::mesh_eval::{depth_image, format_pgm16};
use ilslam::simulator::{courtyard, generate_sequence, LidarModel, SimOptions};

fn main() -> ilslam::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let model = LidarModel::uniform(180, 16, -25.0, 25.0, 0.3, 40.0, 0.0, 5.0);
    let pose = Pose::from_yaw(0.3, Vector3::new(1.5, -2.0, 1.5));
    let ds = generate_sequence(&courtyard(), &[(0.0, pose), (0.2, pose)], &model, &SimOptions::default())?;
    let field_cfg = field_config_for(&FieldConfig { weight_formula: WeightFormula::Alpha, ..FieldConfig::default() }, &ds);
    let cfg = MapperConfig { n_rays: 256, n_samples: 32, lr_grid: 0.01, lr_mlp: 0.005, optimize_poses: false, ..MapperConfig::default() };
    let loss = LossConfig { eps_min: 0.1, ..LossConfig::default() };

    let mut mapper = Mapper::new(cfg, loss, &field_cfg, model.clone(), 0)?;
    mapper.add_keyframe(fit_frame(&ds, 0)?);
    for it in 0..300 {
        mapper.keyframe_mut(0).update_count = it / 50;
        mapper.step(&[0]);
    }

    let rendered = depth_image(mapper.field(), mapper.store(), &pose, &model, &DepthRenderConfig::default());
    // the scan in the same row order: top beam first
    let h = model.elevation_count();
    let mut measured = vec![vec![None; model.azimuth_count]; h];
    for ray in &ds.scans[0].rays {
        measured[h - 1 - ray.elevation_index as usize][ray.azimuth_index as usize] = ray.range;
    }
    let mut err = (0.0, 0usize);
    for (a, b) in rendered.iter().flatten().zip(measured.iter().flatten()) {
        if let (Some(a), Some(b)) = (a, b) {
            err = (err.0 + (a - b).abs(), err.1 + 1);
        }
    }
    println!("mean |rendered - measured| over {} pixels: {:.4} m", err.1, err.0 / err.1.max(1) as f64);

    for (name, image) in [("rendered.pgm", &rendered), ("measured.pgm", &measured)] {
        let p = dir.join(name);
        std::fs::write(&p, format_pgm16(image)).map_err(|e| ilslam::Error::io(&p, e))?;
        println!("wrote {}", p.display());
    }
    Ok(())
}
