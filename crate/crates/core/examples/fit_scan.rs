//! Trains fresh fields on one courtyard scan under several losses and
//! prints how the rendered-depth error falls.

use nalgebra::Vector3;

use ilslam::cli::{format_fit_csv, parse_modes, fit_scan_on, RunConfig};
use ilslam::field::WeightFormula;
use ilslam::geometry::Pose;
use ilslam::simulator::{courtyard, generate_sequence, LidarModel, SimOptions};

fn main() -> ilslam::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let model = LidarModel::uniform(180, 16, -25.0, 25.0, 0.3, 40.0, 0.0, 5.0);
    let pose = Pose::from_yaw(0.3, Vector3::new(1.5, -2.0, 1.5));
    let ds = generate_sequence(&courtyard(), &[(0.0, pose), (0.2, pose)], &model, &SimOptions::default())?;

    let mut cfg = RunConfig::default();
    cfg.field.weight_formula = WeightFormula::Alpha;
    cfg.loss.eps_min = 0.1;
    cfg.mapper.n_rays = 256;
    cfg.mapper.n_samples = 32;
    cfg.mapper.lr_grid = 0.01;
    cfg.mapper.lr_mlp = 0.005;
    cfg.eval.fit_eval_rays = 256;
    cfg.eval.depth.coarse_samples = 128;
    cfg.eval.depth.fine_samples = 32;

    let modes = parse_modes("JS_DYNAMIC,LOS_L1:medium,DEPTH_ONLY")?;
    let curves = fit_scan_on(&ds, &cfg, 0, &modes, iters)?;
    for c in &curves {
        let marks: Vec<String> = c.points.iter().step_by(5).map(|p| format!("{}:{:.3}", p.iter, p.depth_mse)).collect();
        println!("{:<16} {}", c.spec.to_string(), marks.join(" "));
    }
    let los = curves[1].final_mse();
    println!("JS_DYNAMIC first reaches the final LOS error at {:?}", curves[0].first_reaching(los));
    print!("{}", format_fit_csv(&curves[0]).lines().take(3).collect::<Vec<_>>().join("\n"));
    println!("\n...");
    Ok(())
}
