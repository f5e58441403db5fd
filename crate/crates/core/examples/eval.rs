//! Trajectory and map metrics on constructed inputs with known answers.

use nalgebra::{UnitQuaternion, Vector3};

use ilslam::geometry::{Point, PointCloud, Pose, Trajectory};
use ilslam::mesh_eval::{ape, ape_report, map_metrics};

fn main() -> ilslam::Result<()> {
    let gt: Trajectory = (0..40)
        .map(|i| {
            let a = i as f64 * 0.15;
            (i as f64 * 0.2, Pose::from_yaw(a + 1.57, Vector3::new(3.0 * a.cos(), 3.0 * a.sin(), 1.5)))
        })
        .collect();

    // a rigid change of frame is aligned away
    let g = Pose::from_quaternion(&UnitQuaternion::from_euler_angles(0.1, 0.2, -0.7), Vector3::new(5.0, -2.0, 0.3));
    let moved: Trajectory = gt.iter().map(|(t, p)| (*t, g.compose(p))).collect();
    println!("APE after a rigid change of frame: {:.2e} m", ape(&moved, &gt, 1e-3)?);

    // alternating +-5 cm in z survives alignment unchanged
    let jitter: Trajectory = gt
        .iter()
        .enumerate()
        .map(|(i, (t, p))| {
            let dz = if i % 2 == 0 { 0.05 } else { -0.05 };
            (*t, Pose::from_translation(Vector3::new(0.0, 0.0, dz)).compose(p))
        })
        .collect();
    let r = ape_report(&jitter, &gt, 1e-3)?;
    println!("APE with +-5 cm jitter: rmse {:.4} mean {:.4} max {:.4} over {} pairs", r.rmse, r.mean, r.max, r.pairs);

    // a floor patch and the same patch 5 cm higher
    let floor: Vec<Point> = (0..30)
        .flat_map(|i| (0..30).map(move |j| Point::new(0.025 + i as f64 * 0.05, 0.025 + j as f64 * 0.05, 0.025)))
        .collect();
    let raised: Vec<Point> = floor.iter().map(|p| p + Vector3::new(0.0, 0.0, 0.05)).collect();
    let m = map_metrics(&PointCloud::new(raised), &PointCloud::new(floor.clone()), 0.1, 0.05)?;
    println!("shifted map: {m:?}");
    let half: Vec<Point> = floor.iter().filter(|p| p.x < 0.75).copied().collect();
    let m = map_metrics(&PointCloud::new(half), &PointCloud::new(floor), 0.1, 0.05)?;
    println!("half map: precision {} recall {}", m.precision, m.recall);
    Ok(())
}
