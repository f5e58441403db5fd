//! Point-to-plane ICP between a box-room scan and a moved copy of it.

use nalgebra::{UnitQuaternion, Vector3};

use ilslam::geometry::{estimate_planar_normals, Point, Pose};
use ilslam::simulator::{box_room, cast_scan, LidarModel};
use ilslam::tracker::{icp_point_to_plane, IcpParams, IcpTarget};

fn main() {
    let model = LidarModel::uniform(180, 16, -30.0, 30.0, 0.3, 40.0, 0.0, 5.0);
    let sensor = Pose::from_yaw(0.6, Vector3::new(0.7, -0.4, 1.4));
    let scan = cast_scan(&box_room(), &sensor, &model, 0.0).points();

    let truth = Pose::from_quaternion(
        &UnitQuaternion::from_euler_angles(0.02, -0.03, 0.07),
        Vector3::new(0.15, -0.08, 0.03),
    );
    let moved = scan.transformed(&truth.inverse());

    let normals = |c| estimate_planar_normals(c, 10, &Point::zeros(), 0.005);
    let target = IcpTarget::new(&normals(&scan)).expect("scan has normals");
    let r = icp_point_to_plane(&normals(&moved), &target, &Pose::identity(), &IcpParams::default());

    let err = truth.inverse().compose(&r.pose);
    println!("converged: {} after {} iterations, {} correspondences", r.converged, r.iterations, r.correspondences);
    println!("rms residual {:.2e} m", r.rms_residual);
    println!(
        "error: {:.2e} m, {:.2e} deg",
        err.translation.norm(),
        err.rotation_angle().to_degrees()
    );

    // a second scan taken from the moved pose samples the walls elsewhere
    let recast = cast_scan(&box_room(), &sensor.compose(&truth), &model, 0.0).points();
    let r = icp_point_to_plane(&normals(&recast), &target, &Pose::identity(), &IcpParams::default());
    let err = truth.inverse().compose(&r.pose);
    println!("recast scan error: {:.2e} m, {:.2e} deg", err.translation.norm(), err.rotation_angle().to_degrees());
}
