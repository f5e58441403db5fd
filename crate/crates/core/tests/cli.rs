//! End-to-end runs of the `ilslam` subcommands through `main_with_args`.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use ilslam::cli::{main_with_args, RunConfig, EST_TRAJ_FILE, FIT_CSV_HEADER, MANIFEST_FILE};
use ilslam::geometry::{tum, Pose, Trajectory};
use ilslam::losses::LossMode;
use ilslam::mesh_eval::ape;
use ilslam::simulator::{loop_trajectory, LidarModel};

fn cli(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("ilslam").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_waypoints(dir: &Path, name: &str, waypoints: &Trajectory) -> PathBuf {
    let p = dir.join(name);
    tum::write_tum(&p, waypoints).unwrap();
    p
}

fn small_lidar(dir: &Path, period: f64) -> PathBuf {
    let p = dir.join("lidar.json");
    let m = LidarModel::uniform(90, 12, -25.0, 25.0, 0.3, 40.0, period, 5.0);
    std::fs::write(&p, serde_json::to_string(&m).unwrap()).unwrap();
    p
}

/// Simulates `scene` along `waypoints` into `dir/name`.
fn simulate(dir: &Path, name: &str, scene: &str, waypoints: &Trajectory, lidar: Option<&Path>) -> PathBuf {
    let traj = write_waypoints(dir, &format!("{name}.tum"), waypoints);
    let out = dir.join(name);
    let mut args = vec!["simulate", "--scene", scene, "--traj", s(&traj), "--out", s(&out)];
    if let Some(l) = lidar {
        args.extend(["--lidar", s(l)]);
    }
    assert_eq!(cli(&args), 0);
    out
}

/// A config small enough for a few seconds of mapping.
fn quick_config(dir: &Path, mode: LossMode) -> PathBuf {
    let mut cfg = RunConfig::default();
    cfg.deterministic_mode = true;
    cfg.loss.mode = mode;
    cfg.loss.eps_min = 0.1;
    cfg.mapper.t_kf = 1.0;
    cfg.mapper.n_window = 2;
    cfg.mapper.n_rays = 32;
    cfg.mapper.n_samples = 16;
    cfg.mapper.iters_per_kf = 5;
    cfg.field.levels = 2;
    cfg.field.table_size = 1 << 10;
    cfg.field.mlp_width = 16;
    cfg.mesh.voxel_size = 0.25;
    cfg.eval.depth.coarse_samples = 32;
    cfg.eval.depth.fine_samples = 8;
    cfg.eval.fit_eval_rays = 64;
    cfg.eval.fit_eval_every = 5;
    let p = dir.join(format!("{}.toml", mode.as_str().to_lowercase()));
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p
}

fn stationary(at: Pose, seconds: f64) -> Trajectory {
    vec![(0.0, at), (seconds, at)]
}

#[test]
fn usage_and_config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(cli(&["no-such-command"]), 2);
    assert_eq!(cli(&["slam", "--threads", "many"]), 2);

    let bad = d.join("bad.toml");
    std::fs::write(&bad, "[mapper]\nwindow = 4\n").unwrap();
    assert_eq!(cli(&["slam", "--config", s(&bad), "--dataset", s(d), "--out", s(d)]), 2);
    // no dataset configured anywhere
    assert_eq!(cli(&["slam", "--out", s(d)]), 2);

    let traj = write_waypoints(d, "w.tum", &stationary(Pose::identity(), 0.4));
    assert_eq!(cli(&["simulate", "--scene", "cathedral", "--traj", s(&traj), "--out", s(&d.join("x"))]), 2);
    assert_eq!(cli(&["fit-scan", "--scan", "0", "--modes", "LOS", "--iters", "1", "--dataset", s(d)]), 2);
}

#[test]
fn malformed_dataset_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lidar = small_lidar(d, 0.0);
    let ds = simulate(d, "room", "box_room", &stationary(Pose::from_translation(Vector3::new(0.0, 0.0, 1.5)), 0.4), Some(&lidar));
    std::fs::write(ds.join("scans").join("000001.csv"), "not,a,scan\n").unwrap();
    let err = ilslam::simulator::io::read_dataset(&ds).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("000001.csv"), "{err}");
    let cfg = quick_config(d, LossMode::JsDynamic);
    assert_eq!(cli(&["slam", "--config", s(&cfg), "--dataset", s(&ds), "--out", s(&d.join("out"))]), 2);
}

#[test]
fn missing_inputs_are_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let nothing = d.join("absent.tum");
    assert_eq!(cli(&["eval-traj", s(&nothing), s(&nothing)]), 3);
    assert_eq!(cli(&["mesh", "--checkpoint", s(&d.join("absent.ckpt")), "--out", s(&d.join("m.ply"))]), 3);
}

#[test]
fn stationary_box_room_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pose = Pose::from_yaw(0.3, Vector3::new(0.5, -0.3, 1.5));
    let ds = simulate(d, "room", "box_room", &stationary(pose, 1.0), None);
    let out = d.join("run");
    assert_eq!(cli(&["slam", "--dataset", s(&ds), "--out", s(&out)]), 0);
    let est = tum::read_tum(&out.join(EST_TRAJ_FILE)).unwrap();
    let gt = tum::read_tum(&ds.join("gt_traj.tum")).unwrap();
    assert_eq!(est.len(), gt.len());
    let err = ape(&est, &gt, 1e-3).unwrap();
    assert!(err < 0.02, "APE {err}");
}

#[test]
fn depth_only_run_and_downstream_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lidar = small_lidar(d, 0.1);
    let ds = simulate(d, "room", "box_room", &loop_trajectory([0.0, 0.0], 1.0, 1.5, 2.0, 0.1), Some(&lidar));
    let cfg = quick_config(d, LossMode::DepthOnly);
    let out = d.join("run");
    assert_eq!(cli(&["slam", "--config", s(&cfg), "--dataset", s(&ds), "--out", s(&out)]), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["loss_mode"], "DEPTH_ONLY");
    assert_eq!(manifest["command"], "slam");
    assert_eq!(manifest["config"]["loss"]["mode"], "DEPTH_ONLY");
    // the manifest alone reproduces the config
    let echoed: RunConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    let mut expected = RunConfig::load(&cfg).unwrap();
    expected.dataset = Some(ds.clone());
    expected.out = Some(out.clone());
    assert_eq!(echoed, expected);

    let ckpt = out.join("map.ckpt");
    let mesh = d.join("mesh.ply");
    assert_eq!(cli(&["mesh", "--checkpoint", s(&ckpt), "--out", s(&mesh), "--voxel", "0.3"]), 0);
    let pgm = d.join("depth.pgm");
    assert_eq!(cli(&["render-depth", "--checkpoint", s(&ckpt), "--pose-index", "2", "--out", s(&pgm)]), 0);
    assert!(std::fs::read(&pgm).unwrap().starts_with(b"P5\n90 12\n65535\n"));
    assert_eq!(cli(&["render-depth", "--checkpoint", s(&ckpt), "--pose-index", "999", "--out", s(&pgm)]), 2);

    let metrics = d.join("traj.json");
    let gt = ds.join("gt_traj.tum");
    assert_eq!(cli(&["eval-traj", s(&out.join(EST_TRAJ_FILE)), s(&gt), "--out", s(&metrics)]), 0);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert!(m["ape_rmse"].as_f64().unwrap() >= 0.0);
    let gt_map = ds.join("gt_map.ply");
    assert_eq!(cli(&["eval-map", s(&gt_map), s(&gt_map)]), 0);
    let map_metrics = d.join("map.json");
    assert_eq!(cli(&["eval-map", s(&mesh), s(&gt_map), "--threshold", "0.2", "--out", s(&map_metrics)]), 0);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&map_metrics).unwrap()).unwrap();
    for k in ["accuracy", "completion", "precision", "recall"] {
        assert!(m[k].as_f64().is_some(), "{k}");
    }
}

fn fit_rows(path: &Path) -> Vec<(usize, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(FIT_CSV_HEADER));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn fit_scan_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lidar = small_lidar(d, 0.0);
    let ds = simulate(d, "yard", "courtyard", &stationary(Pose::from_translation(Vector3::new(1.0, -1.0, 1.5)), 0.4), Some(&lidar));
    let cfg = quick_config(d, LossMode::JsDynamic);

    let zero = d.join("zero");
    let modes = "JS_DYNAMIC,LOS_L1,LOS_L2,KL,DEPTH_ONLY";
    assert_eq!(cli(&["fit-scan", "--config", s(&cfg), "--dataset", s(&ds), "--out", s(&zero), "--scan", "1", "--modes", modes, "--iters", "0"]), 0);
    let first = fit_rows(&zero.join("fit_JS_DYNAMIC.csv"));
    assert_eq!(first.len(), 1);
    for m in ["LOS_L1", "LOS_L2", "KL", "DEPTH_ONLY"] {
        assert_eq!(fit_rows(&zero.join(format!("fit_{m}.csv"))), first, "{m}");
    }
    assert!(zero.join(MANIFEST_FILE).exists());

    let decay = d.join("decay");
    let modes = "LOS_L1:slow,LOS_L1:medium,LOS_L1:fast";
    assert_eq!(cli(&["fit-scan", "--config", s(&cfg), "--dataset", s(&ds), "--out", s(&decay), "--scan", "0", "--modes", modes, "--iters", "60"]), 0);
    let texts: Vec<String> = ["slow", "medium", "fast"]
        .iter()
        .map(|r| std::fs::read_to_string(decay.join(format!("fit_LOS_L1_{r}.csv"))).unwrap())
        .collect();
    assert!(texts[0] != texts[1] && texts[1] != texts[2] && texts[0] != texts[2]);
    let rows = fit_rows(&decay.join("fit_LOS_L1_medium.csv"));
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), (0..=60).step_by(5).collect::<Vec<_>>());
    assert_eq!(cli(&["fit-scan", "--config", s(&cfg), "--dataset", s(&ds), "--scan", "7", "--modes", "KL", "--iters", "1", "--out", s(&decay)]), 2);
}
