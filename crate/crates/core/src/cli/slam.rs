//! The full pipeline: ICP tracking feeding the keyframe mapper, with the
//! mapper's pose corrections flowing back to the tracker.

use std::path::{Path, PathBuf};
use std::sync::mpsc;

use serde_json::json;

use super::config::RunConfig;
use crate::diff::save_checkpoint;
use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::geometry::{tum, Aabb, Pose, Trajectory};
use crate::mapper::{format_kf_log, Mapper};
use crate::simulator::io::read_dataset;
use crate::simulator::{Dataset, LidarScan, Scene};
use crate::tracker::{decimate, odometry_trajectory, TrackedFrame, Tracker};

/// Margin added around the scene when the field bounds are derived.
pub const BOUNDS_PADDING: f64 = 1.0;

pub const EST_TRAJ_FILE: &str = "est_traj.tum";
pub const ODOM_TRAJ_FILE: &str = "odom_traj.tum";
pub const KEYFRAME_TRAJ_FILE: &str = "keyframes.tum";
pub const CHECKPOINT_FILE: &str = "map.ckpt";
pub const KF_LOG_FILE: &str = "kf_log.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything a finished run produced, in memory.
pub struct SlamRun {
    pub mapper: Mapper,
    /// Tracked frames of the decimated stream, as emitted.
    pub frames: Vec<TrackedFrame>,
    pub odom_trajectory: Trajectory,
    pub est_trajectory: Trajectory,
    /// Groundtruth poses of the decimated stream.
    pub gt_trajectory: Trajectory,
}

impl SlamRun {
    /// Per-frame motion-compensated scan with its optimized pose.
    pub fn scans_at_estimates(&self) -> Vec<(&LidarScan, Pose)> {
        self.frames
            .iter()
            .zip(&self.est_trajectory)
            .map(|(f, (_, p))| (&f.scan, *p))
            .collect()
    }
}

/// Field configuration with bounds filled in from the dataset's scene, or
/// from its groundtruth map when the scene is not a bundled one.
pub fn field_config_for(cfg: &FieldConfig, ds: &Dataset) -> FieldConfig {
    let mut out = cfg.clone();
    if out.scene_bounds.is_none() {
        let b = match Scene::builtin(&ds.scene_name) {
            Ok(scene) => scene.bounds(),
            Err(_) => cloud_bounds(&ds.gt_map.points),
        };
        out.scene_bounds = Some(pad(&b, BOUNDS_PADDING));
    }
    out
}

fn cloud_bounds(points: &[crate::geometry::Point]) -> Aabb {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    if points.is_empty() {
        return Aabb::new([-1.0; 3], [1.0; 3]);
    }
    Aabb::new(min, max)
}

fn pad(b: &Aabb, m: f64) -> Aabb {
    Aabb::new(b.min.map(|v| v - m), b.max.map(|v| v + m))
}

/// Runs tracking and mapping over a dataset already in memory.
pub fn run_slam_on(ds: &Dataset, cfg: &RunConfig) -> Result<SlamRun> {
    cfg.validate()?;
    ds.validate()?;
    let field_cfg = field_config_for(&cfg.field, ds);
    let keep = decimate((0..ds.scans.len()).collect(), ds.lidar.scan_rate, cfg.tracker.target_hz);
    let scans: Vec<LidarScan> = keep.iter().map(|&i| ds.scans[i].clone()).collect();
    let gt_trajectory: Trajectory = keep.iter().map(|&i| ds.gt_trajectory[i]).collect();
    let initial = gt_trajectory[0].1;
    let tracker = Tracker::new(cfg.tracker.clone(), ds.lidar.clone(), initial)?;
    let mapper = Mapper::new(cfg.mapper.clone(), cfg.loss.clone(), &field_cfg, ds.lidar.clone(), cfg.seed)?;
    let (mapper, frames) = if cfg.thread_count()? <= 1 {
        run_lockstep(tracker, mapper, scans)?
    } else {
        run_concurrent(tracker, mapper, scans)?
    };
    let odom_trajectory = odometry_trajectory(&frames);
    let est_trajectory = mapper.estimated_trajectory(&odom_trajectory);
    Ok(SlamRun {
        mapper,
        frames,
        odom_trajectory,
        est_trajectory,
        gt_trajectory,
    })
}

fn run_lockstep(mut tracker: Tracker, mut mapper: Mapper, scans: Vec<LidarScan>) -> Result<(Mapper, Vec<TrackedFrame>)> {
    let mut frames = Vec::with_capacity(scans.len());
    for scan in scans {
        let frame = tracker.process(scan);
        let update = mapper.process(&frame);
        if let Some((index, pose)) = update.poses.first() {
            tracker.apply_correction(*index, pose)?;
        }
        frames.push(frame);
    }
    Ok((mapper, frames))
}

/// Tracker and mapper on separate threads. The mapper only looks at the
/// newest frame waiting for it, and its corrections reach the tracker
/// whenever they arrive, so results depend on timing.
fn run_concurrent(mut tracker: Tracker, mut mapper: Mapper, scans: Vec<LidarScan>) -> Result<(Mapper, Vec<TrackedFrame>)> {
    let (frame_tx, frame_rx) = mpsc::channel::<TrackedFrame>();
    let (corr_tx, corr_rx) = mpsc::channel::<(usize, Pose)>();
    let map_thread = std::thread::spawn(move || {
        while let Ok(mut frame) = frame_rx.recv() {
            while let Ok(newer) = frame_rx.try_recv() {
                frame = newer;
            }
            let update = mapper.process(&frame);
            if let Some(&c) = update.poses.first() {
                // the tracker may already be done; nothing to correct then
                let _ = corr_tx.send(c);
            }
        }
        mapper
    });
    let mut frames = Vec::with_capacity(scans.len());
    let mut result = Ok(());
    for scan in scans {
        while let Ok((index, pose)) = corr_rx.try_recv() {
            if let Err(e) = tracker.apply_correction(index, &pose) {
                result = Err(e);
            }
        }
        let frame = tracker.process(scan);
        if frame_tx.send(frame.clone()).is_err() {
            break;
        }
        frames.push(frame);
    }
    drop(frame_tx);
    let mapper = map_thread
        .join()
        .map_err(|_| Error::Contract("mapping thread panicked".into()))?;
    result.map(|_| (mapper, frames))
}

/// Paths of the files a run writes.
#[derive(Clone, Debug)]
pub struct SlamOutputs {
    pub dir: PathBuf,
    pub est_traj: PathBuf,
    pub odom_traj: PathBuf,
    pub keyframes: PathBuf,
    pub checkpoint: PathBuf,
    pub kf_log: PathBuf,
    pub manifest: PathBuf,
}

impl SlamOutputs {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            est_traj: dir.join(EST_TRAJ_FILE),
            odom_traj: dir.join(ODOM_TRAJ_FILE),
            keyframes: dir.join(KEYFRAME_TRAJ_FILE),
            checkpoint: dir.join(CHECKPOINT_FILE),
            kf_log: dir.join(KF_LOG_FILE),
            manifest: dir.join(MANIFEST_FILE),
        }
    }
}

fn pose_rows(traj: &Trajectory) -> serde_json::Value {
    let rows: Vec<[f64; 8]> = traj
        .iter()
        .map(|(t, p)| {
            let q = p.quaternion();
            let x = p.translation;
            [*t, x.x, x.y, x.z, q.i, q.j, q.k, q.w]
        })
        .collect();
    json!(rows)
}

/// Metadata stored in the checkpoint: enough to mesh and render without the
/// dataset or config.
pub fn checkpoint_meta(run: &SlamRun, field_cfg: &FieldConfig, cfg: &RunConfig) -> serde_json::Value {
    json!({
        "field": field_cfg,
        "lidar": run.mapper.lidar_model(),
        "mesh": cfg.mesh,
        "depth": cfg.eval.depth,
        "keyframes": pose_rows(&run.mapper.keyframe_trajectory()),
        "trajectory": pose_rows(&run.est_trajectory),
        "seed": cfg.seed,
    })
}

/// Parses the pose rows written by [`checkpoint_meta`].
pub fn parse_pose_rows(v: &serde_json::Value) -> Result<Trajectory> {
    let rows: Vec<[f64; 8]> =
        serde_json::from_value(v.clone()).map_err(|e| Error::Parse(format!("checkpoint poses: {e}")))?;
    Ok(rows
        .into_iter()
        .map(|r| {
            let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(r[7], r[4], r[5], r[6]));
            (r[0], Pose::from_quaternion(&q, nalgebra::Vector3::new(r[1], r[2], r[3])))
        })
        .collect())
}

/// Run manifest: the config echo, seed and tool version. No clock time, so
/// reruns produce identical bytes.
pub fn manifest(cfg: &RunConfig, command: &str, files: &[&str]) -> serde_json::Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "loss_mode": cfg.loss.mode.as_str(),
        "deterministic_mode": cfg.deterministic_mode,
        "config": cfg,
        "outputs": files,
    })
}

pub fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes every run artifact into `dir`.
pub fn write_slam_outputs(run: &SlamRun, ds: &Dataset, cfg: &RunConfig, dir: &Path) -> Result<SlamOutputs> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = SlamOutputs::in_dir(dir);
    let field_cfg = field_config_for(&cfg.field, ds);
    tum::write_tum(&out.est_traj, &run.est_trajectory)?;
    tum::write_tum(&out.odom_traj, &run.odom_trajectory)?;
    tum::write_tum(&out.keyframes, &run.mapper.keyframe_trajectory())?;
    save_checkpoint(&out.checkpoint, run.mapper.store(), &checkpoint_meta(run, &field_cfg, cfg))?;
    std::fs::write(&out.kf_log, format_kf_log(run.mapper.log())).map_err(|e| Error::io(&out.kf_log, e))?;
    let files = [EST_TRAJ_FILE, ODOM_TRAJ_FILE, KEYFRAME_TRAJ_FILE, CHECKPOINT_FILE, KF_LOG_FILE];
    write_json(&out.manifest, &manifest(cfg, "slam", &files))?;
    Ok(out)
}

/// Loads the configured dataset, runs the pipeline and writes its outputs.
pub fn run_slam(cfg: &RunConfig) -> Result<(SlamRun, SlamOutputs)> {
    cfg.validate()?;
    let ds = read_dataset(cfg.dataset_dir()?)?;
    let run = run_slam_on(&ds, cfg)?;
    let out = write_slam_outputs(&run, &ds, cfg, cfg.out_dir()?)?;
    Ok((run, out))
}
