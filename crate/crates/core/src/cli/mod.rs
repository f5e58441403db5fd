//! Command-line entry points. Each subcommand wraps one pipeline stage;
//! see [`Command`] for the list.

mod config;
mod fit;
mod slam;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{EvalConfig, RunConfig, THREADS_ENV};
pub use fit::{
    fit_csv_name, fit_frame, fit_scan, fit_scan_on, format_fit_csv, loss_csv_name, parse_modes, write_fit_outputs,
    FitCurve, FitPoint, ModeSpec, FIT_CSV_HEADER,
};
pub use slam::{
    checkpoint_meta, field_config_for, manifest, parse_pose_rows, run_slam, run_slam_on, write_json,
    write_slam_outputs, SlamOutputs, SlamRun, BOUNDS_PADDING, CHECKPOINT_FILE, EST_TRAJ_FILE, KEYFRAME_TRAJ_FILE,
    KF_LOG_FILE, MANIFEST_FILE, ODOM_TRAJ_FILE,
};

use crate::diff::{load_checkpoint, ParamStore};
use crate::error::{Error, Result};
use crate::field::{DepthRenderConfig, Field, FieldConfig};
use crate::geometry::{tum, PointCloud, Trajectory};
use crate::losses::LossMode;
use crate::mesh_eval::{self, MeshConfig, MAP_VOXEL};
use crate::simulator::{self, io, LidarModel, Scene, SimOptions};
use crate::ply;

#[derive(Debug, Parser)]
#[command(name = "ilslam", version, about = "LiDAR SLAM with a neural density map")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a dataset from a bundled scene along a TUM waypoint trajectory.
    Simulate {
        #[arg(long)]
        scene: String,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// LiDAR model as JSON; the built-in 32-beam model otherwise.
        #[arg(long)]
        lidar: Option<PathBuf>,
        /// Range noise standard deviation in meters.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Track and map a dataset.
    Slam {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        loss_mode: Option<LossMode>,
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Train fresh fields on one scan with several losses and log depth error.
    FitScan {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scan: usize,
        /// Comma-separated, e.g. `JS_DYNAMIC,LOS_L1:medium,DEPTH_ONLY`.
        #[arg(long)]
        modes: String,
        #[arg(long)]
        iters: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract a mesh from a checkpoint.
    Mesh {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        voxel: Option<f64>,
        #[arg(long)]
        iso: Option<f64>,
    },
    /// Absolute pose error of a TUM trajectory against groundtruth.
    EvalTraj {
        est: PathBuf,
        gt: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        max_dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy, completion, precision and recall of a map against groundtruth.
    EvalMap {
        est: PathBuf,
        gt: PathBuf,
        #[arg(long, default_value_t = mesh_eval::MAP_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = MAP_VOXEL)]
        voxel: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a 16-bit range image (millimeters) from a trajectory pose.
    RenderDepth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pose_index: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn print_metrics(metrics: &BTreeMap<String, f64>, out: Option<&Path>) -> Result<()> {
    for (k, v) in metrics {
        println!("{k} {v}");
    }
    match out {
        Some(p) => mesh_eval::write_metrics(p, metrics),
        None => Ok(()),
    }
}

/// Store, field and checkpoint metadata of a finished run.
pub struct LoadedMap {
    pub store: ParamStore,
    pub field: Field,
    pub lidar: LidarModel,
    pub mesh: MeshConfig,
    pub depth: DepthRenderConfig,
    pub keyframes: Trajectory,
    pub trajectory: Trajectory,
}

pub fn load_map(path: &Path) -> Result<LoadedMap> {
    let (store, meta) = load_checkpoint(path)?;
    let get = |k: &str| {
        meta.get(k)
            .cloned()
            .ok_or_else(|| Error::Parse(format!("{}: checkpoint metadata lacks `{k}`", path.display())))
    };
    let parse = |e: serde_json::Error| Error::Parse(format!("{}: {e}", path.display()));
    let field_cfg: FieldConfig = serde_json::from_value(get("field")?).map_err(parse)?;
    let lidar: LidarModel = serde_json::from_value(get("lidar")?).map_err(parse)?;
    let mesh: MeshConfig = serde_json::from_value(get("mesh")?).map_err(parse)?;
    let depth: DepthRenderConfig = serde_json::from_value(get("depth")?).map_err(parse)?;
    let field = Field::bind(&field_cfg, &store)?;
    Ok(LoadedMap {
        keyframes: parse_pose_rows(&get("keyframes")?)?,
        trajectory: parse_pose_rows(&get("trajectory")?)?,
        store,
        field,
        lidar,
        mesh,
        depth,
    })
}

/// Point cloud of a PLY file; meshes are sampled on their surface.
pub fn read_map_cloud(path: &Path, spacing: f64) -> Result<PointCloud> {
    let (vertices, faces) = ply::read_ply(path)?;
    if faces.is_empty() {
        return Ok(PointCloud::new(vertices));
    }
    let mesh = mesh_eval::Mesh {
        vertices,
        triangles: faces,
    };
    mesh.validate()?;
    Ok(mesh_eval::sample_mesh(&mesh, spacing, 0))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            scene,
            traj,
            out,
            lidar,
            noise,
            dropout,
            seed,
        } => {
            let scene = Scene::builtin(&scene)?;
            let waypoints = tum::read_tum(&traj)?;
            let model = match lidar {
                None => LidarModel::default(),
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
            };
            if !(noise >= 0.0) || !(0.0..=1.0).contains(&dropout) {
                return Err(Error::Config("need noise >= 0 and dropout in [0, 1]".into()));
            }
            let options = SimOptions {
                range_noise_std: noise,
                dropout,
                seed,
            };
            let ds = simulator::generate_sequence(&scene, &waypoints, &model, &options)?;
            io::write_dataset(&out, &ds)?;
            println!("wrote {} scans to {}", ds.scans.len(), out.display());
            Ok(())
        }
        Command::Slam {
            config,
            out,
            dataset,
            seed,
            loss_mode,
            deterministic,
            threads,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if out.is_some() {
                cfg.out = out;
            }
            if dataset.is_some() {
                cfg.dataset = dataset;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = loss_mode {
                cfg.loss.mode = m;
            }
            if deterministic {
                cfg.deterministic_mode = true;
            }
            if threads.is_some() {
                cfg.threads = threads;
            }
            let (run, outputs) = run_slam(&cfg)?;
            let mut metrics = BTreeMap::new();
            metrics.insert("keyframes".to_string(), run.mapper.keyframes().len() as f64);
            if let Ok(a) = mesh_eval::ape(&run.est_trajectory, &run.gt_trajectory, cfg.eval.max_dt) {
                metrics.insert("ape_est".to_string(), a);
            }
            if let Ok(a) = mesh_eval::ape(&run.odom_trajectory, &run.gt_trajectory, cfg.eval.max_dt) {
                metrics.insert("ape_odom".to_string(), a);
            }
            print_metrics(&metrics, None)?;
            println!("outputs in {}", outputs.dir.display());
            Ok(())
        }
        Command::FitScan {
            config,
            scan,
            modes,
            iters,
            out,
            dataset,
            seed,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if out.is_some() {
                cfg.out = out;
            }
            if dataset.is_some() {
                cfg.dataset = dataset;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let specs = parse_modes(&modes)?;
            for c in fit_scan(&cfg, scan, &specs, iters)? {
                println!("{} final_depth_mse {}", c.spec, c.final_mse());
            }
            Ok(())
        }
        Command::Mesh {
            checkpoint,
            out,
            voxel,
            iso,
        } => {
            let map = load_map(&checkpoint)?;
            let mut cfg = map.mesh;
            if let Some(v) = voxel {
                cfg.voxel_size = v;
            }
            if let Some(i) = iso {
                cfg.iso = i;
            }
            cfg.validate()?;
            let poses: Vec<_> = map.keyframes.iter().map(|(_, p)| *p).collect();
            let mesh = mesh_eval::extract_mesh(&map.field, &map.store, &poses, &map.lidar, &cfg)?;
            ply::write_ply(&out, &mesh.vertices, &mesh.triangles)?;
            println!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
            Ok(())
        }
        Command::EvalTraj { est, gt, max_dt, out } => {
            let r = mesh_eval::ape_report(&tum::read_tum(&est)?, &tum::read_tum(&gt)?, max_dt)?;
            let metrics = BTreeMap::from([
                ("ape_rmse".to_string(), r.rmse),
                ("ape_mean".to_string(), r.mean),
                ("ape_max".to_string(), r.max),
                ("pairs".to_string(), r.pairs as f64),
            ]);
            print_metrics(&metrics, out.as_deref())
        }
        Command::EvalMap {
            est,
            gt,
            threshold,
            voxel,
            out,
        } => {
            if !(threshold > 0.0 && voxel > 0.0) {
                return Err(Error::Config("threshold and voxel must be positive".into()));
            }
            let est = read_map_cloud(&est, voxel / 2.0)?;
            let gt = read_map_cloud(&gt, voxel / 2.0)?;
            let m = mesh_eval::map_metrics(&est, &gt, threshold, voxel)?;
            let metrics = BTreeMap::from([
                ("accuracy".to_string(), m.accuracy),
                ("completion".to_string(), m.completion),
                ("precision".to_string(), m.precision),
                ("recall".to_string(), m.recall),
            ]);
            print_metrics(&metrics, out.as_deref())
        }
        Command::RenderDepth {
            checkpoint,
            pose_index,
            out,
        } => {
            let map = load_map(&checkpoint)?;
            let (_, pose) = *map.trajectory.get(pose_index).ok_or_else(|| {
                Error::Config(format!(
                    "pose index {pose_index} out of range ({} poses)",
                    map.trajectory.len()
                ))
            })?;
            let image = mesh_eval::depth_image(&map.field, &map.store, &pose, &map.lidar, &map.depth);
            std::fs::write(&out, mesh_eval::format_pgm16(&image)).map_err(|e| Error::io(&out, e))?;
            println!("{}x{} range image", image.first().map_or(0, Vec::len), image.len());
            Ok(())
        }
    }
}
