//! Single-scan training runs comparing loss modes on one fixed scan.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::slam::{field_config_for, manifest, write_json};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::losses::{format_loss_csv, LossMode, LossRecord, DECAY_FAST, DECAY_MEDIUM, DECAY_SLOW};
use crate::mapper::{Mapper, MapperConfig};
use crate::simulator::io::read_dataset;
use crate::simulator::Dataset;
use crate::tracker::{segment_sky, TrackedFrame};

/// A loss mode with an optional margin decay rate for the line-of-sight
/// modes, written `MODE` or `MODE:slow|medium|fast|<rate>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeSpec {
    pub mode: LossMode,
    pub decay: Option<f64>,
}

fn decay_name(rate: f64) -> Option<&'static str> {
    [(DECAY_SLOW, "slow"), (DECAY_MEDIUM, "medium"), (DECAY_FAST, "fast")]
        .into_iter()
        .find(|(r, _)| *r == rate)
        .map(|(_, n)| n)
}

impl ModeSpec {
    pub fn new(mode: LossMode) -> Self {
        Self { mode, decay: None }
    }

    pub fn with_decay(mode: LossMode, decay: f64) -> Self {
        Self {
            mode,
            decay: Some(decay),
        }
    }

    /// File-name friendly label such as `LOS_L1_medium`.
    pub fn label(&self) -> String {
        match self.decay {
            None => self.mode.as_str().to_string(),
            Some(r) => match decay_name(r) {
                Some(n) => format!("{}_{n}", self.mode),
                None => format!("{}_{r}", self.mode),
            },
        }
    }
}

impl fmt::Display for ModeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.decay {
            None => write!(f, "{}", self.mode),
            Some(r) => match decay_name(r) {
                Some(n) => write!(f, "{}:{n}", self.mode),
                None => write!(f, "{}:{r}", self.mode),
            },
        }
    }
}

impl FromStr for ModeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mode, decay) = match s.split_once(':') {
            None => (s, None),
            Some((m, d)) => (m, Some(d)),
        };
        let mode: LossMode = mode.trim().parse()?;
        let decay = match decay.map(str::trim) {
            None => None,
            Some("slow") => Some(DECAY_SLOW),
            Some("medium") => Some(DECAY_MEDIUM),
            Some("fast") => Some(DECAY_FAST),
            Some(d) => Some(
                d.parse::<f64>()
                    .ok()
                    .filter(|r| *r > 0.0 && *r <= 1.0)
                    .ok_or_else(|| Error::Config(format!("bad decay rate {d:?} in {s:?}")))?,
            ),
        };
        if decay.is_some() && !matches!(mode, LossMode::LosL1 | LossMode::LosL2) {
            return Err(Error::Config(format!("{mode} takes no decay rate")));
        }
        Ok(Self { mode, decay })
    }
}

/// Comma-separated list of [`ModeSpec`]s.
pub fn parse_modes(list: &str) -> Result<Vec<ModeSpec>> {
    let specs = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<ModeSpec>>>()?;
    if specs.is_empty() {
        return Err(Error::Config("no loss modes given".into()));
    }
    Ok(specs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitPoint {
    pub iter: usize,
    pub depth_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitCurve {
    pub spec: ModeSpec,
    /// Depth error every `fit_eval_every` iterations, plus the final one.
    pub points: Vec<FitPoint>,
    pub losses: Vec<LossRecord>,
}

impl FitCurve {
    pub fn final_mse(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.depth_mse)
    }

    /// First logged iteration whose error is at most `target`.
    pub fn first_reaching(&self, target: f64) -> Option<usize> {
        self.points.iter().find(|p| p.depth_mse <= target).map(|p| p.iter)
    }
}

pub const FIT_CSV_HEADER: &str = "iter,mode,depth_mse";

pub fn format_fit_csv(curve: &FitCurve) -> String {
    let mut s = String::from(FIT_CSV_HEADER);
    s.push('\n');
    let label = curve.spec.to_string();
    for p in &curve.points {
        writeln!(s, "{},{label},{}", p.iter, p.depth_mse).unwrap();
    }
    s
}

/// Ray directions and measured ranges the depth error is computed on.
struct EvalSet {
    dirs: Vec<crate::geometry::Point>,
    ranges: Vec<f64>,
}

fn eval_set(frame: &TrackedFrame, n: usize, seed: u64) -> Result<EvalSet> {
    let returns: Vec<usize> = (0..frame.scan.rays.len())
        .filter(|&i| frame.scan.rays[i].range.is_some())
        .collect();
    if returns.is_empty() {
        return Err(Error::Validation("scan has no returns to compare against".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6576_616c);
    let mut pick = sample(&mut rng, returns.len(), n.min(returns.len())).into_vec();
    pick.sort_unstable();
    let rays = pick.iter().map(|&k| &frame.scan.rays[returns[k]]);
    let (dirs, ranges) = rays
        .map(|r| (frame.pose.rotate(&r.direction), r.range.expect("returns only")))
        .unzip();
    Ok(EvalSet { dirs, ranges })
}

fn depth_mse(mapper: &Mapper, pose: &Pose, set: &EvalSet, cfg: &RunConfig) -> f64 {
    let origins = vec![pose.translation; set.dirs.len()];
    let t_near = mapper.lidar_model().min_range;
    let depths = mapper.field().render_depth(mapper.store(), &origins, &set.dirs, t_near, &cfg.eval.depth);
    let sum: f64 = depths
        .iter()
        .zip(&set.ranges)
        .map(|(d, z)| d.map_or(*z, |d| d - z).powi(2))
        .sum();
    sum / set.ranges.len() as f64
}

/// The scan at `scan_index` placed at its groundtruth pose, with the sweep
/// treated as instantaneous.
pub fn fit_frame(ds: &Dataset, scan_index: usize) -> Result<TrackedFrame> {
    let scan = ds.scans.get(scan_index).cloned().ok_or_else(|| {
        Error::Config(format!("scan {scan_index} out of range ({} scans)", ds.scans.len()))
    })?;
    let pose = ds.gt_trajectory[scan_index].1;
    let sky_mask = segment_sky(&scan, &pose, &ds.lidar);
    Ok(TrackedFrame {
        index: 0,
        stamp: scan.stamp,
        scan,
        pose,
        odometry: Pose::identity(),
        odom_pose: pose,
        sky_mask,
        icp_converged: true,
    })
}

/// Trains one fresh field per mode on the scan, all from `cfg.seed`. Poses
/// stay fixed; the line-of-sight margin ages once per `iters_per_kf`
/// iterations as it would under repeated mapping updates.
pub fn fit_scan_on(ds: &Dataset, cfg: &RunConfig, scan_index: usize, modes: &[ModeSpec], iters: usize) -> Result<Vec<FitCurve>> {
    cfg.validate()?;
    let frame = fit_frame(ds, scan_index)?;
    let field_cfg = field_config_for(&cfg.field, ds);
    let set = eval_set(&frame, cfg.eval.fit_eval_rays, cfg.seed)?;
    let mapper_cfg = MapperConfig {
        optimize_poses: false,
        ..cfg.mapper.clone()
    };
    let every = cfg.eval.fit_eval_every;
    let mut curves = Vec::with_capacity(modes.len());
    for spec in modes {
        let mut loss = cfg.loss.clone();
        loss.mode = spec.mode;
        if let Some(r) = spec.decay {
            loss.los_decay_rate = r;
        }
        let mut mapper = Mapper::new(mapper_cfg.clone(), loss, &field_cfg, ds.lidar.clone(), cfg.seed)?;
        mapper.add_keyframe(frame.clone());
        let mut points = Vec::new();
        let mut losses = Vec::with_capacity(iters);
        for it in 0..iters {
            if it % every == 0 {
                points.push(FitPoint {
                    iter: it,
                    depth_mse: depth_mse(&mapper, &frame.pose, &set, cfg),
                });
            }
            mapper.keyframe_mut(0).update_count = (it / mapper_cfg.iters_per_kf) as u32;
            let stats = mapper.step(&[0]);
            losses.push(LossRecord {
                step: it as u64,
                mode: spec.mode,
                summary: stats.summary,
            });
        }
        points.push(FitPoint {
            iter: iters,
            depth_mse: depth_mse(&mapper, &frame.pose, &set, cfg),
        });
        if iters == 0 {
            points.truncate(1);
        }
        curves.push(FitCurve {
            spec: *spec,
            points,
            losses,
        });
    }
    Ok(curves)
}

pub fn fit_csv_name(spec: &ModeSpec) -> String {
    format!("fit_{}.csv", spec.label())
}

pub fn loss_csv_name(spec: &ModeSpec) -> String {
    format!("loss_{}.csv", spec.label())
}

/// Writes the error curve and loss log of every mode plus a manifest.
pub fn write_fit_outputs(curves: &[FitCurve], cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for c in curves {
        let fit = fit_csv_name(&c.spec);
        let p = dir.join(&fit);
        std::fs::write(&p, format_fit_csv(c)).map_err(|e| Error::io(&p, e))?;
        let loss = loss_csv_name(&c.spec);
        let p = dir.join(&loss);
        std::fs::write(&p, format_loss_csv(&c.losses)).map_err(|e| Error::io(&p, e))?;
        names.push(fit);
        names.push(loss);
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    write_json(&dir.join(super::slam::MANIFEST_FILE), &manifest(cfg, "fit-scan", &refs))?;
    Ok(names.iter().map(|n| dir.join(n)).collect())
}

pub fn fit_scan(cfg: &RunConfig, scan_index: usize, modes: &[ModeSpec], iters: usize) -> Result<Vec<FitCurve>> {
    let ds = read_dataset(cfg.dataset_dir()?)?;
    let curves = fit_scan_on(&ds, cfg, scan_index, modes, iters)?;
    write_fit_outputs(&curves, cfg, cfg.out_dir()?)?;
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_specs_parse_and_label() {
        let s: ModeSpec = "LOS_L1:medium".parse().unwrap();
        assert_eq!(s, ModeSpec::with_decay(LossMode::LosL1, 0.95));
        assert_eq!(s.label(), "LOS_L1_medium");
        assert_eq!(s.to_string(), "LOS_L1:medium");
        let s: ModeSpec = "LOS_L2:0.9".parse().unwrap();
        assert_eq!(s.label(), "LOS_L2_0.9");
        assert_eq!("js_dynamic".parse::<ModeSpec>().unwrap(), ModeSpec::new(LossMode::JsDynamic));
        assert!("KL:fast".parse::<ModeSpec>().is_err());
        assert!("LOS_L1:1.5".parse::<ModeSpec>().is_err());
        assert!("NOPE".parse::<ModeSpec>().is_err());
    }

    #[test]
    fn mode_list() {
        let v = parse_modes("JS_DYNAMIC, LOS_L1:fast,LOS_L1:slow").unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[1].decay, Some(DECAY_FAST));
        assert!(parse_modes(" , ").is_err());
    }

    #[test]
    fn decays_get_distinct_file_names() {
        let names: Vec<String> = ["LOS_L1:fast", "LOS_L1:medium", "LOS_L1:slow"]
            .iter()
            .map(|s| fit_csv_name(&s.parse().unwrap()))
            .collect();
        assert_eq!(names, ["fit_LOS_L1_fast.csv", "fit_LOS_L1_medium.csv", "fit_LOS_L1_slow.csv"]);
    }

    #[test]
    fn csv_layout_and_reaching() {
        let c = FitCurve {
            spec: ModeSpec::new(LossMode::DepthOnly),
            points: vec![FitPoint { iter: 0, depth_mse: 4.0 }, FitPoint { iter: 10, depth_mse: 0.5 }],
            losses: Vec::new(),
        };
        assert_eq!(format_fit_csv(&c), "iter,mode,depth_mse\n0,DEPTH_ONLY,4\n10,DEPTH_ONLY,0.5\n");
        assert_eq!(c.first_reaching(1.0), Some(10));
        assert_eq!(c.first_reaching(0.1), None);
        assert_eq!(c.final_mse(), 0.5);
    }
}
