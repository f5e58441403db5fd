//! Trajectory, map and depth metrics.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use crate::diff::ParamStore;
use crate::error::{Error, Result};
use crate::field::{DepthRenderConfig, Field};
use crate::geometry::{KdIndex, Point, PointCloud, Pose, Trajectory};
use crate::simulator::{LidarModel, LidarScan};

/// Pairs `(est, gt)` of positions whose stamps are nearest neighbours
/// within `max_dt`.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Vec<(Pose, Pose)> {
    let mut out = Vec::new();
    if gt.is_empty() {
        return out;
    }
    for &(t, p) in est {
        let i = gt.partition_point(|(s, _)| *s < t);
        let best = [i.checked_sub(1), (i < gt.len()).then_some(i)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (gt[a].0 - t).abs().total_cmp(&(gt[b].0 - t).abs()));
        if let Some(j) = best {
            if (gt[j].0 - t).abs() <= max_dt {
                out.push((p, gt[j].1));
            }
        }
    }
    out
}

/// Rigid transform `x -> R x + t` minimizing `Σ |R src_i + t − dst_i|²`
/// (no scale).
pub fn umeyama(src: &[Point], dst: &[Point]) -> Pose {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    Pose::new(r, mu_d - r * mu_s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApeReport {
    pub rmse: f64,
    pub mean: f64,
    pub max: f64,
    pub pairs: usize,
}

/// Absolute pose error after rigid alignment of `est` onto `gt`.
pub fn ape_report(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<ApeReport> {
    let pairs = associate(est, gt, max_dt);
    if pairs.len() < 3 {
        return Err(Error::Evaluation(format!(
            "only {} poses associate within {max_dt} s (need 3)",
            pairs.len()
        )));
    }
    let src: Vec<Point> = pairs.iter().map(|(e, _)| e.translation).collect();
    let dst: Vec<Point> = pairs.iter().map(|(_, g)| g.translation).collect();
    let align = umeyama(&src, &dst);
    let errs: Vec<f64> = src.iter().zip(&dst).map(|(s, d)| (align.apply(s) - d).norm()).collect();
    let n = errs.len() as f64;
    Ok(ApeReport {
        rmse: (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        mean: errs.iter().sum::<f64>() / n,
        max: errs.iter().copied().fold(0.0, f64::max),
        pairs: errs.len(),
    })
}

/// Translational RMSE of [`ape_report`].
pub fn ape(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<f64> {
    ape_report(est, gt, max_dt).map(|r| r.rmse)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapMetrics {
    pub accuracy: f64,
    pub completion: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Nearest-neighbour distances from each point of `from` to `to`.
fn nn_distances(from: &[Point], to: &[Point]) -> Vec<f64> {
    let index = KdIndex::build(to);
    from.iter().map(|p| index.nearest(p).map_or(f64::INFINITY, |(_, d)| d)).collect()
}

/// Accuracy (est→gt) and completion (gt→est) mean distances and the
/// fractions within `threshold`, after voxel downsampling both clouds.
pub fn map_metrics(est: &PointCloud, gt: &PointCloud, threshold: f64, voxel: f64) -> Result<MapMetrics> {
    if est.is_empty() || gt.is_empty() {
        return Err(Error::Evaluation("map metrics need two nonempty clouds".into()));
    }
    let (e, g) = (est.voxel_downsample(voxel), gt.voxel_downsample(voxel));
    let d_eg = nn_distances(&e.points, &g.points);
    let d_ge = nn_distances(&g.points, &e.points);
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let within = |d: &[f64]| d.iter().filter(|&&x| x <= threshold).count() as f64 / d.len() as f64;
    Ok(MapMetrics {
        accuracy: mean(&d_eg),
        completion: mean(&d_ge),
        precision: within(&d_eg),
        recall: within(&d_ge),
    })
}

/// Area-weighted uniform samples on `mesh`, about one per `spacing²` of
/// surface.
pub fn sample_mesh(mesh: &Mesh, spacing: f64, seed: u64) -> PointCloud {
    let areas: Vec<f64> = mesh.triangles.iter().map(|t| mesh.triangle_area(t)).collect();
    let total: f64 = areas.iter().sum();
    let n = (total / (spacing * spacing)).round() as usize;
    if n == 0 || total <= 0.0 {
        return PointCloud::new(Vec::new());
    }
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a / total;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let i = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangles[i].map(|k| mesh.vertices[k]);
            let (mut r1, mut r2): (f64, f64) = (rng.gen(), rng.gen());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            a + (b - a) * r1 + (c - a) * r2
        })
        .collect();
    PointCloud::new(pts)
}

/// Rendered depth of every ray of `scan` seen from `pose`, with `None`
/// for rays the field leaves empty.
pub fn render_scan_depth(field: &Field, store: &ParamStore, scan: &LidarScan, pose: &Pose, t_near: f64, cfg: &DepthRenderConfig) -> Vec<Option<f64>> {
    let origins = vec![pose.translation; scan.rays.len()];
    let dirs: Vec<Point> = scan.rays.iter().map(|r| pose.rotate(&r.direction)).collect();
    field.render_depth(store, &origins, &dirs, t_near, cfg)
}

/// `|D̂ − z*|` per return of `scan`. A ray rendered empty counts with its
/// full measured range.
pub fn depth_errors(field: &Field, store: &ParamStore, scan: &LidarScan, pose: &Pose, t_near: f64, cfg: &DepthRenderConfig) -> Vec<f64> {
    let rays: Vec<_> = scan.rays.iter().filter(|r| r.range.is_some()).copied().collect();
    let sub = LidarScan { rays, stamp: scan.stamp };
    render_scan_depth(field, store, &sub, pose, t_near, cfg)
        .into_iter()
        .zip(&sub.rays)
        .map(|(d, r)| {
            let z = r.range.expect("filtered to returns");
            d.map_or(z, |d| (d - z).abs())
        })
        .collect()
}

/// Mean absolute depth error over the returns of `n_scans` scans drawn
/// (without replacement, seeded) from `frames`, each rendered at its pose.
pub fn l1_depth(
    field: &Field,
    store: &ParamStore,
    frames: &[(&LidarScan, Pose)],
    n_scans: usize,
    seed: u64,
    t_near: f64,
    cfg: &DepthRenderConfig,
) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Evaluation("no scans to evaluate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, frames.len(), n_scans.min(frames.len())).into_vec();
    chosen.sort_unstable();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in chosen {
        let (scan, pose) = frames[i];
        for e in depth_errors(field, store, scan, &pose, t_near, cfg) {
            sum += e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Evaluation("selected scans have no returns".into()));
    }
    Ok(sum / count as f64)
}

/// Range image `[row][azimuth]` with the highest beam in row 0.
pub fn depth_image(field: &Field, store: &ParamStore, pose: &Pose, model: &LidarModel, cfg: &DepthRenderConfig) -> Vec<Vec<Option<f64>>> {
    let (w, h) = (model.azimuth_count, model.elevation_count());
    let mut dirs = Vec::with_capacity(w * h);
    for row in 0..h {
        for az in 0..w {
            dirs.push(pose.rotate(&model.direction(az, h - 1 - row)));
        }
    }
    let origins = vec![pose.translation; dirs.len()];
    let d = field.render_depth(store, &origins, &dirs, model.min_range, cfg);
    d.chunks(w)
        .map(|row| row.iter().map(|v| v.filter(|&x| x <= model.max_range)).collect())
        .collect()
}

/// Binary 16-bit PGM in millimeters, 0 for missing pixels.
pub fn format_pgm16(image: &[Vec<Option<f64>>]) -> Vec<u8> {
    let h = image.len();
    let w = image.first().map_or(0, Vec::len);
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for row in image {
        for px in row {
            let mm = px.map_or(0, |d| (d * 1000.0).round().clamp(1.0, 65535.0) as u16);
            out.extend_from_slice(&mm.to_be_bytes());
        }
    }
    out
}
