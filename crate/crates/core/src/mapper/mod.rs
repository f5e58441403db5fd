//! Keyframe management and windowed joint optimization of the field and
//! keyframe poses.

mod keyframe;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use keyframe::{decide, window_indices, KeyframeDecision, KeyframePolicy, MotionThresholds, WindowStrategy};

use crate::diff::{adam_step, AdamConfig, CustomOp, ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::field::{render_sigma, sample_ray, Field, FieldConfig, RigidTransform, SampleStrategy, TABLE_NAME};
use crate::geometry::{se3_exp, se3_log, Pose, Trajectory, Twist};
use crate::losses::{batch_loss, LossConfig, LossInputs, LossMode, LossSummary, RayKind};
use crate::simulator::LidarModel;
use crate::tracker::TrackedFrame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapperConfig {
    /// Seconds between keyframes.
    pub t_kf: f64,
    /// Keyframes per optimization window.
    pub n_window: usize,
    /// Rays sampled per keyframe per iteration.
    pub n_rays: usize,
    /// Samples per ray.
    pub n_samples: usize,
    pub iters_per_kf: usize,
    pub kf_policy: KeyframePolicy,
    pub motion_trans_thresh: f64,
    /// Degrees.
    pub motion_rot_thresh: f64,
    pub window_strategy: WindowStrategy,
    pub optimize_poses: bool,
    pub sample_strategy: SampleStrategy,
    pub lr_grid: f64,
    pub lr_mlp: f64,
    pub lr_pose: f64,
    pub adam: AdamConfig,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            t_kf: 3.0,
            n_window: 8,
            n_rays: 512,
            n_samples: 512,
            iters_per_kf: 50,
            kf_policy: KeyframePolicy::Temporal,
            motion_trans_thresh: 0.5,
            motion_rot_thresh: 22.5,
            window_strategy: WindowStrategy::Random,
            optimize_poses: true,
            sample_strategy: SampleStrategy::DepthGuided,
            lr_grid: 0.01,
            lr_mlp: 0.005,
            lr_pose: 1e-3,
            adam: AdamConfig::default(),
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mapper: {m}")));
        if !(self.t_kf >= 0.0) {
            return bad("t_kf must be nonnegative");
        }
        if self.n_window == 0 || self.iters_per_kf == 0 {
            return bad("n_window and iters_per_kf must be at least 1");
        }
        if self.n_rays == 0 || self.n_samples < 2 {
            return bad("need n_rays >= 1 and n_samples >= 2");
        }
        if !(self.motion_trans_thresh >= 0.0 && self.motion_rot_thresh >= 0.0) {
            return bad("motion thresholds must be nonnegative");
        }
        if [self.lr_grid, self.lr_mlp, self.lr_pose].iter().any(|&l| !(l >= 0.0)) {
            return bad("learning rates must be nonnegative");
        }
        Ok(())
    }

    pub fn motion(&self) -> MotionThresholds {
        MotionThresholds {
            translation: self.motion_trans_thresh,
            rotation_deg: self.motion_rot_thresh,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KeyFrame {
    pub id: usize,
    pub frame: TrackedFrame,
    /// World pose as a twist tensor in the mapper's store.
    pub twist: ParamId,
    pub creation_time: f64,
    /// Optimization windows this keyframe has taken part in.
    pub update_count: u32,
    /// Last dynamic margin seen per ray, used to place its samples.
    pub eps_cache: Vec<f64>,
    /// Rays usable for training: returns and sky.
    pub eligible: Vec<usize>,
}

impl KeyFrame {
    pub fn pose(&self, store: &ParamStore) -> Pose {
        se3_exp(&Twist::from_slice(&store.value(self.twist).data))
    }
}

pub fn twist_name(id: usize) -> String {
    format!("kf.{id}.twist")
}

/// One training iteration as logged per keyframe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterLog {
    pub kf_id: usize,
    pub iter: usize,
    pub total_loss: f64,
    pub mean_eps_dyn: f64,
    pub pose_update_norm: f64,
}

pub const KF_LOG_HEADER: &str = "kf_id,iter,total_loss,mean_eps_dyn,pose_update_norm";

pub fn format_kf_log(rows: &[IterLog]) -> String {
    let mut out = String::from(KF_LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.kf_id, r.iter, r.total_loss, r.mean_eps_dyn, r.pose_update_norm
        ));
    }
    out
}

/// Result of one training iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub summary: LossSummary,
    /// L2 norm of the change of all window twists.
    pub pose_update_norm: f64,
}

/// What the mapper did with an offered frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MapUpdate {
    pub decision: KeyframeDecision,
    /// Optimized `(frame index, pose)` of the window keyframes, newest first.
    /// Empty when the frame was skipped.
    pub poses: Vec<(usize, Pose)>,
}

pub struct Mapper {
    cfg: MapperConfig,
    loss: LossConfig,
    model: LidarModel,
    field: Field,
    store: ParamStore,
    keyframes: Vec<KeyFrame>,
    clock: f64,
    rng: ChaCha8Rng,
    rigid: Arc<dyn CustomOp>,
    log: Vec<IterLog>,
}

impl Mapper {
    /// Fresh field parameters from `seed`; `field_cfg` must carry bounds.
    pub fn new(cfg: MapperConfig, loss: LossConfig, field_cfg: &FieldConfig, model: LidarModel, seed: u64) -> Result<Self> {
        cfg.validate()?;
        loss.validate()?;
        let mut store = ParamStore::new();
        let field = Field::init(field_cfg, &mut store, seed)?;
        Ok(Self {
            cfg,
            loss,
            model,
            field,
            store,
            keyframes: Vec::new(),
            clock: f64::NEG_INFINITY,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_7070_6572),
            rigid: Arc::new(RigidTransform),
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &MapperConfig {
        &self.cfg
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    pub fn lidar_model(&self) -> &LidarModel {
        &self.model
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn keyframes(&self) -> &[KeyFrame] {
        &self.keyframes
    }

    pub fn keyframe_mut(&mut self, i: usize) -> &mut KeyFrame {
        &mut self.keyframes[i]
    }

    pub fn log(&self) -> &[IterLog] {
        &self.log
    }

    /// Current pose of every keyframe.
    pub fn keyframe_poses(&self) -> Vec<Pose> {
        self.keyframes.iter().map(|k| k.pose(&self.store)).collect()
    }

    pub fn keyframe_trajectory(&self) -> Trajectory {
        self.keyframes.iter().map(|k| (k.frame.stamp, k.pose(&self.store))).collect()
    }

    /// What `frame` would trigger. The first frame is always a keyframe.
    pub fn select_keyframe(&self, frame: &TrackedFrame) -> KeyframeDecision {
        match self.keyframes.last() {
            None => KeyframeDecision::Add,
            Some(last) => decide(
                self.cfg.kf_policy,
                self.cfg.t_kf,
                self.cfg.motion(),
                frame.stamp,
                &frame.pose,
                &last.pose(&self.store),
                self.clock,
            ),
        }
    }

    /// Decides on `frame` and runs the resulting optimization.
    pub fn process(&mut self, frame: &TrackedFrame) -> MapUpdate {
        let decision = self.select_keyframe(frame);
        let poses = match decision {
            KeyframeDecision::Skip => Vec::new(),
            KeyframeDecision::Add => {
                self.add_keyframe(frame.clone());
                self.optimize_window()
            }
            KeyframeDecision::Reoptimize => {
                self.clock = frame.stamp;
                self.optimize_window()
            }
        };
        MapUpdate { decision, poses }
    }

    /// Registers `frame` as a keyframe at its tracked pose and returns its
    /// position in [`Mapper::keyframes`].
    pub fn add_keyframe(&mut self, frame: TrackedFrame) -> usize {
        let id = self.keyframes.len();
        let twist = self
            .store
            .insert(twist_name(id), Tensor::row(se3_log(&frame.pose).to_array().to_vec()));
        let eligible = frame
            .scan
            .rays
            .iter()
            .zip(&frame.sky_mask)
            .enumerate()
            .filter(|(_, (r, &s))| r.range.is_some() || s)
            .map(|(i, _)| i)
            .collect();
        self.clock = frame.stamp;
        self.keyframes.push(KeyFrame {
            id,
            creation_time: frame.stamp,
            eps_cache: vec![self.loss.eps_dyn_max(); frame.scan.rays.len()],
            frame,
            twist,
            update_count: 0,
            eligible,
        });
        id
    }

    /// Runs `iters_per_kf` iterations on a window around the newest
    /// keyframe and returns the optimized window poses.
    pub fn optimize_window(&mut self) -> Vec<(usize, Pose)> {
        if self.keyframes.is_empty() {
            return Vec::new();
        }
        let seed = self.rng.gen();
        let window = window_indices(self.keyframes.len(), self.cfg.n_window, self.cfg.window_strategy, seed);
        let kf_id = *window.first().expect("window holds the current keyframe");
        for iter in 0..self.cfg.iters_per_kf {
            let stats = self.step(&window);
            self.log.push(IterLog {
                kf_id,
                iter,
                total_loss: stats.summary.total,
                mean_eps_dyn: stats.summary.mean_eps_dyn,
                pose_update_norm: stats.pose_update_norm,
            });
        }
        for &i in &window {
            self.keyframes[i].update_count += 1;
        }
        window
            .iter()
            .map(|&i| (self.keyframes[i].frame.index, self.keyframes[i].pose(&self.store)))
            .collect()
    }

    /// Turns keyframe pose optimization on or off for later iterations.
    pub fn set_optimize_poses(&mut self, on: bool) {
        self.cfg.optimize_poses = on;
    }

    /// Whether keyframe `i` has a trainable pose.
    fn pose_trainable(&self, i: usize) -> bool {
        self.cfg.optimize_poses && i != 0
    }

    /// One optimization iteration over the keyframes at `window`.
    pub fn step(&mut self, window: &[usize]) -> StepStats {
        let n_s = self.cfg.n_samples;
        let t_near = self.model.min_range;
        let t_far = self.field.t_far();
        let strategy = self.cfg.sample_strategy;

        // sample rays and their distances
        struct Picked {
            kf: usize,
            ray: usize,
        }
        let mut picked = Vec::new();
        let mut depth = Vec::new();
        let mut sky = Vec::new();
        let mut ages = Vec::new();
        let mut t_rows: Vec<f64> = Vec::new();
        let mut d_rows: Vec<f64> = Vec::new();
        let mut locals: Vec<Tensor> = Vec::new();
        for &k in window {
            let kf = &self.keyframes[k];
            let count = self.cfg.n_rays.min(kf.eligible.len());
            let chosen = sample(&mut self.rng, kf.eligible.len(), count).into_vec();
            let mut local = Tensor::zeros(count * n_s, 3);
            for (c, &e) in chosen.iter().enumerate() {
                let ray_index = kf.eligible[e];
                let ray = &kf.frame.scan.rays[ray_index];
                let eps = match self.loss.mode {
                    LossMode::JsDynamic => kf.eps_cache[ray_index],
                    _ => self.loss.static_eps(kf.update_count),
                };
                let s = sample_ray(t_near, t_far, ray.range, strategy, n_s, eps, Some(&mut self.rng));
                for (j, &t) in s.t.iter().enumerate() {
                    let p = ray.direction * t;
                    local.row_slice_mut(c * n_s + j).copy_from_slice(p.as_slice());
                }
                t_rows.extend_from_slice(&s.t);
                d_rows.extend_from_slice(&s.delta);
                depth.push(ray.range);
                sky.push(ray.range.is_none() && kf.frame.sky_mask[ray_index]);
                ages.push(kf.update_count);
                picked.push(Picked { kf: k, ray: ray_index });
            }
            locals.push(local);
        }
        let rays = picked.len();
        if rays == 0 {
            return StepStats {
                summary: LossSummary::default(),
                pose_update_norm: 0.0,
            };
        }
        let t = Tensor::from_vec(rays, n_s, t_rows);
        let delta = Tensor::from_vec(rays, n_s, d_rows);

        let (grads, terms, summary) = {
            let mut tape = Tape::new(&self.store);
            let mut parts = Vec::with_capacity(window.len());
            for (&k, local) in window.iter().zip(locals) {
                if local.rows == 0 {
                    continue;
                }
                let id = self.keyframes[k].twist;
                let tw = if self.pose_trainable(k) { tape.param(id) } else { tape.param_frozen(id) };
                let lv = tape.constant(local);
                parts.push(tape.custom(self.rigid.clone(), &[tw, lv]));
            }
            let pts = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts) };
            let sigma = self.field.density(&mut tape, pts, true);
            let render = render_sigma(&mut tape, sigma, &t, &delta, self.field.cfg.weight_formula);
            let inputs = LossInputs {
                t: &t,
                delta: &delta,
                depth: &depth,
                sky: &sky,
                kf_age: &ages,
            };
            let loss = batch_loss(&mut tape, &render, &inputs, &self.loss);
            let grads = tape.backward(loss.total).expect("loss is a scalar on the tape");
            (grads, loss.terms, loss.summary)
        };

        for (p, term) in picked.iter().zip(&terms) {
            if let (RayKind::Valid, Some(js)) = (term.kind, term.js) {
                self.keyframes[p.kf].eps_cache[p.ray] = js.eps_dyn;
            }
        }

        let trainable: BTreeSet<String> = window
            .iter()
            .filter(|&&k| self.pose_trainable(k))
            .map(|&k| twist_name(self.keyframes[k].id))
            .collect();
        let before: Vec<Vec<f64>> = window
            .iter()
            .map(|&k| self.store.value(self.keyframes[k].twist).data.clone())
            .collect();
        self.store.zero_grad();
        self.store.accumulate(&grads);
        let (lr_grid, lr_mlp, lr_pose) = (self.cfg.lr_grid, self.cfg.lr_mlp, self.cfg.lr_pose);
        adam_step(&mut self.store, &self.cfg.adam, |name| {
            if name == TABLE_NAME {
                Some(lr_grid)
            } else if name.starts_with("mlp.") {
                Some(lr_mlp)
            } else if trainable.contains(name) {
                Some(lr_pose)
            } else {
                None
            }
        });
        let pose_update_norm = window
            .iter()
            .zip(&before)
            .flat_map(|(&k, b)| {
                let now = &self.store.value(self.keyframes[k].twist).data;
                now.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect::<Vec<_>>()
            })
            .sum::<f64>()
            .sqrt();
        StepStats {
            summary,
            pose_update_norm,
        }
    }

    /// Overwrites the pose of keyframe `i`, keeping its optimizer moments.
    pub fn set_keyframe_pose(&mut self, i: usize, pose: &Pose) {
        let id = self.keyframes[i].twist;
        self.store.get_mut(id).value = Tensor::row(se3_log(pose).to_array().to_vec());
    }

    /// Per-frame trajectory from the keyframe poses: frame `i` is placed at
    /// `x*_k · odom_k⁻¹ · odom_i` for the latest keyframe `k ≤ i`. `odom` is
    /// indexed by frame index. Frames before the first keyframe keep their
    /// odometry pose.
    pub fn estimated_trajectory(&self, odom: &Trajectory) -> Trajectory {
        let mut out = Vec::with_capacity(odom.len());
        let mut kf = 0usize;
        let mut active: Option<Pose> = None;
        for (i, &(stamp, o)) in odom.iter().enumerate() {
            while kf < self.keyframes.len() && self.keyframes[kf].frame.index <= i {
                let k = &self.keyframes[kf];
                active = Some(k.pose(&self.store).compose(&k.frame.odom_pose.inverse()));
                kf += 1;
            }
            let pose = match active {
                Some(c) => c.compose(&o).renormalized(),
                None => o,
            };
            out.push((stamp, pose));
        }
        out
    }
}

#[cfg(test)]
mod tests;
