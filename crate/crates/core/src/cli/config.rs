//! Run configuration: one TOML document with a section per stage.
//!
//! Precedence, lowest first: built-in defaults, the config file, command-line
//! flags. Unknown keys anywhere in the file are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DepthRenderConfig, FieldConfig};
use crate::losses::LossConfig;
use crate::mapper::MapperConfig;
use crate::mesh_eval::MeshConfig;
use crate::tracker::TrackerConfig;

/// Environment variable giving the default pipeline thread count.
pub const THREADS_ENV: &str = "ILSLAM_THREADS";

/// Settings of the offline evaluations run after mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub depth: DepthRenderConfig,
    /// Scans drawn for the L1 depth error.
    pub l1_scans: usize,
    /// Largest stamp gap when pairing trajectories.
    pub max_dt: f64,
    /// Rays per scan used for the depth error curves of `fit-scan`.
    pub fit_eval_rays: usize,
    /// Iterations between two depth error evaluations of `fit-scan`.
    pub fit_eval_every: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            depth: DepthRenderConfig::default(),
            l1_scans: 10,
            max_dt: 1e-3,
            fit_eval_rays: 512,
            fit_eval_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Run tracking and mapping in lockstep on one thread.
    pub deterministic_mode: bool,
    /// Pipeline threads; two or more run tracking and mapping concurrently.
    /// Unset, the value comes from `ILSLAM_THREADS`, else 2.
    pub threads: Option<usize>,
    pub tracker: TrackerConfig,
    pub mapper: MapperConfig,
    pub field: FieldConfig,
    pub loss: LossConfig,
    pub mesh: MeshConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: None,
            out: None,
            deterministic_mode: false,
            threads: None,
            tracker: TrackerConfig::default(),
            mapper: MapperConfig::default(),
            field: FieldConfig::default(),
            loss: LossConfig::default(),
            mesh: MeshConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        self.mapper.validate()?;
        self.field.validate()?;
        self.loss.validate()?;
        self.mesh.validate()?;
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.eval.fit_eval_every == 0 || self.eval.fit_eval_rays == 0 {
            return Err(Error::Config("eval: fit_eval_every and fit_eval_rays must be positive".into()));
        }
        Ok(())
    }

    /// Effective thread count; deterministic runs always use one.
    pub fn thread_count(&self) -> Result<usize> {
        if self.deterministic_mode {
            return Ok(1);
        }
        if let Some(n) = self.threads {
            return Ok(n);
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
            Err(_) => Ok(2),
        }
    }

    pub fn dataset_dir(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given (set `dataset` or pass --dataset)".into()))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory given (set `out` or pass --out)".into()))
    }
}
