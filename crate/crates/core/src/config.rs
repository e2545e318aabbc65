//! JSON experiment files for the command-line runner.
//!
//! Only `task` is required. Everything else falls back to the published toy
//! settings for that task and head count. A preset is applied last, so
//! `hydra` always means α = 1, β = 1, λ = 0.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::SPIRAL_CLASSES;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_HIST_BINS;
use crate::models::Task;
use crate::report::ExportToggles;
use crate::training::{LambdaSchedule, Preset, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl TaskKind {
    pub fn task(self) -> Task {
        match self {
            TaskKind::Classification => Task::Classification {
                classes: SPIRAL_CLASSES,
            },
            TaskKind::Regression => Task::Regression,
        }
    }
}

/// Ablation grid: every β crossed with every λ on/off flag, plus a separate
/// sweep over head counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub betas: Vec<f64>,
    pub lambda_enabled: Vec<bool>,
    pub heads: Vec<usize>,
}

impl Sweep {
    pub fn is_empty(&self) -> bool {
        (self.betas.is_empty() || self.lambda_enabled.is_empty()) && self.heads.is_empty()
    }
}

fn default_seed() -> u64 {
    0
}

fn default_members() -> usize {
    20
}

fn default_grid() -> usize {
    100
}

fn default_bins() -> usize {
    DEFAULT_HIST_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub teacher_weight_decay: Option<f64>,
    pub student_weight_decay: Option<f64>,
    #[serde(default = "default_members")]
    pub ensemble_size: usize,
    #[serde(default = "default_members")]
    pub heads: usize,
    pub preset: Option<Preset>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub t_ind: Option<f64>,
    pub t_mean: Option<f64>,
    pub lambda: Option<LambdaSchedule>,
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_grid")]
    pub grid_resolution: usize,
    #[serde(default = "default_bins")]
    pub hist_bins: usize,
    #[serde(default)]
    pub export: ExportToggles,
    #[serde(default)]
    pub sweep: Sweep,
}

impl ExperimentConfig {
    pub fn new(task: TaskKind) -> Self {
        Self {
            task,
            seed: 0,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            teacher_weight_decay: None,
            student_weight_decay: None,
            ensemble_size: default_members(),
            heads: default_members(),
            preset: None,
            alpha: None,
            beta: None,
            t_ind: None,
            t_mean: None,
            lambda: None,
            output_dir: None,
            grid_resolution: default_grid(),
            hist_bins: default_bins(),
            export: ExportToggles::default(),
            sweep: Sweep::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A missing or unreadable file is a
    /// configuration error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_resolution < 2 {
            return Err(Error::Config("grid_resolution must be at least 2".into()));
        }
        if self.hist_bins == 0 {
            return Err(Error::Config("hist_bins must be positive".into()));
        }
        if self.sweep.betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config("sweep betas must lie in [0, 1]".into()));
        }
        self.run_config()?.validate()
    }

    /// Run settings with `heads` students heads, falling back to the
    /// published settings where the file is silent.
    pub fn run_config_for(&self, heads: usize) -> Result<RunConfig> {
        let task = self.task.task();
        let mut cfg = match (RunConfig::defaults(task, heads), self.lambda) {
            (Ok(cfg), _) => cfg,
            // No published λ for this head count, but the file supplies one.
            (Err(_), Some(lambda)) => {
                let mut cfg = RunConfig::defaults(task, 20)?;
                cfg.heads = heads;
                cfg.loss.lambda = lambda;
                cfg
            }
            (Err(e), None) => return Err(e),
        };
        cfg.seed = self.seed;
        cfg.ensemble_size = self.ensemble_size;
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(cfg.epochs, self.epochs);
        set!(cfg.batch_size, self.batch_size);
        set!(cfg.learning_rate, self.learning_rate);
        set!(cfg.teacher_weight_decay, self.teacher_weight_decay);
        set!(cfg.loss.weight_decay, self.student_weight_decay);
        set!(cfg.loss.alpha, self.alpha);
        set!(cfg.loss.beta, self.beta);
        set!(cfg.loss.t_ind, self.t_ind);
        set!(cfg.loss.t_mean, self.t_mean);
        set!(cfg.loss.lambda, self.lambda);
        if let Some(p) = self.preset {
            cfg.apply_preset(p);
        }
        Ok(cfg)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        self.run_config_for(self.heads)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
