//! Command-line experiment runner.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{self, Model};
use crate::config::{ExperimentConfig, TaskKind};
use crate::datasets::{make_cubic_sine, make_eval_grid, make_spiral, Splits};
use crate::error::{Error, Result};
use crate::losses::teachers_per_head;
use crate::models::{Complexity, EnsembleTeacher, Predictor};
use crate::report::{evaluate, write_json, write_report, Report, TvReport};
use crate::training::{self, distill_student, train_teacher, write_log, Preset, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "hydra-kd",
    version,
    about = "Distil deep ensembles into multi-head students"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the teacher ensemble and write `teacher.ckpt`.
    TrainTeacher(Common),
    /// Distil a teacher checkpoint into a student and write `student.ckpt`.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint (default: `<out>/teacher.ckpt`).
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Score a checkpoint and export grid, histogram and TV files.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: `<out>/student.ckpt`).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Checkpoint whose uncertainty histograms are compared against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run the β × λ grid and the head-count sweep from the config.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Reuse a trained teacher instead of training one.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Write the generated train/val/test splits as `dataset.csv`.
    DumpDataset(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Hydra,
    HydraPlus,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Hydra => Preset::Hydra,
            PresetArg::HydraPlus => Preset::HydraPlus,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    /// Loads the file, applies flag overrides and validates the result.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(heads) = self.heads {
            cfg.heads = heads;
        }
        if let Some(p) = self.preset {
            cfg.preset = Some(p.into());
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn dataset(task: TaskKind, seed: u64) -> Splits {
    match task {
        TaskKind::Classification => make_spiral(seed),
        TaskKind::Regression => make_cubic_sine(seed),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_jsonl(path: &Path, records: &[training::EpochRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_log(&mut buf, records).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Timestamps live only here so every other output is reproducible.
fn write_run_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    #[derive(Serialize)]
    struct RunManifest<'a> {
        command: &'a str,
        version: &'a str,
        unix_time: u64,
        config: &'a ExperimentConfig,
    }
    let unix_time = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &dir.join("run_manifest.json"),
        &RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            unix_time,
            config: cfg,
        },
    )
}

fn load_teacher(path: &Path, cfg: &RunConfig) -> Result<EnsembleTeacher> {
    if !path.exists() {
        return Err(Error::Usage(format!(
            "teacher checkpoint {} not found",
            path.display()
        )));
    }
    match checkpoint::load(path)?.1 {
        Model::Teacher(t) if t.task() == cfg.task => Ok(t),
        Model::Teacher(t) => Err(Error::Input(format!(
            "teacher solves {} but the config asks for {}",
            t.task().name(),
            cfg.task.name()
        ))),
        Model::Student(_) => Err(Error::Input(format!(
            "{} holds a student, not a teacher",
            path.display()
        ))),
    }
}

fn load_model(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::Usage(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    Ok(checkpoint::load(path)?.1)
}

#[derive(Debug, Clone, Serialize)]
pub struct DistillSummary {
    pub heads: usize,
    pub teachers: usize,
    pub teachers_per_head: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: training::LambdaSchedule,
    pub params: usize,
    pub flops: usize,
}

/// Distils and writes `student.ckpt`, `distill_log.jsonl` and
/// `distill_summary.json` into `dir`.
pub fn distill_into(
    dir: &Path,
    teacher: &EnsembleTeacher,
    cfg: &RunConfig,
    data: &Splits,
) -> Result<Model> {
    create_dir(dir)?;
    let (student, log) = distill_student(teacher, cfg, data)?;
    let per_head = teachers_per_head(teacher.len(), cfg.heads);
    checkpoint::save_student(
        &dir.join("student.ckpt"),
        &student,
        cfg.student_seed(),
        per_head.clone(),
    )?;
    write_jsonl(&dir.join("distill_log.jsonl"), &log)?;
    write_json(
        &dir.join("distill_summary.json"),
        &DistillSummary {
            heads: cfg.heads,
            teachers: teacher.len(),
            teachers_per_head: per_head,
            alpha: cfg.loss.alpha,
            beta: cfg.loss.beta,
            lambda: cfg.loss.lambda,
            params: student.param_count(),
            flops: student.flop_count(),
        },
    )?;
    Ok(Model::Student(student))
}

fn report_for(model: &Model, name: &str, cfg: &ExperimentConfig, data: &Splits) -> Result<Report> {
    let grid = make_eval_grid(cfg.task.task(), cfg.grid_resolution)?;
    evaluate(model, name, &data.test, &grid)
}

#[derive(Debug, Clone, Serialize)]
struct AblationCell {
    cell: String,
    heads: usize,
    beta: f64,
    lambda: training::LambdaSchedule,
    params: usize,
    tv: TvReport,
}

fn ablate(common: &Common, teacher_path: Option<&Path>) -> Result<()> {
    let cfg = common.resolve()?;
    if cfg.sweep.is_empty() {
        println!("sweep is empty; nothing to run");
        return Ok(());
    }
    let out = cfg.output_dir();
    create_dir(&out)?;
    let base = cfg.run_config()?;
    let data = dataset(cfg.task, cfg.seed);
    let teacher = match teacher_path {
        Some(p) => load_teacher(p, &base)?,
        None => {
            let (t, log) = train_teacher(&base, &data)?;
            checkpoint::save_teacher(&out.join("teacher.ckpt"), &t)?;
            write_jsonl(&out.join("teacher_log.jsonl"), &log)?;
            t
        }
    };
    let teacher_model = Model::Teacher(teacher);
    let reference = report_for(&teacher_model, "teacher", &cfg, &data)?;
    let Model::Teacher(teacher) = &teacher_model else {
        unreachable!()
    };

    let mut cells: Vec<(String, RunConfig)> = Vec::new();
    for &beta in &cfg.sweep.betas {
        for &on in &cfg.sweep.lambda_enabled {
            let mut rc = base.clone();
            rc.loss.beta = beta;
            if !on {
                rc.loss.lambda = training::LambdaSchedule::Constant { value: 0.0 };
            }
            let name = format!("beta{beta}_lambda-{}", if on { "on" } else { "off" });
            cells.push((name, rc));
        }
    }
    for &m in &cfg.sweep.heads {
        let rc = cfg.run_config_for(m)?;
        rc.validate()?;
        cells.push((format!("heads{m}"), rc));
    }
    let results = cells
        .par_iter()
        .map(|(name, rc)| {
            let dir = out.join(name);
            let student = distill_into(&dir, teacher, rc, &data)?;
            let report = report_for(&student, "student", &cfg, &data)?;
            let tv = write_report(&dir, &report, Some(&reference), cfg.hist_bins, cfg.export)?
                .expect("reference supplied");
            Ok(AblationCell {
                cell: name.clone(),
                heads: rc.heads,
                beta: rc.loss.beta,
                lambda: rc.loss.lambda,
                params: student.param_count(),
                tv,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&out.join("ablation.json"), &results)?;
    write_run_manifest(&out, "ablate", &cfg)?;
    for r in &results {
        println!(
            "{}: params {}, epistemic TV {:.4}",
            r.cell, r.params, r.tv.epistemic
        );
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::TrainTeacher(common) => {
            let cfg = common.resolve()?;
            let rc = cfg.run_config()?;
            let out = cfg.output_dir();
            create_dir(&out)?;
            let data = dataset(cfg.task, cfg.seed);
            let (teacher, log) = train_teacher(&rc, &data)?;
            let path = out.join("teacher.ckpt");
            checkpoint::save_teacher(&path, &teacher)?;
            write_jsonl(&out.join("teacher_log.jsonl"), &log)?;
            write_run_manifest(&out, "train-teacher", &cfg)?;
            println!(
                "wrote {} ({} members, {} parameters)",
                path.display(),
                teacher.len(),
                teacher.param_count()
            );
        }
        Command::Distill { common, teacher } => {
            let cfg = common.resolve()?;
            let rc = cfg.run_config()?;
            let out = cfg.output_dir();
            let teacher_path = teacher.clone().unwrap_or_else(|| out.join("teacher.ckpt"));
            let teacher = load_teacher(&teacher_path, &rc)?;
            let data = dataset(cfg.task, cfg.seed);
            let student = distill_into(&out, &teacher, &rc, &data)?;
            write_run_manifest(&out, "distill", &cfg)?;
            println!(
                "wrote {} ({} heads, {} parameters)",
                out.join("student.ckpt").display(),
                rc.heads,
                student.param_count()
            );
        }
        Command::Evaluate {
            common,
            model,
            reference,
        } => {
            let cfg = common.resolve()?;
            let out = cfg.output_dir();
            let model_path = model.clone().unwrap_or_else(|| out.join("student.ckpt"));
            let model = load_model(&model_path)?;
            if model.task() != cfg.task.task() {
                return Err(Error::Input(
                    "checkpoint and config disagree on the task".into(),
                ));
            }
            let data = dataset(cfg.task, cfg.seed);
            let name = match model {
                Model::Teacher(_) => "teacher",
                Model::Student(_) => "student",
            };
            let report = report_for(&model, name, &cfg, &data)?;
            let reference = reference
                .as_deref()
                .map(|p| {
                    let r = load_model(p)?;
                    let n = match r {
                        Model::Teacher(_) => "teacher",
                        Model::Student(_) => "student",
                    };
                    report_for(&r, n, &cfg, &data)
                })
                .transpose()?;
            let tv = write_report(&out, &report, reference.as_ref(), cfg.hist_bins, cfg.export)?;
            write_run_manifest(&out, "evaluate", &cfg)?;
            println!(
                "{}",
                serde_json::to_string(&report.metrics).expect("serialisable")
            );
            if let Some(tv) = tv {
                println!("{}", serde_json::to_string(&tv).expect("serialisable"));
            }
        }
        Command::Ablate { common, teacher } => ablate(common, teacher.as_deref())?,
        Command::DumpDataset(common) => {
            let cfg = common.resolve()?;
            let out = cfg.output_dir();
            create_dir(&out)?;
            let path = out.join("dataset.csv");
            let mut buf = Vec::new();
            dataset(cfg.task, cfg.seed)
                .write_csv(&mut buf)
                .map_err(|e| Error::io(&path, e))?;
            std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
