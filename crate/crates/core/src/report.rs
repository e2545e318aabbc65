//! Evaluation reports: test metrics, per-grid-point uncertainty, test-set
//! uncertainty histograms and total-variation distances to a reference.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{LabelledSet, Targets};
use crate::error::{Error, Result};
use crate::metrics::{self, Histogram};
use crate::models::{
    combine_predictions, predict_members, Combined, MemberOutputs, Predictor, Task,
};
use crate::nn::Matrix;
use crate::uncertainty::{
    decompose_classification, decompose_regression, UncertaintyKind, UncertaintyTriple,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: Vec<f64>,
    pub uncertainty: UncertaintyTriple,
    /// Combined predictive mean (regression only).
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub model: String,
    pub task: Task,
    pub members: usize,
    pub params: usize,
    pub flops: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ece: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub metrics: Metrics,
    pub grid: Vec<GridPoint>,
    pub test_uncertainty: Vec<UncertaintyTriple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvReport {
    pub bins: usize,
    pub predictive: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

impl TvReport {
    pub fn of(&self, kind: UncertaintyKind) -> f64 {
        match kind {
            UncertaintyKind::Predictive => self.predictive,
            UncertaintyKind::Aleatoric => self.aleatoric,
            UncertaintyKind::Epistemic => self.epistemic,
        }
    }
}

fn triple(out: &MemberOutputs) -> Result<UncertaintyTriple> {
    match out {
        MemberOutputs::Classification(rows) => decompose_classification(rows),
        MemberOutputs::Regression(pairs) => decompose_regression(pairs),
    }
}

fn check_inputs<P: Predictor + ?Sized>(model: &P, inputs: &[Vec<f64>]) -> Result<Matrix> {
    if inputs.is_empty() {
        return Err(Error::Input("no inputs to evaluate".into()));
    }
    if inputs.iter().any(|x| x.len() != model.input_width()) {
        return Err(Error::Input(format!(
            "model expects {} input features",
            model.input_width()
        )));
    }
    Matrix::from_rows(inputs)
}

/// Uncertainty decomposition at each input.
pub fn uncertainty_at<P: Predictor + ?Sized>(
    model: &P,
    inputs: &[Vec<f64>],
) -> Result<Vec<UncertaintyTriple>> {
    let x = check_inputs(model, inputs)?;
    predict_members(model, &x)?.iter().map(triple).collect()
}

pub fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    name: &str,
    test: &LabelledSet,
    grid: &[Vec<f64>],
) -> Result<Report> {
    let task = model.task();
    let test_x = check_inputs(model, &test.inputs)?;
    let outputs = predict_members(model, &test_x)?;
    let combined = outputs
        .iter()
        .map(combine_predictions)
        .collect::<Result<Vec<_>>>()?;
    let mut m = Metrics {
        model: name.to_string(),
        task,
        members: model.member_count(),
        params: model.param_count(),
        flops: model.flop_count(),
        error_rate: None,
        ece: None,
        nll: None,
    };
    match (task, &test.targets) {
        (Task::Classification { .. }, Targets::Classes(labels)) => {
            let probs: Vec<Vec<f64>> = combined
                .iter()
                .map(|c| match c {
                    Combined::Classification(p) => p.clone(),
                    Combined::Regression(_) => unreachable!("task checked"),
                })
                .collect();
            m.error_rate = Some(metrics::error_rate(&probs, labels)?);
            m.ece = Some(metrics::ece(&probs, labels, metrics::DEFAULT_ECE_BINS)?);
        }
        (Task::Regression, Targets::Values(y)) => {
            let pred: Vec<_> = combined
                .iter()
                .map(|c| match c {
                    Combined::Regression(g) => *g,
                    Combined::Classification(_) => unreachable!("task checked"),
                })
                .collect();
            m.nll = Some(metrics::nll_gaussian(&pred, y)?);
        }
        _ => {
            return Err(Error::Input(format!(
                "a {} model cannot be scored on these targets",
                task.name()
            )))
        }
    }
    let test_uncertainty = outputs.iter().map(triple).collect::<Result<Vec<_>>>()?;

    let grid_points = if grid.is_empty() {
        Vec::new()
    } else {
        let gx = check_inputs(model, grid)?;
        predict_members(model, &gx)?
            .iter()
            .zip(grid)
            .map(|(out, x)| {
                let mean = match combine_predictions(out)? {
                    Combined::Regression(g) => Some(g.mean),
                    Combined::Classification(_) => None,
                };
                Ok(GridPoint {
                    x: x.clone(),
                    uncertainty: triple(out)?,
                    mean,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(Report {
        metrics: m,
        grid: grid_points,
        test_uncertainty,
    })
}

impl Report {
    pub fn test_values(&self, kind: UncertaintyKind) -> Vec<f64> {
        self.test_uncertainty.iter().map(|t| kind.of(t)).collect()
    }

    /// One histogram per uncertainty kind over the test set. With a
    /// reference, both sides share the union of their value ranges.
    pub fn histograms(
        &self,
        reference: Option<&Report>,
        bins: usize,
    ) -> Result<Vec<(UncertaintyKind, Histogram, Option<Histogram>)>> {
        UncertaintyKind::ALL
            .iter()
            .map(|&kind| {
                let own = self.test_values(kind);
                let other = reference.map(|r| r.test_values(kind));
                let range = metrics::shared_range(&own, other.as_deref().unwrap_or(&[]));
                let a = metrics::build_histogram(&own, bins, range)?;
                let b = other
                    .map(|o| metrics::build_histogram(&o, bins, range))
                    .transpose()?;
                Ok((kind, a, b))
            })
            .collect()
    }

    pub fn total_variation(&self, reference: &Report, bins: usize) -> Result<TvReport> {
        if self.metrics.task != reference.metrics.task {
            return Err(Error::Input(
                "reference report solves a different task".into(),
            ));
        }
        let hists = self.histograms(Some(reference), bins)?;
        let tv = |k: usize| {
            let (_, a, b) = &hists[k];
            metrics::total_variation(a, b.as_ref().expect("reference given"))
        };
        Ok(TvReport {
            bins,
            predictive: tv(0)?,
            aleatoric: tv(1)?,
            epistemic: tv(2)?,
        })
    }

    /// Mean uncertainty of `kind` over grid points accepted by `filter`.
    pub fn grid_mean(&self, kind: UncertaintyKind, filter: impl Fn(&[f64]) -> bool) -> Option<f64> {
        let vals: Vec<f64> = self
            .grid
            .iter()
            .filter(|p| filter(&p.x))
            .map(|p| kind.of(&p.uncertainty))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn write_grid_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let width = self.grid.first().map_or(0, |p| p.x.len());
        let coords: Vec<String> = (1..=width).map(|i| format!("x{i}")).collect();
        let regression = self.metrics.task == Task::Regression;
        write!(out, "{},predictive,aleatoric,epistemic", coords.join(","))?;
        if regression {
            write!(out, ",mean,lower,upper")?;
        }
        writeln!(out)?;
        for p in &self.grid {
            let mut cells: Vec<String> = p.x.iter().map(|v| format!("{v:.16e}")).collect();
            let u = p.uncertainty;
            cells.extend(
                [u.predictive, u.aleatoric, u.epistemic]
                    .iter()
                    .map(|v| format!("{v:.16e}")),
            );
            if let (true, Some(mean)) = (regression, p.mean) {
                let sd = u.predictive.sqrt();
                cells.extend(
                    [mean, mean - sd, mean + sd]
                        .iter()
                        .map(|v| format!("{v:.16e}")),
                );
            }
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Which report files to emit besides `metrics.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportToggles {
    pub grid: bool,
    pub histograms: bool,
}

impl Default for ExportToggles {
    fn default() -> Self {
        Self {
            grid: true,
            histograms: true,
        }
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |buf| {
        serde_json::to_writer_pretty(&mut *buf, value)?;
        buf.push(b'\n');
        Ok(())
    })
}

/// Writes `metrics.json`, `grid.csv`, `hist_<kind>.csv` and, with a
/// reference, `tv.json` into `dir`.
pub fn write_report(
    dir: &Path,
    report: &Report,
    reference: Option<&Report>,
    bins: usize,
    export: ExportToggles,
) -> Result<Option<TvReport>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("metrics.json"), &report.metrics)?;
    if export.grid {
        write_file(&dir.join("grid.csv"), |buf| report.write_grid_csv(buf))?;
    }
    if export.histograms {
        for (kind, a, b) in report.histograms(reference, bins)? {
            let path = dir.join(format!("hist_{}.csv", kind.name()));
            write_file(&path, |buf| {
                metrics::write_histogram_csv(buf, &a, b.as_ref())
            })?;
        }
    }
    let tv = reference
        .map(|r| report.total_variation(r, bins))
        .transpose()?;
    if let Some(tv) = &tv {
        write_json(&dir.join("tv.json"), tv)?;
    }
    Ok(tv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_cubic_sine, make_eval_grid, make_spiral};
    use crate::models::{build_student, EnsembleTeacher, MlpSpec, MultiHeadSpec};

    #[test]
    fn self_reference_gives_zero_tv() {
        let t = EnsembleTeacher::new(MlpSpec::spiral(), 3, 0).unwrap();
        let data = make_spiral(0);
        let task = Task::Classification { classes: 3 };
        let grid = make_eval_grid(task, 5).unwrap();
        let r = evaluate(&t, "teacher", &data.test, &grid).unwrap();
        assert_eq!(r.grid.len(), 25);
        let tv = r.total_variation(&r, 50).unwrap();
        assert_eq!((tv.predictive, tv.aleatoric, tv.epistemic), (0.0, 0.0, 0.0));
        assert_eq!(r.histograms(None, 50).unwrap().len(), 3);
        assert!(r.metrics.error_rate.is_some() && r.metrics.nll.is_none());
    }

    #[test]
    fn identical_heads_have_zero_grid_epistemic() {
        let mut s = build_student(MultiHeadSpec::cubic_sine(3), 1).unwrap();
        for layer in 0..2 {
            let src = s.head_layers(0)[layer];
            for h in 1..3 {
                let dst = s.head_layers(h)[layer];
                let (w, b) = (
                    s.store().value(src.weight).clone(),
                    s.store().value(src.bias).clone(),
                );
                *s.store_mut().value_mut(dst.weight) = w;
                *s.store_mut().value_mut(dst.bias) = b;
            }
        }
        let grid = make_eval_grid(Task::Regression, 50).unwrap();
        let r = evaluate(&s, "student", &make_cubic_sine(0).test, &grid).unwrap();
        assert!(r.grid.iter().all(|p| p.uncertainty.epistemic == 0.0));
        assert_eq!(r.metrics.params, 2650 + 3 * 2652);
    }

    #[test]
    fn task_mismatch_is_an_input_error() {
        let s = build_student(MultiHeadSpec::cubic_sine(2), 1).unwrap();
        assert!(matches!(
            evaluate(&s, "student", &make_spiral(0).test, &[]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn regression_grid_csv_has_bands() {
        let s = build_student(MultiHeadSpec::cubic_sine(2), 1).unwrap();
        let grid = make_eval_grid(Task::Regression, 4).unwrap();
        let r = evaluate(&s, "student", &make_cubic_sine(0).test, &grid).unwrap();
        let mut buf = Vec::new();
        r.write_grid_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "x1,predictive,aleatoric,epistemic,mean,lower,upper"
        );
        assert_eq!(lines.len(), 5);
        let cells: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cells[5] < cells[4] && cells[4] < cells[6]);
    }
}
