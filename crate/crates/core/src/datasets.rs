//! Seeded generators for the spiral classification and cubic-sine
//! regression toy problems.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const SPIRAL_CLASSES: usize = 3;
pub const SPIRAL_JITTER: f64 = 0.05;
pub const SPLIT_SIZES: [usize; 3] = [240, 30, 30];
pub const REGRESSION_RANGE: (f64, f64) = (-6.0, 6.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Targets,
    pub split: Split,
}

impl LabelledSet {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Targets, split: Split) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Input(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let finite = inputs.iter().flatten().all(|v| v.is_finite())
            && match &targets {
                Targets::Values(v) => v.iter().all(|t| t.is_finite()),
                Targets::Classes(_) => true,
            };
        if !finite {
            return Err(Error::Input("dataset contains non-finite values".into()));
        }
        Ok(Self {
            inputs,
            targets,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn input_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.inputs).expect("rows share a width")
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Values(v) => Some(v),
            Targets::Classes(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: LabelledSet,
    pub val: LabelledSet,
    pub test: LabelledSet,
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = &LabelledSet> {
        [&self.train, &self.val, &self.test].into_iter()
    }

    /// Writes `x1[,x2],target,split` rows for all three splits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let width = self.train.input_width();
        let header: Vec<String> = (1..=width).map(|i| format!("x{i}")).collect();
        writeln!(out, "{},target,split", header.join(","))?;
        for set in self.iter() {
            for (i, x) in set.inputs.iter().enumerate() {
                let coords: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
                let target = match &set.targets {
                    Targets::Classes(c) => c[i].to_string(),
                    Targets::Values(v) => format!("{:.16e}", v[i]),
                };
                writeln!(out, "{},{target},{}", coords.join(","), set.split)?;
            }
        }
        Ok(())
    }
}

/// Point on spiral arm `class` at progress `t`, before jitter.
pub fn spiral_point(class: usize, t: f64) -> [f64; 2] {
    let r = t;
    let theta = 3.0 * PI * t + 2.0 * PI * class as f64 / SPIRAL_CLASSES as f64;
    [r * theta.sin(), r * theta.cos()]
}

/// Three interleaved spiral arms around the origin; 240/30/30 points split
/// equally across the classes.
pub fn make_spiral(seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, SPIRAL_JITTER).expect("valid sigma");
    let mut build = |n: usize, split: Split| {
        let per_class = n / SPIRAL_CLASSES;
        let mut inputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for class in 0..SPIRAL_CLASSES {
            for _ in 0..per_class {
                // gen() is in [0, 1); flip it so progress lies in (0, 1].
                let t = 1.0 - rng.gen::<f64>();
                let [x, y] = spiral_point(class, t);
                inputs.push(vec![
                    x + jitter.sample(&mut rng),
                    y + jitter.sample(&mut rng),
                ]);
                labels.push(class);
            }
        }
        LabelledSet::new(inputs, Targets::Classes(labels), split).expect("generated finite")
    };
    Splits {
        train: build(SPLIT_SIZES[0], Split::Train),
        val: build(SPLIT_SIZES[1], Split::Val),
        test: build(SPLIT_SIZES[2], Split::Test),
    }
}

/// `sin(x) − 0.1x + 0.1x² + 0.01x³`
pub fn cubic_sine(x: f64) -> f64 {
    x.sin() - 0.1 * x + 0.1 * x * x + 0.01 * x * x * x
}

/// Inputs uniform on [−6, 6]; unit Gaussian noise on training targets only.
pub fn make_cubic_sine(seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid sigma");
    let (lo, hi) = REGRESSION_RANGE;
    let mut build = |n: usize, split: Split| {
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.gen_range(lo..=hi);
            let mut y = cubic_sine(x);
            if split == Split::Train {
                y += noise.sample(&mut rng);
            }
            inputs.push(vec![x]);
            targets.push(y);
        }
        LabelledSet::new(inputs, Targets::Values(targets), split).expect("generated finite")
    };
    Splits {
        train: build(SPLIT_SIZES[0], Split::Train),
        val: build(SPLIT_SIZES[1], Split::Val),
        test: build(SPLIT_SIZES[2], Split::Test),
    }
}

pub const CLASSIFICATION_GRID: (f64, f64) = (-3.0, 3.0);
pub const REGRESSION_GRID: (f64, f64) = (-9.0, 9.0);

/// Evenly spaced evaluation inputs: a `resolution²` lattice over [−3, 3]²
/// for classification, `resolution` points over [−9, 9] for regression.
pub fn make_eval_grid(task: crate::models::Task, resolution: usize) -> Result<Vec<Vec<f64>>> {
    if resolution < 2 {
        return Err(Error::Config(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let step = (hi - lo) / (resolution - 1) as f64;
        (0..resolution).map(|i| lo + step * i as f64).collect()
    };
    Ok(match task {
        crate::models::Task::Classification { .. } => {
            let a = axis(CLASSIFICATION_GRID);
            a.iter()
                .flat_map(|&y| a.iter().map(move |&x| vec![x, y]))
                .collect()
        }
        crate::models::Task::Regression => {
            axis(REGRESSION_GRID).into_iter().map(|x| vec![x]).collect()
        }
    })
}
