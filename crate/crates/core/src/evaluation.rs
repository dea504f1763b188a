//! Displacement metrics on absolute positions, a constant-velocity
//! baseline, FDE histograms and plot export.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Split, WindowSet};
use crate::model::{Checkpoint, ModelError, TrajectoryModel};
use crate::types::{Provenance, WindowSample};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction has {pred} steps, ground truth has {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("checkpoint normalization statistics differ from the window file's")]
    StatsMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad plot table: {0}")]
    Table(String),
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}

fn check_lengths(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<(), EvalError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    Ok(())
}

/// Euclidean error at every step.
pub fn step_errors(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<Vec<f64>, EvalError> {
    check_lengths(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(&p, &g)| dist(p, g)).collect())
}

/// Mean per-step Euclidean distance.
pub fn ade(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64, EvalError> {
    let e = step_errors(pred, gt)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Euclidean distance at the final step.
pub fn fde(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64, EvalError> {
    check_lengths(pred, gt)?;
    Ok(dist(pred[pred.len() - 1], gt[gt.len() - 1]))
}

/// Extrapolates the last observed velocity over the target horizon.
pub fn cv_baseline(window: &WindowSample) -> Vec<[f64; 2]> {
    let v = window.obs.last().map_or([0.0, 0.0], |f| [f.dvx, f.dvy]);
    let [x, y] = window.last_obs_position;
    (1..=window.target.len())
        .map(|k| {
            let t = k as f64 * window.dt;
            [x + v[0] * t, y + v[1] * t]
        })
        .collect()
}

/// Anything that maps a raw window to absolute future positions.
pub trait Predictor: Sync {
    fn predict(&self, window: &WindowSample) -> Result<Vec<[f64; 2]>, EvalError>;
}

impl Predictor for TrajectoryModel {
    fn predict(&self, window: &WindowSample) -> Result<Vec<[f64; 2]>, EvalError> {
        Ok(TrajectoryModel::predict(self, window)?)
    }
}

/// Constant-velocity extrapolation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CvBaseline;

impl Predictor for CvBaseline {
    fn predict(&self, window: &WindowSample) -> Result<Vec<[f64; 2]>, EvalError> {
        Ok(cv_baseline(window))
    }
}

/// Returns the ground truth. Only useful as a test hook.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruth;

impl Predictor for GroundTruth {
    fn predict(&self, window: &WindowSample) -> Result<Vec<[f64; 2]>, EvalError> {
        Ok(window.future_positions())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub provenance: Provenance,
    pub ade: f64,
    pub fde: f64,
    pub step_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ade: f64,
    pub fde: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleError>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Drops the per-sample table.
    pub fn summary(&self) -> Self {
        Self {
            samples: Vec::new(),
            ..self.clone()
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} / {:.2}", self.ade, self.fde)
    }
}

/// Mean ADE and FDE over `windows`, computed per window then averaged.
/// Windows are predicted in parallel and reduced in input order.
pub fn evaluate(predictor: &dyn Predictor, windows: &[WindowSample]) -> Result<MetricsReport, EvalError> {
    if windows.is_empty() {
        return Err(EvalError::Empty);
    }
    let samples: Vec<SampleError> = windows
        .par_iter()
        .map(|w| {
            let pred = predictor.predict(w)?;
            let gt = w.future_positions();
            let errs = step_errors(&pred, &gt)?;
            Ok(SampleError {
                provenance: w.provenance.clone(),
                ade: errs.iter().sum::<f64>() / errs.len() as f64,
                fde: errs[errs.len() - 1],
                step_errors: errs,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let n = samples.len() as f64;
    Ok(MetricsReport {
        ade: samples.iter().map(|s| s.ade).sum::<f64>() / n,
        fde: samples.iter().map(|s| s.fde).sum::<f64>() / n,
        n_samples: samples.len(),
        samples,
    })
}

/// Evaluates a checkpoint on one split, refusing windows normalized with
/// different statistics.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, set: &WindowSet, split: Split) -> Result<MetricsReport, EvalError> {
    if ckpt.stats != set.stats {
        return Err(EvalError::StatsMismatch);
    }
    let model = ckpt.to_model()?;
    evaluate(&model, set.split(split))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Steps ahead; the FDE at this horizon is the error at step `horizon`.
    pub horizon: usize,
    /// `bins + 1` uniform edges over `[0, max]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Mean of the binned values, using bin centers.
    pub fn mean(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let s: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * 0.5 * (self.edges[i] + self.edges[i + 1]))
            .sum();
        s / total as f64
    }
}

/// One histogram of FDE per horizon from per-sample step errors.
///
/// # Panics
/// Panics if `horizons` is empty, `bins` is zero, or a horizon is zero or
/// exceeds a sample's length.
pub fn fde_histogram(step_errors: &[Vec<f64>], horizons: &[usize], bins: usize) -> Vec<Histogram> {
    assert!(!horizons.is_empty(), "at least one horizon");
    assert!(bins >= 1, "at least one bin");
    horizons
        .iter()
        .map(|&h| {
            assert!(h >= 1, "horizons count steps from 1");
            let vals: Vec<f64> = step_errors.iter().map(|e| e[h - 1]).collect();
            let max = vals.iter().copied().fold(0.0, f64::max);
            let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
            let edges = (0..=bins).map(|i| i as f64 * width).collect();
            let mut counts = vec![0; bins];
            for v in vals {
                let i = ((v / width) as usize).min(bins - 1);
                counts[i] += 1;
            }
            Histogram {
                horizon: h,
                edges,
                counts,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Observed,
    Gt,
    Pred,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Observed, Role::Gt, Role::Pred];

    pub fn name(self) -> &'static str {
        match self {
            Role::Observed => "observed",
            Role::Gt => "gt",
            Role::Pred => "pred",
        }
    }

    pub fn color(self) -> &'static str {
        match self {
            Role::Observed => "blue",
            Role::Gt => "red",
            Role::Pred => "yellow",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

/// Observed, ground-truth and predicted polylines of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Polylines {
    pub observed: Vec<[f64; 2]>,
    pub gt: Vec<[f64; 2]>,
    pub pred: Vec<[f64; 2]>,
}

impl Polylines {
    pub fn new(window: &WindowSample, prediction: &[[f64; 2]]) -> Self {
        Self {
            observed: window.observed_positions(),
            gt: window.future_positions(),
            pred: prediction.to_vec(),
        }
    }

    pub fn get(&self, role: Role) -> &[[f64; 2]] {
        match role {
            Role::Observed => &self.observed,
            Role::Gt => &self.gt,
            Role::Pred => &self.pred,
        }
    }

    fn get_mut(&mut self, role: Role) -> &mut Vec<[f64; 2]> {
        match role {
            Role::Observed => &mut self.observed,
            Role::Gt => &mut self.gt,
            Role::Pred => &mut self.pred,
        }
    }

    /// `role,step,x,y` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("role,step,x,y\n");
        for role in Role::ALL {
            for (i, p) in self.get(role).iter().enumerate() {
                out.push_str(&format!("{},{i},{:?},{:?}\n", role.name(), p[0], p[1]));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut out = Self {
            observed: Vec::new(),
            gt: Vec::new(),
            pred: Vec::new(),
        };
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for rec in reader.records() {
            let rec = rec.map_err(|e| EvalError::Table(e.to_string()))?;
            let field = |i: usize| rec.get(i).ok_or_else(|| EvalError::Table("short row".into()));
            let role = Role::parse(field(0)?).ok_or_else(|| EvalError::Table(format!("unknown role {}", &rec[0])))?;
            let num = |i: usize| -> Result<f64, EvalError> {
                field(i)?.parse().map_err(|_| EvalError::Table(format!("bad number {}", &rec[i])))
            };
            out.get_mut(role).push([num(2)?, num(3)?]);
        }
        Ok(out)
    }

    /// Three layered `<g>` groups, one polyline each, y axis pointing up.
    pub fn to_svg(&self) -> String {
        let all = || Role::ALL.into_iter().flat_map(|r| self.get(r).iter());
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in all() {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        if !x0.is_finite() {
            (x0, y0, x1, y1) = (0.0, 0.0, 1.0, 1.0);
        }
        let pad = 0.05 * (x1 - x0).max(y1 - y0).max(1.0);
        let (w, h) = (x1 - x0 + 2.0 * pad, y1 - y0 + 2.0 * pad);
        let stroke = 0.005 * w.max(h);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {w} {h}\">\n<g transform=\"scale(1,-1)\">\n",
            x0 - pad,
            -(y1 + pad),
        );
        for role in Role::ALL {
            let pts: Vec<String> = self.get(role).iter().map(|p| format!("{},{}", p[0], p[1])).collect();
            svg.push_str(&format!(
                "<g id=\"{0}\" data-role=\"{0}\">\n<polyline fill=\"none\" stroke=\"{1}\" stroke-width=\"{stroke}\" points=\"{2}\"/>\n</g>\n",
                role.name(),
                role.color(),
                pts.join(" ")
            ));
        }
        svg.push_str("</g>\n</svg>\n");
        svg
    }
}

/// Writes `<base>.svg` and `<base>.csv`. Returns both paths.
pub fn export_qualitative(
    window: &WindowSample,
    prediction: &[[f64; 2]],
    base: &Path,
) -> Result<(PathBuf, PathBuf), EvalError> {
    let lines = Polylines::new(window, prediction);
    let svg_path = base.with_extension("svg");
    let csv_path = base.with_extension("csv");
    std::fs::File::create(&svg_path)?.write_all(lines.to_svg().as_bytes())?;
    std::fs::File::create(&csv_path)?.write_all(lines.to_csv().as_bytes())?;
    Ok((svg_path, csv_path))
}
