//! Evaluation metrics: angular error over normal maps, pixelwise average
//! precision over edge maps, and candidate-set reports.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::image::{load_png, psnr, ImageRGB};
use crate::tensor::Tensor;

/// Allowed deviation of a normal from unit length.
pub const UNIT_TOLERANCE: f64 = 1e-4;

/// Slack on the inclusive angle thresholds, absorbing arccos rounding.
const THRESHOLD_SLACK_DEG: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl NormalMap {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} normals for a {width}x{height} map",
                data.len()
            )));
        }
        for (i, n) in data.iter().enumerate() {
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::InvalidImage(format!(
                    "normal at pixel {i} has length {norm}, expected 1"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.data
    }

    /// From a 3-channel `PXNT` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.dim != 3 {
            return Err(Error::DimensionMismatch(format!(
                "normal tensor must have dim 3, found {}",
                t.dim
            )));
        }
        let data = t
            .data
            .chunks_exact(3)
            .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
            .collect();
        Self::new(t.width, t.height, data)
    }

    /// Decodes `n = 2v - 1` per channel and renormalizes.
    pub fn from_image(img: &ImageRGB) -> Result<Self> {
        let data = img
            .data()
            .chunks_exact(3)
            .enumerate()
            .map(|(i, p)| {
                let v = [
                    2.0 * p[0] as f64 - 1.0,
                    2.0 * p[1] as f64 - 1.0,
                    2.0 * p[2] as f64 - 1.0,
                ];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n == 0.0 {
                    return Err(Error::InvalidImage(format!("zero normal at pixel {i}")));
                }
                Ok([v[0] / n, v[1] / n, v[2] / n])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(img.width(), img.height(), data)
    }

    /// Loads a `.pxnt` tensor or an RGB-encoded image.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pxnt"))
        {
            Self::from_tensor(&Tensor::read(path)?)
        } else {
            Self::from_image(&load_png(path)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngularErrorStats {
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    pub pct_11_25: f64,
    pub pct_22_5: f64,
    pub pct_30: f64,
}

/// Per-pixel angle in degrees between `pred` and `gt`.
pub fn angular_errors(pred: &NormalMap, gt: &NormalMap) -> Result<Vec<f64>> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::DimensionMismatch(format!(
            "normal maps {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    Ok(pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| {
            let d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            d.clamp(-1.0, 1.0).acos().to_degrees()
        })
        .collect())
}

pub fn angular_stats(pred: &NormalMap, gt: &NormalMap) -> Result<AngularErrorStats> {
    let mut errors = angular_errors(pred, gt)?;
    let n = errors.len();
    if n == 0 {
        return Err(Error::InvalidImage("empty normal map".into()));
    }
    let mean = errors.iter().sum::<f64>() / n as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let pct = |thr: f64| {
        100.0
            * errors
                .iter()
                .filter(|&&e| e <= thr + THRESHOLD_SLACK_DEG)
                .count() as f64
            / n as f64
    };
    let (pct_11_25, pct_22_5, pct_30) = (pct(11.25), pct(22.5), pct(30.0));
    errors.sort_by(f64::total_cmp);
    let median = errors[(n - 1) / 2];
    Ok(AngularErrorStats {
        mean,
        median,
        rmse,
        pct_11_25,
        pct_22_5,
        pct_30,
    })
}

/// All-points average precision of `scores` ranked descending (ties by index).
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Per-pixel edge probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScores {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl EdgeScores {
    /// Luminance of a PNG, or a 1-channel `PXNT` tensor.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pxnt"))
        {
            let t = Tensor::read(path)?;
            if t.dim != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "edge tensor must have dim 1, found {}",
                    t.dim
                )));
            }
            Ok(Self {
                width: t.width,
                height: t.height,
                data: t.data.iter().map(|&v| v as f64).collect(),
            })
        } else {
            let img = load_png(path)?;
            Ok(Self::from_image(&img))
        }
    }

    pub fn from_image(img: &ImageRGB) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.luminance(),
        }
    }

    /// Labels with score at least 0.5.
    pub fn to_labels(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v >= 0.5).collect()
    }
}

/// Ground truth for a candidate report.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub image: ImageRGB,
    pub normals: Option<NormalMap>,
    pub edges: Option<Vec<bool>>,
}

/// One candidate to score: its image and any derived maps.
#[derive(Debug, Clone)]
pub struct EvalEntry {
    pub k: usize,
    pub t: usize,
    pub image: ImageRGB,
    pub normals: Option<NormalMap>,
    pub edges: Option<EdgeScores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub k: usize,
    pub t: usize,
    pub psnr: f64,
    pub angular: Option<AngularErrorStats>,
    pub ap: Option<f64>,
}

fn psnr_json(p: f64) -> Value {
    if p.is_finite() {
        json!(p)
    } else {
        json!("inf")
    }
}

impl EvalRow {
    /// JSON object `{k, t, psnr, mean, median, rmse, pct11, pct22, pct30, ap}`.
    ///
    /// Missing metrics are `null`; infinite PSNR is the string `"inf"`.
    pub fn to_json(&self) -> Value {
        let a = self.angular;
        json!({
            "k": self.k,
            "t": self.t,
            "psnr": psnr_json(self.psnr),
            "mean": a.map(|s| s.mean),
            "median": a.map(|s| s.median),
            "rmse": a.map(|s| s.rmse),
            "pct11": a.map(|s| s.pct_11_25),
            "pct22": a.map(|s| s.pct_22_5),
            "pct30": a.map(|s| s.pct_30),
            "ap": self.ap,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Field-wise best over `rows`; `k`/`t` name the best-PSNR candidate.
    pub oracle: EvalRow,
    /// The row picked by seeded random selection.
    pub random: EvalRow,
    pub seed: u64,
}

/// Index chosen by seeded random selection among `n` items.
pub fn random_index(n: usize, seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).random_range(0..n)
}

fn best_by<F: Fn(&AngularErrorStats) -> f64>(rows: &[EvalRow], f: F, lower: bool) -> Option<f64> {
    let vals = rows.iter().filter_map(|r| r.angular.as_ref().map(&f));
    if lower {
        vals.reduce(f64::min)
    } else {
        vals.reduce(f64::max)
    }
}

pub fn evaluate_candidates(
    entries: &[EvalEntry],
    gt: &GroundTruth,
    seed: u64,
) -> Result<EvalReport> {
    if entries.is_empty() {
        return Err(Error::InvalidConfig("no candidates to evaluate".into()));
    }
    let rows = entries
        .iter()
        .map(|e| {
            let psnr = psnr(&e.image, &gt.image)?;
            let angular = match (&e.normals, &gt.normals) {
                (Some(p), Some(g)) => Some(angular_stats(p, g)?),
                _ => None,
            };
            let ap = match (&e.edges, &gt.edges) {
                (Some(s), Some(l)) => Some(average_precision(&s.data, l)?),
                _ => None,
            };
            Ok(EvalRow {
                k: e.k,
                t: e.t,
                psnr,
                angular,
                ap,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Highest PSNR, ties to the lowest (K, T).
    let best = rows
        .iter()
        .reduce(|a, b| match b.psnr.total_cmp(&a.psnr) {
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Equal if (b.k, b.t) < (a.k, a.t) => b,
            _ => a,
        })
        .expect("non-empty");
    let angular = rows
        .iter()
        .any(|r| r.angular.is_some())
        .then(|| AngularErrorStats {
            mean: best_by(&rows, |s| s.mean, true).unwrap_or(f64::NAN),
            median: best_by(&rows, |s| s.median, true).unwrap_or(f64::NAN),
            rmse: best_by(&rows, |s| s.rmse, true).unwrap_or(f64::NAN),
            pct_11_25: best_by(&rows, |s| s.pct_11_25, false).unwrap_or(f64::NAN),
            pct_22_5: best_by(&rows, |s| s.pct_22_5, false).unwrap_or(f64::NAN),
            pct_30: best_by(&rows, |s| s.pct_30, false).unwrap_or(f64::NAN),
        });
    let oracle = EvalRow {
        k: best.k,
        t: best.t,
        psnr: best.psnr,
        angular,
        ap: rows.iter().filter_map(|r| r.ap).reduce(f64::max),
    };
    let random = rows[random_index(rows.len(), seed)].clone();
    Ok(EvalReport {
        rows,
        oracle,
        random,
        seed,
    })
}

impl EvalReport {
    /// One JSON object per candidate, then the oracle and random summaries.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&r.to_json().to_string());
            out.push('\n');
        }
        for (label, row) in [("oracle", &self.oracle), ("random", &self.random)] {
            let mut v = row.to_json();
            v["summary"] = json!(label);
            if label == "random" {
                v["seed"] = json!(self.seed);
            }
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn table(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>4} {:>4} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7}",
            "row", "K", "T", "PSNR", "mean", "median", "rmse", "11.25", "22.5", "30", "AP"
        );
        let line = |out: &mut String, label: &str, r: &EvalRow| {
            let a = r.angular;
            let _ = writeln!(
                out,
                "{:<8} {:>4} {:>4} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7}",
                label,
                r.k,
                r.t,
                if r.psnr.is_finite() {
                    format!("{:.3}", r.psnr)
                } else {
                    "inf".into()
                },
                fmt_opt(a.map(|s| s.mean)),
                fmt_opt(a.map(|s| s.median)),
                fmt_opt(a.map(|s| s.rmse)),
                fmt_opt(a.map(|s| s.pct_11_25)),
                fmt_opt(a.map(|s| s.pct_22_5)),
                fmt_opt(a.map(|s| s.pct_30)),
                fmt_opt(r.ap),
            );
        };
        for r in &self.rows {
            line(&mut out, "cand", r);
        }
        line(&mut out, "oracle", &self.oracle);
        line(&mut out, "random", &self.random);
        out
    }
}
