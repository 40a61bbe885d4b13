//! Depth quality metrics.
//!
//! Pixel metrics work on depth mapped to `(0, 1]` by
//! `v -> clamp((v + 1) / 2, 1e-3, 1)` after averaging the three channels, so
//! ratio-based metrics never divide by zero. Per-image values are averaged
//! over an evaluation set in a fixed order.

mod fid;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datasets::PairedSample;
use crate::error::{Error, Result};
use crate::models::Hallucinator;
use crate::tensor::ImageTensor;

pub use fid::{frechet_distance, FeatureExtractor, RandomProjection};

pub const DEPTH_EPS: f64 = 1e-3;
pub const DELTA_BASE: f64 = 1.25;

/// Maps a model-space depth tensor to positive per-pixel depths.
pub fn to_unit_depth(t: &ImageTensor) -> Vec<f64> {
    t.channel_mean()
        .data()
        .iter()
        .map(|&v| ((v as f64 + 1.0) * 0.5).clamp(DEPTH_EPS, 1.0))
        .collect()
}

fn check(gt: &[f64], pred: &[f64]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::Shape(format!(
            "ground truth has {} pixels, prediction has {}",
            gt.len(),
            pred.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::Validation("empty image".into()));
    }
    Ok(())
}

/// Mean of `|y - y*|`.
pub fn abs_diff(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check(gt, pred)?;
    Ok(gt.iter().zip(pred).map(|(g, p)| (g - p).abs()).sum::<f64>() / gt.len() as f64)
}

/// Mean of `|y - y*| / y*`.
pub fn abs_rel(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check(gt, pred)?;
    Ok(gt
        .iter()
        .zip(pred)
        .map(|(g, p)| (g - p).abs() / g)
        .sum::<f64>()
        / gt.len() as f64)
}

/// `sum |y - y*| / sum |y*|`
pub fn l1_norm(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check(gt, pred)?;
    let num: f64 = gt.iter().zip(pred).map(|(g, p)| (g - p).abs()).sum();
    let den: f64 = gt.iter().map(|g| g.abs()).sum();
    if den == 0.0 {
        return Err(Error::Numerical("L1 norm of an all-zero ground truth".into()));
    }
    Ok(num / den)
}

/// `sqrt(sum (y - y*)^2)`
pub fn l2_norm(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check(gt, pred)?;
    Ok(gt
        .iter()
        .zip(pred)
        .map(|(g, p)| (g - p) * (g - p))
        .sum::<f64>()
        .sqrt())
}

/// `sqrt(mean (y - y*)^2)`
pub fn rmse(gt: &[f64], pred: &[f64]) -> Result<f64> {
    Ok(l2_norm(gt, pred)? / (gt.len() as f64).sqrt())
}

/// Percentage of pixels with `max(y / y*, y* / y) < 1.25^k`.
pub fn threshold_accuracy(gt: &[f64], pred: &[f64], k: u32) -> Result<f64> {
    check(gt, pred)?;
    if gt.iter().chain(pred).any(|&v| v <= 0.0) {
        return Err(Error::Validation(
            "threshold accuracy needs positive depths".into(),
        ));
    }
    let limit = DELTA_BASE.powi(k as i32);
    let hits = gt
        .iter()
        .zip(pred)
        .filter(|&(&g, &p)| (g / p).max(p / g) < limit)
        .count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

/// Metrics of one image pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub abs_diff: f64,
    pub abs_rel: f64,
    pub l1_norm: f64,
    pub l2_norm: f64,
    pub rmse: f64,
    /// Threshold accuracy at `1.25`, `1.25^2`, `1.25^3`.
    pub delta: [f64; 3],
}

impl ImageMetrics {
    /// Metrics on already mapped positive depths.
    pub fn from_unit(name: &str, gt: &[f64], pred: &[f64]) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            abs_diff: abs_diff(gt, pred)?,
            abs_rel: abs_rel(gt, pred)?,
            l1_norm: l1_norm(gt, pred)?,
            l2_norm: l2_norm(gt, pred)?,
            rmse: rmse(gt, pred)?,
            delta: [
                threshold_accuracy(gt, pred, 1)?,
                threshold_accuracy(gt, pred, 2)?,
                threshold_accuracy(gt, pred, 3)?,
            ],
        })
    }

    pub fn compute(name: &str, gt: &ImageTensor, pred: &ImageTensor) -> Result<Self> {
        gt.same_shape(pred)?;
        Self::from_unit(name, &to_unit_depth(gt), &to_unit_depth(pred))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub sample_count: usize,
    pub abs_diff: f64,
    pub abs_rel: f64,
    pub l1_norm: f64,
    pub l2_norm: f64,
    pub rmse: f64,
    pub delta: [f64; 3],
    /// Absent for sets with fewer than two images.
    pub fid: Option<f64>,
}

impl QualityReport {
    pub fn from_rows(rows: &[ImageMetrics], fid: Option<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("empty evaluation set".into()));
        }
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&ImageMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            sample_count: rows.len(),
            abs_diff: mean(&|r| r.abs_diff),
            abs_rel: mean(&|r| r.abs_rel),
            l1_norm: mean(&|r| r.l1_norm),
            l2_norm: mean(&|r| r.l2_norm),
            rmse: mean(&|r| r.rmse),
            delta: [
                mean(&|r| r.delta[0]),
                mean(&|r| r.delta[1]),
                mean(&|r| r.delta[2]),
            ],
            fid,
        })
    }
}

pub const CSV_HEADER: &str = "name,abs_diff,l1_norm,l2_norm,rmse,delta_1.25,delta_1.25^2,delta_1.25^3";

/// Per-image rows as CSV with [`CSV_HEADER`].
pub fn rows_to_csv(rows: &[ImageMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.name, r.abs_diff, r.l1_norm, r.l2_norm, r.rmse, r.delta[0], r.delta[1], r.delta[2]
        );
    }
    out
}

/// Compares named predictions against ground truth, in the given order.
pub fn evaluate_predictions<E: FeatureExtractor + ?Sized>(
    pairs: &[(String, ImageTensor, ImageTensor)],
    extractor: &E,
) -> Result<(QualityReport, Vec<ImageMetrics>)> {
    let rows = pairs
        .iter()
        .map(|(name, gt, pred)| ImageMetrics::compute(name, gt, pred))
        .collect::<Result<Vec<_>>>()?;
    let fid = if pairs.len() >= 2 {
        let real: Vec<Vec<f64>> = pairs.iter().map(|(_, g, _)| extractor.extract(g)).collect();
        let fake: Vec<Vec<f64>> = pairs.iter().map(|(_, _, p)| extractor.extract(p)).collect();
        Some(frechet_distance(&real, &fake)?)
    } else {
        None
    };
    Ok((QualityReport::from_rows(&rows, fid)?, rows))
}

/// Hallucinates depth for every sample and scores it against ground truth.
pub fn evaluate_set<H, E>(
    samples: &[PairedSample],
    generator: &H,
    extractor: &E,
) -> Result<(QualityReport, Vec<ImageMetrics>)>
where
    H: Hallucinator + ?Sized,
    E: FeatureExtractor + ?Sized,
{
    let pairs = samples
        .iter()
        .map(|s| Ok((s.name.clone(), s.depth.clone(), generator.hallucinate(&s.rgb)?)))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&pairs, extractor)
}

/// Predicts one constant depth everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantDepth(pub f32);

impl ConstantDepth {
    /// Mean model-space depth over a set.
    pub fn mean_of(samples: &[PairedSample]) -> Result<Self> {
        let (sum, count) = samples.iter().fold((0.0f64, 0usize), |(s, n), p| {
            (
                s + p.depth.data().iter().map(|&v| v as f64).sum::<f64>(),
                n + p.depth.len(),
            )
        });
        if count == 0 {
            return Err(Error::Validation("no depth pixels".into()));
        }
        Ok(Self((sum / count as f64) as f32))
    }
}

impl Hallucinator for ConstantDepth {
    fn hallucinate(&self, rgb: &ImageTensor) -> Result<ImageTensor> {
        let (c, h, w) = rgb.shape();
        Ok(ImageTensor::filled(c, h, w, self.0))
    }
}
