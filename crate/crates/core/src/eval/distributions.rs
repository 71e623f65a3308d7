use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quantile;
use crate::error::{Error, Result};
use crate::score::ScoredSample;

pub const FALLBACK_BINS: usize = 50;
const MAX_BINS: usize = 10_000;
const MAX_GRID: usize = 20_000;

/// One histogram bin (`series = "hist"`) or smoothed-curve point (`"kde"`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistRow {
    pub variant: String,
    pub label: String,
    pub series: String,
    /// Bin center or grid abscissa.
    pub x: f64,
    /// Bin width or grid spacing.
    pub width: f64,
    pub count: usize,
    pub density: f64,
}

/// Bin edges by the Freedman–Diaconis rule, falling back to 50 equal bins when
/// the IQR vanishes; a single distinct value gets one unit-width bin.
pub fn freedman_diaconis_edges(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Invalid("no values to bin".into()));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(vec![lo - 0.5, lo + 0.5]);
    }
    let iqr = quantile(values, 0.75)? - quantile(values, 0.25)?;
    let width = 2.0 * iqr * (values.len() as f64).powf(-1.0 / 3.0);
    let bins = if width > 0.0 {
        ((hi - lo) / width).ceil() as usize
    } else {
        0
    };
    let bins = if bins == 0 || bins > MAX_BINS { FALLBACK_BINS } else { bins };
    let step = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + step * i as f64).collect();
    edges.push(hi);
    Ok(edges)
}

fn histogram(values: &[f64], edges: &[f64]) -> Vec<usize> {
    let bins = edges.len() - 1;
    let mut counts = vec![0; bins];
    for &v in values {
        // Right edge of the last bin is inclusive.
        let i = edges.partition_point(|&e| e <= v).saturating_sub(1).min(bins - 1);
        counts[i] += 1;
    }
    counts
}

fn kde_curve(values: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut h = sd * n.powf(-0.2);
    if !(h > 0.0) {
        h = (mean.abs() * 1e-3).max(1e-3);
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - 8.0 * h;
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 8.0 * h;
    let points = (((hi - lo) / (h / 4.0)).ceil() as usize).clamp(256, MAX_GRID);
    let step = (hi - lo) / (points - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let xs: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let ys = xs
        .iter()
        .map(|&x| norm * values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    (xs, step, ys)
}

/// Per-(variant, label) histograms on shared Freedman–Diaconis edges plus a
/// Gaussian-smoothed density curve.
pub fn export_distributions(rows: &[ScoredSample]) -> Result<Vec<DistRow>> {
    let mut by_variant: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        by_variant
            .entry(r.variant.to_string())
            .or_default()
            .entry(r.label.as_str().to_string())
            .or_default()
            .push(r.score);
    }
    let mut out = Vec::new();
    for (variant, labels) in by_variant {
        let all: Vec<f64> = labels.values().flatten().copied().collect();
        let edges = freedman_diaconis_edges(&all)?;
        for (label, values) in labels {
            let counts = histogram(&values, &edges);
            for (i, &c) in counts.iter().enumerate() {
                let w = edges[i + 1] - edges[i];
                out.push(DistRow {
                    variant: variant.clone(),
                    label: label.clone(),
                    series: "hist".into(),
                    x: (edges[i] + edges[i + 1]) / 2.0,
                    width: w,
                    count: c,
                    density: c as f64 / (values.len() as f64 * w),
                });
            }
            let (xs, step, ys) = kde_curve(&values);
            for (x, y) in xs.into_iter().zip(ys) {
                out.push(DistRow {
                    variant: variant.clone(),
                    label: label.clone(),
                    series: "kde".into(),
                    x,
                    width: step,
                    count: 0,
                    density: y,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_distributions_csv(path: &Path, rows: &[DistRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
