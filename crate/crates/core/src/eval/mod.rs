//! AUROC, threshold calibration, score-distribution export and the online
//! collision monitor.

mod distributions;
mod monitor;

pub use distributions::{export_distributions, freedman_diaconis_edges, write_distributions_csv, DistRow, FALLBACK_BINS};
pub use monitor::{
    episode_scores, monitor_episode, run_monitor, EpisodeTrace, MonitorConfig, MonitorSummary, Verdict,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{ScoreVariant, ScoredSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auroc: f64,
    /// `(fpr, tpr)` from (0,0) to (1,1).
    pub curve: Vec<(f64, f64)>,
    pub positives: usize,
    pub negatives: usize,
}

impl RocResult {
    /// Trapezoidal area under `curve`.
    pub fn curve_area(&self) -> f64 {
        self.curve
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

fn check_finite(xs: &[f64], side: &'static str) -> Result<()> {
    if let Some(v) = xs.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{side} score {v}")));
    }
    Ok(())
}

/// Mann-Whitney AUROC (ties count one half) with its ROC curve. Positives
/// are the shifted samples; higher score means more anomalous.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<RocResult> {
    if pos.is_empty() {
        return Err(Error::EmptyClass("positive"));
    }
    if neg.is_empty() {
        return Err(Error::EmptyClass("negative"));
    }
    check_finite(pos, "positive")?;
    check_finite(neg, "negative")?;
    let (np, nn) = (pos.len(), neg.len());
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Midranks (1-based) over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (np * (np + 1)) as f64 / 2.0;
    let auroc = u / (np as f64 * nn as f64);

    // Curve: lower the threshold one tie group at a time.
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = all.len();
    while k > 0 {
        let v = all[k - 1].0;
        while k > 0 && all[k - 1].0 == v {
            if all[k - 1].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        curve.push((fp as f64 / nn as f64, tp as f64 / np as f64));
    }
    Ok(RocResult {
        auroc,
        curve,
        positives: np,
        negatives: nn,
    })
}

/// Pairwise estimate of P(pos > neg) + P(pos = neg)/2, by enumeration.
pub fn auroc_brute_force(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Linear-interpolation quantile at position `(n-1) q` of the sorted values.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientCalibration { need: 1, got: 0 });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Invalid(format!("quantile {q} outside [0, 1]")));
    }
    check_finite(values, "calibration")?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub const MIN_CALIBRATION: usize = 20;

/// Empirical `q`-quantile of safe calibration scores.
pub fn calibrate_threshold(safe_scores: &[f64], q: f64) -> Result<f64> {
    if safe_scores.len() < MIN_CALIBRATION {
        return Err(Error::InsufficientCalibration {
            need: MIN_CALIBRATION,
            got: safe_scores.len(),
        });
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Invalid(format!("calibration quantile {q} outside (0, 1)")));
    }
    quantile(safe_scores, q)
}

/// Splits scored samples of one variant into (shifted, in-distribution).
pub fn split_by_label(rows: &[ScoredSample], variant: ScoreVariant) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in rows.iter().filter(|r| r.variant == variant) {
        if r.is_shifted() {
            pos.push(r.score);
        } else {
            neg.push(r.score);
        }
    }
    (pos, neg)
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub variant: String,
    /// NaN (written as `null`) when one class is empty, e.g. a monitor run
    /// without collision episodes.
    #[serde(deserialize_with = "null_as_nan")]
    pub auroc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub threshold: Option<f64>,
    pub detection_rate: Option<f64>,
    pub false_alarm_rate: Option<f64>,
    /// Mean milliseconds per score call; omitted when timing is disabled so
    /// that results are byte-reproducible.
    pub mean_score_ms: Option<f64>,
}

fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// AUROC per variant present in `rows`.
pub fn evaluate_scores(experiment: &str, rows: &[ScoredSample]) -> Result<Vec<ResultRecord>> {
    let mut variants: Vec<ScoreVariant> = rows.iter().map(|r| r.variant).collect();
    variants.sort();
    variants.dedup();
    variants
        .into_iter()
        .map(|v| {
            let (pos, neg) = split_by_label(rows, v);
            let roc = auroc(&pos, &neg)?;
            Ok(ResultRecord {
                experiment: experiment.to_string(),
                variant: v.to_string(),
                auroc: roc.auroc,
                n_pos: roc.positives,
                n_neg: roc.negatives,
                threshold: None,
                detection_rate: None,
                false_alarm_rate: None,
                mean_score_ms: None,
            })
        })
        .collect()
}

pub fn write_results_json(path: &Path, records: &[ResultRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut s = serde_json::to_string_pretty(records)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_results_json(path: &Path) -> Result<Vec<ResultRecord>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// AUROC lookup by variant name.
pub fn auroc_table(records: &[ResultRecord]) -> BTreeMap<String, f64> {
    records.iter().map(|r| (r.variant.clone(), r.auroc)).collect()
}
