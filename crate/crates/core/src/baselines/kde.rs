use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Isotropic Gaussian KDE; the score is the negative log density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub points: Vec<Vec<f64>>,
    pub bandwidth: f64,
}

impl KdeModel {
    pub fn new(points: Vec<Vec<f64>>, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Bandwidth(bandwidth));
        }
        if points.len() < 2 {
            return Err(Error::Invalid(format!("KDE needs at least 2 rows, got {}", points.len())));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::Shape {
                op: "kde",
                detail: "rows of unequal or zero width".into(),
            });
        }
        Ok(Self { points, bandwidth })
    }

    /// Scott's rule: `N^(-1/(d+4))` times the geometric mean of the
    /// per-dimension standard deviations.
    pub fn fit_scott(points: Vec<Vec<f64>>) -> Result<Self> {
        let h = scott_bandwidth(&points)?;
        Self::new(points, h)
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn score(&self, z: &[f64]) -> Result<f64> {
        let d = self.dim();
        if z.len() != d {
            return Err(Error::Shape {
                op: "kde",
                detail: format!("query width {}, model width {d}", z.len()),
            });
        }
        let h2 = self.bandwidth * self.bandwidth;
        let logs: Vec<f64> = self
            .points
            .iter()
            .map(|p| -0.5 * p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / h2)
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let log_norm = 0.5 * d as f64 * (2.0 * std::f64::consts::PI * h2).ln();
        Ok(-(lse - (self.points.len() as f64).ln() - log_norm))
    }
}

pub fn scott_bandwidth(points: &[Vec<f64>]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Invalid(format!("KDE needs at least 2 rows, got {n}")));
    }
    let d = points[0].len();
    let mut log_sum = 0.0;
    for j in 0..d {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        log_sum += var.sqrt().ln();
    }
    let h = (log_sum / d as f64).exp() * (n as f64).powf(-1.0 / (d as f64 + 4.0));
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Bandwidth(h));
    }
    Ok(h)
}
