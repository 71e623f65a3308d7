//! Per-sample preprocessing: history splitting, resampling and the
//! agent-centric translation (last observed point becomes the origin).

use crate::error::{Error, Result};
use crate::traj::{resample_linear, split_past, Point, SplitSpec, Trajectory};

use super::EncoderConfig;

/// Encoder input row plus flattened `(horizon * 2)` target in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

pub fn normalize_points(points: &[Point], origin: Point) -> Vec<Point> {
    points.iter().map(|p| [p[0] - origin[0], p[1] - origin[1]]).collect()
}

fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p[0], p[1]]).collect()
}

fn check_ctx(cfg: &EncoderConfig, ctx: Option<&[f64]>) -> Result<()> {
    let got = ctx.map_or(0, |c| c.len());
    if got != cfg.ctx_dim {
        return Err(Error::Shape {
            op: "encode",
            detail: format!("context width {got}, encoder expects {}", cfg.ctx_dim),
        });
    }
    Ok(())
}

/// Forecast-the-past pair: the first half resampled to the encoder length
/// is the input, the second half resampled to `split.horizon` is the target.
/// Both are expressed relative to the last point of the first half.
pub fn past_pair(t: &Trajectory, split: &SplitSpec, enc: &EncoderConfig) -> Result<Pair> {
    let (first, second) = split_past(t, split)?;
    let first = resample_linear(&first, enc.n_past)?;
    let second = resample_linear(&second, split.horizon)?;
    let origin = *first.points.last().expect("non-empty");
    let ctx = first.last_context();
    check_ctx(enc, ctx)?;
    Ok(Pair {
        input: enc.features(&normalize_points(&first.points, origin), ctx)?,
        target: flatten(&normalize_points(&second.points, origin)),
    })
}

/// Primary forecasting pair from a trajectory of `n_past + horizon` points.
pub fn forecast_pair(t: &Trajectory, n_past: usize, horizon: usize, enc: &EncoderConfig) -> Result<Pair> {
    if t.len() != n_past + horizon {
        return Err(Error::LengthMismatch {
            expected: n_past + horizon,
            got: t.len(),
        });
    }
    let past = t.window(0, n_past)?;
    let past = resample_linear(&past, enc.n_past)?;
    let origin = *past.points.last().expect("non-empty");
    let ctx = past.last_context();
    check_ctx(enc, ctx)?;
    Ok(Pair {
        input: enc.features(&normalize_points(&past.points, origin), ctx)?,
        target: flatten(&normalize_points(&t.points[n_past..], origin)),
    })
}

/// Reconstruction sample for AE/MAE: normalized history in meters plus the
/// context row at its last point.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconSample {
    pub points: Vec<Point>,
    pub context: Option<Vec<f64>>,
}

pub fn recon_sample(t: &Trajectory, n_past: usize) -> Result<ReconSample> {
    let past = if t.len() == n_past {
        t.clone()
    } else if t.len() > n_past {
        t.window(0, n_past)?
    } else {
        return Err(Error::LengthMismatch {
            expected: n_past,
            got: t.len(),
        });
    };
    let origin = *past.points.last().expect("non-empty");
    Ok(ReconSample {
        points: normalize_points(&past.points, origin),
        context: past.last_context().map(|c| c.to_vec()),
    })
}
