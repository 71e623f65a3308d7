//! Trajectory data model, history splitting and resampling, and the
//! maneuver/velocity clustering used to carve behavioral shift splits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Ordered 2-D positions (meters) sampled at `rate_hz`.
///
/// `context` optionally carries one feature row per point (e.g. neighbor
/// relative states); models read the row aligned with the last point they see.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scene_id: String,
    pub agent_id: String,
    pub rate_hz: f64,
    pub points: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ShiftLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn new(scene_id: impl Into<String>, agent_id: impl Into<String>, rate_hz: f64, points: Vec<Point>) -> Result<Self> {
        let t = Self {
            scene_id: scene_id.into(),
            agent_id: agent_id.into(),
            rate_hz,
            points,
            label: None,
            context: None,
        };
        t.validate(1)?;
        Ok(t)
    }

    /// Checks rate, finiteness, context alignment and a minimum length.
    pub fn validate(&self, min_len: usize) -> Result<()> {
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::Invalid(format!("rate_hz must be positive, got {}", self.rate_hz)));
        }
        if self.points.len() < min_len {
            return Err(Error::TooShort {
                need: min_len,
                got: self.points.len(),
            });
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("trajectory {}", self.id())));
        }
        if let Some(ctx) = &self.context {
            if ctx.len() != self.points.len() {
                return Err(Error::Invalid(format!(
                    "trajectory {}: {} context rows for {} points",
                    self.id(),
                    ctx.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!("{}/{}", self.scene_id, self.agent_id)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn with_label(mut self, label: ShiftLabel) -> Self {
        self.label = Some(label);
        self
    }

    /// Contiguous sub-trajectory `[start, end)`, carrying context rows along.
    pub fn window(&self, start: usize, end: usize) -> Result<Trajectory> {
        if start >= end || end > self.points.len() {
            return Err(Error::Invalid(format!(
                "window {start}..{end} out of range for {} points",
                self.points.len()
            )));
        }
        Ok(Trajectory {
            scene_id: self.scene_id.clone(),
            agent_id: self.agent_id.clone(),
            rate_hz: self.rate_hz,
            points: self.points[start..end].to_vec(),
            label: self.label.clone(),
            context: self.context.as_ref().map(|c| c[start..end].to_vec()),
        })
    }

    /// Context row aligned with the last point, if any.
    pub fn last_context(&self) -> Option<&[f64]> {
        self.context.as_ref().and_then(|c| c.last()).map(|r| r.as_slice())
    }
}

/// How a history of `n_past` steps is halved, and how many steps the
/// decoder forecasts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_past: usize,
    pub horizon: usize,
}

impl SplitSpec {
    pub fn new(n_past: usize, horizon: usize) -> Result<Self> {
        let s = Self { n_past, horizon };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_past < 2 || self.horizon < 1 {
            return Err(Error::Invalid(format!(
                "split needs n_past >= 2 and horizon >= 1, got ({}, {})",
                self.n_past, self.horizon
            )));
        }
        Ok(())
    }

    pub fn first_len(&self) -> usize {
        self.n_past / 2
    }

    pub fn second_len(&self) -> usize {
        self.n_past - self.first_len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    InDistribution,
    TurnLeft,
    TurnRight,
    OverSpeed,
    Collision,
    Custom,
}

impl ShiftKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShiftKind::InDistribution => "in_distribution",
            ShiftKind::TurnLeft => "turn_left",
            ShiftKind::TurnRight => "turn_right",
            ShiftKind::OverSpeed => "over_speed",
            ShiftKind::Collision => "collision",
            ShiftKind::Custom => "custom",
        }
    }

    fn is_clustered(&self) -> bool {
        matches!(self, ShiftKind::TurnLeft | ShiftKind::TurnRight | ShiftKind::OverSpeed)
    }
}

impl std::str::FromStr for ShiftKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "in_distribution" | "id" => ShiftKind::InDistribution,
            "turn_left" => ShiftKind::TurnLeft,
            "turn_right" => ShiftKind::TurnRight,
            "over_speed" => ShiftKind::OverSpeed,
            "collision" => ShiftKind::Collision,
            "custom" => ShiftKind::Custom,
            other => return Err(Error::Parse(format!("unknown shift kind `{other}`"))),
        })
    }
}

/// Ground-truth shift label. `value` holds phi_total or v_max for clustered
/// behaviors and is absent otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftLabel {
    pub kind: ShiftKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl ShiftLabel {
    pub fn new(kind: ShiftKind, value: Option<f64>) -> Result<Self> {
        if kind.is_clustered() != value.is_some() {
            return Err(Error::Invalid(format!(
                "label `{}` {} a value",
                kind.as_str(),
                if kind.is_clustered() { "requires" } else { "must not carry" }
            )));
        }
        Ok(Self { kind, value })
    }

    pub fn in_distribution() -> Self {
        Self {
            kind: ShiftKind::InDistribution,
            value: None,
        }
    }

    pub fn collision() -> Self {
        Self {
            kind: ShiftKind::Collision,
            value: None,
        }
    }

    pub fn is_shifted(&self) -> bool {
        self.kind != ShiftKind::InDistribution
    }
}

/// Splits a history into its early and late halves.
pub fn split_past(t: &Trajectory, s: &SplitSpec) -> Result<(Trajectory, Trajectory)> {
    if t.len() != s.n_past {
        return Err(Error::LengthMismatch {
            expected: s.n_past,
            got: t.len(),
        });
    }
    let k = s.first_len();
    Ok((t.window(0, k)?, t.window(k, s.n_past)?))
}

/// Piecewise-linear resampling along the index axis to `m` points. Output
/// point `j` sits at parameter `j * (L - 1) / (m - 1)`; endpoints are exact.
pub fn resample_linear(t: &Trajectory, m: usize) -> Result<Trajectory> {
    let points = resample_points(&t.points, m)?;
    let context = match &t.context {
        Some(rows) => Some(resample_rows(rows, m)?),
        None => None,
    };
    Ok(Trajectory {
        scene_id: t.scene_id.clone(),
        agent_id: t.agent_id.clone(),
        rate_hz: t.rate_hz * (m - 1) as f64 / (t.len() - 1) as f64,
        points,
        label: t.label.clone(),
        context,
    })
}

pub fn resample_points(points: &[Point], m: usize) -> Result<Vec<Point>> {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    Ok(resample_rows(&rows, m)?
        .into_iter()
        .map(|r| [r[0], r[1]])
        .collect())
}

fn resample_rows(rows: &[Vec<f64>], m: usize) -> Result<Vec<Vec<f64>>> {
    let l = rows.len();
    if l < 2 {
        return Err(Error::TooShort { need: 2, got: l });
    }
    if m < 2 {
        return Err(Error::Invalid(format!("resample target must be >= 2, got {m}")));
    }
    if m == l {
        return Ok(rows.to_vec());
    }
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        // Integer numerator keeps endpoints and grid-aligned samples exact.
        let num = j * (l - 1);
        let den = m - 1;
        let i = num / den;
        if num.is_multiple_of(den) {
            out.push(rows[i].clone());
            continue;
        }
        let frac = (num % den) as f64 / den as f64;
        let (a, b) = (&rows[i], &rows[i + 1]);
        out.push(a.iter().zip(b).map(|(x, y)| x + frac * (y - x)).collect());
    }
    Ok(out)
}

/// Signed sum of cross products of consecutive displacements. Positive
/// means a net left (counter-clockwise) turn.
pub fn turn_score(t: &Trajectory) -> Result<f64> {
    turn_score_points(&t.points)
}

pub fn turn_score_points(points: &[Point]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::TooShort {
            need: 3,
            got: points.len(),
        });
    }
    Ok(points
        .windows(3)
        .map(|w| {
            let d0 = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
            let d1 = [w[2][0] - w[1][0], w[2][1] - w[1][1]];
            d0[0] * d1[1] - d0[1] * d1[0]
        })
        .sum())
}

/// Largest step speed in m/s.
pub fn max_velocity(t: &Trajectory) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::TooShort { need: 2, got: t.len() });
    }
    let dt = t.dt();
    Ok(t
        .points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) / dt)
        .fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    TurnLeft,
    TurnRight,
    OverSpeed,
}

impl SplitRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitRule::TurnLeft => "turn_left",
            SplitRule::TurnRight => "turn_right",
            SplitRule::OverSpeed => "over_speed",
        }
    }
}

impl std::str::FromStr for SplitRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "turn_left" => Ok(SplitRule::TurnLeft),
            "turn_right" => Ok(SplitRule::TurnRight),
            "over_speed" => Ok(SplitRule::OverSpeed),
            other => Err(Error::Parse(format!("unknown split rule `{other}`"))),
        }
    }
}

/// Thresholds for [`build_split`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    /// `turn_left` marks phi_total > this as shifted.
    pub left: f64,
    /// `turn_right` marks phi_total < this as shifted.
    pub right: f64,
    /// Fixed speed threshold; `None` means the corpus median of v_max.
    pub speed: Option<f64>,
    /// Statistics are computed on at most this many leading points
    /// (e.g. only the observed history); `None` uses the whole trajectory.
    pub history_len: Option<usize>,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            left: 1.0,
            right: -1.0,
            speed: None,
            history_len: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<Trajectory>,
    pub ood: Vec<Trajectory>,
    /// Label for every corpus entry, in corpus order.
    pub labels: Vec<ShiftLabel>,
    /// Threshold that was applied (phi or m/s).
    pub threshold: f64,
}

fn clip(t: &Trajectory, policy: &ThresholdPolicy) -> Result<Trajectory> {
    match policy.history_len {
        Some(n) if n < t.len() => t.window(0, n),
        _ => Ok(t.clone()),
    }
}

/// Median with the mean-of-middle-pair convention for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Labels every trajectory with `rule`; shifted ones are withheld from the
/// training side. Near-threshold trajectories stay in-distribution.
pub fn build_split(corpus: &[Trajectory], rule: SplitRule, policy: &ThresholdPolicy) -> Result<Split> {
    if corpus.is_empty() {
        return Err(Error::Invalid("empty corpus".into()));
    }
    let clipped: Vec<Trajectory> = corpus.iter().map(|t| clip(t, policy)).collect::<Result<_>>()?;
    let (stats, threshold, kind): (Vec<f64>, f64, ShiftKind) = match rule {
        SplitRule::TurnLeft => (
            clipped.iter().map(turn_score).collect::<Result<_>>()?,
            policy.left,
            ShiftKind::TurnLeft,
        ),
        SplitRule::TurnRight => (
            clipped.iter().map(turn_score).collect::<Result<_>>()?,
            policy.right,
            ShiftKind::TurnRight,
        ),
        SplitRule::OverSpeed => {
            let v: Vec<f64> = clipped.iter().map(max_velocity).collect::<Result<_>>()?;
            let th = match policy.speed {
                Some(s) => s,
                None => median(&v).expect("non-empty"),
            };
            (v, th, ShiftKind::OverSpeed)
        }
    };
    let shifted = |s: f64| match rule {
        SplitRule::TurnLeft => s > threshold,
        SplitRule::TurnRight => s < threshold,
        SplitRule::OverSpeed => s > threshold,
    };
    let mut split = Split {
        train: Vec::new(),
        ood: Vec::new(),
        labels: Vec::with_capacity(corpus.len()),
        threshold,
    };
    for (t, &s) in corpus.iter().zip(&stats) {
        if shifted(s) {
            let label = ShiftLabel {
                kind,
                value: Some(s),
            };
            split.ood.push(t.clone().with_label(label.clone()));
            split.labels.push(label);
        } else {
            let label = ShiftLabel::in_distribution();
            split.train.push(t.clone().with_label(label.clone()));
            split.labels.push(label);
        }
    }
    if split.train.is_empty() {
        return Err(Error::EmptySide {
            rule: rule.as_str().into(),
            side: "train",
        });
    }
    if split.ood.is_empty() {
        return Err(Error::EmptySide {
            rule: rule.as_str().into(),
            side: "ood",
        });
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn traj(points: Vec<Point>, rate: f64) -> Trajectory {
        Trajectory::new("s", "a", rate, points).unwrap()
    }

    fn line(n: usize, step: f64) -> Trajectory {
        traj((0..n).map(|i| [i as f64 * step, 0.0]).collect(), 10.0)
    }

    #[test]
    fn split_argoverse_and_shifts_shapes() {
        let s = SplitSpec::new(20, 30).unwrap();
        let (a, b) = split_past(&line(20, 1.0), &s).unwrap();
        assert_eq!((a.len(), b.len()), (10, 10));
        let s = SplitSpec::new(25, 25).unwrap();
        let (a, b) = split_past(&line(25, 1.0), &s).unwrap();
        assert_eq!((a.len(), b.len()), (12, 13));
    }

    #[test]
    fn split_small() {
        let s = SplitSpec::new(4, 2).unwrap();
        let (a, b) = split_past(&line(4, 1.0), &s).unwrap();
        assert_eq!(a.points, vec![[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(b.points, vec![[2.0, 0.0], [3.0, 0.0]]);
        assert!(matches!(
            split_past(&line(5, 1.0), &s),
            Err(Error::LengthMismatch { expected: 4, got: 5 })
        ));
    }

    #[test]
    fn resample_midpoint() {
        let t = traj(vec![[0.0, 0.0], [1.0, 1.0]], 10.0);
        let r = resample_linear(&t, 3).unwrap();
        assert_eq!(r.points, vec![[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]]);
    }

    #[test]
    fn resample_corner() {
        let t = traj(vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0]], 10.0);
        let r = resample_linear(&t, 5).unwrap();
        assert_eq!(
            r.points,
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [2.0, 2.0]]
        );
    }

    #[test]
    fn resample_rejects_degenerate() {
        let t = traj(vec![[0.0, 0.0]], 10.0);
        assert!(resample_linear(&t, 3).is_err());
        assert!(resample_linear(&line(3, 1.0), 1).is_err());
    }

    #[test]
    fn turn_score_examples() {
        assert_eq!(turn_score(&line(4, 1.0)).unwrap(), 0.0);
        let sq = traj(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], 10.0);
        assert_eq!(turn_score(&sq).unwrap(), 2.0);
        assert!(turn_score(&line(2, 1.0)).is_err());
    }

    #[test]
    fn max_velocity_examples() {
        assert_abs_diff_eq!(max_velocity(&line(5, 1.0)).unwrap(), 10.0, epsilon = 1e-12);
        assert_eq!(max_velocity(&line(5, 0.0)).unwrap(), 0.0);
        let t = traj(vec![[0.0, 0.0], [0.5, 0.0], [2.0, 0.0]], 10.0);
        assert_abs_diff_eq!(max_velocity(&t).unwrap(), 15.0, epsilon = 1e-12);
    }

    fn left_arc() -> Trajectory {
        // Quarter-ish circle, counter-clockwise: phi_total well above 1.
        traj(
            (0..10)
                .map(|i| {
                    let a = i as f64 * 0.15;
                    [10.0 * a.sin(), 10.0 * (1.0 - a.cos())]
                })
                .collect(),
            10.0,
        )
    }

    #[test]
    fn build_split_turn_left() {
        let mut corpus: Vec<Trajectory> = (0..4).map(|_| line(10, 1.0)).collect();
        corpus.extend((0..4).map(|_| left_arc()));
        assert!(turn_score(&left_arc()).unwrap() > 1.0);
        let s = build_split(&corpus, SplitRule::TurnLeft, &ThresholdPolicy::default()).unwrap();
        assert_eq!(s.train.len(), 4);
        assert_eq!(s.ood.len(), 4);
        assert!(s.train.iter().all(|t| turn_score(t).unwrap() == 0.0));
        assert!(s.labels[4..].iter().all(|l| l.kind == ShiftKind::TurnLeft));
    }

    #[test]
    fn build_split_over_speed_median() {
        let corpus: Vec<Trajectory> = [1.0, 2.0, 3.0, 4.0].iter().map(|v| line(5, v / 10.0)).collect();
        let s = build_split(&corpus, SplitRule::OverSpeed, &ThresholdPolicy::default()).unwrap();
        assert_abs_diff_eq!(s.threshold, 2.5, epsilon = 1e-12);
        let ood: Vec<f64> = s.ood.iter().map(|t| max_velocity(t).unwrap()).collect();
        assert_eq!(ood.len(), 2);
        assert_abs_diff_eq!(ood[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ood[1], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn build_split_empty_side() {
        let corpus: Vec<Trajectory> = (0..4).map(|_| line(10, 1.0)).collect();
        assert!(matches!(
            build_split(&corpus, SplitRule::TurnRight, &ThresholdPolicy::default()),
            Err(Error::EmptySide { side: "ood", .. })
        ));
        assert!(build_split(&[], SplitRule::TurnLeft, &ThresholdPolicy::default()).is_err());
    }

    #[test]
    fn label_value_rule() {
        assert!(ShiftLabel::new(ShiftKind::TurnLeft, None).is_err());
        assert!(ShiftLabel::new(ShiftKind::Collision, Some(1.0)).is_err());
        assert!(ShiftLabel::new(ShiftKind::OverSpeed, Some(12.0)).is_ok());
    }

    fn arb_points(min: usize) -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| [x, y]), min..30)
    }

    fn rotate(p: &[Point], th: f64, dx: f64, dy: f64) -> Vec<Point> {
        let (s, c) = th.sin_cos();
        p.iter().map(|q| [c * q[0] - s * q[1] + dx, s * q[0] + c * q[1] + dy]).collect()
    }

    proptest! {
        #[test]
        fn split_concat_identity(pts in arb_points(2)) {
            let n = pts.len();
            let t = traj(pts.clone(), 10.0);
            let (a, b) = split_past(&t, &SplitSpec::new(n, 1).unwrap()).unwrap();
            let joined: Vec<Point> = a.points.into_iter().chain(b.points).collect();
            prop_assert_eq!(joined, pts);
        }

        #[test]
        fn resample_exact_on_uniform_segment(
            x0 in -10.0..10.0f64, y0 in -10.0..10.0f64,
            dx in -2.0..2.0f64, dy in -2.0..2.0f64,
            l in 2usize..20, m in 2usize..40,
        ) {
            let t = traj((0..l).map(|i| [x0 + dx * i as f64, y0 + dy * i as f64]).collect(), 10.0);
            let r = resample_linear(&t, m).unwrap();
            for (j, p) in r.points.iter().enumerate() {
                let u = j as f64 * (l - 1) as f64 / (m - 1) as f64;
                prop_assert!((p[0] - (x0 + dx * u)).abs() < 1e-9);
                prop_assert!((p[1] - (y0 + dy * u)).abs() < 1e-9);
            }
            prop_assert_eq!(r.points[0], t.points[0]);
            prop_assert_eq!(*r.points.last().unwrap(), *t.points.last().unwrap());
        }

        #[test]
        fn resample_identity_at_same_length(pts in arb_points(2)) {
            let n = pts.len();
            let r = resample_linear(&traj(pts.clone(), 10.0), n).unwrap();
            prop_assert_eq!(r.points, pts);
        }

        #[test]
        fn turn_score_invariances(pts in arb_points(3), th in -3.0..3.0f64, dx in -100.0..100.0f64, s in 0.1..5.0f64) {
            let base = turn_score_points(&pts).unwrap();
            let tol = 1e-8 * (1.0 + base.abs() + pts.iter().flatten().map(|v| v * v).sum::<f64>());
            let moved = turn_score_points(&rotate(&pts, th, dx, -dx)).unwrap();
            prop_assert!((moved - base).abs() < tol * 10.0);
            let mirrored: Vec<Point> = pts.iter().map(|p| [p[0], -p[1]]).collect();
            prop_assert!((turn_score_points(&mirrored).unwrap() + base).abs() < tol);
            let scaled: Vec<Point> = pts.iter().map(|p| [p[0] * s, p[1] * s]).collect();
            prop_assert!((turn_score_points(&scaled).unwrap() - s * s * base).abs() < tol * 25.0);
        }

        #[test]
        fn max_velocity_invariances(pts in arb_points(2), th in -3.0..3.0f64, dx in -100.0..100.0f64, s in 0.1..5.0f64, rate in 1.0..20.0f64) {
            let base = max_velocity(&traj(pts.clone(), rate)).unwrap();
            let moved = max_velocity(&traj(rotate(&pts, th, dx, dx), rate)).unwrap();
            prop_assert!((moved - base).abs() < 1e-8 * (1.0 + base));
            let scaled: Vec<Point> = pts.iter().map(|p| [p[0] * s, p[1] * s]).collect();
            prop_assert!((max_velocity(&traj(scaled, rate)).unwrap() - s * base).abs() < 1e-8 * (1.0 + s * base));
            let faster = max_velocity(&traj(pts.clone(), 2.0 * rate)).unwrap();
            prop_assert!((faster - 2.0 * base).abs() < 1e-8 * (1.0 + base));
        }

        #[test]
        fn build_split_partitions(phis in prop::collection::vec(-3.0..3.0f64, 2..30)) {
            // Two-segment trajectories whose bend gives a chosen phi.
            let corpus: Vec<Trajectory> = phis.iter().map(|&p| traj(vec![[0.0, 0.0], [1.0, 0.0], [1.0 + 0.0, p]], 10.0)).collect();
            if let Ok(s) = build_split(&corpus, SplitRule::TurnLeft, &ThresholdPolicy::default()) {
                prop_assert_eq!(s.train.len() + s.ood.len(), corpus.len());
                prop_assert!(s.train.iter().all(|t| turn_score(t).unwrap() <= 1.0));
                prop_assert!(s.ood.iter().all(|t| turn_score(t).unwrap() > 1.0));
            }
        }
    }
}
