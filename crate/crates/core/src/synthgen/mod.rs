//! Seeded kinematic scenario generation.
//!
//! Trajectories are unicycle rollouts (`x' = v cos th`, `y' = v sin th`,
//! `th' = w`, `v' = a`) with Gaussian process noise on position. Each
//! behavior class draws its speed, yaw-rate and acceleration from its own
//! ranges; every sample gets its own RNG stream derived from
//! `(seed, class, index)`, so output is independent of thread count.

mod episodes;

pub use episodes::{gen_episodes, AgentState, Episode, EpisodeConfig, Outcome, PlannerParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{max_velocity, turn_score_points, Point, ShiftKind, ShiftLabel, Trajectory};

/// Closed interval `[lo, hi]` for uniform draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::Invalid(format!("{what}: bad range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    /// Log-uniform draw; falls back to uniform when `lo <= 0`.
    pub fn sample_log<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo > 0.0 && self.hi > self.lo {
            (rng.gen_range(self.lo.ln()..=self.hi.ln())).exp()
        } else {
            self.sample(rng)
        }
    }
}

/// One behavior class of the generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub label: ShiftKind,
    pub count: usize,
    /// Initial speed, m/s.
    pub speed: Range,
    /// Yaw rate, rad/s (positive turns left).
    pub yaw_rate: Range,
    /// Longitudinal acceleration, m/s^2.
    pub accel: Range,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftParam {
    /// Multiplies the process-noise std.
    Noise,
    /// Multiplies speeds.
    Speed,
}

/// Environmental-style shift applied to every generated trajectory; the
/// output is then labeled `custom`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub param: ShiftParam,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub rate_hz: f64,
    pub n_past: usize,
    pub horizon: usize,
    pub classes: Vec<ClassSpec>,
    /// Per-trajectory process-noise std (m), drawn log-uniformly.
    pub noise_std: Range,
    /// Initial heading, rad.
    pub heading: Range,
    #[serde(default)]
    pub shift: Option<ShiftSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::turn_benchmark(0)
    }
}

impl ScenarioConfig {
    /// Mixed straight/left/right corpus for turn-shift experiments.
    pub fn turn_benchmark(seed: u64) -> Self {
        let class = |name: &str, label, count, yaw: Range| ClassSpec {
            name: name.into(),
            label,
            count,
            speed: Range::new(6.0, 14.0),
            yaw_rate: yaw,
            accel: Range::new(-1.0, 1.0),
        };
        Self {
            seed,
            rate_hz: 10.0,
            n_past: 20,
            horizon: 10,
            classes: vec![
                class("straight", ShiftKind::InDistribution, 1200, Range::new(-0.08, 0.08)),
                class("left", ShiftKind::TurnLeft, 600, Range::new(0.25, 0.7)),
                class("right", ShiftKind::TurnRight, 600, Range::new(-0.7, -0.25)),
            ],
            noise_std: Range::new(0.01, 0.3),
            heading: Range::new(-0.3, 0.3),
            shift: None,
        }
    }

    /// Broad speed range for median-threshold velocity experiments.
    pub fn speed_benchmark(seed: u64) -> Self {
        let mut cfg = Self::turn_benchmark(seed);
        cfg.classes = vec![ClassSpec {
            name: "mixed".into(),
            label: ShiftKind::InDistribution,
            count: 2400,
            speed: Range::new(3.0, 18.0),
            yaw_rate: Range::new(-0.3, 0.3),
            accel: Range::new(-1.0, 1.0),
        }];
        cfg.noise_std = Range::new(0.01, 0.1);
        cfg
    }

    pub fn total_len(&self) -> usize {
        self.n_past + self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::Invalid("rate_hz must be positive".into()));
        }
        if self.n_past < 3 || self.horizon < 1 {
            return Err(Error::Invalid("need n_past >= 3 and horizon >= 1".into()));
        }
        self.noise_std.validate("noise_std")?;
        if self.noise_std.lo < 0.0 {
            return Err(Error::Invalid("noise std must be >= 0".into()));
        }
        self.heading.validate("heading")?;
        for c in &self.classes {
            c.speed.validate(&format!("{}.speed", c.name))?;
            c.yaw_rate.validate(&format!("{}.yaw_rate", c.name))?;
            c.accel.validate(&format!("{}.accel", c.name))?;
            if c.speed.lo < 0.0 {
                return Err(Error::Invalid(format!("{}: negative speed", c.name)));
            }
        }
        if let Some(s) = &self.shift {
            if !(s.factor.is_finite() && s.factor > 0.0) {
                return Err(Error::Invalid("shift factor must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Derives an independent stream seed from a base seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    // splitmix64 over the path.
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in path {
        z = z.wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Parameters of one noise-free or noisy unicycle rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rollout {
    pub start: Point,
    pub heading: f64,
    pub speed: f64,
    pub yaw_rate: f64,
    pub accel: f64,
    pub noise_std: f64,
}

/// Integrates a unicycle at `rate_hz` for `n` points (forward Euler on the
/// heading, exact position update per step).
pub fn unicycle<R: Rng>(r: &Rollout, rate_hz: f64, n: usize, rng: &mut R) -> Vec<Point> {
    let dt = 1.0 / rate_hz;
    let noise = Normal::new(0.0, r.noise_std.max(0.0)).expect("std >= 0");
    let (mut x, mut y) = (r.start[0], r.start[1]);
    let mut th = r.heading;
    let mut v = r.speed;
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            x += v * th.cos() * dt;
            y += v * th.sin() * dt;
            if r.noise_std > 0.0 {
                x += noise.sample(rng);
                y += noise.sample(rng);
            }
            th += r.yaw_rate * dt;
            v = (v + r.accel * dt).max(0.0);
        }
        pts.push([x, y]);
    }
    pts
}

/// Generates the labeled corpus described by `cfg`. Trajectories have
/// `n_past + horizon` points; clustered labels carry phi_total or v_max of
/// the observed `n_past` prefix.
pub fn gen_trajectories(cfg: &ScenarioConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let n = cfg.total_len();
    let jobs: Vec<(usize, usize)> = cfg
        .classes
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.count).map(move |i| (ci, i)))
        .collect();
    jobs.par_iter()
        .map(|&(ci, i)| {
            let class = &cfg.classes[ci];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[ci as u64, i as u64]));
            let mut r = Rollout {
                start: [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)],
                heading: cfg.heading.sample(&mut rng),
                speed: class.speed.sample(&mut rng),
                yaw_rate: class.yaw_rate.sample(&mut rng),
                accel: class.accel.sample(&mut rng),
                noise_std: cfg.noise_std.sample_log(&mut rng),
            };
            if let Some(s) = &cfg.shift {
                match s.param {
                    ShiftParam::Noise => r.noise_std *= s.factor,
                    ShiftParam::Speed => {
                        r.speed *= s.factor;
                        r.accel *= s.factor;
                    }
                }
            }
            let points = unicycle(&r, cfg.rate_hz, n, &mut rng);
            let past = &points[..cfg.n_past];
            let label = if cfg.shift.is_some() {
                ShiftLabel::new(ShiftKind::Custom, None)?
            } else {
                match class.label {
                    ShiftKind::TurnLeft | ShiftKind::TurnRight => {
                        ShiftLabel::new(class.label, Some(turn_score_points(past)?))?
                    }
                    ShiftKind::OverSpeed => {
                        let t = Trajectory::new("", "", cfg.rate_hz, past.to_vec())?;
                        ShiftLabel::new(class.label, Some(max_velocity(&t)?))?
                    }
                    other => ShiftLabel::new(other, None)?,
                }
            };
            Ok(Trajectory::new(format!("{}-{i:05}", class.name), "ego", cfg.rate_hz, points)?.with_label(label))
        })
        .collect()
}
