//! Lane-following episodes with a rule-based planner, for online monitoring.
//!
//! The ego drives along +x behind an in-lane leader (neighbor 0); further
//! neighbors cruise in adjacent lanes. The planner is the intelligent driver
//! model: keep a time gap, brake when closing in. Collision episodes disable
//! braking from a random step before the leader starts to slow down.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, Range};
use crate::error::{Error, Result};
use crate::traj::{ShiftLabel, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Safe,
    Collision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub outcome: Outcome,
    pub collision_step: Option<usize>,
    pub rate_hz: f64,
    /// `steps[t][0]` is the ego, followed by the neighbors.
    pub steps: Vec<Vec<AgentState>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn n_neighbors(&self) -> usize {
        self.steps.first().map_or(0, |s| s.len().saturating_sub(1))
    }

    /// Smallest pairwise center distance at step `t`.
    pub fn min_distance(&self, t: usize) -> f64 {
        min_pairwise(&self.steps[t])
    }

    /// Ego positions with one context row per step: for each neighbor,
    /// `(dx, dy, dvx, dvy)` relative to the ego.
    pub fn ego_trajectory(&self) -> Trajectory {
        let points = self.steps.iter().map(|s| [s[0].x, s[0].y]).collect();
        let context = self
            .steps
            .iter()
            .map(|s| {
                let e = s[0];
                s[1..]
                    .iter()
                    .flat_map(|n| [n.x - e.x, n.y - e.y, n.vx - e.vx, n.vy - e.vy])
                    .collect()
            })
            .collect();
        let label = match self.outcome {
            Outcome::Safe => ShiftLabel::in_distribution(),
            Outcome::Collision => ShiftLabel::collision(),
        };
        Trajectory {
            scene_id: self.episode_id.clone(),
            agent_id: "ego".into(),
            rate_hz: self.rate_hz,
            points,
            label: Some(label),
            context: Some(context),
        }
    }
}

fn min_pairwise(states: &[AgentState]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..states.len() {
        for j in i + 1..states.len() {
            let d = (states[i].x - states[j].x).hypot(states[i].y - states[j].y);
            best = best.min(d);
        }
    }
    best
}

/// Intelligent-driver-model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    /// Desired time headway, s.
    pub time_headway: f64,
    /// Standstill center-to-center gap, m.
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    /// Hard actuator limit on braking, m/s^2.
    pub max_decel: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            time_headway: 1.5,
            min_gap: 6.0,
            max_accel: 1.5,
            comfort_decel: 2.5,
            max_decel: 9.0,
        }
    }
}

impl PlannerParams {
    /// Ego acceleration for speed `v`, desired speed `v0`, gap `s` to a
    /// leader moving at `v_lead` (no leader: `s = inf`).
    pub fn accel(&self, v: f64, v0: f64, s: f64, v_lead: f64) -> f64 {
        let free = 1.0 - (v / v0.max(0.1)).powi(4);
        let interaction = if s.is_finite() {
            let dv = v - v_lead;
            let s_star = self.min_gap
                + (v * self.time_headway + v * dv / (2.0 * (self.max_accel * self.comfort_decel).sqrt()))
                    .max(0.0);
            (s_star / s.max(0.1)).powi(2)
        } else {
            0.0
        };
        (self.max_accel * (free - interaction)).clamp(-self.max_decel, self.max_accel)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub seed: u64,
    pub rate_hz: f64,
    pub n_steps: usize,
    pub n_safe: usize,
    pub n_collision: usize,
    /// Neighbor 0 is the in-lane leader; the rest use adjacent lanes.
    pub n_neighbors: usize,
    pub collision_radius: f64,
    pub ego_speed: Range,
    /// Initial center gap to the leader, m.
    pub leader_gap: Range,
    /// Leader cruise speed as a fraction of the ego's.
    pub leader_speed_ratio: Range,
    /// Time at which the leader starts braking, s.
    pub leader_brake_time: Range,
    /// Leader deceleration, m/s^2.
    pub leader_decel: Range,
    pub lane_width: f64,
    /// Gaussian noise on observed positions, m.
    pub obs_noise_std: f64,
    /// Collisions must happen at or after this step so early detection can
    /// be evaluated.
    pub min_collision_step: usize,
    pub max_attempts: usize,
    pub planner: PlannerParams,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rate_hz: 5.0,
            n_steps: 60,
            n_safe: 200,
            n_collision: 200,
            n_neighbors: 2,
            collision_radius: 2.0,
            ego_speed: Range::new(8.0, 14.0),
            leader_gap: Range::new(25.0, 60.0),
            leader_speed_ratio: Range::new(0.6, 1.0),
            leader_brake_time: Range::new(2.0, 8.0),
            leader_decel: Range::new(1.0, 6.0),
            lane_width: 3.5,
            obs_noise_std: 0.02,
            min_collision_step: 20,
            max_attempts: 200,
            planner: PlannerParams::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("ego_speed", self.ego_speed),
            ("leader_gap", self.leader_gap),
            ("leader_speed_ratio", self.leader_speed_ratio),
            ("leader_brake_time", self.leader_brake_time),
            ("leader_decel", self.leader_decel),
        ];
        for (name, r) in ranges {
            r.validate(name)?;
            if r.lo < 0.0 {
                return Err(Error::Invalid(format!("{name} must be non-negative")));
            }
        }
        if !(self.rate_hz > 0.0) || self.n_steps < 2 || !(self.collision_radius > 0.0) {
            return Err(Error::Invalid("episode rate, length and radius must be positive".into()));
        }
        if self.obs_noise_std < 0.0 {
            return Err(Error::Invalid("obs noise std must be >= 0".into()));
        }
        Ok(())
    }
}

struct Scene {
    ego_speed: f64,
    leader_gap: f64,
    leader_speed: f64,
    brake_step: usize,
    leader_decel: f64,
    side_speeds: Vec<f64>,
    side_offsets: Vec<f64>,
}

fn draw_scene<R: Rng>(cfg: &EpisodeConfig, rng: &mut R) -> Scene {
    let ego_speed = cfg.ego_speed.sample(rng);
    let sides = cfg.n_neighbors.saturating_sub(1);
    Scene {
        ego_speed,
        leader_gap: cfg.leader_gap.sample(rng),
        leader_speed: ego_speed * cfg.leader_speed_ratio.sample(rng),
        brake_step: (cfg.leader_brake_time.sample(rng) * cfg.rate_hz).round() as usize,
        leader_decel: cfg.leader_decel.sample(rng),
        side_speeds: (0..sides).map(|_| ego_speed * rng.gen_range(0.7..1.3)).collect(),
        side_offsets: (0..sides).map(|_| rng.gen_range(-30.0..30.0)).collect(),
    }
}

/// Rolls a scene forward. Braking is suppressed from `disable_from` on.
/// Stops early at the first collision.
fn simulate<R: Rng>(cfg: &EpisodeConfig, scene: &Scene, disable_from: Option<usize>, rng: &mut R) -> (Vec<Vec<AgentState>>, Option<usize>) {
    let dt = 1.0 / cfg.rate_hz;
    let noise = Normal::new(0.0, cfg.obs_noise_std).expect("std >= 0");
    let has_leader = cfg.n_neighbors >= 1;
    let (mut ex, mut ev) = (0.0, scene.ego_speed);
    let (mut lx, mut lv) = (scene.leader_gap, scene.leader_speed);
    let mut sides: Vec<(f64, f64, f64)> = scene
        .side_speeds
        .iter()
        .zip(&scene.side_offsets)
        .enumerate()
        .map(|(k, (&v, &x0))| {
            let lane = (k / 2 + 1) as f64 * cfg.lane_width * if k % 2 == 0 { 1.0 } else { -1.0 };
            (x0, lane, v)
        })
        .collect();

    let mut steps = Vec::with_capacity(cfg.n_steps);
    let mut collision = None;
    for t in 0..cfg.n_steps {
        let mut states = vec![AgentState {
            x: ex,
            y: 0.0,
            vx: ev,
            vy: 0.0,
        }];
        if has_leader {
            states.push(AgentState {
                x: lx,
                y: 0.0,
                vx: lv,
                vy: 0.0,
            });
        }
        states.extend(sides.iter().map(|&(x, y, v)| AgentState { x, y, vx: v, vy: 0.0 }));
        let crashed = min_pairwise(&states) < cfg.collision_radius;
        if cfg.obs_noise_std > 0.0 {
            for s in &mut states {
                s.x += noise.sample(rng);
                s.y += noise.sample(rng);
            }
        }
        steps.push(states);
        if crashed {
            collision = Some(t);
            break;
        }

        let (gap, v_lead) = if has_leader { (lx - ex, lv) } else { (f64::INFINITY, 0.0) };
        let mut a = cfg.planner.accel(ev, scene.ego_speed, gap, v_lead);
        if disable_from.is_some_and(|d| t >= d) {
            a = a.max(0.0);
        }
        ev = (ev + a * dt).max(0.0);
        ex += ev * dt;
        if t >= scene.brake_step {
            lv = (lv - scene.leader_decel * dt).max(0.0);
        }
        lx += lv * dt;
        for s in &mut sides {
            s.0 += s.2 * dt;
        }
    }
    (steps, collision)
}

fn safe_episode(cfg: &EpisodeConfig, index: usize) -> Result<Episode> {
    for attempt in 0..cfg.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0, index as u64, attempt as u64]));
        let scene = draw_scene(cfg, &mut rng);
        let (steps, collision) = simulate(cfg, &scene, None, &mut rng);
        if collision.is_none() && steps.len() == cfg.n_steps {
            return Ok(Episode {
                episode_id: format!("safe-{index:05}"),
                outcome: Outcome::Safe,
                collision_step: None,
                rate_hz: cfg.rate_hz,
                steps,
            });
        }
    }
    Err(Error::RetriesExhausted(format!("safe episode {index}")))
}

fn collision_episode(cfg: &EpisodeConfig, index: usize) -> Result<Episode> {
    if cfg.n_neighbors == 0 {
        return Err(Error::RetriesExhausted(format!(
            "collision episode {index}: no neighbors to collide with"
        )));
    }
    for attempt in 0..cfg.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, index as u64, attempt as u64]));
        let scene = draw_scene(cfg, &mut rng);
        let disable_from = rng.gen_range(0..=scene.brake_step);
        let (steps, collision) = simulate(cfg, &scene, Some(disable_from), &mut rng);
        if let Some(cs) = collision {
            if cs >= cfg.min_collision_step {
                return Ok(Episode {
                    episode_id: format!("collision-{index:05}"),
                    outcome: Outcome::Collision,
                    collision_step: Some(cs),
                    rate_hz: cfg.rate_hz,
                    steps,
                });
            }
        }
    }
    Err(Error::RetriesExhausted(format!("collision episode {index}")))
}

/// Generates `n_safe` collision-free and `n_collision` crash episodes.
pub fn gen_episodes(cfg: &EpisodeConfig) -> Result<Vec<Episode>> {
    cfg.validate()?;
    let safe: Vec<Episode> = (0..cfg.n_safe)
        .into_par_iter()
        .map(|i| safe_episode(cfg, i))
        .collect::<Result<_>>()?;
    let crash: Vec<Episode> = (0..cfg.n_collision)
        .into_par_iter()
        .map(|i| collision_episode(cfg, i))
        .collect::<Result<_>>()?;
    Ok(safe.into_iter().chain(crash).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EpisodeConfig {
        EpisodeConfig {
            n_safe: 30,
            n_collision: 30,
            ..Default::default()
        }
    }

    #[test]
    fn brake_disabled_ego_hits_stopped_leader() {
        let c = cfg();
        let scene = Scene {
            ego_speed: 10.0,
            leader_gap: 40.0,
            leader_speed: 0.0,
            brake_step: 0,
            leader_decel: 1.0,
            side_speeds: vec![10.0],
            side_offsets: vec![0.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (steps, collision) = simulate(&EpisodeConfig { obs_noise_std: 0.0, ..c.clone() }, &scene, Some(0), &mut rng);
        // Closing at >= 10 m/s from 40 m to 2 m takes at most 3.8 s = 19 steps.
        let cs = collision.expect("must collide");
        assert!(cs <= 20, "{cs}");
        assert!(min_pairwise(&steps[cs]) < c.collision_radius);

        let (steps, collision) = simulate(&EpisodeConfig { obs_noise_std: 0.0, ..c.clone() }, &scene, None, &mut rng);
        assert!(collision.is_none());
        assert!(steps.iter().all(|s| min_pairwise(s) >= c.collision_radius));
    }

    #[test]
    fn generated_episodes_satisfy_predicates() {
        let c = cfg();
        let eps = gen_episodes(&c).unwrap();
        assert_eq!(eps.len(), 60);
        for e in &eps {
            match e.outcome {
                Outcome::Safe => {
                    assert_eq!(e.len(), c.n_steps);
                    assert!(e.collision_step.is_none());
                }
                Outcome::Collision => {
                    let cs = e.collision_step.unwrap();
                    assert_eq!(cs, e.len() - 1);
                    assert!(cs >= c.min_collision_step);
                }
            }
        }
    }

    #[test]
    fn noise_free_predicates_are_exact() {
        let c = EpisodeConfig {
            obs_noise_std: 0.0,
            ..cfg()
        };
        for e in gen_episodes(&c).unwrap() {
            match e.collision_step {
                Some(cs) => {
                    assert!(e.min_distance(cs) < c.collision_radius);
                    assert!((0..cs).all(|t| e.min_distance(t) >= c.collision_radius));
                }
                None => assert!((0..e.len()).all(|t| e.min_distance(t) >= c.collision_radius)),
            }
        }
    }

    #[test]
    fn zero_neighbors_is_always_safe() {
        let c = EpisodeConfig {
            n_neighbors: 0,
            n_collision: 0,
            ..cfg()
        };
        let eps = gen_episodes(&c).unwrap();
        assert!(eps.iter().all(|e| e.outcome == Outcome::Safe && e.n_neighbors() == 0));
        let c = EpisodeConfig {
            n_neighbors: 0,
            n_collision: 1,
            max_attempts: 3,
            ..cfg()
        };
        assert!(matches!(gen_episodes(&c), Err(Error::RetriesExhausted(_))));
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_episodes(&cfg()).unwrap(), gen_episodes(&cfg()).unwrap());
    }

    #[test]
    fn ego_trajectory_carries_context() {
        let e = &gen_episodes(&cfg()).unwrap()[0];
        let t = e.ego_trajectory();
        t.validate(2).unwrap();
        assert_eq!(t.context.as_ref().unwrap()[0].len(), 4 * e.n_neighbors());
    }
}
