//! Online monitoring: score the trailing history window at every step,
//! alarm on the first score above a threshold calibrated on safe episodes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auroc, calibrate_threshold};
use crate::error::{Error, Result};
use crate::synthgen::{Episode, Outcome};
use crate::traj::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    /// Quantile of per-episode maximum safe scores used as the threshold.
    pub q: f64,
    /// Trailing window length in steps.
    pub n_past: usize,
    /// Early-detection lead time in seconds.
    pub lead_seconds: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            q: 0.95,
            n_past: 10,
            lead_seconds: 1.0,
        }
    }
}

impl MonitorConfig {
    pub fn lead_steps(&self, rate_hz: f64) -> usize {
        (self.lead_seconds * rate_hz).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    TrueAlarm,
    Missed,
    FalseAlarm,
    TrueNegative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode_id: String,
    pub outcome: Outcome,
    pub collision_step: Option<usize>,
    /// `(step, score)`; the window ending at `step` (inclusive).
    pub scores: Vec<(usize, f64)>,
    pub alarm_step: Option<usize>,
    pub verdict: Verdict,
    /// Alarm raised at or before `collision_step - lead`.
    pub early: bool,
    /// Score at `collision_step - lead` for collisions (the earliest window if
    /// that step precedes the first full window), the episode maximum otherwise.
    pub eval_score: f64,
}

/// Scores the trailing `n_past` window at every step from the first full
/// window through the collision step (or the last step).
pub fn episode_scores<F>(score: &F, ep: &Episode, n_past: usize) -> Result<Vec<(usize, f64)>>
where
    F: Fn(&Trajectory) -> Result<f64>,
{
    if n_past == 0 || ep.len() < n_past {
        return Err(Error::EpisodeTooShort {
            need: n_past,
            got: ep.len(),
        });
    }
    let traj = ep.ego_trajectory();
    let last = ep.collision_step.map_or(ep.len() - 1, |c| c.min(ep.len() - 1));
    (n_past - 1..=last)
        .map(|t| Ok((t, score(&traj.window(t + 1 - n_past, t + 1)?)?)))
        .collect()
}

pub fn first_alarm(scores: &[(usize, f64)], threshold: f64) -> Option<usize> {
    scores.iter().find(|(_, s)| *s > threshold).map(|(t, _)| *t)
}

/// Applies a threshold to precomputed per-step scores.
pub fn monitor_episode(ep: &Episode, scores: Vec<(usize, f64)>, threshold: f64, lead: usize) -> Result<EpisodeTrace> {
    let first = scores
        .first()
        .copied()
        .ok_or(Error::EpisodeTooShort { need: 1, got: 0 })?;
    let alarm_step = first_alarm(&scores, threshold);
    let (verdict, early, eval_score) = match (ep.outcome, ep.collision_step) {
        (Outcome::Collision, Some(cs)) => {
            let deadline = cs.checked_sub(lead);
            let early = matches!((alarm_step, deadline), (Some(a), Some(d)) if a <= d);
            let eval = deadline
                .and_then(|d| scores.iter().find(|(t, _)| *t == d))
                .map_or(first.1, |(_, s)| *s);
            let verdict = match alarm_step {
                Some(a) if a <= cs => Verdict::TrueAlarm,
                _ => Verdict::Missed,
            };
            (verdict, early, eval)
        }
        (Outcome::Collision, None) => {
            return Err(Error::Invalid(format!("collision episode {} without collision step", ep.episode_id)))
        }
        (Outcome::Safe, _) => {
            let max = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
            let v = if alarm_step.is_some() {
                Verdict::FalseAlarm
            } else {
                Verdict::TrueNegative
            };
            (v, false, max)
        }
    };
    Ok(EpisodeTrace {
        episode_id: ep.episode_id.clone(),
        outcome: ep.outcome,
        collision_step: ep.collision_step,
        scores,
        alarm_step,
        verdict,
        early,
        eval_score,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub threshold: f64,
    pub lead_steps: usize,
    pub n_safe: usize,
    pub n_collision: usize,
    /// Fraction of collision episodes alarmed at or before `collision_step - lead`.
    pub detection_rate: Option<f64>,
    /// Fraction of safe episodes with any alarm.
    pub false_alarm_rate: Option<f64>,
    /// Collision score at `collision_step - lead` against safe-episode maxima.
    pub auroc: Option<f64>,
    pub traces: Vec<EpisodeTrace>,
}

/// Calibrates on `calibration` (safe episodes only) and monitors `episodes`.
pub fn run_monitor<F>(score: &F, calibration: &[Episode], episodes: &[Episode], cfg: &MonitorConfig) -> Result<MonitorSummary>
where
    F: Fn(&Trajectory) -> Result<f64> + Sync,
{
    if !(cfg.q > 0.0 && cfg.q < 1.0) {
        return Err(Error::Invalid(format!("monitor quantile {} outside (0, 1)", cfg.q)));
    }
    let calib_max = calibration
        .par_iter()
        .filter(|e| e.outcome == Outcome::Safe)
        .map(|e| {
            let s = episode_scores(score, e, cfg.n_past)?;
            Ok(s.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    let threshold = calibrate_threshold(&calib_max, cfg.q)?;
    let rate = episodes.first().map_or(5.0, |e| e.rate_hz);
    let lead = cfg.lead_steps(rate);
    let traces = episodes
        .par_iter()
        .map(|e| monitor_episode(e, episode_scores(score, e, cfg.n_past)?, threshold, lead))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(threshold, lead, traces))
}

pub fn summarize(threshold: f64, lead: usize, traces: Vec<EpisodeTrace>) -> MonitorSummary {
    let coll: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.outcome == Outcome::Collision).collect();
    let safe: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.outcome == Outcome::Safe).collect();
    let frac = |xs: &[&EpisodeTrace], f: &dyn Fn(&EpisodeTrace) -> bool| {
        (!xs.is_empty()).then(|| xs.iter().filter(|t| f(t)).count() as f64 / xs.len() as f64)
    };
    let detection_rate = frac(&coll, &|t| t.early);
    let false_alarm_rate = frac(&safe, &|t| t.alarm_step.is_some());
    let pos: Vec<f64> = coll.iter().map(|t| t.eval_score).collect();
    let neg: Vec<f64> = safe.iter().map(|t| t.eval_score).collect();
    let auroc = auroc(&pos, &neg).ok().map(|r| r.auroc);
    MonitorSummary {
        threshold,
        lead_steps: lead,
        n_safe: safe.len(),
        n_collision: coll.len(),
        detection_rate,
        false_alarm_rate,
        auroc,
        traces,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::AgentState;
    use proptest::prelude::*;

    fn episode(outcome: Outcome, n: usize, cs: Option<usize>) -> Episode {
        let steps = (0..n)
            .map(|t| {
                vec![
                    AgentState {
                        x: t as f64,
                        y: 0.0,
                        vx: 5.0,
                        vy: 0.0,
                    },
                    AgentState {
                        x: t as f64 + 20.0,
                        y: 0.0,
                        vx: 5.0,
                        vy: 0.0,
                    },
                ]
            })
            .collect();
        Episode {
            episode_id: format!("{outcome:?}-{n}"),
            outcome,
            collision_step: cs,
            rate_hz: 5.0,
            steps,
        }
    }

    // Score = x of the last point in the window, i.e. the step index.
    fn by_step(t: &Trajectory) -> Result<f64> {
        Ok(t.points.last().unwrap()[0])
    }

    #[test]
    fn safe_below_threshold_is_true_negative() {
        let e = episode(Outcome::Safe, 30, None);
        let s = episode_scores(&by_step, &e, 10).unwrap();
        assert_eq!(s.first().unwrap().0, 9);
        assert_eq!(s.len(), 21);
        let tr = monitor_episode(&e, s, 100.0, 5).unwrap();
        assert_eq!(tr.verdict, Verdict::TrueNegative);
        assert_eq!(tr.alarm_step, None);
    }

    #[test]
    fn infinite_threshold_never_alarms() {
        let e = episode(Outcome::Collision, 40, Some(30));
        let tr = monitor_episode(&e, episode_scores(&by_step, &e, 10).unwrap(), f64::INFINITY, 5).unwrap();
        assert_eq!(tr.alarm_step, None);
        assert_eq!(tr.verdict, Verdict::Missed);
        assert!(!tr.early);
    }

    #[test]
    fn crafted_high_score_at_lead_step_alarms_early() {
        // Scores window content: jumps once the window end reaches step 25.
        let e = episode(Outcome::Collision, 31, Some(30));
        let f = |t: &Trajectory| Ok(if t.points.last().unwrap()[0] >= 25.0 { 10.0 } else { 1.0 });
        let tr = monitor_episode(&e, episode_scores(&f, &e, 10).unwrap(), 5.0, 5).unwrap();
        assert_eq!(tr.alarm_step, Some(25));
        assert!(tr.early);
        assert_eq!(tr.verdict, Verdict::TrueAlarm);
        assert_eq!(tr.eval_score, 10.0);
    }

    #[test]
    fn too_short_rejected() {
        let e = episode(Outcome::Safe, 5, None);
        assert!(matches!(episode_scores(&by_step, &e, 10), Err(Error::EpisodeTooShort { need: 10, got: 5 })));
    }

    #[test]
    fn zero_collision_set_false_alarm_rate() {
        let calib: Vec<Episode> = (20..45).map(|n| episode(Outcome::Safe, n, None)).collect();
        let eval: Vec<Episode> = (15..55).map(|n| episode(Outcome::Safe, n, None)).collect();
        let cfg = MonitorConfig::default();
        let s = run_monitor(&by_step, &calib, &eval, &cfg).unwrap();
        let maxima: Vec<f64> = eval.iter().map(|e| (e.len() - 1) as f64).collect();
        let expect = maxima.iter().filter(|&&m| m > s.threshold).count() as f64 / maxima.len() as f64;
        assert_eq!(s.false_alarm_rate, Some(expect));
        assert_eq!(s.detection_rate, None);
        assert_eq!(s.auroc, None);
    }

    proptest! {
        #[test]
        fn alarm_step_monotone_in_threshold(scores in prop::collection::vec(0.0f64..10.0, 1..60), a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let s: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let key = |x: Option<usize>| x.unwrap_or(usize::MAX);
            prop_assert!(key(first_alarm(&s, lo)) <= key(first_alarm(&s, hi)));
        }
    }
}
