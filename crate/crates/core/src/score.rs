//! Shift scores: gradient norms of the forecast-the-past loss at the last
//! decoder layer input, at the latent and over all decoder parameters; the
//! loss itself; reconstruction errors of the AE/MAE ablations.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    normalize_points, past_pair, random_mask, recon_sample, stack_rows, AutoEncoder, Encoder, MdnDecoder, Pair,
    MARK_LAST, MARK_LATENT,
};
use crate::ndgrad::Tape;
use crate::synthgen::derive_seed;
use crate::traj::{resample_linear, ShiftKind, SplitSpec, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    GradLast,
    GradLatent,
    GradAll,
    LossValue,
    AeRecon,
    MaeRecon,
    Kde,
    Iforest,
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 8] = [
        Self::GradLast,
        Self::GradLatent,
        Self::GradAll,
        Self::LossValue,
        Self::AeRecon,
        Self::MaeRecon,
        Self::Kde,
        Self::Iforest,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::GradLast => "grad_last",
            Self::GradLatent => "grad_latent",
            Self::GradAll => "grad_all",
            Self::LossValue => "loss_value",
            Self::AeRecon => "ae_recon",
            Self::MaeRecon => "mae_recon",
            Self::Kde => "kde",
            Self::Iforest => "iforest",
        }
    }

    /// Variants computed from the past decoder.
    pub fn uses_past_decoder(&self) -> bool {
        matches!(self, Self::GradLast | Self::GradLatent | Self::GradAll | Self::LossValue)
    }
}

impl fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown score variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: String,
    pub variant: ScoreVariant,
    pub score: f64,
    pub label: ShiftKind,
}

impl ScoredSample {
    pub fn is_shifted(&self) -> bool {
        self.label != ShiftKind::InDistribution
    }
}

pub fn write_scores_csv(path: &Path, rows: &[ScoredSample]) -> Result<()> {
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

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoredSample>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    for col in ["sample_id", "variant", "score", "label"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Parse(format!("{}: missing column `{col}`", path.display())));
        }
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<ScoredSample>, _>>()?)
}

/// Observed history of a trajectory: its first `n_past` points.
pub fn history(t: &Trajectory, n_past: usize) -> Result<Trajectory> {
    match t.len().cmp(&n_past) {
        std::cmp::Ordering::Equal => Ok(t.clone()),
        std::cmp::Ordering::Greater => t.window(0, n_past),
        std::cmp::Ordering::Less => Err(Error::LengthMismatch {
            expected: n_past,
            got: t.len(),
        }),
    }
}

/// Encoder row for the whole history (used for latent-space baselines).
pub fn history_input(t: &Trajectory, n_past: usize, enc: &Encoder) -> Result<Vec<f64>> {
    let h = resample_linear(&history(t, n_past)?, enc.config.n_past)?;
    let origin = *h.points.last().expect("non-empty");
    enc.config.features(&normalize_points(&h.points, origin), h.last_context())
}

/// All four past-decoder scores of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PastScores {
    pub grad_last: f64,
    pub grad_latent: f64,
    pub grad_all: f64,
    pub loss: f64,
}

impl PastScores {
    pub fn get(&self, v: ScoreVariant) -> Option<f64> {
        match v {
            ScoreVariant::GradLast => Some(self.grad_last),
            ScoreVariant::GradLatent => Some(self.grad_latent),
            ScoreVariant::GradAll => Some(self.grad_all),
            ScoreVariant::LossValue => Some(self.loss),
            _ => None,
        }
    }
}

/// Frozen encoder plus trained past decoder. Read-only.
#[derive(Clone, Copy, Debug)]
pub struct PastScorer<'a> {
    pub encoder: &'a Encoder,
    pub decoder: &'a MdnDecoder,
    pub split: SplitSpec,
}

impl<'a> PastScorer<'a> {
    pub fn new(encoder: &'a Encoder, decoder: &'a MdnDecoder, split: SplitSpec) -> Result<Self> {
        split.validate()?;
        if decoder.config.latent != encoder.config.latent || decoder.config.horizon != split.horizon {
            return Err(Error::Shape {
                op: "score",
                detail: format!(
                    "encoder latent {} / decoder latent {}, decoder horizon {} / split horizon {}",
                    encoder.config.latent, decoder.config.latent, decoder.config.horizon, split.horizon
                ),
            });
        }
        Ok(Self { encoder, decoder, split })
    }

    pub fn pair(&self, t: &Trajectory) -> Result<Pair> {
        past_pair(&history(t, self.split.n_past)?, &self.split, &self.encoder.config)
    }

    /// One tape, one backward pass. Decoder parameters are differentiated
    /// only when `with_params` (needed for `grad_all`).
    pub fn score_pair(&self, pair: &Pair, with_params: bool) -> Result<PastScores> {
        let mut tape = Tape::new();
        let pe = self.encoder.params.bind(&mut tape, false);
        let pd = self.decoder.params.bind(&mut tape, with_params);
        let x = tape.constant(stack_rows(&[&pair.input])?);
        let y = tape.constant(stack_rows(&[&pair.target])?);
        let z = self.encoder.encode(&mut tape, &pe, x)?;
        let nodes = self.decoder.decode(&mut tape, &pd, z)?;
        let per = self.decoder.nll(&mut tape, &nodes, y)?;
        let root = tape.sum(per)?;
        let loss = tape.value(root).item().expect("scalar");
        let g = tape.backward(root)?;
        let grad_all = if with_params {
            pd.iter()
                .map(|&id| g.get(id).expect("param gradient").data().iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt()
        } else {
            f64::NAN
        };
        Ok(PastScores {
            grad_last: g.at_mark(MARK_LAST)?.norm_l2(),
            grad_latent: g.at_mark(MARK_LATENT)?.norm_l2(),
            grad_all,
            loss,
        })
    }

    pub fn score(&self, t: &Trajectory, v: ScoreVariant) -> Result<f64> {
        if !v.uses_past_decoder() {
            return Err(Error::Invalid(format!("{v} is not a past-decoder score")));
        }
        let s = self.score_pair(&self.pair(t)?, v == ScoreVariant::GradAll)?;
        let x = s.get(v).expect("past variant");
        if !x.is_finite() {
            return Err(Error::NonFiniteGradient(format!("{v} of sample {}", t.id())));
        }
        Ok(x)
    }

    pub fn score_all(&self, t: &Trajectory) -> Result<PastScores> {
        let s = self.score_pair(&self.pair(t)?, true)?;
        if ![s.grad_last, s.grad_latent, s.grad_all, s.loss].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("sample {}", t.id())));
        }
        Ok(s)
    }
}

/// AE or MAE reconstruction error; MAE averages over `n_masks` seeded masks
/// shared by all samples.
#[derive(Clone, Debug)]
pub struct ReconScorer<'a> {
    pub model: &'a AutoEncoder,
    masks: Vec<Vec<bool>>,
}

impl<'a> ReconScorer<'a> {
    pub fn new(model: &'a AutoEncoder, n_masks: usize, seed: u64) -> Result<Self> {
        let n = model.config.encoder.n_past;
        let masks = if model.config.masked {
            if n_masks == 0 {
                return Err(Error::Invalid("masked scoring needs at least one mask".into()));
            }
            (0..n_masks)
                .map(|r| random_mask(n, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x3a5c, r as u64]))))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self { model, masks })
    }

    pub fn score(&self, t: &Trajectory) -> Result<f64> {
        let n = self.model.config.encoder.n_past;
        let s = recon_sample(&resample_linear(&history(t, n)?, n)?, n)?;
        let v = if self.masks.is_empty() {
            self.model.recon_error(&s, None)?
        } else {
            let mut acc = 0.0;
            for m in &self.masks {
                acc += self.model.recon_error(&s, Some(m))?;
            }
            acc / self.masks.len() as f64
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("reconstruction error of sample {}", t.id())));
        }
        Ok(v)
    }
}

fn label_of(t: &Trajectory) -> ShiftKind {
    t.label.as_ref().map_or(ShiftKind::InDistribution, |l| l.kind)
}

/// Scores every trajectory with every requested past-decoder variant, in
/// corpus order (variants innermost). Parallel across samples.
pub fn score_corpus_past(scorer: &PastScorer, corpus: &[Trajectory], variants: &[ScoreVariant]) -> Result<Vec<ScoredSample>> {
    let need_params = variants.contains(&ScoreVariant::GradAll);
    let rows = corpus
        .par_iter()
        .map(|t| {
            let s = if need_params {
                scorer.score_all(t)?
            } else {
                let s = scorer.score_pair(&scorer.pair(t)?, false)?;
                if ![s.grad_last, s.grad_latent, s.loss].iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteGradient(format!("sample {}", t.id())));
                }
                s
            };
            variants
                .iter()
                .map(|&v| {
                    Ok(ScoredSample {
                        sample_id: t.id(),
                        variant: v,
                        score: s
                            .get(v)
                            .ok_or_else(|| Error::Invalid(format!("{v} is not a past-decoder score")))?,
                        label: label_of(t),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn score_corpus_recon(scorer: &ReconScorer, corpus: &[Trajectory]) -> Result<Vec<ScoredSample>> {
    let variant = if scorer.model.config.masked {
        ScoreVariant::MaeRecon
    } else {
        ScoreVariant::AeRecon
    };
    corpus
        .par_iter()
        .map(|t| {
            Ok(ScoredSample {
                sample_id: t.id(),
                variant,
                score: scorer.score(t)?,
                label: label_of(t),
            })
        })
        .collect()
}

/// Mean wall-clock milliseconds of one `grad_last` call (sequential).
pub fn time_grad_last(scorer: &PastScorer, corpus: &[Trajectory]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Invalid("no samples to time".into()));
    }
    let t0 = Instant::now();
    for t in corpus {
        scorer.score(t, ScoreVariant::GradLast)?;
    }
    Ok(t0.elapsed().as_secs_f64() * 1e3 / corpus.len() as f64)
}

pub fn labels_of(corpus: &[Trajectory]) -> Vec<ShiftKind> {
    corpus.iter().map(label_of).collect()
}
