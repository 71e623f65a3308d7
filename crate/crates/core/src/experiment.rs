//! End-to-end experiment drivers: corpus partitioning, the four training
//! phases, scoring every variant on a held-out test set, and the episode
//! monitor benchmark. The CLI stages call the same building blocks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{IsoForest, IsoForestConfig, KdeModel};
use crate::error::{Error, Result};
use crate::eval::{evaluate_scores, run_monitor, MonitorConfig, MonitorSummary, ResultRecord};
use crate::models::{
    forecast_pair, past_pair, recon_sample, AutoEncoder, AutoEncoderConfig, Encoder, EncoderArch, EncoderConfig,
    Forecaster, MdnConfig, MdnDecoder, Pair, ReconSample,
};
use crate::score::{
    history, history_input, score_corpus_past, score_corpus_recon, time_grad_last, PastScorer, ReconScorer,
    ScoreVariant, ScoredSample,
};
use crate::synthgen::{derive_seed, gen_episodes, gen_trajectories, Episode, EpisodeConfig, Outcome, Range, ScenarioConfig};
use crate::traj::{build_split, resample_linear, ShiftKind, SplitRule, SplitSpec, ThresholdPolicy, Trajectory};
use crate::train::{train_past_decoder, train_primary, train_recon, TrainConfig, TrainReport};

/// Architecture knobs shared by every model of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelsConfig {
    pub arch: EncoderArch,
    pub enc_width: usize,
    pub enc_depth: usize,
    pub latent: usize,
    pub pos_scale: f64,
    pub ctx_scale: f64,
    pub dec_width: usize,
    /// Hidden layers of the decoder trunk; `h_L` is the last one's output.
    pub dec_depth: usize,
    pub k: usize,
    pub var_floor: f64,
    pub ae_width: usize,
    pub ae_depth: usize,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            arch: EncoderArch::Mlp,
            enc_width: 64,
            enc_depth: 2,
            latent: 16,
            pos_scale: 10.0,
            ctx_scale: 10.0,
            dec_width: 64,
            dec_depth: 2,
            k: 3,
            var_floor: 1e-4,
            ae_width: 64,
            ae_depth: 2,
        }
    }
}

impl ModelsConfig {
    pub fn encoder(&self, n_past: usize, ctx_dim: usize) -> EncoderConfig {
        EncoderConfig {
            arch: self.arch,
            n_past,
            ctx_dim,
            width: self.enc_width,
            depth: self.enc_depth,
            latent: self.latent,
            pos_scale: self.pos_scale,
            ctx_scale: self.ctx_scale,
        }
    }

    pub fn decoder(&self, horizon: usize) -> MdnConfig {
        MdnConfig {
            width: self.dec_width,
            depth: self.dec_depth,
            k: self.k,
            pos_scale: self.pos_scale,
            var_floor: self.var_floor,
            ..MdnConfig::new(self.latent, horizon)
        }
    }

    pub fn autoencoder(&self, n_past: usize, ctx_dim: usize, masked: bool) -> AutoEncoderConfig {
        AutoEncoderConfig {
            width: self.ae_width,
            depth: self.ae_depth,
            ..AutoEncoderConfig::new(self.encoder(n_past, ctx_dim), masked)
        }
    }
}

/// Width of the per-step context rows of a corpus (0 if absent).
pub fn context_dim(corpus: &[Trajectory]) -> Result<usize> {
    let dim = |t: &Trajectory| t.context.as_ref().and_then(|c| c.first()).map_or(0, |r| r.len());
    let d = corpus.first().map_or(0, dim);
    if let Some(t) = corpus.iter().find(|t| dim(t) != d) {
        return Err(Error::Shape {
            op: "corpus",
            detail: format!("sample {} has context width {}, expected {d}", t.id(), dim(t)),
        });
    }
    Ok(d)
}

/// Train / validation / test partition of a labeled corpus. Training and
/// validation contain in-distribution samples only; the test set holds the
/// remaining in-distribution samples followed by every shifted one.
#[derive(Clone, Debug, Default)]
pub struct Datasets {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    /// Threshold the split rule applied.
    pub threshold: f64,
}

impl Datasets {
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        m.insert("train".into(), self.train.len());
        m.insert("val".into(), self.val.len());
        for t in &self.test {
            let k = t.label.as_ref().map_or(ShiftKind::InDistribution, |l| l.kind);
            *m.entry(format!("test_{}", k.as_str())).or_insert(0) += 1;
        }
        m
    }
}

pub fn partition(
    corpus: &[Trajectory],
    rule: SplitRule,
    policy: &ThresholdPolicy,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<Datasets> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::Invalid(format!(
            "need positive train/val fractions summing below 1, got {train_frac} + {val_frac}"
        )));
    }
    let split = build_split(corpus, rule, policy)?;
    let mut id = split.train;
    id.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xda7a])));
    let n_train = (id.len() as f64 * train_frac).round() as usize;
    let n_val = (id.len() as f64 * val_frac).round() as usize;
    let test_id = id.split_off(n_train + n_val);
    let val = id.split_off(n_train);
    if id.is_empty() || val.is_empty() || test_id.is_empty() {
        return Err(Error::EmptyClass("in-distribution"));
    }
    let mut test = test_id;
    test.extend(split.ood);
    Ok(Datasets {
        train: id,
        val,
        test,
        threshold: split.threshold,
    })
}

fn pairs<F>(corpus: &[Trajectory], f: F) -> Result<Vec<Pair>>
where
    F: Fn(&Trajectory) -> Result<Pair> + Sync,
{
    corpus.par_iter().map(&f).collect()
}

/// Phase 1: encoder and primary decoder trained jointly to forecast the
/// `horizon` points after an `n_past` history.
pub fn fit_primary(
    train: &[Trajectory],
    val: &[Trajectory],
    n_past: usize,
    horizon: usize,
    models: &ModelsConfig,
    cfg: &TrainConfig,
) -> Result<(Forecaster, TrainReport)> {
    let ec = models.encoder(n_past, context_dim(train)?);
    let mut f = Forecaster {
        encoder: Encoder::new(ec.clone(), derive_seed(cfg.seed, &[1, 0]))?,
        decoder: MdnDecoder::new(models.decoder(horizon), derive_seed(cfg.seed, &[1, 1]))?,
    };
    let pt = pairs(train, |t| forecast_pair(t, n_past, horizon, &ec))?;
    let pv = pairs(val, |t| forecast_pair(t, n_past, horizon, &ec))?;
    let report = train_primary(&mut f, &pt, &pv, cfg)?;
    Ok((f, report))
}

/// Phase 2: the forecast-the-past decoder on top of the frozen encoder.
pub fn fit_past(
    encoder: &Encoder,
    train: &[Trajectory],
    val: &[Trajectory],
    split: &SplitSpec,
    models: &ModelsConfig,
    cfg: &TrainConfig,
) -> Result<(MdnDecoder, TrainReport)> {
    let mut dec = MdnDecoder::new(models.decoder(split.horizon), derive_seed(cfg.seed, &[2]))?;
    let mk = |t: &Trajectory| past_pair(&history(t, split.n_past)?, split, &encoder.config);
    let report = train_past_decoder(encoder, &mut dec, &pairs(train, mk)?, &pairs(val, mk)?, cfg)?;
    Ok((dec, report))
}

fn recon_samples(corpus: &[Trajectory], n_past: usize) -> Result<Vec<ReconSample>> {
    corpus
        .par_iter()
        .map(|t| recon_sample(&resample_linear(&history(t, n_past)?, n_past)?, n_past))
        .collect()
}

/// AE (or MAE when `masked`) over the `n_past` history, with its own encoder.
pub fn fit_recon(
    train: &[Trajectory],
    val: &[Trajectory],
    n_past: usize,
    masked: bool,
    models: &ModelsConfig,
    cfg: &TrainConfig,
) -> Result<(AutoEncoder, TrainReport)> {
    let ac = models.autoencoder(n_past, context_dim(train)?, masked);
    let mut ae = AutoEncoder::new(ac, derive_seed(cfg.seed, &[3, masked as u64]))?;
    let report = train_recon(&mut ae, &recon_samples(train, n_past)?, &recon_samples(val, n_past)?, cfg)?;
    Ok((ae, report))
}

pub fn history_latents(encoder: &Encoder, corpus: &[Trajectory], n_past: usize) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = corpus
        .par_iter()
        .map(|t| history_input(t, n_past, encoder))
        .collect::<Result<_>>()?;
    let chunks = rows
        .par_chunks(256)
        .map(|c| encoder.latents(&c.iter().map(|r| r.as_slice()).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Latent-space density baselines fitted on the training histories.
pub fn fit_latent_baselines(
    encoder: &Encoder,
    train: &[Trajectory],
    n_past: usize,
    iforest: &IsoForestConfig,
) -> Result<(KdeModel, IsoForest)> {
    let z = history_latents(encoder, train, n_past)?;
    let forest = IsoForest::fit(&z, iforest)?;
    Ok((KdeModel::fit_scott(z)?, forest))
}

fn label_kind(t: &Trajectory) -> ShiftKind {
    t.label.as_ref().map_or(ShiftKind::InDistribution, |l| l.kind)
}

pub fn score_corpus_latent(
    encoder: &Encoder,
    corpus: &[Trajectory],
    n_past: usize,
    kde: Option<&KdeModel>,
    forest: Option<&IsoForest>,
) -> Result<Vec<ScoredSample>> {
    let z = history_latents(encoder, corpus, n_past)?;
    let rows = corpus
        .par_iter()
        .zip(z.par_iter())
        .map(|(t, z)| {
            let mut out = Vec::new();
            if let Some(k) = kde {
                out.push((ScoreVariant::Kde, k.score(z)?));
            }
            if let Some(f) = forest {
                out.push((ScoreVariant::Iforest, f.score(z)?));
            }
            Ok(out
                .into_iter()
                .map(|(variant, score)| ScoredSample {
                    sample_id: t.id(),
                    variant,
                    score,
                    label: label_kind(t),
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Every trained artifact of one offline benchmark.
#[derive(Clone, Debug)]
pub struct TrainedModels {
    pub forecaster: Forecaster,
    pub past: MdnDecoder,
    pub ae: Option<AutoEncoder>,
    pub mae: Option<AutoEncoder>,
    pub kde: Option<KdeModel>,
    pub iforest: Option<IsoForest>,
    pub reports: BTreeMap<String, TrainReport>,
}

/// Scores `corpus` with every requested variant; rows are grouped by
/// variant family, each in corpus order.
pub fn score_all_variants(
    m: &TrainedModels,
    corpus: &[Trajectory],
    split: &SplitSpec,
    variants: &[ScoreVariant],
    n_masks: usize,
    mask_seed: u64,
) -> Result<Vec<ScoredSample>> {
    let mut rows = Vec::new();
    let past: Vec<ScoreVariant> = variants.iter().copied().filter(|v| v.uses_past_decoder()).collect();
    if !past.is_empty() {
        let scorer = PastScorer::new(&m.forecaster.encoder, &m.past, *split)?;
        rows.extend(score_corpus_past(&scorer, corpus, &past)?);
    }
    for (v, model) in [(ScoreVariant::AeRecon, &m.ae), (ScoreVariant::MaeRecon, &m.mae)] {
        if variants.contains(&v) {
            let model = model
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("{v} requested but no model was trained")))?;
            rows.extend(score_corpus_recon(&ReconScorer::new(model, n_masks, mask_seed)?, corpus)?);
        }
    }
    let kde = variants.contains(&ScoreVariant::Kde).then_some(m.kde.as_ref()).flatten();
    let forest = variants.contains(&ScoreVariant::Iforest).then_some(m.iforest.as_ref()).flatten();
    if variants.contains(&ScoreVariant::Kde) && kde.is_none() || variants.contains(&ScoreVariant::Iforest) && forest.is_none() {
        return Err(Error::Invalid("latent baseline requested but not fitted".into()));
    }
    if kde.is_some() || forest.is_some() {
        rows.extend(score_corpus_latent(&m.forecaster.encoder, corpus, split.n_past, kde, forest)?);
    }
    Ok(rows)
}

/// Offline shift benchmark: generate, split by a behavior rule, train,
/// score the held-out test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub name: String,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub rule: SplitRule,
    pub policy: ThresholdPolicy,
    pub train_frac: f64,
    pub val_frac: f64,
    /// Past split over the observed history (`n_past` = scenario history).
    pub past_horizon: usize,
    pub models: ModelsConfig,
    pub primary: TrainConfig,
    pub past: TrainConfig,
    pub recon: TrainConfig,
    pub variants: Vec<ScoreVariant>,
    pub n_masks: usize,
    pub iforest: IsoForestConfig,
    /// Samples timed for mean `grad_last` latency; 0 disables timing so
    /// results stay byte-reproducible.
    pub timing_samples: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self::turn_left(0)
    }
}

impl BenchmarkConfig {
    /// Left turns withheld from training; straight and right-turning
    /// histories are in-distribution.
    pub fn turn_left(seed: u64) -> Self {
        let mut scenario = ScenarioConfig::turn_benchmark(seed);
        for c in &mut scenario.classes {
            c.count = match c.label {
                ShiftKind::InDistribution => 3000,
                ShiftKind::TurnLeft => 1500,
                _ => 1500,
            };
        }
        // A narrow noise band: with per-sample noise spanning decades, the
        // learned variance tracks noise level and dominates every score.
        scenario.noise_std = Range::new(0.08, 0.12);
        let train = |epochs| TrainConfig {
            epochs,
            batch_size: 64,
            lr: 1e-3,
            seed,
            patience: 5,
        };
        Self {
            name: "turn_left".into(),
            seed,
            scenario,
            rule: SplitRule::TurnLeft,
            policy: ThresholdPolicy {
                history_len: Some(20),
                ..ThresholdPolicy::default()
            },
            train_frac: 0.4,
            val_frac: 0.1,
            past_horizon: 10,
            models: ModelsConfig::default(),
            primary: train(30),
            past: train(30),
            recon: train(30),
            variants: ScoreVariant::ALL.to_vec(),
            n_masks: 8,
            iforest: IsoForestConfig {
                seed,
                ..IsoForestConfig::default()
            },
            timing_samples: 0,
        }
    }

    /// Median-speed split: histories faster than the corpus median are shifted.
    pub fn over_speed(seed: u64) -> Self {
        let mut cfg = Self::turn_left(seed);
        cfg.name = "over_speed".into();
        cfg.scenario = ScenarioConfig::speed_benchmark(seed);
        cfg.rule = SplitRule::OverSpeed;
        cfg.train_frac = 0.6;
        cfg.val_frac = 0.1;
        cfg
    }

    pub fn split(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.scenario.n_past, self.past_horizon)
    }

    pub fn partition(&self, corpus: &[Trajectory]) -> Result<Datasets> {
        partition(corpus, self.rule, &self.policy, self.train_frac, self.val_frac, self.seed)
    }

    fn needs(&self, v: ScoreVariant) -> bool {
        self.variants.contains(&v)
    }

    /// Runs every training phase the requested variants need.
    pub fn train(&self, data: &Datasets) -> Result<TrainedModels> {
        let n = self.scenario.n_past;
        let split = self.split()?;
        let mut reports = BTreeMap::new();
        let (forecaster, r) = fit_primary(&data.train, &data.val, n, self.scenario.horizon, &self.models, &self.primary)?;
        reports.insert("primary".to_string(), r);
        let (past, r) = fit_past(&forecaster.encoder, &data.train, &data.val, &split, &self.models, &self.past)?;
        reports.insert("past".to_string(), r);
        let mut recon = |masked: bool, v: ScoreVariant| -> Result<Option<AutoEncoder>> {
            if !self.needs(v) {
                return Ok(None);
            }
            let (m, r) = fit_recon(&data.train, &data.val, n, masked, &self.models, &self.recon)?;
            reports.insert(m.kind().to_string(), r);
            Ok(Some(m))
        };
        let ae = recon(false, ScoreVariant::AeRecon)?;
        let mae = recon(true, ScoreVariant::MaeRecon)?;
        let (kde, iforest) = if self.needs(ScoreVariant::Kde) || self.needs(ScoreVariant::Iforest) {
            let (k, f) = fit_latent_baselines(&forecaster.encoder, &data.train, n, &self.iforest)?;
            (Some(k), Some(f))
        } else {
            (None, None)
        };
        Ok(TrainedModels {
            forecaster,
            past,
            ae,
            mae,
            kde,
            iforest,
            reports,
        })
    }

    pub fn score(&self, models: &TrainedModels, corpus: &[Trajectory]) -> Result<Vec<ScoredSample>> {
        score_all_variants(models, corpus, &self.split()?, &self.variants, self.n_masks, derive_seed(self.seed, &[0x5c]))
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkOutput {
    pub counts: BTreeMap<String, usize>,
    pub models: TrainedModels,
    pub scores: Vec<ScoredSample>,
    pub records: Vec<ResultRecord>,
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutput> {
    let corpus = gen_trajectories(&cfg.scenario)?;
    let data = cfg.partition(&corpus)?;
    let models = cfg.train(&data)?;
    let scores = cfg.score(&models, &data.test)?;
    let mut records = evaluate_scores(&cfg.name, &scores)?;
    if cfg.timing_samples > 0 {
        let scorer = PastScorer::new(&models.forecaster.encoder, &models.past, cfg.split()?)?;
        let n = cfg.timing_samples.min(data.test.len());
        let ms = time_grad_last(&scorer, &data.test[..n])?;
        for r in records.iter_mut().filter(|r| r.variant == ScoreVariant::GradLast.as_str()) {
            r.mean_score_ms = Some(ms);
        }
    }
    Ok(BenchmarkOutput {
        counts: data.counts(),
        models,
        scores,
        records,
    })
}

/// Online monitoring benchmark on generated highway episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorBenchmarkConfig {
    pub name: String,
    pub seed: u64,
    /// Evaluation episodes; training and calibration sets reuse it with
    /// derived seeds and safe-only counts.
    pub episodes: EpisodeConfig,
    pub n_train_episodes: usize,
    pub n_calib_episodes: usize,
    /// Stride between training windows cut from each safe episode.
    pub window_stride: usize,
    pub val_frac: f64,
    pub horizon: usize,
    pub past_horizon: usize,
    pub monitor: MonitorConfig,
    pub models: ModelsConfig,
    pub primary: TrainConfig,
    pub past: TrainConfig,
}

impl Default for MonitorBenchmarkConfig {
    fn default() -> Self {
        Self::highway(0)
    }
}

impl MonitorBenchmarkConfig {
    pub fn highway(seed: u64) -> Self {
        let train = |epochs| TrainConfig {
            epochs,
            batch_size: 64,
            lr: 1e-3,
            seed,
            patience: 5,
        };
        Self {
            name: "highway_monitor".into(),
            seed,
            episodes: EpisodeConfig {
                seed,
                ..EpisodeConfig::default()
            },
            n_train_episodes: 200,
            n_calib_episodes: 100,
            window_stride: 2,
            val_frac: 0.1,
            horizon: 5,
            past_horizon: 5,
            monitor: MonitorConfig::default(),
            models: ModelsConfig::default(),
            primary: train(30),
            past: train(30),
        }
    }

    pub fn split(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.monitor.n_past, self.past_horizon)
    }

    fn safe_set(&self, stream: u64, n: usize) -> EpisodeConfig {
        EpisodeConfig {
            seed: derive_seed(self.seed, &[0xe9, stream]),
            n_safe: n,
            n_collision: 0,
            ..self.episodes.clone()
        }
    }

    /// (training, calibration, evaluation) episode sets.
    pub fn generate(&self) -> Result<(Vec<Episode>, Vec<Episode>, Vec<Episode>)> {
        Ok((
            gen_episodes(&self.safe_set(1, self.n_train_episodes))?,
            gen_episodes(&self.safe_set(2, self.n_calib_episodes))?,
            gen_episodes(&self.episodes)?,
        ))
    }

    /// Trains the forecaster and past decoder on windows of safe episodes.
    pub fn train(&self, episodes: &[Episode]) -> Result<(Forecaster, MdnDecoder, BTreeMap<String, TrainReport>)> {
        let n = self.monitor.n_past;
        let win = n + self.horizon;
        let stride = self.window_stride.max(1);
        let safe: Vec<&Episode> = episodes.iter().filter(|e| e.outcome == Outcome::Safe).collect();
        let n_val = ((safe.len() as f64 * self.val_frac).round() as usize).clamp(1, safe.len().saturating_sub(1));
        let cut = |eps: &[&Episode]| -> Result<Vec<Trajectory>> {
            let mut out = Vec::new();
            for e in eps {
                let t = e.ego_trajectory();
                let mut s = 0;
                while s + win <= t.len() {
                    out.push(t.window(s, s + win)?);
                    s += stride;
                }
            }
            Ok(out)
        };
        let (val_eps, train_eps) = safe.split_at(n_val);
        let (train, val) = (cut(train_eps)?, cut(val_eps)?);
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyClass("safe training window"));
        }
        let mut reports = BTreeMap::new();
        let (f, r) = fit_primary(&train, &val, n, self.horizon, &self.models, &self.primary)?;
        reports.insert("primary".to_string(), r);
        let (d, r) = fit_past(&f.encoder, &train, &val, &self.split()?, &self.models, &self.past)?;
        reports.insert("past".to_string(), r);
        Ok((f, d, reports))
    }

    pub fn run(&self, encoder: &Encoder, decoder: &MdnDecoder, calib: &[Episode], eval: &[Episode]) -> Result<MonitorSummary> {
        let scorer = PastScorer::new(encoder, decoder, self.split()?)?;
        let f = |t: &Trajectory| scorer.score(t, ScoreVariant::GradLast);
        run_monitor(&f, calib, eval, &self.monitor)
    }
}

pub fn monitor_record(name: &str, s: &MonitorSummary) -> ResultRecord {
    ResultRecord {
        experiment: name.to_string(),
        variant: ScoreVariant::GradLast.to_string(),
        auroc: s.auroc.unwrap_or(f64::NAN),
        n_pos: s.n_collision,
        n_neg: s.n_safe,
        threshold: Some(s.threshold),
        detection_rate: s.detection_rate,
        false_alarm_rate: s.false_alarm_rate,
        mean_score_ms: None,
    }
}

#[derive(Clone, Debug)]
pub struct MonitorOutput {
    pub forecaster: Forecaster,
    pub past: MdnDecoder,
    pub reports: BTreeMap<String, TrainReport>,
    pub summary: MonitorSummary,
    pub record: ResultRecord,
}

pub fn run_monitor_benchmark(cfg: &MonitorBenchmarkConfig) -> Result<MonitorOutput> {
    let (train, calib, eval) = cfg.generate()?;
    let (forecaster, past, reports) = cfg.train(&train)?;
    let summary = cfg.run(&forecaster.encoder, &past, &calib, &eval)?;
    let record = monitor_record(&cfg.name, &summary);
    Ok(MonitorOutput {
        forecaster,
        past,
        reports,
        summary,
        record,
    })
}
