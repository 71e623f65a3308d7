//! Pipeline stages. Every stage works inside `<root>/<experiment>/`:
//!
//! ```text
//! config.json  manifest.json
//! data/{corpus,train,val,test}.jsonl
//! checkpoints/{primary,past,ae,mae}.json
//! logs/train_<phase>.csv
//! scores.csv  timing.json  results.json  distributions.csv
//! ```
//!
//! The monitor uses its own directory with `data/episodes_*.jsonl`,
//! checkpoints, `results.json` and `traces.jsonl`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use log::info;
use serde::{Deserialize, Serialize};
use shiftgrad::eval::{
    evaluate_scores, export_distributions, read_results_json, write_distributions_csv, write_results_json,
    ResultRecord,
};
use shiftgrad::experiment::{
    fit_latent_baselines, fit_past, fit_primary, fit_recon, monitor_record, score_corpus_latent,
};
use shiftgrad::io::{read_corpus, read_jsonl, sha256_file, write_corpus, write_jsonl};
use shiftgrad::models::{AutoEncoder, Checkpoint, Forecaster, MdnDecoder};
use shiftgrad::score::{
    read_scores_csv, score_corpus_past, score_corpus_recon, time_grad_last, write_scores_csv, PastScorer,
    ReconScorer, ScoreVariant, ScoredSample,
};
use shiftgrad::synthgen::{derive_seed, gen_trajectories, Episode};
use shiftgrad::traj::{ShiftKind, Trajectory};
use shiftgrad::train::{write_log_csv, TrainReport};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

pub const DATA_FILES: [&str; 4] = ["data/corpus.jsonl", "data/train.jsonl", "data/val.jsonl", "data/test.jsonl"];
pub const EPISODE_FILES: [&str; 3] = ["data/episodes_train.jsonl", "data/episodes_calib.jsonl", "data/episodes_eval.jsonl"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Phase {
    Primary,
    Past,
    Ae,
    Mae,
    /// Every phase the configured variants need, in order.
    All,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Primary => "primary",
            Phase::Past => "past",
            Phase::Ae => "ae",
            Phase::Mae => "mae",
            Phase::All => "all",
        }
    }
}

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub root: PathBuf,
}

impl Ctx {
    pub fn bench_dir(&self) -> PathBuf {
        self.root.join(&self.cfg.benchmark.name)
    }

    pub fn monitor_dir(&self) -> PathBuf {
        self.root.join(&self.cfg.monitor.name)
    }

    fn write_config(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut resolved = self.cfg.clone();
        resolved.out = Some(self.root.clone());
        let mut s = serde_json::to_string_pretty(&resolved)?;
        s.push('\n');
        std::fs::write(dir.join("config.json"), s)?;
        Ok(())
    }
}

fn require(path: &Path, hint: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing {
            path: path.to_path_buf(),
            hint,
        })
    }
}

/// Reads a data file after checking it against the manifest.
fn load_data(dir: &Path, manifest: &Manifest, rel: &str) -> Result<Vec<Trajectory>> {
    let p = dir.join(rel);
    require(&p, "run `shiftgrad generate` first")?;
    manifest.check(dir, rel)?;
    Ok(read_corpus(&p, None)?)
}

fn label_counts(corpus: &[Trajectory]) -> BTreeMap<&'static str, usize> {
    let mut m = BTreeMap::new();
    for t in corpus {
        *m.entry(t.label.as_ref().map_or(ShiftKind::InDistribution, |l| l.kind).as_str())
            .or_insert(0) += 1;
    }
    m
}

fn write_episode_sets(dir: &Path, sets: [&[Episode]; 3]) -> Result<()> {
    for (rel, eps) in EPISODE_FILES.iter().zip(sets) {
        write_jsonl(&dir.join(rel), eps)?;
    }
    Ok(())
}

fn write_datasets(ctx: &Ctx, dir: &Path) -> Result<BTreeMap<String, usize>> {
    let b = &ctx.cfg.benchmark;
    let corpus = gen_trajectories(&b.scenario)?;
    let data = b.partition(&corpus)?;
    for (rel, set) in DATA_FILES.iter().zip([&corpus, &data.train, &data.val, &data.test]) {
        write_corpus(&dir.join(rel), set)?;
    }
    let mut counts: BTreeMap<String, usize> =
        label_counts(&corpus).into_iter().map(|(k, v)| (format!("corpus_{k}"), v)).collect();
    counts.extend(data.counts());
    Ok(counts)
}

/// Generates the corpus and its train/val/test partition (and, with
/// `episodes`, the monitor episode sets). `verify` regenerates into a scratch
/// directory and compares hashes with the recorded manifest instead.
pub fn generate(ctx: &Ctx, verify: bool, episodes: bool) -> Result<()> {
    let dir = ctx.bench_dir();
    if verify {
        return verify_generated(ctx, &dir, episodes);
    }
    ctx.write_config(&dir)?;
    let counts = write_datasets(ctx, &dir)?;
    let mut manifest = Manifest::load(&dir)?;
    for rel in DATA_FILES {
        manifest.record(&dir, rel)?;
    }
    manifest.save(&dir)?;
    for (k, v) in &counts {
        println!("{k}: {v}");
    }
    println!("wrote {}", dir.join("data").display());
    if episodes {
        let mdir = ctx.monitor_dir();
        ctx.write_config(&mdir)?;
        let (train, calib, eval) = ctx.cfg.monitor.generate()?;
        write_episode_sets(&mdir, [&train, &calib, &eval])?;
        let mut m = Manifest::load(&mdir)?;
        for rel in EPISODE_FILES {
            m.record(&mdir, rel)?;
        }
        m.save(&mdir)?;
        println!(
            "episodes: train {} calib {} eval {} -> {}",
            train.len(),
            calib.len(),
            eval.len(),
            mdir.join("data").display()
        );
    }
    Ok(())
}

fn compare_regenerated(dir: &Path, scratch: &Path, files: &[&str]) -> Result<()> {
    let manifest = Manifest::load(dir)?;
    for rel in files {
        let want = manifest
            .files
            .get(*rel)
            .ok_or_else(|| CliError::Manifest(format!("{rel}: no manifest entry; run `shiftgrad generate` first")))?;
        let got = sha256_file(&scratch.join(rel))?;
        if &got != want {
            return Err(CliError::Manifest(format!(
                "{rel}: regenerated sha256 {got} differs from manifest {want}"
            )));
        }
        manifest.check(dir, rel)?;
        println!("ok {rel} {got}");
    }
    Ok(())
}

fn verify_generated(ctx: &Ctx, dir: &Path, episodes: bool) -> Result<()> {
    let scratch = dir.join(".verify");
    let res = (|| -> Result<()> {
        write_datasets(ctx, &scratch)?;
        compare_regenerated(dir, &scratch, &DATA_FILES)?;
        if episodes {
            let (train, calib, eval) = ctx.cfg.monitor.generate()?;
            write_episode_sets(&scratch, [&train, &calib, &eval])?;
            compare_regenerated(&ctx.monitor_dir(), &scratch, &EPISODE_FILES)?;
        }
        Ok(())
    })();
    let _ = std::fs::remove_dir_all(&scratch);
    res?;
    println!("manifest verified");
    Ok(())
}

fn ck_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("checkpoints").join(format!("{name}.json"))
}

fn save_phase(dir: &Path, manifest: &mut Manifest, phase: &str, ck: &Checkpoint, report: &TrainReport) -> Result<()> {
    ck.save(&ck_path(dir, phase))?;
    write_log_csv(&dir.join("logs").join(format!("train_{phase}.csv")), &report.log)?;
    let h = manifest.record(dir, &format!("checkpoints/{phase}.json"))?;
    manifest.save(dir)?;
    let last = report.log.last();
    println!(
        "{phase}: {} epochs{}, best epoch {} val nll {:.6}, train nll {:.6}; checkpoint sha256 {h}",
        report.log.len(),
        if report.stopped_early { " (early stop)" } else { "" },
        report.best_epoch,
        report.best_val,
        last.map_or(f64::NAN, |l| l.train_nll),
    );
    Ok(())
}

fn load_forecaster(dir: &Path, manifest: &Manifest) -> Result<Forecaster> {
    let p = ck_path(dir, "primary");
    require(&p, "run `shiftgrad train --phase primary` first")?;
    manifest.check(dir, "checkpoints/primary.json")?;
    Ok(Forecaster::from_checkpoint(&Checkpoint::load(&p)?)?)
}

fn load_past(dir: &Path, manifest: &Manifest, encoder_hash: &str) -> Result<MdnDecoder> {
    let p = ck_path(dir, "past");
    require(&p, "run `shiftgrad train --phase past` first")?;
    manifest.check(dir, "checkpoints/past.json")?;
    let ck = Checkpoint::load(&p)?;
    let trained_on: String = ck.config_field("encoder_hash")?;
    if trained_on != encoder_hash {
        return Err(CliError::Manifest(format!(
            "past decoder was trained on encoder {trained_on}, primary checkpoint holds {encoder_hash}"
        )));
    }
    Ok(MdnDecoder::from_checkpoint(&ck)?)
}

fn load_recon(dir: &Path, manifest: &Manifest, name: &str) -> Result<AutoEncoder> {
    let p = ck_path(dir, name);
    require(&p, "run `shiftgrad train --phase ae|mae` first")?;
    manifest.check(dir, &format!("checkpoints/{name}.json"))?;
    Ok(AutoEncoder::from_checkpoint(&Checkpoint::load(&p)?)?)
}

pub fn train(ctx: &Ctx, phase: Phase) -> Result<()> {
    let b = &ctx.cfg.benchmark;
    let dir = ctx.bench_dir();
    ctx.write_config(&dir)?;
    let mut manifest = Manifest::load(&dir)?;
    let train = load_data(&dir, &manifest, "data/train.jsonl")?;
    let val = load_data(&dir, &manifest, "data/val.jsonl")?;
    let n = b.scenario.n_past;
    let phases: Vec<Phase> = match phase {
        Phase::All => {
            let mut v = vec![Phase::Primary, Phase::Past];
            if b.variants.contains(&ScoreVariant::AeRecon) {
                v.push(Phase::Ae);
            }
            if b.variants.contains(&ScoreVariant::MaeRecon) {
                v.push(Phase::Mae);
            }
            v
        }
        p => vec![p],
    };
    for p in phases {
        info!("training phase {}", p.name());
        match p {
            Phase::Primary => {
                let (f, r) = fit_primary(&train, &val, n, b.scenario.horizon, &b.models, &b.primary)?;
                save_phase(&dir, &mut manifest, "primary", &f.to_checkpoint(), &r)?;
            }
            Phase::Past => {
                let f = load_forecaster(&dir, &manifest)?;
                let before = f.encoder.params.hash();
                let split = b.split()?;
                let (d, r) = fit_past(&f.encoder, &train, &val, &split, &b.models, &b.past)?;
                let after = f.encoder.params.hash();
                let on_disk = Forecaster::from_checkpoint(&Checkpoint::load(&ck_path(&dir, "primary"))?)?
                    .encoder
                    .params
                    .hash();
                if before != after || before != on_disk {
                    return Err(shiftgrad::Error::EncoderMutated { before, after }.into());
                }
                println!("encoder hash {before} unchanged by past-decoder training");
                let extra = serde_json::json!({ "split": split });
                save_phase(&dir, &mut manifest, "past", &d.to_checkpoint(&before, extra), &r)?;
            }
            Phase::Ae | Phase::Mae => {
                let masked = p == Phase::Mae;
                let (m, r) = fit_recon(&train, &val, n, masked, &b.models, &b.recon)?;
                save_phase(&dir, &mut manifest, m.kind(), &m.to_checkpoint(), &r)?;
            }
            Phase::All => unreachable!("expanded above"),
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub samples: usize,
    pub mean_score_ms: f64,
}

fn checkpoint_hashes(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let cdir = dir.join("checkpoints");
    if cdir.exists() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&cdir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for p in entries {
            out.insert(p.file_name().unwrap_or_default().to_string_lossy().into_owned(), sha256_file(&p)?);
        }
    }
    Ok(out)
}

/// Scores `corpus` (default: the test split) with `variants` (default: the
/// configured list) and writes `scores.csv`.
pub fn score(ctx: &Ctx, variants: Option<Vec<ScoreVariant>>, corpus: Option<PathBuf>) -> Result<()> {
    let b = &ctx.cfg.benchmark;
    let dir = ctx.bench_dir();
    ctx.write_config(&dir)?;
    let manifest = Manifest::load(&dir)?;
    let mut variants = variants.unwrap_or_else(|| b.variants.clone());
    variants.sort();
    variants.dedup();
    if variants.is_empty() {
        return Err(CliError::Config("no score variants requested".into()));
    }
    let corpus = match corpus {
        Some(p) => {
            require(&p, "pass an existing corpus file")?;
            read_corpus(&p, None)?
        }
        None => load_data(&dir, &manifest, "data/test.jsonl")?,
    };
    let hashes_before = checkpoint_hashes(&dir)?;
    let split = b.split()?;
    let n = b.scenario.n_past;

    let needs_encoder = variants.iter().any(|v| v.uses_past_decoder() || matches!(v, ScoreVariant::Kde | ScoreVariant::Iforest));
    let forecaster = needs_encoder.then(|| load_forecaster(&dir, &manifest)).transpose()?;
    let mut rows: Vec<ScoredSample> = Vec::new();
    let mut timing = None;
    if let Some(f) = &forecaster {
        let enc_hash = f.encoder.params.hash();
        let past: Vec<ScoreVariant> = variants.iter().copied().filter(|v| v.uses_past_decoder()).collect();
        if !past.is_empty() {
            let d = load_past(&dir, &manifest, &enc_hash)?;
            let scorer = PastScorer::new(&f.encoder, &d, split)?;
            rows.extend(score_corpus_past(&scorer, &corpus, &past)?);
            if b.timing_samples > 0 && past.contains(&ScoreVariant::GradLast) {
                let k = b.timing_samples.min(corpus.len());
                timing = Some(Timing {
                    samples: k,
                    mean_score_ms: time_grad_last(&scorer, &corpus[..k])?,
                });
            }
        }
    }
    for (v, name) in [(ScoreVariant::AeRecon, "ae"), (ScoreVariant::MaeRecon, "mae")] {
        if variants.contains(&v) {
            let m = load_recon(&dir, &manifest, name)?;
            let scorer = ReconScorer::new(&m, b.n_masks, derive_seed(b.seed, &[0x5c]))?;
            rows.extend(score_corpus_recon(&scorer, &corpus)?);
        }
    }
    let want_kde = variants.contains(&ScoreVariant::Kde);
    let want_if = variants.contains(&ScoreVariant::Iforest);
    if want_kde || want_if {
        // The latent baselines are cheap and deterministic, so they are
        // refitted on the training histories rather than checkpointed.
        let f = forecaster.as_ref().expect("encoder loaded for latent variants");
        let train = load_data(&dir, &manifest, "data/train.jsonl")?;
        let (kde, forest) = fit_latent_baselines(&f.encoder, &train, n, &b.iforest)?;
        rows.extend(score_corpus_latent(
            &f.encoder,
            &corpus,
            n,
            want_kde.then_some(&kde),
            want_if.then_some(&forest),
        )?);
    }

    let hashes_after = checkpoint_hashes(&dir)?;
    if hashes_before != hashes_after {
        return Err(CliError::Manifest("a checkpoint changed during scoring".into()));
    }
    write_scores_csv(&dir.join("scores.csv"), &rows)?;
    let timing_path = dir.join("timing.json");
    match &timing {
        Some(t) => {
            std::fs::write(&timing_path, serde_json::to_string_pretty(t)? + "\n")?;
            println!("grad_last: {:.4} ms per sample over {} samples", t.mean_score_ms, t.samples);
        }
        None if timing_path.exists() => std::fs::remove_file(&timing_path)?,
        None => {}
    }
    println!(
        "scored {} samples x {} variants = {} rows -> {}",
        corpus.len(),
        variants.len(),
        rows.len(),
        dir.join("scores.csv").display()
    );
    println!("checkpoint hashes unchanged by scoring ({} files)", hashes_after.len());
    Ok(())
}

pub fn format_records(records: &[ResultRecord]) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut s = String::new();
    let _ = writeln!(
        s,
        "| experiment | variant | auroc | n_pos | n_neg | threshold | detection | false_alarm | ms/score |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for r in records {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {} | {} | {} | {} | {} | {} |",
            r.experiment,
            r.variant,
            r.auroc,
            r.n_pos,
            r.n_neg,
            opt(r.threshold),
            opt(r.detection_rate),
            opt(r.false_alarm_rate),
            opt(r.mean_score_ms)
        );
    }
    s
}

/// AUROC per variant from `scores.csv`, plus the distribution export.
pub fn eval(ctx: &Ctx, scores: Option<PathBuf>) -> Result<()> {
    let dir = ctx.bench_dir();
    let path = scores.unwrap_or_else(|| dir.join("scores.csv"));
    require(&path, "run `shiftgrad score` first")?;
    let rows = read_scores_csv(&path)?;
    let mut records = evaluate_scores(&ctx.cfg.benchmark.name, &rows)?;
    let timing_path = path.with_file_name("timing.json");
    if timing_path.exists() {
        let t: Timing = serde_json::from_slice(&std::fs::read(&timing_path)?)?;
        for r in records.iter_mut().filter(|r| r.variant == ScoreVariant::GradLast.as_str()) {
            r.mean_score_ms = Some(t.mean_score_ms);
        }
    }
    std::fs::create_dir_all(&dir)?;
    write_results_json(&dir.join("results.json"), &records)?;
    write_distributions_csv(&dir.join("distributions.csv"), &export_distributions(&rows)?)?;
    print!("{}", format_records(&records));
    Ok(())
}

fn load_or_generate_episodes(ctx: &Ctx, dir: &Path) -> Result<(Vec<Episode>, Vec<Episode>, Vec<Episode>)> {
    let mut manifest = Manifest::load(dir)?;
    if EPISODE_FILES.iter().all(|r| dir.join(r).exists()) {
        let mut sets = Vec::new();
        for rel in EPISODE_FILES {
            manifest.check(dir, rel)?;
            sets.push(read_jsonl::<Episode>(&dir.join(rel))?);
        }
        let eval = sets.pop().expect("three sets");
        let calib = sets.pop().expect("three sets");
        let train = sets.pop().expect("three sets");
        return Ok((train, calib, eval));
    }
    let (train, calib, eval) = ctx.cfg.monitor.generate()?;
    write_episode_sets(dir, [&train, &calib, &eval])?;
    for rel in EPISODE_FILES {
        manifest.record(dir, rel)?;
    }
    manifest.save(dir)?;
    Ok((train, calib, eval))
}

/// Trains on safe episodes, calibrates on held-out safe episodes and
/// monitors the evaluation set.
pub fn monitor(ctx: &Ctx) -> Result<()> {
    let m = &ctx.cfg.monitor;
    let dir = ctx.monitor_dir();
    ctx.write_config(&dir)?;
    let (train, calib, eval) = load_or_generate_episodes(ctx, &dir)?;
    let (f, d, reports) = m.train(&train)?;
    let mut manifest = Manifest::load(&dir)?;
    let enc_hash = f.encoder.params.hash();
    save_phase(&dir, &mut manifest, "primary", &f.to_checkpoint(), &reports["primary"])?;
    save_phase(
        &dir,
        &mut manifest,
        "past",
        &d.to_checkpoint(&enc_hash, serde_json::json!({ "split": m.split()? })),
        &reports["past"],
    )?;
    let before = checkpoint_hashes(&dir)?;
    let summary = m.run(&f.encoder, &d, &calib, &eval)?;
    if checkpoint_hashes(&dir)? != before || f.encoder.params.hash() != enc_hash {
        return Err(CliError::Manifest("a checkpoint changed during monitoring".into()));
    }
    let record = monitor_record(&m.name, &summary);
    write_results_json(&dir.join("results.json"), std::slice::from_ref(&record))?;
    write_jsonl(&dir.join("traces.jsonl"), &summary.traces)?;
    println!(
        "threshold {:.4} (q = {}, lead {} steps); safe {} collision {}",
        summary.threshold, m.monitor.q, summary.lead_steps, summary.n_safe, summary.n_collision
    );
    print!("{}", format_records(&[record]));
    Ok(())
}

/// Collects every `results.json` under the output root into `report.md`.
pub fn report(ctx: &Ctx) -> Result<()> {
    let mut dirs: Vec<PathBuf> = match std::fs::read_dir(&ctx.root) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("results.json").exists()).collect(),
        Err(_) => Vec::new(),
    };
    if dirs.is_empty() {
        return Err(CliError::Missing {
            path: ctx.root.join("*/results.json"),
            hint: "run `shiftgrad eval` or `shiftgrad monitor` first",
        });
    }
    dirs.sort();
    let mut records = Vec::new();
    for d in dirs {
        records.extend(read_results_json(&d.join("results.json"))?);
    }
    let table = format_records(&records);
    std::fs::write(ctx.root.join("report.md"), format!("# Results\n\n{table}"))?;
    print!("{table}");
    Ok(())
}
