//! Layered configuration. The experiment preset (built for the chosen seed)
//! is overlaid by the config file, then `--set key.path=value` pairs, then
//! explicit flags. Layers merge as JSON trees; unknown keys are rejected so a
//! typo cannot silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use shiftgrad::experiment::{BenchmarkConfig, MonitorBenchmarkConfig};

use crate::error::{CliError, Result};

pub const OUT_ENV: &str = "SHIFTGRAD_OUT";
pub const DEFAULT_OUT: &str = "shiftgrad-out";
pub const EXPERIMENTS: [&str; 2] = ["turn_left", "over_speed"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Offline benchmark preset: `turn_left` or `over_speed`.
    pub experiment: String,
    pub seed: u64,
    /// Output root; the flag and `SHIFTGRAD_OUT` take precedence.
    pub out: Option<PathBuf>,
    pub benchmark: BenchmarkConfig,
    pub monitor: MonitorBenchmarkConfig,
}

impl ExperimentConfig {
    pub fn preset(experiment: &str, seed: u64) -> Result<Self> {
        let benchmark = match experiment {
            "turn_left" => BenchmarkConfig::turn_left(seed),
            "over_speed" => BenchmarkConfig::over_speed(seed),
            other => {
                return Err(CliError::Config(format!(
                    "unknown experiment `{other}` (expected one of {})",
                    EXPERIMENTS.join(", ")
                )))
            }
        };
        Ok(Self {
            experiment: experiment.to_string(),
            seed,
            out: None,
            benchmark,
            monitor: MonitorBenchmarkConfig::highway(seed),
        })
    }
}

/// Command-line overrides, applied last.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub file: Option<PathBuf>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub experiment: Option<String>,
    pub out: Option<PathBuf>,
}

fn read_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let parsed: toml::Value =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(serde_json::to_value(parsed)?)
}

fn parse_set(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{s}`")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad key `{key}`")));
    }
    // JSON literals (numbers, booleans, arrays, quoted strings) or a bare string.
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((path, value))
}

/// Overlays `top` onto `base`; every key in `top` must already exist in
/// `base` unless `base` is null at that point. A table keyed by indices
/// (`[benchmark.scenario.classes.0]`) patches single array elements.
fn merge(base: &mut Value, top: Value, at: &str) -> Result<()> {
    let here = |k: &str| if at.is_empty() { k.to_string() } else { format!("{at}.{k}") };
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| CliError::Config(format!("unknown config key `{}`", here(&k))))?;
                merge(slot, v, &here(&k))?;
            }
            Ok(())
        }
        (Value::Array(b), Value::Object(t)) => {
            for (k, v) in t {
                let slot = k
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| b.get_mut(i))
                    .ok_or_else(|| CliError::Config(format!("`{}`: no such array element", here(&k))))?;
                merge(slot, v, &here(&k))?;
            }
            Ok(())
        }
        (b, t) => {
            *b = t;
            Ok(())
        }
    }
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<()> {
    let mut cur = root;
    for (i, seg) in path.iter().enumerate() {
        let here = path[..=i].join(".");
        cur = match cur {
            Value::Object(m) => m
                .get_mut(seg)
                .ok_or_else(|| CliError::Config(format!("unknown config key `{here}`")))?,
            Value::Array(a) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| CliError::Config(format!("`{here}`: expected an array index")))?;
                let len = a.len();
                a.get_mut(idx)
                    .ok_or_else(|| CliError::Config(format!("`{here}`: index out of range (len {len})")))?
            }
            _ => return Err(CliError::Config(format!("`{here}`: not a table"))),
        };
    }
    if cur.is_object() && value.is_object() {
        merge(cur, value, &path.join("."))
    } else {
        *cur = value;
        Ok(())
    }
}

fn top_level<T: serde::de::DeserializeOwned>(
    key: &str,
    flag: Option<T>,
    sets: &[(Vec<String>, Value)],
    file: &Value,
) -> Result<Option<T>> {
    if flag.is_some() {
        return Ok(flag);
    }
    let from_set = sets.iter().rev().find(|(p, _)| p.len() == 1 && p[0] == key).map(|(_, v)| v.clone());
    match from_set.or_else(|| file.get(key).cloned()) {
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| CliError::Config(format!("`{key}`: {e}"))),
        None => Ok(None),
    }
}

pub fn resolve(o: &Overrides) -> Result<ExperimentConfig> {
    let file = match &o.file {
        Some(p) => read_file(p)?,
        None => Value::Object(Map::new()),
    };
    let sets = o.sets.iter().map(|s| parse_set(s)).collect::<Result<Vec<_>>>()?;
    let experiment: String =
        top_level("experiment", o.experiment.clone(), &sets, &file)?.unwrap_or_else(|| "turn_left".into());
    let seed: u64 = top_level("seed", o.seed, &sets, &file)?.unwrap_or(0);

    let mut tree = serde_json::to_value(ExperimentConfig::preset(&experiment, seed)?)?;
    merge(&mut tree, file, "")?;
    for (path, value) in sets {
        set_path(&mut tree, &path, value)?;
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_value(tree).map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
    cfg.experiment = experiment;
    cfg.seed = seed;
    if let Some(out) = &o.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

/// Output root: flag, then environment, then config, then the default.
pub fn out_root(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_preset() {
        let c = resolve(&Overrides::default()).unwrap();
        assert_eq!(c, ExperimentConfig::preset("turn_left", 0).unwrap());
    }

    #[test]
    fn seed_flag_rebuilds_the_preset() {
        let c = resolve(&Overrides {
            seed: Some(7),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(c.benchmark.scenario.seed, 7);
        assert_eq!(c.benchmark.primary.seed, 7);
        assert_eq!(c.monitor.episodes.seed, 7);
    }

    #[test]
    fn file_tables_patch_array_elements() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.toml");
        std::fs::write(&f, "[benchmark.scenario.classes.1]\ncount = 7\n").unwrap();
        let c = resolve(&Overrides {
            file: Some(f.clone()),
            ..Overrides::default()
        })
        .unwrap();
        let preset = ExperimentConfig::preset("turn_left", 0).unwrap();
        assert_eq!(c.benchmark.scenario.classes[1].count, 7);
        assert_eq!(c.benchmark.scenario.classes[0], preset.benchmark.scenario.classes[0]);
        std::fs::write(&f, "[benchmark.scenario.classes.9]\ncount = 7\n").unwrap();
        let err = resolve(&Overrides {
            file: Some(f),
            ..Overrides::default()
        })
        .unwrap_err();
        assert_eq!(err.code(), "E_CONFIG");
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.toml");
        std::fs::write(
            &f,
            "experiment = \"over_speed\"\nseed = 3\n[benchmark.primary]\nepochs = 4\nlr = 0.01\n",
        )
        .unwrap();
        let c = resolve(&Overrides {
            file: Some(f.clone()),
            sets: vec!["benchmark.primary.epochs=9".into(), "benchmark.scenario.classes.0.count=11".into()],
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(c.experiment, "over_speed");
        assert_eq!(c.benchmark.name, "over_speed");
        assert_eq!(c.seed, 3);
        assert_eq!(c.benchmark.primary.epochs, 9);
        assert_eq!(c.benchmark.primary.lr, 0.01);
        assert_eq!(c.benchmark.scenario.classes[0].count, 11);

        let c = resolve(&Overrides {
            file: Some(f),
            experiment: Some("turn_left".into()),
            seed: Some(1),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(c.benchmark.name, "turn_left");
        assert_eq!(c.seed, 1);
        assert_eq!(c.benchmark.primary.epochs, 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in ["benchmark.primry.epochs=3", "nope=1", "benchmark.scenario.classes.9.count=1"] {
            let e = resolve(&Overrides {
                sets: vec![bad.into()],
                ..Overrides::default()
            })
            .unwrap_err();
            assert_eq!(e.code(), "E_CONFIG", "{bad}: {e}");
        }
        let e = resolve(&Overrides {
            experiment: Some("turn_up".into()),
            ..Overrides::default()
        })
        .unwrap_err();
        assert_eq!(e.code(), "E_CONFIG");
    }

    #[test]
    fn wrong_type_rejected() {
        let e = resolve(&Overrides {
            sets: vec!["benchmark.primary.epochs=lots".into()],
            ..Overrides::default()
        })
        .unwrap_err();
        assert_eq!(e.code(), "E_CONFIG");
    }

    #[test]
    fn out_flag_beats_config() {
        let mut c = ExperimentConfig::preset("turn_left", 0).unwrap();
        c.out = Some("from-config".into());
        assert_eq!(out_root(Some(Path::new("flag")), &c), PathBuf::from("flag"));
    }
}
