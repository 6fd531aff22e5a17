//! `key = value` config files and the layered run configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::denoise::{DenoiseConfig, Method, RelabelSchedule};
use crate::error::{Error, Result};
use crate::model::OptimizerConfig;

/// Keys accepted in a config file. They match the long flag names.
pub const KNOWN_KEYS: &[&str] = &[
    "method",
    "R",
    "O",
    "sigma2",
    "v",
    "drop-max",
    "drop-warmup",
    "lr",
    "batch",
    "dim",
    "epochs",
    "seeds",
    "noise-rate",
    "K",
    "negatives",
    "patience",
    "schedule",
];

/// Parsed `key = value` lines. `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    source: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                source_name: source.to_string(),
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(parse_err(format!("unknown key {key:?}")));
            }
            if entries.insert(key.to_string(), (idx + 1, value.to_string())).is_some() {
                return Err(parse_err(format!("duplicate key {key:?}")));
            }
        }
        Ok(ConfigFile {
            source: source.to_string(),
            entries,
        })
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, value)) => value.parse().map(Some).map_err(|e| Error::Parse {
                source_name: self.source.clone(),
                line: *line,
                message: format!("{key}: {e}"),
            }),
        }
    }
}

/// Comma-separated list, as used by `--K` and the sweep grids.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<T>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(List)
    }
}

impl FromStr for RelabelSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "progressive" => Ok(RelabelSchedule::Progressive),
            "fixed" => Ok(RelabelSchedule::Fixed),
            other => Err(format!("unknown schedule {other:?} (expected progressive or fixed)")),
        }
    }
}

/// Flag values as given on the command line; `None` means "not given".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub method: Option<Method>,
    pub relabel_ratio: Option<f64>,
    pub saturation: Option<u32>,
    pub sigma2: Option<f64>,
    pub window: Option<usize>,
    pub drop_max: Option<f64>,
    pub drop_warmup: Option<u32>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub dim: Option<usize>,
    pub epochs: Option<u32>,
    pub seeds: Option<u64>,
    pub noise_rate: Option<f64>,
    pub ks: Option<Vec<usize>>,
    pub negatives: Option<usize>,
    pub patience: Option<u32>,
    pub schedule: Option<RelabelSchedule>,
}

/// Fully resolved settings of one invocation, recorded in its manifest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub out: PathBuf,
    pub method: Method,
    pub noise_rate: f64,
    pub optimizer: OptimizerConfig,
    pub denoise: DenoiseConfig,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
}

fn layer<T>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    Ok(match flag {
        Some(v) => v,
        None => file.get(key)?.unwrap_or(default),
    })
}

impl RunConfig {
    /// Flags override file entries, which override the built-in defaults
    /// (lr 0.001, batch 1024, k 32, one negative per positive).
    pub fn resolve(input: PathBuf, out: PathBuf, flags: Overrides, file: &ConfigFile) -> Result<Self> {
        let d = DenoiseConfig::default();
        let o = OptimizerConfig::default();
        let denoise = DenoiseConfig {
            window: layer(flags.window, file, "v", d.window)?,
            sigma2: layer(flags.sigma2, file, "sigma2", d.sigma2)?,
            relabel_ratio: layer(flags.relabel_ratio, file, "R", d.relabel_ratio)?,
            relabel_saturation: layer(flags.saturation, file, "O", d.relabel_saturation)?,
            drop_max: layer(flags.drop_max, file, "drop-max", d.drop_max)?,
            drop_warmup: layer(flags.drop_warmup, file, "drop-warmup", d.drop_warmup)?,
            epochs: layer(flags.epochs, file, "epochs", d.epochs)?,
            batch_size: layer(flags.batch, file, "batch", d.batch_size)?,
            negatives_per_positive: layer(flags.negatives, file, "negatives", d.negatives_per_positive)?,
            patience: layer(flags.patience, file, "patience", d.patience)?,
            schedule: layer(flags.schedule, file, "schedule", d.schedule)?,
            seed: 0,
        };
        let optimizer = OptimizerConfig {
            learning_rate: layer(flags.lr, file, "lr", o.learning_rate)?,
            embedding_dim: layer(flags.dim, file, "dim", o.embedding_dim)?,
            ..o
        };
        let ks = match flags.ks {
            Some(ks) => ks,
            None => file.get::<List<usize>>("K")?.map(|l| l.0).unwrap_or_else(|| vec![5, 10, 20]),
        };
        let seed_count = layer(flags.seeds, file, "seeds", 1)?;
        let cfg = RunConfig {
            input,
            out,
            method: layer(flags.method, file, "method", Method::Dcf)?,
            noise_rate: layer(flags.noise_rate, file, "noise-rate", 0.0)?,
            optimizer,
            denoise,
            ks,
            seeds: (0..seed_count).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.denoise.validate()?;
        self.optimizer.validate()?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config(format!("invalid K list {:?}", self.ks)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!("noise rate {} outside [0, 1)", self.noise_rate)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(flags: Overrides, file: &str) -> Result<RunConfig> {
        let file = ConfigFile::parse(file, "test.conf")?;
        RunConfig::resolve("in".into(), "out".into(), flags, &file)
    }

    #[test]
    fn defaults_match_reference_settings() {
        let cfg = resolve(Overrides::default(), "").unwrap();
        assert_eq!(cfg.optimizer.learning_rate, 0.001);
        assert_eq!(cfg.denoise.batch_size, 1024);
        assert_eq!(cfg.optimizer.embedding_dim, 32);
        assert_eq!(cfg.denoise.negatives_per_positive, 1);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.ks, vec![5, 10, 20]);
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = "# comment\nR = 0.27\nlr = 0.01   # trailing\nK = 5,10\n";
        let flags = Overrides { relabel_ratio: Some(0.03), ..Default::default() };
        let cfg = resolve(flags, file).unwrap();
        assert_eq!(cfg.denoise.relabel_ratio, 0.03);
        assert_eq!(cfg.optimizer.learning_rate, 0.01);
        assert_eq!(cfg.ks, vec![5, 10]);
        assert_eq!(cfg.denoise.sigma2, 0.01);
    }

    #[test]
    fn bad_files_report_lines() {
        let err = ConfigFile::parse("R = 0.1\nbogus = 3\n", "x.conf").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = ConfigFile::parse("R 0.1\n", "x.conf").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = ConfigFile::parse("R = 1\nR = 2\n", "x.conf").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = resolve(Overrides::default(), "lr = fast\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(resolve(Overrides { sigma2: Some(1.5), ..Default::default() }, "").is_err());
        assert!(resolve(Overrides { ks: Some(vec![]), ..Default::default() }, "").is_err());
        assert!(resolve(Overrides { seeds: Some(0), ..Default::default() }, "").is_err());
        assert!(resolve(Overrides::default(), "method = sgd\n").is_err());
    }

    #[test]
    fn lists_parse() {
        assert_eq!("5, 10,20".parse::<List<usize>>().unwrap(), List(vec![5, 10, 20]));
        assert!("5,x".parse::<List<usize>>().is_err());
    }
}
