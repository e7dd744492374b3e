//! `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use zfda_core::align::Transform;
use zfda_core::experiment::DeskConfig;
use zfda_core::nn::{Topology, TrainConfig};
use zfda_core::sam::{Allocation, SamHyper, SamSchedule, VGradMode};
use zfda_core::Digest;

/// Every accepted key with its default, in echo order.
const KEYS: &[(&str, &str)] = &[
    ("output_dir", "zfda-out"),
    ("dataset", "synthetic"),
    ("data_path", ""),
    ("labels_path", ""),
    ("full_resolution", "false"),
    ("synthetic_count", "4000"),
    ("data_seed", "0"),
    ("image_size", "16"),
    ("image_channels", "3"),
    ("conv_channels", "8,16"),
    ("hidden", "128"),
    ("bottleneck", "128"),
    ("model_seed", "0"),
    ("split_seed", "0"),
    ("pretrain_classes", "0-5"),
    ("domain_classes", "6-9"),
    ("test_fraction", "0.2"),
    ("batch_size", "32"),
    ("pretrain_epochs", "100"),
    ("pretrain_lr", "3"),
    ("adapt_epochs", "10"),
    ("adapt_lr", "0.3"),
    ("gamma", "0.01"),
    ("alpha_s", "10000"),
    ("alpha_v", "0.3"),
    ("sam_epochs", "30"),
    ("v_grad_mode", "dense"),
    ("allocation", "linear"),
    ("transform", "va:30"),
    ("transforms", "va:30,vp:0.2,vc:1.8,vh:60"),
    ("gammas", "0.0003,0.001,0.003,0.01"),
    ("seeds", "0,1,2"),
    ("seed", "0"),
    ("shared_size", "256"),
    ("tuning_iterations", "8"),
    ("tuning_lr", "3"),
    ("equalizer_epochs", "30"),
    ("equalizer_lr", "1"),
    ("checkpoint", ""),
    ("pristine_digest", ""),
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Cifar10,
    Cifar100,
    /// Images and labels stored as `.zft` tensors.
    Tensor,
}

/// Raw key/value pairs after file parsing and overrides.
#[derive(Debug, Clone)]
pub struct RawConfig {
    values: BTreeMap<&'static str, String>,
}

impl RawConfig {
    pub fn defaults() -> Self {
        Self {
            values: KEYS.iter().map(|&(k, v)| (k, v.to_string())).collect(),
        }
    }

    fn key(name: &str) -> Result<&'static str> {
        KEYS.iter()
            .find(|(k, _)| *k == name)
            .map(|(k, _)| *k)
            .ok_or_else(|| ConfigError(format!("unknown config key {name:?}")))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = Self::key(key.trim())?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    /// `key=value` as given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        match pair.split_once('=') {
            Some((k, v)) => self.set(k, v),
            None => err(format!("override {pair:?} is not key=value")),
        }
    }

    pub fn parse_str(&mut self, text: &str, origin: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("{origin}:{}: expected `key = value`", no + 1));
            };
            self.set(k, v).map_err(|e| ConfigError(format!("{origin}:{}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        self.parse_str(&text, &path.display().to_string())
    }

    fn get(&self, key: &'static str) -> &str {
        &self.values[key]
    }

    /// The resolved configuration in `key = value` form, one key per line.
    pub fn echo(&self) -> String {
        KEYS.iter().map(|(k, _)| format!("{k} = {}\n", self.values[k])).collect()
    }
}

fn parse<T: std::str::FromStr>(raw: &RawConfig, key: &'static str) -> Result<T> {
    raw.get(key)
        .parse()
        .map_err(|_| ConfigError(format!("{key}: cannot parse {:?}", raw.get(key))))
}

fn ranged<T>(raw: &RawConfig, key: &'static str, ok: impl Fn(&T) -> bool, what: &str) -> Result<T>
where
    T: std::str::FromStr + Copy,
{
    let v = parse(raw, key)?;
    if !ok(&v) {
        return err(format!("{key} = {} must be {what}", raw.get(key)));
    }
    Ok(v)
}

fn list<T: std::str::FromStr>(raw: &RawConfig, key: &'static str) -> Result<Vec<T>> {
    raw.get(key)
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| ConfigError(format!("{key}: cannot parse {s:?}"))))
        .collect()
}

/// Comma-separated labels or inclusive ranges such as `0-5,8`.
fn classes(raw: &RawConfig, key: &'static str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for part in raw.get(key).split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || ConfigError(format!("{key}: cannot parse {part:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u32, u32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return err(format!("{key} is empty"));
    }
    Ok(out)
}

fn optional_path(raw: &RawConfig, key: &'static str) -> Option<PathBuf> {
    let v = raw.get(key);
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn positive(v: &f32) -> bool {
    v.is_finite() && *v > 0.0
}

fn ratio(v: &f64) -> bool {
    *v > 0.0 && *v <= 1.0
}

/// Typed, range-checked settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub raw: RawConfig,
    pub output_dir: PathBuf,
    pub dataset: DatasetKind,
    pub data_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub full_resolution: bool,
    pub synthetic_count: usize,
    pub data_seed: u64,
    pub desk: DeskConfig,
    pub transform: Transform,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub pristine_digest: Option<Digest>,
}

impl Settings {
    pub fn resolve(raw: RawConfig) -> Result<Self> {
        let dataset = match raw.get("dataset") {
            "synthetic" => DatasetKind::Synthetic,
            "cifar10" => DatasetKind::Cifar10,
            "cifar100" => DatasetKind::Cifar100,
            "zft" => DatasetKind::Tensor,
            other => return err(format!("dataset = {other} must be synthetic, cifar10, cifar100 or zft")),
        };
        let batch_size = ranged(&raw, "batch_size", |&b: &usize| b >= 1, "at least 1")?;
        let train = |epochs_key, lr_key, min_epochs: usize| -> Result<TrainConfig> {
            Ok(TrainConfig {
                epochs: ranged(&raw, epochs_key, |&e: &usize| e >= min_epochs, &format!("at least {min_epochs}"))?,
                lr: ranged(&raw, lr_key, positive, "positive")?,
                batch_size,
            })
        };
        let topology = Topology {
            image_channels: ranged(&raw, "image_channels", |&c: &usize| c >= 1, "at least 1")?,
            image_size: ranged(&raw, "image_size", |&c: &usize| c >= 2, "at least 2")?,
            conv_channels: list(&raw, "conv_channels")?,
            hidden: ranged(&raw, "hidden", |&c: &usize| c >= 1, "at least 1")?,
            bottleneck: ranged(&raw, "bottleneck", |&c: &usize| c >= 1, "at least 1")?,
        };
        topology.config().map_err(|e| ConfigError(format!("topology: {e}")))?;
        let transforms: Vec<Transform> = list(&raw, "transforms")?;
        if transforms.is_empty() {
            return err("transforms is empty");
        }
        let gammas: Vec<f64> = list(&raw, "gammas")?;
        if gammas.is_empty() || !gammas.iter().all(ratio) {
            return err("gammas must be a nonempty list of ratios in (0, 1]");
        }
        let seeds: Vec<u64> = list(&raw, "seeds")?;
        if seeds.is_empty() {
            return err("seeds is empty");
        }
        let nonneg = |v: &f32| v.is_finite() && *v >= 0.0;
        let desk = DeskConfig {
            topology,
            model_seed: parse(&raw, "model_seed")?,
            split_seed: parse(&raw, "split_seed")?,
            pretrain_classes: classes(&raw, "pretrain_classes")?,
            domain_classes: classes(&raw, "domain_classes")?,
            test_fraction: ranged(&raw, "test_fraction", |&f: &f64| f > 0.0 && f < 1.0, "in (0, 1)")?,
            pretrain: train("pretrain_epochs", "pretrain_lr", 1)?,
            adapt: train("adapt_epochs", "adapt_lr", 0)?,
            sam: SamHyper {
                gamma: ranged(&raw, "gamma", ratio, "in (0, 1]")?,
                alpha_s: ranged(&raw, "alpha_s", nonneg, "non-negative")?,
                alpha_v: ranged(&raw, "alpha_v", nonneg, "non-negative")?,
                v_grad_mode: parse::<VGradMode>(&raw, "v_grad_mode")?,
                allocation: parse::<Allocation>(&raw, "allocation")?,
            },
            sam_schedule: SamSchedule {
                epochs: ranged(&raw, "sam_epochs", |&e: &usize| e >= 1, "at least 1")?,
                batch_size,
            },
            transforms,
            gammas,
            seeds,
            shared_size: ranged(&raw, "shared_size", |&n: &usize| n >= 1, "at least 1")?,
            tuning_iterations: parse(&raw, "tuning_iterations")?,
            tuning_lr: ranged(&raw, "tuning_lr", positive, "positive")?,
            equalizer: train("equalizer_epochs", "equalizer_lr", 0)?,
        };
        desk.validate().map_err(|e| ConfigError(e.to_string()))?;
        let pristine_digest = match raw.get("pristine_digest") {
            "" => None,
            s => Some(Digest::from_hex(s).ok_or_else(|| ConfigError(format!("pristine_digest: {s:?} is not 64 hex digits")))?),
        };
        Ok(Self {
            output_dir: PathBuf::from(raw.get("output_dir")),
            dataset,
            data_path: optional_path(&raw, "data_path"),
            labels_path: optional_path(&raw, "labels_path"),
            full_resolution: parse(&raw, "full_resolution")?,
            synthetic_count: ranged(&raw, "synthetic_count", |&n: &usize| n >= 2, "at least 2")?,
            data_seed: parse(&raw, "data_seed")?,
            transform: parse(&raw, "transform")?,
            seed: parse(&raw, "seed")?,
            checkpoint: optional_path(&raw, "checkpoint"),
            pristine_digest,
            desk,
            raw,
        })
    }
}
