//! Flat `section.key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gsm_forge_core::attack::{AttackConfig, Schedule};
use gsm_forge_core::defense::{JpegConfig, Rounding};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CodecSection {
    pub hidden_channels: usize,
    pub latent_channels: usize,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// 0 disables learning-rate halving.
    pub plateau_patience: usize,
    /// Multiplier on the first encoder layer and last decoder layer at init.
    pub outer_init_gain: f64,
    /// Multiplier on the latent-producing layer (inverse on its decoder mirror) at init.
    pub latent_init_gain: f64,
    pub train_dir: Option<PathBuf>,
    /// Random crops drawn per training image.
    pub crops_per_image: usize,
    pub crop: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub source_dir: Option<PathBuf>,
    pub crop: usize,
    pub pairs: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSection {
    pub epsilon: f64,
    pub steps: usize,
    pub alpha0: f64,
    pub decay_factor: f64,
    pub decay_is_divisor: bool,
    /// `None` means `steps / 5`.
    pub period: Option<usize>,
    pub schedule: Schedule,
    pub seeds: Vec<u64>,
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub success_threshold_psnr: f64,
    pub eta0_multiple: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    pub steps: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DefenseSection {
    pub enabled: bool,
    pub jpeg: JpegConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub emit_plots: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub codec: CodecSection,
    pub data: DataSection,
    pub attack: AttackSection,
    pub sweep: SweepSection,
    pub defense: DefenseSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            codec: CodecSection {
                hidden_channels: 32,
                latent_channels: 16,
                lambda: 3000.0,
                lr: 7e-5,
                epochs: 150,
                batch_size: 1,
                seed: 0,
                plateau_patience: 0,
                outer_init_gain: 1.0,
                latent_init_gain: 10.0,
                train_dir: None,
                crops_per_image: 4,
                crop: 64,
            },
            data: DataSection { source_dir: None, crop: 64, pairs: 8, seed: 0 },
            attack: AttackSection {
                epsilon: 0.08,
                steps: 2000,
                alpha0: 0.01,
                decay_factor: 0.5,
                decay_is_divisor: false,
                period: None,
                schedule: Schedule::PeriodicGeometric,
                seeds: vec![0, 1, 2],
                pairs: Vec::new(),
                success_threshold_psnr: 22.0,
                eta0_multiple: 3.0,
            },
            sweep: SweepSection { epsilons: vec![0.06, 0.08, 0.10], steps: vec![500, 2000, 5000] },
            defense: DefenseSection { enabled: false, jpeg: JpegConfig::default() },
            output: OutputSection { directory: PathBuf::from("out"), emit_plots: false },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| HarnessError::config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::config(format!("{key}: expected true/false, got {v:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Splits the text into `(line number, key, value)` entries.
pub fn parse_entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::ConfigSyntax { line: i + 1, reason: "expected `section.key = value`".into() })?;
        let (k, v) = (k.trim(), v.trim());
        if !k.contains('.') || k.starts_with('.') || k.ends_with('.') {
            return Err(HarnessError::ConfigSyntax { line: i + 1, reason: format!("key {k:?} lacks a section") });
        }
        if let Some(prev) = seen.insert(k.to_string(), i + 1) {
            return Err(HarnessError::ConfigSyntax { line: i + 1, reason: format!("{k} already set on line {prev}") });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn from_str_at(text: &str, base: &Path) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let path = |v: &str| if Path::new(v).is_absolute() { PathBuf::from(v) } else { base.join(v) };
        for (line, key, v) in parse_entries(text)? {
            let k = key.as_str();
            let v = v.as_str();
            match k {
                "codec.hidden_channels" => c.codec.hidden_channels = parse(k, v)?,
                "codec.latent_channels" => c.codec.latent_channels = parse(k, v)?,
                "codec.lambda" => c.codec.lambda = parse(k, v)?,
                "codec.lr" => c.codec.lr = parse(k, v)?,
                "codec.epochs" => c.codec.epochs = parse(k, v)?,
                "codec.batch_size" => c.codec.batch_size = parse(k, v)?,
                "codec.seed" => c.codec.seed = parse(k, v)?,
                "codec.plateau_patience" => c.codec.plateau_patience = parse(k, v)?,
                "codec.outer_init_gain" => c.codec.outer_init_gain = parse(k, v)?,
                "codec.latent_init_gain" => c.codec.latent_init_gain = parse(k, v)?,
                "codec.train_dir" => c.codec.train_dir = Some(path(v)),
                "codec.crops_per_image" => c.codec.crops_per_image = parse(k, v)?,
                "codec.crop" => c.codec.crop = parse(k, v)?,
                "data.source_dir" => c.data.source_dir = Some(path(v)),
                "data.crop" => c.data.crop = parse(k, v)?,
                "data.pairs" => c.data.pairs = parse(k, v)?,
                "data.seed" => c.data.seed = parse(k, v)?,
                "attack.epsilon" => c.attack.epsilon = parse(k, v)?,
                "attack.steps" => c.attack.steps = parse(k, v)?,
                "attack.alpha0" => c.attack.alpha0 = parse(k, v)?,
                "attack.decay_factor" => c.attack.decay_factor = parse(k, v)?,
                "attack.decay_is_divisor" => c.attack.decay_is_divisor = parse_bool(k, v)?,
                "attack.period" => c.attack.period = Some(parse(k, v)?),
                "attack.schedule" => c.attack.schedule = v.parse().map_err(|e| HarnessError::config(format!("{k}: {e}")))?,
                "attack.seeds" => c.attack.seeds = parse_list(k, v)?,
                "attack.pairs" => {
                    c.attack.pairs = v
                        .split(';')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|p| {
                            p.split_once(':')
                                .map(|(a, b)| (path(a.trim()), path(b.trim())))
                                .ok_or_else(|| HarnessError::config(format!("{k}: expected source:target, got {p:?}")))
                        })
                        .collect::<Result<_>>()?
                }
                "attack.success_threshold_psnr" => c.attack.success_threshold_psnr = parse(k, v)?,
                "attack.eta0_multiple" => c.attack.eta0_multiple = parse(k, v)?,
                "sweep.epsilons" => c.sweep.epsilons = parse_list(k, v)?,
                "sweep.steps" => c.sweep.steps = parse_list(k, v)?,
                "defense.enabled" => c.defense.enabled = parse_bool(k, v)?,
                "defense.quality" => c.defense.jpeg.quality = parse(k, v)?,
                "defense.rounding" => {
                    c.defense.jpeg.rounding = v.parse::<Rounding>().map_err(|e| HarnessError::config(format!("{k}: {e}")))?
                }
                "defense.soft_sharpness" => c.defense.jpeg.soft_sharpness = parse(k, v)?,
                "output.directory" => c.output.directory = path(v),
                "output.emit_plots" => c.output.emit_plots = parse_bool(k, v)?,
                _ => return Err(HarnessError::ConfigSyntax { line, reason: format!("unknown key {k}") }),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str_at(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::config(m));
        if self.codec.hidden_channels == 0 || self.codec.latent_channels == 0 {
            return bad("codec channel counts must be >= 1".into());
        }
        if self.data.crop == 0 || !self.data.crop.is_multiple_of(8) || !self.codec.crop.is_multiple_of(4) || self.codec.crop == 0 {
            return bad(format!("crop sizes must be positive, data.crop divisible by 8 (got {})", self.data.crop));
        }
        if self.attack.seeds.is_empty() {
            return bad("attack.seeds must list at least one seed".into());
        }
        self.attack_config(self.attack.seeds[0]).validate()?;
        self.defense.jpeg.validate()?;
        for p in self.codec.train_dir.iter().chain(&self.data.source_dir) {
            if !p.is_dir() {
                return bad(format!("directory {} does not exist", p.display()));
            }
        }
        for (a, b) in &self.attack.pairs {
            for p in [a, b] {
                if !p.is_file() {
                    return bad(format!("pair image {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    pub fn attack_config(&self, seed: u64) -> AttackConfig {
        let a = &self.attack;
        AttackConfig {
            epsilon: a.epsilon,
            steps: a.steps,
            alpha0: a.alpha0,
            decay_factor: a.decay_factor,
            decay_is_divisor: a.decay_is_divisor,
            period: a.period.unwrap_or((a.steps / 5).max(1)),
            seed,
            schedule: a.schedule,
        }
    }

    /// Every field, one sorted `key = value` line each; the hash input.
    pub fn canonical(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        let c = &self.codec;
        m.insert("codec.hidden_channels", c.hidden_channels.to_string());
        m.insert("codec.latent_channels", c.latent_channels.to_string());
        m.insert("codec.lambda", c.lambda.to_string());
        m.insert("codec.lr", c.lr.to_string());
        m.insert("codec.epochs", c.epochs.to_string());
        m.insert("codec.batch_size", c.batch_size.to_string());
        m.insert("codec.seed", c.seed.to_string());
        m.insert("codec.plateau_patience", c.plateau_patience.to_string());
        m.insert("codec.outer_init_gain", c.outer_init_gain.to_string());
        m.insert("codec.latent_init_gain", c.latent_init_gain.to_string());
        m.insert("codec.train_dir", opt(&c.train_dir));
        m.insert("codec.crops_per_image", c.crops_per_image.to_string());
        m.insert("codec.crop", c.crop.to_string());
        let d = &self.data;
        m.insert("data.source_dir", opt(&d.source_dir));
        m.insert("data.crop", d.crop.to_string());
        m.insert("data.pairs", d.pairs.to_string());
        m.insert("data.seed", d.seed.to_string());
        let a = &self.attack;
        m.insert("attack.epsilon", a.epsilon.to_string());
        m.insert("attack.steps", a.steps.to_string());
        m.insert("attack.alpha0", a.alpha0.to_string());
        m.insert("attack.decay_factor", a.decay_factor.to_string());
        m.insert("attack.decay_is_divisor", a.decay_is_divisor.to_string());
        m.insert("attack.period", a.period.unwrap_or((a.steps / 5).max(1)).to_string());
        m.insert("attack.schedule", a.schedule.as_str().to_string());
        m.insert("attack.seeds", join(&a.seeds));
        let pairs: Vec<String> = a.pairs.iter().map(|(s, t)| format!("{}:{}", s.display(), t.display())).collect();
        m.insert("attack.pairs", pairs.join(";"));
        m.insert("attack.success_threshold_psnr", a.success_threshold_psnr.to_string());
        m.insert("attack.eta0_multiple", a.eta0_multiple.to_string());
        m.insert("sweep.epsilons", join(&self.sweep.epsilons));
        m.insert("sweep.steps", join(&self.sweep.steps));
        m.insert("defense.enabled", self.defense.enabled.to_string());
        m.insert("defense.quality", self.defense.jpeg.quality.to_string());
        m.insert("defense.rounding", self.defense.jpeg.rounding.as_str().to_string());
        m.insert("defense.soft_sharpness", self.defense.jpeg.soft_sharpness.to_string());
        m.insert("output.directory", self.output.directory.display().to_string());
        m.insert("output.emit_plots", self.output.emit_plots.to_string());
        m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
