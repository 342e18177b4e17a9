//! Experiment configuration files.
//!
//! A config is TOML with the sections `[data]`, `[features]`,
//! `[architecture]`, `[hebbian]`, `[plasticity]`, `[head]`, `[tasks]` and
//! `[run]`. Every key has a default, so an empty file is the desk-synthetic
//! profile. A run report (JSON) is also accepted: its embedded config is used.

use std::fs;
use std::path::{Path, PathBuf};

use htil_core::{
    ArchitectureConfig, HarnessConfig, HeadTrainConfig, HebbianParams, PlasticityConfig, SynthSpec, UpdateNorm,
};
use serde::{Deserialize, Serialize};

use crate::audio::MelSpec;
use crate::error::{Error, Result};
use crate::esc::EscSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub profile: String,
    pub data: DataConfig,
    pub features: MelSpec,
    pub architecture: ArchConfig,
    pub hebbian: HebbianConfig,
    pub plasticity: KpConfig,
    pub head: HeadConfig,
    pub tasks: TasksConfig,
    pub run: RunConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            profile: "desk-synthetic".into(),
            data: DataConfig::default(),
            features: MelSpec::default(),
            architecture: ArchConfig::default(),
            hebbian: HebbianConfig::default(),
            plasticity: KpConfig::default(),
            head: HeadConfig::default(),
            tasks: TasksConfig::default(),
            run: RunConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Esc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: Source,
    pub num_classes: usize,
    pub test_fold: u8,
    pub val_fold: u8,
    pub synthetic: SyntheticConfig,
    pub esc: EscConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: Source::Synthetic,
            num_classes: 50,
            test_fold: 1,
            val_fold: 2,
            synthetic: SyntheticConfig::default(),
            esc: EscConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub clips_per_class: usize,
    pub n_mels: usize,
    pub n_frames: usize,
    pub snr_db: f64,
    /// Dataset seed, independent of the run seeds.
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            clips_per_class: 40,
            n_mels: 16,
            n_frames: 16,
            snr_db: 6.0,
            seed: 0,
        }
    }
}

/// Paths are relative to the config file unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EscConfig {
    pub root: PathBuf,
    pub meta: PathBuf,
    pub audio_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub clip_seconds: f64,
}

impl Default for EscConfig {
    fn default() -> Self {
        Self {
            root: "data/ESC-50".into(),
            meta: "meta/esc50.csv".into(),
            audio_dir: "audio".into(),
            cache_dir: Some("data/cache".into()),
            clip_seconds: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Max-pool window and stride after every block but the last.
    pub pool: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64, 128, 256],
            kernel: 3,
            pool: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HebbianConfig {
    pub base_lr: f64,
    pub lr_min: f64,
    pub radius: f64,
    pub temperature: f64,
    pub clamp_slack: f64,
    pub batch_size: usize,
}

impl Default for HebbianConfig {
    fn default() -> Self {
        Self {
            base_lr: 1.0,
            lr_min: 1e-4,
            radius: 1.0,
            temperature: 1.0,
            clamp_slack: 0.1,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormName {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KpConfig {
    /// Used when `--kp` is not given.
    pub enabled: bool,
    pub top_fraction: f64,
    pub alpha: f64,
    pub beta: f64,
    pub interval: usize,
    pub norm: NormName,
}

impl Default for KpConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            top_fraction: 0.6,
            alpha: 0.15,
            beta: 0.1,
            interval: 1,
            norm: NormName::L1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.5,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TasksConfig {
    pub sizes: Vec<usize>,
}

impl Default for TasksConfig {
    fn default() -> Self {
        Self {
            sizes: vec![30, 5, 5, 5, 5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// First seed.
    pub seed: u64,
    /// Number of consecutive seeds.
    pub seeds: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 0, seeds: 10 }
    }
}

/// A semantic problem tied to a key, for line lookup.
struct Problem {
    section: &'static str,
    key: &'static str,
    message: String,
}

fn problem(section: &'static str, key: &'static str, message: impl Into<String>) -> Problem {
    Problem {
        section,
        key,
        message: message.into(),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = if text.trim_start().starts_with('{') {
            Self::from_report_json(&text, path)?
        } else {
            Self::parse(&text, path)?
        };
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Parses and validates TOML text; `path` is only used in messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        if let Err(p) = config.check() {
            return Err(Error::Config {
                path: path.to_path_buf(),
                line: key_line(text, p.section, p.key),
                message: format!("{}.{}: {}", p.section, p.key, p.message),
            });
        }
        Ok(config)
    }

    fn from_report_json(text: &str, path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Embedded {
            config: Config,
        }
        let embedded: Embedded = serde_json::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        embedded.config.check().map_err(|p| Error::Config {
            path: path.to_path_buf(),
            line: None,
            message: format!("{}.{}: {}", p.section, p.key, p.message),
        })?;
        Ok(embedded.config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let esc = &mut self.data.esc;
        if esc.root.is_relative() {
            esc.root = base.join(&esc.root);
        }
        if let Some(dir) = esc.cache_dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
    }

    /// Validates every field; exposed for configs built in code.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|p| Error::Invalid(format!("{}.{}: {}", p.section, p.key, p.message)))
    }

    fn check(&self) -> std::result::Result<(), Problem> {
        let d = &self.data;
        if d.num_classes == 0 {
            return Err(problem("data", "num_classes", "must be positive"));
        }
        for (key, fold) in [("test_fold", d.test_fold), ("val_fold", d.val_fold)] {
            if !(1..=5).contains(&fold) {
                return Err(problem("data", key, format!("fold {fold} outside 1..=5")));
            }
        }
        if d.test_fold == d.val_fold {
            return Err(problem("data", "val_fold", "must differ from test_fold"));
        }
        match d.source {
            Source::Synthetic => {
                let s = &d.synthetic;
                for (key, v) in [
                    ("clips_per_class", s.clips_per_class),
                    ("n_mels", s.n_mels),
                    ("n_frames", s.n_frames),
                ] {
                    if v == 0 {
                        return Err(problem("synthetic", key, "must be positive"));
                    }
                }
                if s.snr_db.is_nan() {
                    return Err(problem("synthetic", "snr_db", "must be a number"));
                }
            }
            Source::Esc => {
                if !(d.esc.clip_seconds > 0.0 && d.esc.clip_seconds.is_finite()) {
                    return Err(problem("esc", "clip_seconds", "must be positive"));
                }
                self.features
                    .validate()
                    .map_err(|e| problem("features", "n_mels", e.to_string()))?;
            }
        }

        let a = &self.architecture;
        if a.channels.is_empty() || a.channels.contains(&0) {
            return Err(problem("architecture", "channels", "need at least one layer, all widths positive"));
        }
        if a.kernel == 0 || a.kernel.is_multiple_of(2) {
            return Err(problem("architecture", "kernel", "must be odd for same padding"));
        }
        if a.pool == 0 {
            return Err(problem("architecture", "pool", "must be at least 1"));
        }
        let (h, w) = self.input_hw();
        let shrink = a.pool.pow(a.channels.len().saturating_sub(1) as u32);
        if h / shrink == 0 || w / shrink == 0 {
            return Err(problem(
                "architecture",
                "pool",
                format!("{} pooling stages of {} do not fit a {h}x{w} input", a.channels.len() - 1, a.pool),
            ));
        }

        let hb = &self.hebbian;
        self.hebbian_params()
            .validate()
            .map_err(|e| problem("hebbian", "base_lr", e.to_string()))?;
        if hb.batch_size < 2 {
            return Err(problem("hebbian", "batch_size", "must be at least 2"));
        }

        let kp = &self.plasticity;
        if !(0.0..=1.0).contains(&kp.top_fraction) {
            return Err(problem("plasticity", "top_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&kp.beta) {
            return Err(problem("plasticity", "beta", "must lie in [0, 1]"));
        }
        // Values above 1 amplify unprotected kernels; allowed as a separate profile.
        if !(kp.alpha >= 0.0 && kp.alpha.is_finite()) {
            return Err(problem("plasticity", "alpha", "must be a nonnegative number"));
        }
        if kp.interval == 0 {
            return Err(problem("plasticity", "interval", "must be at least 1 batch"));
        }

        let hd = &self.head;
        if hd.epochs == 0 {
            return Err(problem("head", "epochs", "must be positive"));
        }
        if !(hd.lr > 0.0 && hd.lr.is_finite()) {
            return Err(problem("head", "lr", "must be positive"));
        }
        if hd.batch_size == 0 {
            return Err(problem("head", "batch_size", "must be positive"));
        }

        let sizes = &self.tasks.sizes;
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(problem("tasks", "sizes", "need at least one task, each with classes"));
        }
        let total: usize = sizes.iter().sum();
        if total > d.num_classes {
            return Err(problem(
                "tasks",
                "sizes",
                format!("tasks need {total} classes but the dataset has {}", d.num_classes),
            ));
        }
        if self.run.seeds == 0 {
            return Err(problem("run", "seeds", "must be at least 1"));
        }
        Ok(())
    }

    /// Spatial size of one clip's features.
    pub fn input_hw(&self) -> (usize, usize) {
        match self.data.source {
            Source::Synthetic => (self.data.synthetic.n_mels, self.data.synthetic.n_frames),
            Source::Esc => {
                let samples = (self.data.esc.clip_seconds * self.features.sample_rate as f64).round() as usize;
                (self.features.n_mels, self.features.frames(samples))
            }
        }
    }

    pub fn hebbian_params(&self) -> HebbianParams {
        let h = &self.hebbian;
        HebbianParams {
            base_lr: h.base_lr,
            lr_min: h.lr_min,
            radius: h.radius,
            temperature: h.temperature,
            clamp_slack: h.clamp_slack,
        }
    }

    pub fn harness(&self, seed: u64, kp_enabled: bool) -> HarnessConfig {
        let a = &self.architecture;
        let kp = &self.plasticity;
        HarnessConfig {
            arch: ArchitectureConfig::stacked(1, &a.channels, a.kernel, a.pool, self.hebbian_params()),
            plasticity: PlasticityConfig {
                top_fraction: kp.top_fraction,
                alpha: kp.alpha,
                beta: kp.beta,
                interval: kp.interval,
                norm: match kp.norm {
                    NormName::L1 => UpdateNorm::L1,
                    NormName::L2 => UpdateNorm::L2,
                },
            },
            kp_enabled,
            hebbian_batch_size: self.hebbian.batch_size,
            head: HeadTrainConfig {
                epochs: self.head.epochs,
                lr: self.head.lr,
                batch_size: self.head.batch_size,
            },
            seed,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let s = &self.data.synthetic;
        SynthSpec {
            num_classes: self.data.num_classes,
            clips_per_class: s.clips_per_class,
            n_mels: s.n_mels,
            n_frames: s.n_frames,
            snr_db: s.snr_db,
            seed: s.seed,
        }
    }

    pub fn esc_source(&self) -> EscSource {
        let e = &self.data.esc;
        EscSource {
            root: e.root.clone(),
            meta: e.meta.clone(),
            audio_dir: e.audio_dir.clone(),
            num_classes: self.data.num_classes,
            clip_seconds: e.clip_seconds,
            mel: self.features,
            cache_dir: e.cache_dir.clone(),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (self.run.seed..self.run.seed + self.run.seeds).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line where `key` is assigned inside `[section]` (or any `[*.section]`).
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section || current.ends_with(&format!(".{section}")) {
                section_line = Some(i + 1);
            }
            continue;
        }
        let in_section = current == section || current.ends_with(&format!(".{section}"));
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    section_line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_profile() {
        assert_eq!(Config::parse("", Path::new("x.toml")).unwrap(), Config::default());
    }

    #[test]
    fn toml_round_trip() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.to_toml(), Path::new("x.toml")).unwrap(), c);
    }

    #[test]
    fn semantic_error_points_at_the_key() {
        let text = "[plasticity]\nalpha = 0.15\nbeta = 1.5\n";
        match Config::parse(text, Path::new("x.toml")) {
            Err(Error::Config { line, message, .. }) => {
                assert_eq!(line, Some(3));
                assert!(message.contains("beta"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn amplifying_alpha_is_accepted() {
        let c = Config::parse("[plasticity]\nalpha = 1.5\n", Path::new("x.toml")).unwrap();
        assert_eq!(c.plasticity.alpha, 1.5);
    }
}
