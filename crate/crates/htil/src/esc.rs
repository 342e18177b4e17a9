//! ESC-50 style datasets: a metadata CSV plus a directory of WAV clips.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use htil_core::data::FOLDS;
use htil_core::ClipRecord;
use rayon::prelude::*;

use crate::audio::{decode_wav, fit_length, log_mel, MelSpec};
use crate::cache;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaEntry {
    pub filename: String,
    pub fold: u8,
    pub target: usize,
}

/// Reads `filename,fold,target,...`; extra columns are ignored.
pub fn parse_meta(path: &Path) -> Result<Vec<MetaEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_meta_str(&text, path)
}

pub fn parse_meta_str(text: &str, path: &Path) -> Result<Vec<MetaEntry>> {
    let fail = |line: u64, message: String| Error::Meta {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| fail(1, e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| fail(1, format!("missing column `{name}`")))
    };
    let (c_file, c_fold, c_target) = (column("filename")?, column("fold")?, column("target")?);

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            fail(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).ok_or_else(|| fail(line, format!("row has {} fields", row.len())));
        let filename = field(c_file)?.to_string();
        if filename.is_empty() {
            return Err(fail(line, "empty filename".into()));
        }
        let fold: u8 = field(c_fold)?
            .parse()
            .map_err(|_| fail(line, format!("fold `{}` is not an integer", row.get(c_fold).unwrap_or(""))))?;
        if !(1..=FOLDS).contains(&fold) {
            return Err(fail(line, format!("fold {fold} outside 1..={FOLDS}")));
        }
        let target: usize = field(c_target)?
            .parse()
            .map_err(|_| fail(line, format!("target `{}` is not a class index", row.get(c_target).unwrap_or(""))))?;
        if !seen.insert(filename.clone()) {
            return Err(fail(line, format!("duplicate clip `{filename}`")));
        }
        entries.push(MetaEntry { filename, fold, target });
    }
    Ok(entries)
}

/// Where a dataset lives and how clips are turned into features.
#[derive(Debug, Clone)]
pub struct EscSource {
    pub root: PathBuf,
    pub meta: PathBuf,
    pub audio_dir: PathBuf,
    pub num_classes: usize,
    pub clip_seconds: f64,
    pub mel: MelSpec,
    pub cache_dir: Option<PathBuf>,
}

impl EscSource {
    fn clip_samples(&self) -> usize {
        (self.clip_seconds * self.mel.sample_rate as f64).round() as usize
    }

    fn cache_path(&self, filename: &str) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|dir| dir.join(cache::spec_key(&self.mel, self.clip_seconds)).join(format!("{filename}.htil")))
    }

    /// Features for one clip, through the cache when one is configured.
    pub fn features(&self, entry: &MetaEntry) -> Result<htil_core::Tensor> {
        if let Some(path) = self.cache_path(&entry.filename) {
            if path.exists() {
                return cache::read(&path);
            }
        }
        let path = self.root.join(&self.audio_dir).join(&entry.filename);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let audio = decode_wav(&bytes).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
        if audio.sample_rate != self.mel.sample_rate {
            return Err(Error::Wav(format!(
                "{}: sample rate {} differs from the configured {}",
                path.display(),
                audio.sample_rate,
                self.mel.sample_rate
            )));
        }
        let features = log_mel(&fit_length(audio.samples, self.clip_samples()), &self.mel)?;
        // Round to the cache precision so cached and fresh loads agree exactly.
        let bytes = cache::encode(&features);
        if let Some(path) = self.cache_path(&entry.filename) {
            cache::write_bytes(&path, &bytes)?;
        }
        cache::decode(&bytes, &path)
    }

    /// All clips ordered by id. Missing audio files are reported together.
    pub fn load(&self) -> Result<Vec<ClipRecord>> {
        self.mel.validate()?;
        let mut entries = parse_meta(&self.root.join(&self.meta))?;
        entries.sort_by(|a, b| a.filename.cmp(&b.filename));
        if let Some(bad) = entries.iter().find(|e| e.target >= self.num_classes) {
            return Err(Error::Invalid(format!(
                "clip {} has target {} but the dataset declares {} classes",
                bad.filename, bad.target, self.num_classes
            )));
        }
        let missing: Vec<&str> = entries
            .iter()
            .filter(|e| {
                !self.root.join(&self.audio_dir).join(&e.filename).exists()
                    && !self.cache_path(&e.filename).is_some_and(|p| p.exists())
            })
            .map(|e| e.filename.as_str())
            .collect();
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(5).copied().collect();
            return Err(Error::Invalid(format!(
                "{} audio files missing under {}: {}{}",
                missing.len(),
                self.root.join(&self.audio_dir).display(),
                shown.join(", "),
                if missing.len() > shown.len() { ", ..." } else { "" }
            )));
        }
        entries
            .par_iter()
            .map(|e| {
                let features = self.features(e)?;
                Ok(ClipRecord::new(e.filename.clone(), e.target, e.fold, features)?)
            })
            .collect()
    }
}
