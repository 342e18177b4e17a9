//! Clip records, fold splits and the synthetic band-pattern dataset.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

pub const FOLDS: u8 = 5;

/// One labelled clip with its `[1, n_mels, n_frames]` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub id: String,
    pub class: usize,
    pub fold: u8,
    pub features: Tensor,
}

impl ClipRecord {
    pub fn new(id: impl Into<String>, class: usize, fold: u8, features: Tensor) -> Result<Self> {
        if !(1..=FOLDS).contains(&fold) {
            return Err(Error::InvalidArgument(format!("fold {fold} outside 1..=5")));
        }
        if features.shape().len() != 3 {
            return Err(Error::dim("clip features", "expected [channels, mels, frames]"));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("clip features"));
        }
        Ok(Self {
            id: id.into(),
            class,
            fold,
            features,
        })
    }
}

/// Record indices per partition.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold for testing, one for validation, the other three for training.
pub fn fold_split(records: &[ClipRecord], test_fold: u8, val_fold: u8) -> Result<FoldSplit> {
    if !(1..=FOLDS).contains(&test_fold) || !(1..=FOLDS).contains(&val_fold) || test_fold == val_fold {
        return Err(Error::InvalidArgument(format!(
            "test fold {test_fold} and validation fold {val_fold} must be distinct folds in 1..=5"
        )));
    }
    let mut split = FoldSplit::default();
    for (i, r) in records.iter().enumerate() {
        if r.fold == test_fold {
            split.test.push(i);
        } else if r.fold == val_fold {
            split.val.push(i);
        } else {
            split.train.push(i);
        }
    }
    Ok(split)
}

/// Scalar standardization fitted on training clips only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(records: &[ClipRecord], indices: &[usize]) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = 0.0;
        for &i in indices {
            let d = records[i].features.data();
            count += d.len();
            sum += d.iter().sum::<f64>();
        }
        if count == 0 {
            return Err(Error::EmptyDataset("standardization set"));
        }
        let mean = sum / count as f64;
        let mut sq = 0.0;
        for &i in indices {
            sq += records[i]
                .features
                .data()
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>();
        }
        let std = math::sqrt(sq / count as f64);
        Ok(Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        })
    }

    pub fn apply(&self, records: &mut [ClipRecord]) {
        for r in records {
            for v in r.features.data_mut() {
                *v = (*v - self.mean) / self.std;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub clips_per_class: usize,
    pub n_mels: usize,
    pub n_frames: usize,
    /// Template-to-noise power ratio in dB; `f64::INFINITY` gives noiseless clips.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 50,
            clips_per_class: 20,
            n_mels: 16,
            n_frames: 16,
            snr_db: 6.0,
            seed: 0,
        }
    }
}

/// A class template: a few Gaussian bands in mel space, each with its own
/// temporal envelope.
#[derive(Debug, Clone)]
struct Template {
    cells: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Envelope {
    Steady,
    Pulse { period: usize, duty: usize, phase: usize },
    Ramp { rising: bool },
    Onset { at: usize },
}

impl Envelope {
    fn sample<R: Rng + ?Sized>(rng: &mut R, frames: usize) -> Self {
        match rng.random_range(0..4) {
            0 => Envelope::Steady,
            1 => {
                let period = rng.random_range(3..=6usize);
                Envelope::Pulse {
                    period,
                    duty: rng.random_range(1..period),
                    phase: rng.random_range(0..period),
                }
            }
            2 => Envelope::Ramp { rising: rng.random() },
            _ => Envelope::Onset {
                at: rng.random_range(1..frames.max(2)),
            },
        }
    }

    fn at(&self, t: usize, frames: usize) -> f64 {
        match *self {
            Envelope::Steady => 1.0,
            Envelope::Pulse { period, duty, phase } => {
                if (t + phase) % period < duty {
                    1.0
                } else {
                    0.0
                }
            }
            Envelope::Ramp { rising } => {
                let x = (t as f64 + 0.5) / frames as f64;
                if rising {
                    x
                } else {
                    1.0 - x
                }
            }
            Envelope::Onset { at } => {
                if t >= at {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl Template {
    fn sample<R: Rng + ?Sized>(rng: &mut R, mels: usize, frames: usize) -> Self {
        let mut cells = vec![0.0; mels * frames];
        let bands = rng.random_range(2..=3);
        for _ in 0..bands {
            let center = rng.random_range(0.0..mels as f64);
            let width = rng.random_range(0.7..2.0);
            let amp = rng.random_range(0.5..1.5);
            let env = Envelope::sample(rng, frames);
            for m in 0..mels {
                let d = (m as f64 - center) / width;
                let profile = amp * math::exp(-0.5 * d * d);
                for t in 0..frames {
                    cells[m * frames + t] += profile * env.at(t, frames);
                }
            }
        }
        Self { cells }
    }

    fn rms(&self) -> f64 {
        math::sqrt(self.cells.iter().map(|v| v * v).sum::<f64>() / self.cells.len() as f64)
    }
}

/// Synthetic spectrogram-like dataset: one band-pattern template per class,
/// per-clip gain jitter and Gaussian noise at the requested SNR. Folds are
/// assigned round-robin within each class.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<ClipRecord>> {
    if spec.num_classes == 0 || spec.clips_per_class == 0 || spec.n_mels == 0 || spec.n_frames == 0 {
        return Err(Error::InvalidArgument("synthetic dataset sizes must be positive".into()));
    }
    let mut rng = stream(spec.seed, Stream::Synthetic);
    let (mels, frames) = (spec.n_mels, spec.n_frames);
    let templates: Vec<Template> = (0..spec.num_classes)
        .map(|_| Template::sample(&mut rng, mels, frames))
        .collect();

    let mut records = Vec::with_capacity(spec.num_classes * spec.clips_per_class);
    for (class, template) in templates.iter().enumerate() {
        let noise_std = if spec.snr_db.is_infinite() && spec.snr_db > 0.0 {
            0.0
        } else {
            template.rms() / math::powf(10.0, spec.snr_db / 20.0)
        };
        for i in 0..spec.clips_per_class {
            let gain = rng.random_range(0.8..1.2);
            let data: Vec<f64> = template
                .cells
                .iter()
                .map(|&v| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    gain * v + noise_std * n
                })
                .collect();
            let features = Tensor::new(vec![1, mels, frames], data)?;
            let fold = (i % FOLDS as usize) as u8 + 1;
            records.push(ClipRecord::new(format!("synth-{class:03}-{i:03}"), class, fold, features)?);
        }
    }
    Ok(records)
}
