//! WAV decoding and log-mel spectrograms.

use std::io::Cursor;

use htil_core::Tensor;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoded mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Decodes PCM16 RIFF/WAVE bytes, averaging channels to mono and scaling to `[-1, 1)`.
pub fn decode_wav(bytes: &[u8]) -> Result<Audio> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::Wav(e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "unsupported encoding: {:?} {} bit (only PCM16 is read)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Wav(e.to_string()))?;
    let samples = raw
        .chunks(channels)
        .map(|frame| frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / frame.len() as f64)
        .collect();
    Ok(Audio {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Zero-pads or truncates to exactly `len` samples.
pub fn fit_length(mut samples: Vec<f64>, len: usize) -> Vec<f64> {
    samples.resize(len, 0.0);
    samples
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelSpec {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Added before the logarithm.
    pub log_floor: f64,
}

impl Default for MelSpec {
    fn default() -> Self {
        Self {
            sample_rate: 44100,
            n_fft: 1024,
            hop: 512,
            n_mels: 64,
            fmin: 0.0,
            fmax: 22050.0,
            log_floor: 1e-6,
        }
    }
}

impl MelSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.n_mels == 0 || self.n_fft < 2 || self.hop == 0 {
            return Err(Error::Invalid("n_mels, n_fft and hop must be positive (n_fft >= 2)".into()));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Invalid(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin {} fmax {}",
                self.fmin, self.fmax
            )));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return Err(Error::Invalid("log_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn frames(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            1 + (len - self.n_fft) / self.hop
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Band edges in Hz: `n_mels + 2` points evenly spaced on the mel scale.
pub fn mel_edges(spec: &MelSpec) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(spec.fmin), hz_to_mel(spec.fmax));
    let n = spec.n_mels + 1;
    (0..=n).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64)).collect()
}

/// Triangular filters over the `n_fft / 2 + 1` one-sided bins, `[n_mels][bins]`.
pub fn mel_filterbank(spec: &MelSpec) -> Vec<Vec<f64>> {
    let bins = spec.n_fft / 2 + 1;
    let edges = mel_edges(spec);
    let bin_hz = spec.sample_rate as f64 / spec.n_fft as f64;
    (0..spec.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided spectra of Hann-windowed frames.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        }
    }

    /// Full complex spectrum of the windowed frame starting at `start`.
    pub fn frame(&self, samples: &[f64], start: usize) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = samples[start..start + self.n_fft]
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf
    }

    /// Magnitudes of bins `0..=n_fft/2` for every frame.
    pub fn magnitudes(&self, samples: &[f64]) -> Vec<Vec<f64>> {
        let frames = if samples.len() < self.n_fft {
            0
        } else {
            1 + (samples.len() - self.n_fft) / self.hop
        };
        (0..frames)
            .map(|t| {
                self.frame(samples, t * self.hop)[..=self.n_fft / 2]
                    .iter()
                    .map(|c| c.norm())
                    .collect()
            })
            .collect()
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }
}

/// `log(mel(|STFT|) + floor)` as a `[1, n_mels, n_frames]` tensor.
pub fn log_mel(samples: &[f64], spec: &MelSpec) -> Result<Tensor> {
    spec.validate()?;
    if samples.len() < spec.n_fft {
        return Err(Error::Invalid(format!(
            "signal of {} samples is shorter than n_fft {}",
            samples.len(),
            spec.n_fft
        )));
    }
    let bank = mel_filterbank(spec);
    let mags = Stft::new(spec.n_fft, spec.hop).magnitudes(samples);
    let frames = mags.len();
    let mut out = vec![0.0; spec.n_mels * frames];
    for (t, mag) in mags.iter().enumerate() {
        for (m, filter) in bank.iter().enumerate() {
            let energy: f64 = filter.iter().zip(mag).map(|(w, a)| w * a).sum();
            out[m * frames + t] = (energy + spec.log_floor).ln();
        }
    }
    Ok(Tensor::new(vec![1, spec.n_mels, frames], out)?)
}
