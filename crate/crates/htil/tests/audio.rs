use std::f64::consts::PI;

mod common;

use common::wav_bytes;
use htil::audio::{decode_wav, hann, log_mel, mel_edges, mel_filterbank, MelSpec, Stft};

fn mono(samples: &[i16]) -> Vec<Vec<i16>> {
    samples.iter().map(|&s| vec![s]).collect()
}

#[test]
fn sine_decodes_to_its_amplitude() {
    let amp = 0.5;
    let pcm: Vec<i16> = (0..44100)
        .map(|i| (amp * 32767.0 * (2.0 * PI * 440.0 * i as f64 / 44100.0).sin()).round() as i16)
        .collect();
    let audio = decode_wav(&wav_bytes(1, 44100, 16, &mono(&pcm))).unwrap();
    assert_eq!(audio.sample_rate, 44100);
    assert_eq!(audio.samples.len(), 44100);
    let peak = audio.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((peak - amp).abs() < 1e-3, "peak {peak}");
    assert!(audio.samples.iter().all(|v| (-1.0..1.0).contains(v)));
}

#[test]
fn zeros_decode_to_zeros() {
    let audio = decode_wav(&wav_bytes(1, 8000, 16, &mono(&[0; 800]))).unwrap();
    assert_eq!(audio.samples, vec![0.0; 800]);
}

#[test]
fn stereo_is_averaged() {
    let frames = vec![vec![16384, -16384], vec![16384, 0], vec![-32768, -32768]];
    let audio = decode_wav(&wav_bytes(2, 8000, 16, &frames)).unwrap();
    assert_eq!(audio.samples, vec![0.0, 0.25, -1.0]);
}

#[test]
fn malformed_input_is_rejected() {
    let bytes = wav_bytes(1, 8000, 16, &mono(&[1; 100]));
    assert!(decode_wav(&bytes[..20]).is_err());
    assert!(decode_wav(b"not a wav file at all").is_err());
    let eight_bit = wav_bytes(1, 8000, 8, &mono(&[0; 100]));
    let err = decode_wav(&eight_bit).unwrap_err().to_string();
    assert!(err.contains("unsupported"), "{err}");
}

fn small_spec() -> MelSpec {
    MelSpec {
        sample_rate: 16000,
        n_fft: 512,
        hop: 256,
        n_mels: 24,
        fmin: 0.0,
        fmax: 8000.0,
        log_floor: 1e-6,
    }
}

#[test]
fn frame_count_follows_the_hop() {
    let spec = small_spec();
    for len in [512, 513, 767, 768, 4000] {
        let t = log_mel(&vec![0.1; len], &spec).unwrap();
        assert_eq!(t.shape(), &[1, 24, 1 + (len - 512) / 256]);
    }
    assert!(log_mel(&[0.0; 511], &spec).is_err());
}

#[test]
fn silence_is_the_log_floor() {
    let spec = small_spec();
    let t = log_mel(&[0.0; 4096], &spec).unwrap();
    assert!(t.data().iter().all(|&v| v == spec.log_floor.ln()));
}

#[test]
fn tone_at_a_band_center_dominates_its_neighbours() {
    let spec = small_spec();
    let edges = mel_edges(&spec);
    let frames = 1 + (8192 - spec.n_fft) / spec.hop;
    for band in [3, 10, 18] {
        let f = edges[band + 1];
        let x: Vec<f64> = (0..8192)
            .map(|i| 0.5 * (2.0 * PI * f * i as f64 / spec.sample_rate as f64).sin())
            .collect();
        let t = log_mel(&x, &spec).unwrap();
        let at = |m: usize, c: usize| t.data()[m * frames + c];
        for c in 0..frames {
            assert!(at(band, c) > at(band - 1, c), "band {band} frame {c}");
            assert!(at(band, c) > at(band + 1, c), "band {band} frame {c}");
        }
    }
}

#[test]
fn stft_frame_power_matches_the_windowed_signal() {
    let n = 512;
    let stft = Stft::new(n, 256);
    let mut state = 12345u64;
    let x: Vec<f64> = (0..2048)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let w = hann(n);
    for start in [0, 256, 1000, 1536] {
        let time: f64 = (0..n).map(|i| (x[start + i] * w[i]).powi(2)).sum();
        let freq: f64 = stft.frame(&x, start).iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
        assert!((time - freq).abs() <= 1e-6 * time.max(1.0), "{time} vs {freq}");
    }
}

#[test]
fn log_mel_is_monotone_in_gain() {
    let spec = small_spec();
    let x: Vec<f64> = (0..4096).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
    let loud: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
    let a = log_mel(&x, &spec).unwrap();
    let b = log_mel(&loud, &spec).unwrap();
    assert_eq!(a, log_mel(&x, &spec).unwrap());
    for (lo, hi) in a.data().iter().zip(b.data()) {
        assert!(hi >= lo);
    }
}

#[test]
fn filterbank_triangles_peak_at_one_and_stay_in_range() {
    let spec = MelSpec::default();
    let bank = mel_filterbank(&spec);
    assert_eq!(bank.len(), 64);
    for filter in &bank {
        assert_eq!(filter.len(), 513);
        assert!(filter.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(filter.iter().any(|&v| v > 0.0));
    }
    assert!(MelSpec { fmax: 30000.0, ..spec }.validate().is_err());
    assert!(MelSpec { n_mels: 0, ..spec }.validate().is_err());
}
