#![allow(dead_code)]

use std::fs;
use std::path::Path;

use htil::config::Config;

/// Hand-assembled RIFF/WAVE bytes.
pub fn wav_bytes(channels: u16, rate: u32, bits: u16, frames: &[Vec<i16>]) -> Vec<u8> {
    let block = channels * bits / 8;
    let mut data = Vec::new();
    for frame in frames {
        for &s in frame {
            match bits {
                16 => data.extend_from_slice(&s.to_le_bytes()),
                8 => data.push((s >> 8) as u8 ^ 0x80),
                _ => unreachable!(),
            }
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * block as u32).to_le_bytes());
    out.extend_from_slice(&block.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(&data);
    out
}

/// A small synthetic config that runs a 4-task sequence in a few seconds.
pub fn tiny_config() -> Config {
    let text = r#"
profile = "tiny"
[data]
num_classes = 10
[data.synthetic]
clips_per_class = 15
n_mels = 8
n_frames = 8
snr_db = 10.0
[architecture]
channels = [4, 8, 8]
[hebbian]
base_lr = 0.5
batch_size = 4
[plasticity]
interval = 1
[head]
epochs = 20
lr = 0.5
batch_size = 8
[tasks]
sizes = [4, 2, 2, 2]
[run]
seeds = 2
"#;
    Config::parse(text, Path::new("tiny.toml")).unwrap()
}

/// Writes a 2-class ESC layout at 8 kHz with one short clip per class and fold.
pub fn write_esc_layout(root: &Path) {
    fs::create_dir_all(root.join("audio")).unwrap();
    fs::create_dir_all(root.join("meta")).unwrap();
    let mut meta = String::from("filename,fold,target,category\n");
    for fold in 1..=5u8 {
        for class in 0..2usize {
            let name = format!("{fold}-{class}.wav");
            let freq = 500.0 + 1500.0 * class as f64;
            let frames: Vec<Vec<i16>> = (0..3000)
                .map(|i| {
                    let v = 0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / 8000.0).sin();
                    vec![(v * 32767.0) as i16 + fold as i16]
                })
                .collect();
            fs::write(root.join("audio").join(&name), wav_bytes(1, 8000, 16, &frames)).unwrap();
            meta.push_str(&format!("{name},{fold},{class},c{class}\n"));
        }
    }
    fs::write(root.join("meta/esc50.csv"), meta).unwrap();
}
