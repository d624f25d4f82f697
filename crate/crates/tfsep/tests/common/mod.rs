#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tfsep::wav;
use tfsep_core::dsp::Waveform;
use tfsep_core::mixer::toy_sources;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tfsep"));
    c.env_remove("TFSEP_DATA_ROOT").env("RUST_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// `speakers` directories of seeded toy utterances at `rate`.
pub fn write_corpus(root: &Path, speakers: usize, per_speaker: usize, seconds: f64, rate: u32) -> PathBuf {
    let len = (seconds * rate as f64) as usize;
    for s in 0..speakers {
        for u in 0..per_speaker {
            let [tone, noise] = toy_sources(len, rate, (s * 100 + u) as u64);
            let x: Vec<f64> = if s % 2 == 0 { tone } else { noise };
            let w = Waveform::new(x.iter().map(|v| v * 0.5).collect(), rate).unwrap();
            wav::write(&root.join(format!("spk{s:02}/utt{u:02}.wav")), &w).unwrap();
        }
    }
    root.to_path_buf()
}

/// Noise recordings long enough for any mixture in the tests.
pub fn write_noise(root: &Path, files: usize, seconds: f64, rate: u32) -> PathBuf {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let len = (seconds * rate as f64) as usize;
    for i in 0..files {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let mut prev = 0.0;
        let x: Vec<f64> = (0..len)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                prev = 0.7 * prev + 0.3 * e;
                prev * 0.2
            })
            .collect();
        wav::write(&root.join(format!("noise{i}.wav")), &Waveform::new(x, rate).unwrap()).unwrap();
    }
    root.to_path_buf()
}

pub const TINY: &[&str] = &[
    "--set", "encoder.conv_channels=8",
    "--set", "separator.bottleneck=8",
    "--set", "separator.hidden=12",
    "--set", "separator.blocks=2",
    "--set", "separator.repeats=1",
    "--set", "separator.embed_dim=4",
    "--set", "train.segment_seconds=0.1",
    "--set", "train.batch_size=1",
];
