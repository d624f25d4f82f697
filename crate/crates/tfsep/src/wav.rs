//! Mono WAV reading (integer PCM or 32-bit float) and 32-bit float writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use tfsep_core::dsp::Waveform;

use crate::error::{Error, Result};

fn audio_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Audio { path: path.to_path_buf(), msg: e.to_string() }
}

pub fn read(path: &Path) -> Result<Waveform> {
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => audio_err(path, other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(audio_err(path, format!("expected mono audio, found {} channels", spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(path, e))?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| audio_err(path, e))?
        }
    };
    Waveform::new(samples, spec.sample_rate).map_err(|e| audio_err(path, e))
}

pub fn write(path: &Path, wave: &Waveform) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| audio_err(path, e))?;
    for &s in &wave.samples {
        w.write_sample(s as f32).map_err(|e| audio_err(path, e))?;
    }
    w.finalize().map_err(|e| audio_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.5, -0.25, 0.125, 0.0], 8000).unwrap();
        write(&p, &w).unwrap();
        assert_eq!(read(&p).unwrap(), w);
    }

    #[test]
    fn reads_16_bit_pcm_and_rejects_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pcm.wav");
        let spec = WavSpec { channels: 1, sample_rate: 16000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [16384i16, -32768, 0] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let r = read(&p).unwrap();
        assert_eq!(r.samples, vec![0.5, -1.0, 0.0]);
        assert_eq!(r.sample_rate, 16000);

        let s = dir.path().join("stereo.wav");
        let spec = WavSpec { channels: 2, ..spec };
        let mut w = WavWriter::create(&s, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read(&s).unwrap_err();
        assert!(err.to_string().contains("mono"), "{err}");
        assert!(matches!(read(&dir.path().join("missing.wav")), Err(Error::Io { .. })));
    }
}
