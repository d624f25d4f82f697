//! Scoring a checkpoint on a manifest, clean or with noise added at a fixed
//! input SNR, and serializing the reports.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use tfsep_core::dsp::Waveform;
use tfsep_core::metrics::{EvalReport, UtteranceScore};
use tfsep_core::mixer;
use tfsep_core::model::Model;

use crate::data;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::mix::scan_wavs;
use crate::wav;

/// Decorrelates evaluation-time noise crops from mixing-time ones.
const NOISE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Clean,
    Snr(f64),
}

impl Condition {
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim().trim_end_matches("dB").trim_end_matches("db");
        if t.eq_ignore_ascii_case("clean") {
            return Ok(Condition::Clean);
        }
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Condition::Snr(v)),
            _ => Err(Error::Usage(format!("invalid condition '{s}' (use 'clean' or an SNR in dB)"))),
        }
    }

    pub fn label(self) -> String {
        match self {
            Condition::Clean => "clean".into(),
            Condition::Snr(v) => format!("{v}dB"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseBank {
    pub items: Vec<(String, Waveform)>,
}

impl NoiseBank {
    pub fn load(dir: &Path, sample_rate: u32) -> Result<Self> {
        let files = scan_wavs(dir)?;
        if files.is_empty() {
            return Err(Error::Usage(format!("no .wav files in {}", dir.display())));
        }
        let items = files
            .into_iter()
            .map(|f| {
                let w = wav::read(&dir.join(&f))?;
                Ok((f, mixer::resample(&w, sample_rate)?))
            })
            .collect::<Result<_>>()?;
        Ok(NoiseBank { items })
    }
}

fn score_record(
    model: &Model,
    manifest: &Manifest,
    idx: usize,
    condition: Condition,
    noise: Option<&NoiseBank>,
) -> Result<UtteranceScore> {
    let rec = &manifest.records[idx];
    let ex = data::load_record(manifest, rec)?;
    let mixture = match condition {
        Condition::Clean => ex.mixture,
        Condition::Snr(snr) => {
            let bank = noise.ok_or_else(|| Error::Usage("noisy conditions need a noise directory".into()))?;
            let (_, n) = &bank.items[(rec.seed % bank.items.len() as u64) as usize];
            let clean = Waveform::new(ex.mixture, manifest.header.sample_rate)?;
            mixer::add_noise(&clean, n, snr, rec.seed ^ NOISE_SEED_SALT)?.samples
        }
    };
    let est = model.forward(&mixture, false)?.estimates;
    Ok(UtteranceScore::compute(&rec.id, &ex.sources, &est, &mixture)?)
}

/// Score every record; records that fail are skipped and listed.
pub fn evaluate(model: &Model, manifest: &Manifest, condition: Condition, noise: Option<&NoiseBank>) -> Result<EvalReport> {
    if manifest.header.sample_rate != model.config.sample_rate {
        return Err(tfsep_core::Error::SampleRate {
            expected: model.config.sample_rate,
            found: manifest.header.sample_rate,
        }
        .into());
    }
    if matches!(condition, Condition::Snr(_)) && noise.is_none() {
        return Err(Error::Usage("noisy conditions need --noise-dir".into()));
    }
    let results: Vec<std::result::Result<UtteranceScore, String>> = (0..manifest.records.len())
        .into_par_iter()
        .map(|i| {
            score_record(model, manifest, i, condition, noise).map_err(|e| {
                let id = &manifest.records[i].id;
                let msg = e.to_string();
                if msg.starts_with("record '") { msg } else { format!("record '{id}': {msg}") }
            })
        })
        .collect();
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(s) => scores.push(s),
            Err(msg) => {
                log::warn!("skipped {msg}");
                skipped.push(msg);
            }
        }
    }
    if scores.is_empty() {
        return Err(Error::Usage(format!("no record could be scored ({} skipped)", skipped.len())));
    }
    Ok(EvalReport::aggregate(&condition.label(), scores, skipped))
}

#[derive(Debug, Serialize)]
struct UtteranceOut<'a> {
    id: &'a str,
    si_snr_i: f64,
    sdr_i: f64,
    permutation: &'a [usize],
}

#[derive(Debug, Serialize)]
struct ConditionOut<'a> {
    condition: &'a str,
    scored: usize,
    mean_si_snr_i: f64,
    mean_sdr_i: f64,
    skipped: &'a [String],
    utterances: Vec<UtteranceOut<'a>>,
}

#[derive(Debug, Serialize)]
struct ReportOut<'a> {
    label: &'a str,
    sdr_convention: &'a str,
    config: &'a str,
    conditions: Vec<ConditionOut<'a>>,
}

pub const SDR_CONVENTION: &str =
    "SDR_i uses the same scale-invariant ratio as the training loss (<s,e>^2 / (|s|^2 |e|^2 - <s,e>^2)), not BSS-eval";

/// Deterministic JSON rendering of a set of condition reports.
pub fn report_json(label: &str, config_text: &str, reports: &[EvalReport]) -> String {
    let out = ReportOut {
        label,
        sdr_convention: SDR_CONVENTION,
        config: config_text,
        conditions: reports
            .iter()
            .map(|r| ConditionOut {
                condition: &r.condition,
                scored: r.utterances.len(),
                mean_si_snr_i: r.mean_si_snr_i,
                mean_sdr_i: r.mean_sdr_i,
                skipped: &r.skipped,
                utterances: r
                    .utterances
                    .iter()
                    .map(|u| UtteranceOut { id: &u.id, si_snr_i: u.si_snr_i, sdr_i: u.sdr_i, permutation: &u.permutation })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&out).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conditions_parse() {
        assert_eq!(Condition::parse("clean").unwrap(), Condition::Clean);
        assert_eq!(Condition::parse("20").unwrap(), Condition::Snr(20.0));
        assert_eq!(Condition::parse("15dB").unwrap(), Condition::Snr(15.0));
        assert_eq!(Condition::Snr(10.0).label(), "10dB");
        assert!(Condition::parse("loud").is_err());
    }
}
