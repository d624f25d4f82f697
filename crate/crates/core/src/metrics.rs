//! Evaluation metrics: SI-SNR, SDR (same ratio as the training objective)
//! and their improvements over scoring the unprocessed mixture.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::loss::{self, DB_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    SiSnr,
    /// Scale-invariant SDR of the training objective, not BSS-eval.
    Sdr,
}

impl Metric {
    pub fn score(self, s: &[f64], est: &[f64]) -> Result<f64> {
        match self {
            Metric::SiSnr => si_snr(s, est),
            Metric::Sdr => Ok(loss::sdr(s, est)?.clamp(-DB_CLAMP, DB_CLAMP)),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::SiSnr => "SI-SNR",
            Metric::Sdr => "SDR (scale-invariant ratio, no BSS-eval filtering)",
        }
    }
}

fn zero_mean(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Scale-invariant SNR in dB after removing the mean of both signals,
/// clamped to ±80 dB.
pub fn si_snr(s: &[f64], est: &[f64]) -> Result<f64> {
    if s.len() != est.len() || s.is_empty() {
        return Err(Error::Dimension(alloc::format!(
            "si_snr: reference has {} samples, estimate {}",
            s.len(),
            est.len()
        )));
    }
    let s = zero_mean(s);
    let est = zero_mean(est);
    let ss = dot(&s, &s);
    if ss == 0.0 || dot(&est, &est) == 0.0 {
        return Err(Error::DegenerateSignal("si_snr"));
    }
    let k = dot(&est, &s) / ss;
    let mut target = 0.0;
    let mut noise = 0.0;
    for (sv, ev) in s.iter().zip(&est) {
        let t = k * sv;
        target += t * t;
        noise += (ev - t) * (ev - t);
    }
    if noise == 0.0 {
        return Ok(DB_CLAMP);
    }
    if target == 0.0 {
        return Ok(-DB_CLAMP);
    }
    Ok((10.0 * libm::log10(target / noise)).clamp(-DB_CLAMP, DB_CLAMP))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Improvement {
    pub improvement: f64,
    pub estimate_mean: f64,
    pub baseline_mean: f64,
    /// `permutation[i]` is the estimate paired with source `i`.
    pub permutation: Vec<usize>,
}

/// `mean_i metric(s_i, ŝ_π(i)) − mean_i metric(s_i, mixture)` with `π`
/// the pairing that maximizes the metric.
pub fn improvement(metric: Metric, sources: &[Vec<f64>], estimates: &[Vec<f64>], mixture: &[f64]) -> Result<Improvement> {
    if sources.len() != estimates.len() || sources.is_empty() {
        return Err(Error::Dimension(alloc::format!(
            "{} sources vs {} estimates",
            sources.len(),
            estimates.len()
        )));
    }
    let n = sources.len();
    let mut costs = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            costs.set(i, j, -metric.score(&sources[i], &estimates[j])?);
        }
    }
    let best = loss::pit_from_costs(&costs);
    let estimate_mean = -best.loss;
    let mut baseline = 0.0;
    for s in sources {
        baseline += metric.score(s, mixture)?;
    }
    let baseline_mean = baseline / n as f64;
    Ok(Improvement {
        improvement: estimate_mean - baseline_mean,
        estimate_mean,
        baseline_mean,
        permutation: best.permutation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore {
    pub id: String,
    pub si_snr_i: f64,
    pub sdr_i: f64,
    pub permutation: Vec<usize>,
}

impl UtteranceScore {
    pub fn compute(id: &str, sources: &[Vec<f64>], estimates: &[Vec<f64>], mixture: &[f64]) -> Result<Self> {
        let si = improvement(Metric::SiSnr, sources, estimates, mixture)?;
        let sdr = improvement(Metric::Sdr, sources, estimates, mixture)?;
        Ok(UtteranceScore { id: id.into(), si_snr_i: si.improvement, sdr_i: sdr.improvement, permutation: si.permutation })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `clean` or the added-noise SNR, e.g. `20dB`.
    pub condition: String,
    pub utterances: Vec<UtteranceScore>,
    pub mean_si_snr_i: f64,
    pub mean_sdr_i: f64,
    /// Records that could not be scored.
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn aggregate(condition: &str, utterances: Vec<UtteranceScore>, skipped: Vec<String>) -> Self {
        let n = utterances.len().max(1) as f64;
        let mean_si_snr_i = utterances.iter().map(|u| u.si_snr_i).sum::<f64>() / n;
        let mean_sdr_i = utterances.iter().map(|u| u.sdr_i).sum::<f64>() / n;
        EvalReport { condition: condition.into(), utterances, mean_si_snr_i, mean_sdr_i, skipped }
    }
}
