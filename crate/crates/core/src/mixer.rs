//! Mixture synthesis at controlled SNR, noise injection, band-limited
//! resampling and reproducible pair planning. File access lives elsewhere;
//! everything here works on in-memory waveforms and identifiers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::{power, Waveform};
use crate::error::{Error, Result};

/// Two scaled sources and their exact sum.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPair {
    pub mixture: Waveform,
    pub sources: [Waveform; 2],
    /// Linear gain applied to the second source.
    pub gain: f64,
}

/// `10·log10(P(signal) / P(noise))`.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * libm::log10(power(signal) / power(noise))
}

/// Scale `s2` so that `P(s1)/P(g·s2)` equals `snr_db`, truncate both to the
/// shorter length and sum.
pub fn mix_pair(s1: &Waveform, s2: &Waveform, snr_db: f64) -> Result<MixedPair> {
    if s1.sample_rate != s2.sample_rate {
        return Err(Error::SampleRate { expected: s1.sample_rate, found: s2.sample_rate });
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("pair SNR must be finite, got {snr_db}")));
    }
    let len = s1.len().min(s2.len());
    let a = &s1.samples[..len];
    let b = &s2.samples[..len];
    let (p1, p2) = (power(a), power(b));
    if !(p1 > 0.0) {
        return Err(Error::DegenerateSource("first source is silent"));
    }
    if !(p2 > 0.0) {
        return Err(Error::DegenerateSource("second source is silent"));
    }
    let gain = libm::sqrt(p1 / (p2 * libm::pow(10.0, snr_db / 10.0)));
    let b: Vec<f64> = b.iter().map(|v| v * gain).collect();
    let mixture: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let rate = s1.sample_rate;
    Ok(MixedPair {
        mixture: Waveform::new(mixture, rate)?,
        sources: [Waveform::new(a.to_vec(), rate)?, Waveform::new(b, rate)?],
        gain,
    })
}

/// Offset into `noise` drawn from `seed`.
pub fn noise_offset(noise_len: usize, mixture_len: usize, seed: u64) -> Result<usize> {
    if noise_len < mixture_len {
        return Err(Error::Dimension(format!(
            "noise has {noise_len} samples, mixture needs {mixture_len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rng.random_range(0..=noise_len - mixture_len))
}

/// Add a seeded crop of `noise` at `snr_db` relative to the mixture. An
/// infinite `snr_db` disables noise.
pub fn add_noise(mixture: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform> {
    Ok(add_noise_with_gain(mixture, noise, snr_db, seed)?.0)
}

/// As [`add_noise`], also returning the applied noise gain.
pub fn add_noise_with_gain(mixture: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<(Waveform, f64)> {
    if snr_db == f64::INFINITY {
        return Ok((mixture.clone(), 0.0));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Config(format!("noise SNR must be finite or +inf, got {snr_db}")));
    }
    if mixture.sample_rate != noise.sample_rate {
        return Err(Error::SampleRate { expected: mixture.sample_rate, found: noise.sample_rate });
    }
    let offset = noise_offset(noise.len(), mixture.len(), seed)?;
    let segment = &noise.samples[offset..offset + mixture.len()];
    let pn = power(segment);
    if !(pn > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    let gain = libm::sqrt(mixture.power() / (pn * libm::pow(10.0, snr_db / 10.0)));
    let out = mixture.samples.iter().zip(segment).map(|(x, n)| x + gain * n).collect();
    Ok((Waveform::new(out, mixture.sample_rate)?, gain))
}

/// Rescale every waveform by one common factor so the largest peak is at
/// most `limit`. Returns the factor (1 when nothing exceeded the limit).
pub fn limit_peak(waves: &mut [&mut Waveform], limit: f64) -> f64 {
    let peak = waves
        .iter()
        .flat_map(|w| w.samples.iter())
        .fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    if peak <= limit {
        return 1.0;
    }
    let s = limit / peak;
    for w in waves.iter_mut() {
        w.samples.iter_mut().for_each(|v| *v *= s);
    }
    s
}

const SINC_ZERO_CROSSINGS: f64 = 32.0;

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    0.42 + 0.5 * libm::cos(PI * x) + 0.08 * libm::cos(2.0 * PI * x)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        libm::sin(PI * x) / (PI * x)
    }
}

/// Band-limited resampling with a Blackman-windowed sinc kernel; output
/// length is `round(len · target / source)`.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    if target_rate == wave.sample_rate {
        return Ok(wave.clone());
    }
    let ratio = target_rate as f64 / wave.sample_rate as f64;
    let out_len = libm::round(wave.len() as f64 * ratio) as usize;
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let x = &wave.samples;
    let n_in = x.len() as isize;
    let out = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = libm::ceil(t - half_width) as isize;
            let hi = libm::floor(t + half_width) as isize;
            let mut acc = 0.0;
            for k in lo.max(0)..=hi.min(n_in - 1) {
                let d = t - k as f64;
                acc += x[k as usize] * cutoff * sinc(cutoff * d) * blackman(d / half_width);
            }
            acc
        })
        .collect();
    Waveform::new(out, target_rate)
}

/// An utterance known to the planner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRef {
    pub id: String,
    pub speaker: String,
}

/// A planned mixture, before any audio is read.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedMixture {
    pub sources: [usize; 2],
    pub snr_db: f64,
    pub seed: u64,
}

/// Draw `count` pairs of utterances from different speakers with SNRs
/// uniform on `[snr_lo, snr_hi]`. Deterministic given `seed`.
pub fn plan_mixtures(
    utterances: &[UtteranceRef],
    count: usize,
    snr_lo: f64,
    snr_hi: f64,
    seed: u64,
) -> Result<Vec<PlannedMixture>> {
    if !(snr_lo <= snr_hi) || !snr_lo.is_finite() || !snr_hi.is_finite() {
        return Err(Error::Config(format!("invalid SNR range [{snr_lo}, {snr_hi}]")));
    }
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in utterances.iter().enumerate() {
        by_speaker.entry(u.speaker.as_str()).or_default().push(i);
    }
    if by_speaker.len() < 2 {
        return Err(Error::Corpus(format!(
            "need at least 2 speakers, found {}",
            by_speaker.len()
        )));
    }
    let groups: Vec<&Vec<usize>> = by_speaker.values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.random_range(0..groups.len());
        let mut b = rng.random_range(0..groups.len() - 1);
        if b >= a {
            b += 1;
        }
        let ua = groups[a][rng.random_range(0..groups[a].len())];
        let ub = groups[b][rng.random_range(0..groups[b].len())];
        let snr_db = if snr_lo == snr_hi { snr_lo } else { rng.random_range(snr_lo..=snr_hi) };
        out.push(PlannedMixture { sources: [ua, ub], snr_db, seed: rng.random() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}' (train, valid, test)"))),
        }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Stable speaker → split assignment: one tenth each for test and valid.
pub fn speaker_split(speaker: &str) -> Split {
    match fnv1a(speaker) % 10 {
        0 => Split::Test,
        1 => Split::Valid,
        _ => Split::Train,
    }
}

/// Utterances whose speakers fall in `split`, and whether the result is
/// speaker-disjoint from the other splits. When the split would hold fewer
/// than two speakers, every utterance is returned and the flag is false.
pub fn select_split(utterances: &[UtteranceRef], split: Split) -> (Vec<UtteranceRef>, bool) {
    let chosen: Vec<UtteranceRef> = utterances
        .iter()
        .filter(|u| speaker_split(&u.speaker) == split)
        .cloned()
        .collect();
    let mut speakers: Vec<&str> = chosen.iter().map(|u| u.speaker.as_str()).collect();
    speakers.sort_unstable();
    speakers.dedup();
    if speakers.len() >= 2 {
        (chosen, true)
    } else {
        (utterances.to_vec(), false)
    }
}

/// Synthetic two-source example: a harmonic tone with slow vibrato and
/// amplitude modulation, and band-limited noise with a syllabic envelope.
pub fn toy_sources(len: usize, sample_rate: u32, seed: u64) -> [Vec<f64>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let f0 = rng.random_range(120.0..260.0);
    let vib = rng.random_range(2.0..6.0);
    let am = rng.random_range(1.5..4.0);
    let phase0: f64 = rng.random_range(0.0..2.0 * PI);
    let mut phase = phase0;
    let tone: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            let f = f0 * (1.0 + 0.03 * libm::sin(2.0 * PI * vib * t));
            phase += 2.0 * PI * f / fs;
            let env = 0.6 + 0.4 * libm::sin(2.0 * PI * am * t + phase0);
            (1..=5)
                .map(|h| libm::sin(h as f64 * phase) / h as f64)
                .sum::<f64>()
                * env
                * 0.3
        })
        .collect();
    // band-limited noise: white noise through a resonant two-pole filter
    let centre = rng.random_range(900.0..2500.0);
    let r: f64 = 0.97;
    let w = 2.0 * PI * centre / fs;
    let (a1, a2) = (2.0 * r * libm::cos(w), -r * r);
    let rate = rng.random_range(3.0..7.0);
    let (mut y1, mut y2) = (0.0, 0.0);
    let mut noise = vec![0.0; len];
    for (n, out) in noise.iter_mut().enumerate() {
        let e: f64 = rng.sample(StandardNormal);
        let y = e * (1.0 - r) + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        let t = n as f64 / fs;
        let env = libm::pow(libm::fabs(libm::sin(PI * rate * t)), 2.0);
        *out = y * env;
    }
    let p_tone = power(&tone);
    let p_noise = power(&noise).max(1e-30);
    let g = libm::sqrt(p_tone / p_noise);
    noise.iter_mut().for_each(|v| *v *= g);
    [tone, noise]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_wave(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(), 8000).unwrap()
    }

    #[test]
    fn equal_power_zero_db_has_unit_gain() {
        let s1 = Waveform::new(vec![1.0, -1.0, 1.0, -1.0], 8000).unwrap();
        let s2 = Waveform::new(vec![-1.0, 1.0, 1.0, 1.0], 8000).unwrap();
        let m = mix_pair(&s1, &s2, 0.0).unwrap();
        assert_eq!(m.gain, 1.0);
    }

    #[test]
    fn ten_db_gain_and_measured_snr() {
        let s1 = random_wave(4000, 1);
        let mut s2 = random_wave(4000, 2);
        let k = libm::sqrt(s1.power() / s2.power());
        s2.samples.iter_mut().for_each(|v| *v *= k);
        let m = mix_pair(&s1, &s2, 10.0).unwrap();
        assert!((m.gain - 0.31622776601683794).abs() < 1e-12);
        assert!((snr_db(&m.sources[0].samples, &m.sources[1].samples) - 10.0).abs() < 1e-9);
        for i in 0..4000 {
            assert_eq!(m.mixture.samples[i], m.sources[0].samples[i] + m.sources[1].samples[i]);
        }
    }

    #[test]
    fn truncates_to_common_length_and_rejects_silence() {
        let m = mix_pair(&random_wave(300, 1), &random_wave(200, 2), -3.0).unwrap();
        assert_eq!(m.mixture.len(), 200);
        let silent = Waveform::new(vec![0.0; 10], 8000).unwrap();
        assert!(matches!(mix_pair(&silent, &random_wave(10, 1), 0.0), Err(Error::DegenerateSource(_))));
        assert!(matches!(mix_pair(&random_wave(10, 1), &silent, 0.0), Err(Error::DegenerateSource(_))));
        let other_rate = Waveform::new(vec![1.0; 10], 16000).unwrap();
        assert!(matches!(mix_pair(&random_wave(10, 1), &other_rate, 0.0), Err(Error::SampleRate { .. })));
    }

    #[test]
    fn noise_is_added_at_requested_snr() {
        let mix = random_wave(2000, 3);
        let noise = random_wave(5000, 4);
        for (i, snr) in [-5.0, 0.0, 7.5, 20.0].into_iter().enumerate() {
            let out = add_noise(&mix, &noise, snr, i as u64).unwrap();
            let added: Vec<f64> = out.samples.iter().zip(&mix.samples).map(|(a, b)| a - b).collect();
            assert!((snr_db(&mix.samples, &added) - snr).abs() < 0.01);
        }
        assert_eq!(add_noise(&mix, &noise, f64::INFINITY, 0).unwrap(), mix);
        let silent = Waveform::new(vec![0.0; 3000], 8000).unwrap();
        assert_eq!(add_noise(&mix, &silent, 0.0, 0), Err(Error::DegenerateNoise));
        assert!(add_noise(&mix, &random_wave(100, 5), 0.0, 0).is_err());
    }

    #[test]
    fn equal_power_noise_at_zero_db_has_unit_gain() {
        let mix = Waveform::new(vec![1.0, -1.0, 1.0], 8000).unwrap();
        let noise = Waveform::new(vec![-1.0, -1.0, 1.0], 8000).unwrap();
        let (_, g) = add_noise_with_gain(&mix, &noise, 0.0, 9).unwrap();
        assert_eq!(g, 1.0);
    }

    #[test]
    fn noise_offset_is_seeded() {
        assert_eq!(noise_offset(1000, 10, 5).unwrap(), noise_offset(1000, 10, 5).unwrap());
        assert_eq!(noise_offset(10, 10, 5).unwrap(), 0);
    }

    #[test]
    fn resample_length_and_identity() {
        let w = random_wave(32000, 1);
        let w16 = Waveform::new(w.samples.clone(), 16000).unwrap();
        assert_eq!(resample(&w16, 8000).unwrap().len(), 16000);
        assert_eq!(resample(&w16, 16000).unwrap(), w16);
        let w441 = Waveform::new(vec![0.1; 441], 44100).unwrap();
        assert_eq!(resample(&w441, 8000).unwrap().len(), 80);
    }

    #[test]
    fn resampled_tone_keeps_frequency_and_amplitude() {
        let fs = 16000.0;
        let x: Vec<f64> = (0..32000).map(|n| (2.0 * PI * 1000.0 * n as f64 / fs).sin()).collect();
        let y = resample(&Waveform::new(x, 16000).unwrap(), 8000).unwrap();
        // project the interior onto a 1 kHz quadrature pair at 8 kHz
        let mid = &y.samples[2000..14000];
        let (mut c, mut s) = (0.0, 0.0);
        for (i, v) in mid.iter().enumerate() {
            let ph = 2.0 * PI * 1000.0 * (i + 2000) as f64 / 8000.0;
            c += v * ph.cos();
            s += v * ph.sin();
        }
        let amp = 2.0 * (c * c + s * s).sqrt() / mid.len() as f64;
        assert!((amp - 1.0).abs() < 0.01, "{amp}");
        let residual: f64 = mid
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ph = 2.0 * PI * 1000.0 * (i + 2000) as f64 / 8000.0;
                let fit = 2.0 / mid.len() as f64 * (c * ph.cos() + s * ph.sin());
                (v - fit).powi(2)
            })
            .sum::<f64>()
            / mid.len() as f64;
        assert!(residual < 1e-4, "{residual}");
    }

    fn corpus(speakers: usize, per: usize) -> Vec<UtteranceRef> {
        (0..speakers)
            .flat_map(|s| {
                (0..per).map(move |u| UtteranceRef { id: format!("s{s:02}_u{u}"), speaker: format!("s{s:02}") })
            })
            .collect()
    }

    #[test]
    fn planning_never_pairs_a_speaker_with_itself() {
        let utts = corpus(10, 5);
        let plan = plan_mixtures(&utts, 100, -5.0, 5.0, 7).unwrap();
        assert_eq!(plan.len(), 100);
        for p in &plan {
            assert_ne!(utts[p.sources[0]].speaker, utts[p.sources[1]].speaker);
            assert!((-5.0..=5.0).contains(&p.snr_db));
        }
        assert_eq!(plan, plan_mixtures(&utts, 100, -5.0, 5.0, 7).unwrap());
        assert_ne!(plan, plan_mixtures(&utts, 100, -5.0, 5.0, 8).unwrap());
    }

    #[test]
    fn two_speakers_are_always_paired() {
        let utts = corpus(2, 3);
        for p in plan_mixtures(&utts, 20, 0.0, 0.0, 1).unwrap() {
            let mut s = [utts[p.sources[0]].speaker.clone(), utts[p.sources[1]].speaker.clone()];
            s.sort();
            assert_eq!(s, ["s00".to_string(), "s01".to_string()]);
            assert_eq!(p.snr_db, 0.0);
        }
    }

    #[test]
    fn one_speaker_is_a_corpus_error() {
        assert!(matches!(plan_mixtures(&corpus(1, 4), 3, 0.0, 1.0, 0), Err(Error::Corpus(_))));
    }

    #[test]
    fn splits_are_disjoint_for_large_corpora() {
        let utts = corpus(60, 2);
        let (train, dt) = select_split(&utts, Split::Train);
        let (test, ds) = select_split(&utts, Split::Test);
        assert!(dt && ds);
        assert!(train.iter().all(|u| test.iter().all(|v| v.speaker != u.speaker)));
        let (small, disjoint) = select_split(&corpus(2, 2), Split::Test);
        assert!(!disjoint);
        assert_eq!(small.len(), 4);
    }

    #[test]
    fn peak_limiting_is_common() {
        let mut a = Waveform::new(vec![2.0, -0.5], 8000).unwrap();
        let mut b = Waveform::new(vec![0.5, 0.5], 8000).unwrap();
        let s = limit_peak(&mut [&mut a, &mut b], 1.0);
        assert_eq!(s, 0.5);
        assert_eq!(a.samples, vec![1.0, -0.25]);
        assert_eq!(b.samples, vec![0.25, 0.25]);
    }

    #[test]
    fn toy_sources_are_seeded_and_balanced() {
        let [a, b] = toy_sources(8000, 8000, 3);
        assert_eq!(toy_sources(8000, 8000, 3), [a.clone(), b.clone()]);
        assert!((power(&a) / power(&b) - 1.0).abs() < 1e-9);
        assert!(a.iter().chain(&b).all(|v| v.is_finite()));
    }
}
