//! Framing, windowed STFT, log magnitude, mixture-phase inverse STFT and
//! overlap-add. All routines are pure functions of their inputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{gemm, Mat, View};

pub const DEFAULT_SAMPLE_RATE: u32 = 8000;
pub const DEFAULT_LOG_FLOOR: f64 = 1e-8;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Square root of the periodic Hann window.
    SqrtHann,
}

impl Window {
    pub fn samples(self, len: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => (0..len)
                .map(|n| libm::sqrt(0.5 - 0.5 * libm::cos(2.0 * PI * n as f64 / len as f64)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        // 2.5 ms at 8 kHz, half-frame hop
        StftConfig { frame_len: 20, hop: 10, window: Window::SqrtHann }
    }
}

impl StftConfig {
    pub fn new(frame_len: usize, hop: usize) -> Result<Self> {
        let cfg = StftConfig { frame_len, hop, window: Window::SqrtHann };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 {
            return Err(Error::Config(format!("frame_len must be >= 2, got {}", self.frame_len)));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::Config(format!(
                "hop must satisfy 0 < hop <= frame_len, got hop={} frame_len={}",
                self.hop, self.frame_len
            )));
        }
        Ok(())
    }

    /// Number of one-sided DFT bins.
    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len < self.frame_len {
            return Err(Error::TooShort { len, frame_len: self.frame_len });
        }
        Ok((len - self.frame_len) / self.hop + 1)
    }

    /// Samples covered by `frames` frames.
    pub fn covered_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }
}

/// One-sided complex STFT, `[frames × bins]` real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub re: Mat,
    pub im: Mat,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.re.rows
    }

    pub fn bins(&self) -> usize {
        self.re.cols
    }

    pub fn magnitude(&self) -> Mat {
        let data = self.re.data.iter().zip(&self.im.data).map(|(r, i)| libm::hypot(*r, *i)).collect();
        Mat::from_vec(self.re.rows, self.re.cols, data)
    }

    pub fn phase(&self) -> Mat {
        let data = self.re.data.iter().zip(&self.im.data).map(|(r, i)| libm::atan2(*i, *r)).collect();
        Mat::from_vec(self.re.rows, self.re.cols, data)
    }
}

/// Cosine and sine tables of the one-sided DFT, `[bins × frame_len]`.
struct DftTables {
    cos: Mat,
    sin: Mat,
}

impl DftTables {
    fn new(frame_len: usize) -> Self {
        let bins = frame_len / 2 + 1;
        let angle = |k: usize, n: usize| 2.0 * PI * ((k * n) % frame_len) as f64 / frame_len as f64;
        DftTables {
            cos: Mat::from_fn(bins, frame_len, |k, n| libm::cos(angle(k, n))),
            sin: Mat::from_fn(bins, frame_len, |k, n| libm::sin(angle(k, n))),
        }
    }
}

/// Slice `x` into `[T × frame_len]` frames at stride `hop`, no padding.
pub fn frame(x: &[f64], cfg: &StftConfig) -> Result<Mat> {
    let t = cfg.frame_count(x.len())?;
    let l = cfg.frame_len;
    let mut out = Mat::zeros(t, l);
    for i in 0..t {
        out.row_mut(i).copy_from_slice(&x[i * cfg.hop..i * cfg.hop + l]);
    }
    Ok(out)
}

/// Windowed one-sided DFT of every frame (unnormalized forward transform).
pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    let mut frames = frame(x, cfg)?;
    let window = cfg.window.samples(cfg.frame_len);
    for r in 0..frames.rows {
        for (v, w) in frames.row_mut(r).iter_mut().zip(&window) {
            *v *= w;
        }
    }
    let tables = DftTables::new(cfg.frame_len);
    let mut re = Mat::zeros(frames.rows, cfg.bins());
    let mut im = Mat::zeros(frames.rows, cfg.bins());
    gemm(frames.view(), tables.cos.view().t(), &mut re.data, 0.0);
    gemm(frames.view(), tables.sin.view().t(), &mut im.data, 0.0);
    for v in im.data.iter_mut() {
        *v = -*v;
    }
    Ok(Spectrogram { re, im, config: *cfg })
}

/// Element-wise `ln(max(|X|, floor))`.
pub fn log_magnitude(spec: &Spectrogram, floor: f64) -> Result<Mat> {
    if !(floor > 0.0) {
        return Err(Error::Config(format!("log floor must be positive, got {floor}")));
    }
    let mut mag = spec.magnitude();
    for v in mag.data.iter_mut() {
        *v = libm::log(v.max(floor));
    }
    Ok(mag)
}

/// Overlap-add envelope of the squared synthesis window over `out_len` samples.
pub fn squared_window_sum(cfg: &StftConfig, frames: usize, out_len: usize) -> Vec<f64> {
    let window = cfg.window.samples(cfg.frame_len);
    let mut env = vec![0.0; out_len];
    for t in 0..frames {
        for (n, w) in window.iter().enumerate() {
            if let Some(e) = env.get_mut(t * cfg.hop + n) {
                *e += w * w;
            }
        }
    }
    env
}

// Samples whose envelope falls below this are left at zero.
const ENVELOPE_EPS: f64 = 1e-10;

fn check_same_shape(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Per-frame inverse real DFT of `mag·e^{i·phase}` (1/frame_len normalization).
fn inverse_frames(mag: &Mat, phase: &Mat, cfg: &StftConfig) -> Mat {
    let l = cfg.frame_len;
    let bins = cfg.bins();
    let tables = DftTables::new(l);
    // Hermitian weights: DC and (even-length) Nyquist appear once, the rest twice.
    let weight = |k: usize| if k == 0 || (l % 2 == 0 && k == l / 2) { 1.0 } else { 2.0 };
    let mut a = Mat::zeros(mag.rows, bins);
    let mut b = Mat::zeros(mag.rows, bins);
    for t in 0..mag.rows {
        for k in 0..bins {
            let m = mag.get(t, k) * weight(k) / l as f64;
            let p = phase.get(t, k);
            a.set(t, k, m * libm::cos(p));
            b.set(t, k, m * libm::sin(p));
        }
    }
    // y[n] = Σ_k a_k cos(2πkn/L) − b_k sin(2πkn/L)
    let mut out = Mat::zeros(mag.rows, l);
    gemm(a.view(), tables.cos.view(), &mut out.data, 0.0);
    for v in b.data.iter_mut() {
        *v = -*v;
    }
    gemm(b.view(), tables.sin.view(), &mut out.data, 1.0);
    out
}

/// Mixture-phase inverse STFT: synthesis window, overlap-add, division by the
/// squared-window envelope, then truncation or zero-padding to `out_len`.
pub fn istft(mag: &Mat, phase: &Mat, cfg: &StftConfig, out_len: usize) -> Result<Vec<f64>> {
    check_same_shape(mag, phase, "istft magnitude/phase")?;
    if mag.cols != cfg.bins() {
        return Err(Error::Dimension(format!(
            "istft expects {} bins, got {}",
            cfg.bins(),
            mag.cols
        )));
    }
    let mut frames = inverse_frames(mag, phase, cfg);
    let window = cfg.window.samples(cfg.frame_len);
    for r in 0..frames.rows {
        for (v, w) in frames.row_mut(r).iter_mut().zip(&window) {
            *v *= w;
        }
    }
    let mut y = overlap_add(&frames, cfg.hop, out_len);
    let env = squared_window_sum(cfg, mag.rows, out_len);
    for (v, e) in y.iter_mut().zip(&env) {
        *v = if *e > ENVELOPE_EPS { *v / e } else { 0.0 };
    }
    Ok(y)
}

/// Adjoint of [`istft`] with respect to the magnitude, phase held fixed:
/// maps `∂L/∂y` to `∂L/∂mag`.
pub fn istft_magnitude_adjoint(grad: &[f64], phase: &Mat, cfg: &StftConfig) -> Mat {
    let l = cfg.frame_len;
    let frames = phase.rows;
    let env = squared_window_sum(cfg, frames, grad.len());
    let window = cfg.window.samples(l);
    let mut g = grad.to_vec();
    for (v, e) in g.iter_mut().zip(&env) {
        *v = if *e > ENVELOPE_EPS { *v / e } else { 0.0 };
    }
    // frame-domain gradient, windowed
    let mut gf = overlap_add_adjoint(&g, frames, l, cfg.hop);
    for r in 0..gf.rows {
        for (v, w) in gf.row_mut(r).iter_mut().zip(&window) {
            *v *= w;
        }
    }
    let tables = DftTables::new(l);
    let mut gc = Mat::zeros(frames, cfg.bins());
    let mut gs = Mat::zeros(frames, cfg.bins());
    gemm(gf.view(), tables.cos.view().t(), &mut gc.data, 0.0);
    gemm(gf.view(), tables.sin.view().t(), &mut gs.data, 0.0);
    let weight = |k: usize| if k == 0 || (l % 2 == 0 && k == l / 2) { 1.0 } else { 2.0 };
    Mat::from_fn(frames, cfg.bins(), |t, k| {
        let p = phase.get(t, k);
        weight(k) / l as f64 * (libm::cos(p) * gc.get(t, k) - libm::sin(p) * gs.get(t, k))
    })
}

/// Sum `frames` at stride `hop` into a signal of exactly `out_len` samples.
pub fn overlap_add(frames: &Mat, hop: usize, out_len: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_len];
    for t in 0..frames.rows {
        let start = t * hop;
        if start >= out_len {
            break;
        }
        let end = (start + frames.cols).min(out_len);
        for (o, v) in y[start..end].iter_mut().zip(frames.row(t)) {
            *o += v;
        }
    }
    y
}

/// Adjoint of [`overlap_add`]: gathers `grad` back into `[frames × frame_len]`.
pub fn overlap_add_adjoint(grad: &[f64], frames: usize, frame_len: usize, hop: usize) -> Mat {
    let mut out = Mat::zeros(frames, frame_len);
    for t in 0..frames {
        let start = t * hop;
        for (n, v) in out.row_mut(t).iter_mut().enumerate() {
            if let Some(g) = grad.get(start + n) {
                *v = *g;
            }
        }
    }
    out
}

/// Strided view of frames without copying, used by the encoder.
pub(crate) fn frames_view<'a>(x: &'a [f64], cfg: &StftConfig, frames: usize) -> View<'a> {
    View { data: x, rows: frames, cols: cfg.frame_len, rs: cfg.hop as isize, cs: 1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn frame_count_examples() {
        let cfg = StftConfig::default();
        assert_eq!(frame(&vec![0.0; 32000], &cfg).unwrap().rows, 3199);
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let f = frame(&x, &cfg).unwrap();
        assert_eq!(f.rows, 1);
        assert_eq!(f.row(0), &x[..]);
        assert_eq!(
            frame(&vec![0.0; 19], &cfg).unwrap_err(),
            Error::TooShort { len: 19, frame_len: 20 }
        );
    }

    #[test]
    fn frame_starts_at_multiples_of_hop() {
        let cfg = StftConfig::new(8, 3).unwrap();
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let f = frame(&x, &cfg).unwrap();
        assert_eq!(f.rows, (30 - 8) / 3 + 1);
        for t in 0..f.rows {
            assert_eq!(f.get(t, 0), (t * 3) as f64);
        }
    }

    #[test]
    fn stft_has_eleven_bins_for_twenty_point_frames() {
        let spec = stft(&random_signal(200, 1), &StftConfig::default()).unwrap();
        assert_eq!(spec.bins(), 11);
    }

    #[test]
    fn stft_of_silence_is_zero() {
        let spec = stft(&vec![0.0; 100], &StftConfig::default()).unwrap();
        assert!(spec.re.data.iter().chain(&spec.im.data).all(|v| *v == 0.0));
    }

    #[test]
    fn impulse_at_frame_center_gives_flat_magnitude() {
        let cfg = StftConfig::default();
        let mut x = vec![0.0; 20];
        x[10] = 1.0;
        let mag = stft(&x, &cfg).unwrap().magnitude();
        let w = cfg.window.samples(20)[10];
        for k in 0..11 {
            assert!((mag.get(0, k) - w).abs() < 1e-12);
        }
    }

    #[test]
    fn log_magnitude_examples() {
        let cfg = StftConfig::default();
        let ones = Spectrogram { re: Mat::from_vec(1, 2, vec![1.0, 0.0]), im: Mat::from_vec(1, 2, vec![0.0, -1.0]), config: cfg };
        assert!(log_magnitude(&ones, 1e-8).unwrap().data.iter().all(|v| v.abs() < 1e-15));
        let zeros = Spectrogram { re: Mat::zeros(2, 3), im: Mat::zeros(2, 3), config: cfg };
        let lm = log_magnitude(&zeros, 1e-8).unwrap();
        assert!(lm.data.iter().all(|v| *v == libm::log(1e-8)));
        let e = Spectrogram { re: Mat::from_vec(1, 1, vec![core::f64::consts::E]), im: Mat::zeros(1, 1), config: cfg };
        assert!((log_magnitude(&e, 1e-8).unwrap().data[0] - 1.0).abs() < 1e-15);
        assert!(log_magnitude(&e, 0.0).is_err());
    }

    #[test]
    fn istft_round_trip_interior() {
        let cfg = StftConfig::default();
        let x = random_signal(8000, 7);
        let spec = stft(&x, &cfg).unwrap();
        let y = istft(&spec.magnitude(), &spec.phase(), &cfg, x.len()).unwrap();
        let range = cfg.frame_len..x.len() - cfg.frame_len;
        let err: f64 = range.clone().map(|i| (x[i] - y[i]) * (x[i] - y[i])).sum();
        let norm: f64 = range.map(|i| x[i] * x[i]).sum();
        assert!(libm::sqrt(err / norm) < 1e-6);
        assert_eq!(y.len(), x.len());
    }

    #[test]
    fn istft_of_zero_magnitude_is_silent() {
        let cfg = StftConfig::default();
        let y = istft(&Mat::zeros(5, 11), &Mat::from_fn(5, 11, |t, k| (t + k) as f64), &cfg, 60).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn istft_rejects_shape_mismatch() {
        let cfg = StftConfig::default();
        assert!(matches!(istft(&Mat::zeros(5, 11), &Mat::zeros(4, 11), &cfg, 60), Err(Error::Dimension(_))));
        assert!(matches!(istft(&Mat::zeros(5, 10), &Mat::zeros(5, 10), &cfg, 60), Err(Error::Dimension(_))));
    }

    #[test]
    fn squared_sqrt_hann_is_cola_at_half_frame_hop() {
        let cfg = StftConfig::default();
        let env = squared_window_sum(&cfg, 50, cfg.covered_len(50));
        let interior = &env[cfg.frame_len..env.len() - cfg.frame_len];
        let c = interior[0];
        assert!(interior.iter().all(|v| (v - c).abs() < 1e-12));
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_add_examples() {
        let f = Mat::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(overlap_add(&f, 2, 4), vec![1.0, 2.0, 3.0, 4.0]);
        let two = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert_eq!(overlap_add(&two, 3, 6), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        // truncation and zero-padding
        assert_eq!(overlap_add(&two, 3, 4), vec![1.0, 2.0, 3.0, 1.0]);
        assert_eq!(overlap_add(&f, 2, 6), vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn overlap_add_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames = Mat::from_fn(17, 9, |_, _| rng.random_range(-1.0..1.0));
        let hop = 4;
        let out_len = 80;
        let got = overlap_add(&frames, hop, out_len);
        let mut want = vec![0.0; out_len];
        for n in 0..out_len {
            for t in 0..frames.rows {
                if n >= t * hop && n < t * hop + frames.cols {
                    want[n] += frames.get(t, n - t * hop);
                }
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames = 12;
        let out_len = cfg.covered_len(frames) + 3;
        let mag = Mat::from_fn(frames, 11, |_, _| rng.random_range(0.0..1.0));
        let phase = Mat::from_fn(frames, 11, |_, _| rng.random_range(-3.0..3.0));
        let g: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = istft(&mag, &phase, &cfg, out_len).unwrap();
        let gm = istft_magnitude_adjoint(&g, &phase, &cfg);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = mag.data.iter().zip(&gm.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));

        let f = Mat::from_fn(frames, 20, |_, _| rng.random_range(-1.0..1.0));
        let ya = overlap_add(&f, 10, out_len);
        let ga = overlap_add_adjoint(&g, frames, 20, 10);
        let lhs: f64 = ya.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.data.iter().zip(&ga.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
