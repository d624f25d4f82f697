//! Hybrid-domain front end: a learned strided 1-d convolution (ReLU) and the
//! log-magnitude spectrogram, computed over identical frame boundaries and
//! concatenated along the channel axis (conv channels first).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::ModelConfig;
use crate::dsp::{self, StftConfig};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Mat};
use crate::params::{Init, ParamStore, Slot};

/// Hybrid feature map `H`, `[T × F]` with `F = f_conv + f_spec`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: Mat,
    pub f_conv: usize,
    pub f_spec: usize,
}

impl FeatureMap {
    pub fn frames(&self) -> usize {
        self.values.rows
    }

    pub fn channels(&self) -> usize {
        self.values.cols
    }
}

/// Fixed per-bin affine standardization of the log-magnitude channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl SpectralStats {
    pub fn identity(bins: usize) -> Self {
        SpectralStats { mean: vec![0.0; bins], scale: vec![1.0; bins] }
    }

    /// Per-bin mean and standard deviation of log magnitudes over `signals`.
    pub fn estimate<'a>(
        signals: impl IntoIterator<Item = &'a [f64]>,
        stft: &StftConfig,
        floor: f64,
    ) -> Result<Self> {
        let bins = stft.bins();
        let mut sum = vec![0.0; bins];
        let mut sum_sq = vec![0.0; bins];
        let mut count = 0usize;
        for x in signals {
            let lm = dsp::log_magnitude(&dsp::stft(x, stft)?, floor)?;
            for t in 0..lm.rows {
                for (k, v) in lm.row(t).iter().enumerate() {
                    sum[k] += v;
                    sum_sq[k] += v * v;
                }
            }
            count += lm.rows;
        }
        if count == 0 {
            return Err(Error::Corpus("no frames to estimate spectral statistics".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let var = (sq / n - m * m).max(0.0);
                let sd = libm::sqrt(var);
                if sd > 1e-6 { sd } else { 1.0 }
            })
            .collect();
        Ok(SpectralStats { mean, scale })
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub kernel: Slot,
    pub bias: Slot,
    pub conv_channels: usize,
    pub spectral: bool,
    pub stft: StftConfig,
    pub log_floor: f64,
}

/// Intermediate values kept for the backward pass and the decoder.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// Conv pre-activations `[T × f_conv]`.
    pub pre: Mat,
    /// ReLU conv features `[T × f_conv]`.
    pub conv: Mat,
    /// `max(|X|, floor)` of the mixture, `[T × bins]` (empty when spectral is off).
    pub magnitude: Mat,
    /// Mixture phase `[T × bins]` (empty when spectral is off).
    pub phase: Mat,
}

impl Encoder {
    pub fn new<R: Rng>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let l = cfg.stft.frame_len;
        Encoder {
            kernel: store.add("encoder.kernel", &[cfg.conv_channels, l], Init::FanIn(l), rng),
            bias: store.add("encoder.bias", &[cfg.conv_channels], Init::FanIn(l), rng),
            conv_channels: cfg.conv_channels,
            spectral: cfg.spectral,
            stft: cfg.stft,
            log_floor: cfg.log_floor,
        }
    }

    pub fn spectral_channels(&self) -> usize {
        if self.spectral {
            self.stft.bins()
        } else {
            0
        }
    }

    /// `H = [ReLU(frames · Kᵀ + b) | standardize(log|STFT(x)|)]`.
    pub fn encode(&self, x: &[f64], params: &[f64], stats: &SpectralStats) -> Result<(FeatureMap, EncoderTrace)> {
        let t = self.stft.frame_count(x.len())?;
        let fc = self.conv_channels;
        let fs = self.spectral_channels();
        if self.spectral && stats.mean.len() != fs {
            return Err(Error::Dimension(format!(
                "spectral statistics have {} bins, encoder expects {fs}",
                stats.mean.len()
            )));
        }
        let frames = dsp::frames_view(x, &self.stft, t);
        let kernel = crate::linalg::View::row_major(self.kernel.get(params), fc, self.stft.frame_len);
        let mut pre = Mat::zeros(t, fc);
        gemm(frames, kernel.t(), &mut pre.data, 0.0);
        let bias = self.bias.get(params);
        for r in 0..t {
            for (v, b) in pre.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
        let conv = Mat::from_vec(t, fc, pre.data.iter().map(|v| v.max(0.0)).collect());

        let mut values = Mat::zeros(t, fc + fs);
        for r in 0..t {
            values.row_mut(r)[..fc].copy_from_slice(conv.row(r));
        }
        let (magnitude, phase) = if self.spectral {
            let spec = dsp::stft(x, &self.stft)?;
            debug_assert_eq!(spec.frames(), t);
            let log_mag = dsp::log_magnitude(&spec, self.log_floor)?;
            for r in 0..t {
                let row = &mut values.row_mut(r)[fc..];
                for (k, v) in row.iter_mut().enumerate() {
                    *v = (log_mag.get(r, k) - stats.mean[k]) / stats.scale[k];
                }
            }
            let mut magnitude = spec.magnitude();
            for v in magnitude.data.iter_mut() {
                *v = v.max(self.log_floor);
            }
            (magnitude, spec.phase())
        } else {
            (Mat::zeros(t, 0), Mat::zeros(t, 0))
        };
        let fm = FeatureMap { values, f_conv: fc, f_spec: fs };
        Ok((fm, EncoderTrace { pre, conv, magnitude, phase }))
    }

    /// Accumulate kernel/bias gradients from `∂L/∂conv` (`[T × f_conv]`).
    /// The spectral channels are a fixed transform and receive none.
    pub fn backward(&self, x: &[f64], trace: &EncoderTrace, grad_conv: &Mat, grads: &mut [f64]) {
        let t = trace.pre.rows;
        let mut g_pre = grad_conv.clone();
        for (g, p) in g_pre.data.iter_mut().zip(&trace.pre.data) {
            if *p <= 0.0 {
                *g = 0.0;
            }
        }
        let frames = dsp::frames_view(x, &self.stft, t);
        gemm(g_pre.view().t(), frames, self.kernel.get_mut(grads), 1.0);
        let gb = self.bias.get_mut(grads);
        for r in 0..t {
            for (b, g) in gb.iter_mut().zip(g_pre.row(r)) {
                *b += g;
            }
        }
    }
}
