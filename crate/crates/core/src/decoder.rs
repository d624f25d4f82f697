//! Dual-path reconstruction: masked conv features through a learned
//! transposed convolution with overlap-add, masked spectral magnitudes through
//! the mixture-phase inverse STFT, blended as `α·deconv + (1 − α)·istft`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::{MaskDomain, ModelConfig};
use crate::dsp::{self, StftConfig};
use crate::encoder::{FeatureMap, SpectralStats};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Mat, View};
use crate::params::{Init, ParamStore, Slot};
use crate::separator::MaskSet;

#[derive(Debug, Clone)]
pub struct Decoder {
    pub kernel: Slot,
    pub alpha: f64,
    pub mask_domain: MaskDomain,
    pub stft: StftConfig,
    pub f_conv: usize,
    pub f_spec: usize,
}

/// The two reconstructions of one speaker before blending.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPaths {
    pub deconv: Vec<f64>,
    pub istft: Option<Vec<f64>>,
}

impl Decoder {
    pub fn new<R: Rng>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let l = cfg.stft.frame_len;
        Decoder {
            kernel: store.add("decoder.kernel", &[cfg.conv_channels, l], Init::FanIn(cfg.conv_channels), rng),
            alpha: cfg.alpha,
            mask_domain: cfg.mask_domain,
            stft: cfg.stft,
            f_conv: cfg.conv_channels,
            f_spec: cfg.spectral_channels(),
        }
    }

    fn uses_istft(&self) -> bool {
        self.f_spec > 0 && self.alpha < 1.0
    }

    fn check(&self, h: &FeatureMap, masks: &MaskSet, phase: &Mat) -> Result<()> {
        if h.f_conv != self.f_conv || h.f_spec != self.f_spec {
            return Err(Error::Dimension(format!(
                "feature map layout {}+{} vs decoder {}+{}",
                h.f_conv, h.f_spec, self.f_conv, self.f_spec
            )));
        }
        if masks.frames != h.frames() || masks.channels != h.channels() {
            return Err(Error::Dimension(format!(
                "masks [{} × {}] vs feature map [{} × {}]",
                masks.frames,
                masks.channels,
                h.frames(),
                h.channels()
            )));
        }
        if self.uses_istft() && phase.shape() != (h.frames(), self.f_spec) {
            return Err(Error::Dimension(format!(
                "mixture phase {:?} vs [{} × {}]",
                phase.shape(),
                h.frames(),
                self.f_spec
            )));
        }
        Ok(())
    }

    /// Masked conv features `M_i ⊙ H_conv`, `[T × f_conv]`.
    fn masked_conv(&self, h: &FeatureMap, mask: &[f64]) -> Mat {
        let f = h.channels();
        Mat::from_fn(h.frames(), self.f_conv, |t, c| mask[t * f + c] * h.values.get(t, c))
    }

    /// Linear magnitude for the inverse STFT, `[T × f_spec]`.
    fn spectral_magnitude(&self, h: &FeatureMap, mask: &[f64], stats: &SpectralStats) -> Mat {
        let f = h.channels();
        let fc = self.f_conv;
        Mat::from_fn(h.frames(), self.f_spec, |t, k| {
            let m = mask[t * f + fc + k];
            let std = h.values.get(t, fc + k);
            match self.mask_domain {
                MaskDomain::Linear => m * libm::exp(std * stats.scale[k] + stats.mean[k]),
                MaskDomain::Log => libm::exp(m * std * stats.scale[k] + stats.mean[k]),
            }
        })
    }

    pub fn decode_paths(
        &self,
        h: &FeatureMap,
        masks: &MaskSet,
        phase: &Mat,
        stats: &SpectralStats,
        p: &[f64],
        out_len: usize,
    ) -> Result<Vec<DecodedPaths>> {
        self.check(h, masks, phase)?;
        let kernel = View::row_major(self.kernel.get(p), self.f_conv, self.stft.frame_len);
        let mut out = Vec::with_capacity(masks.speakers());
        for i in 0..masks.speakers() {
            let mask = masks.speaker(i);
            let masked = self.masked_conv(h, mask);
            let mut frames = Mat::zeros(h.frames(), self.stft.frame_len);
            gemm(masked.view(), kernel, &mut frames.data, 0.0);
            let deconv = dsp::overlap_add(&frames, self.stft.hop, out_len);
            let istft = if self.f_spec > 0 {
                let mag = self.spectral_magnitude(h, mask, stats);
                Some(dsp::istft(&mag, phase, &self.stft, out_len)?)
            } else {
                None
            };
            out.push(DecodedPaths { deconv, istft });
        }
        Ok(out)
    }

    /// `ŝ_i = α·ŝ_deconv + (1 − α)·ŝ_istft` for every speaker; exactly `out_len` samples each.
    pub fn decode(
        &self,
        h: &FeatureMap,
        masks: &MaskSet,
        phase: &Mat,
        stats: &SpectralStats,
        p: &[f64],
        out_len: usize,
    ) -> Result<Vec<Vec<f64>>> {
        if !self.uses_istft() {
            // α = 1: pure deconvolution path
            self.check(h, masks, phase)?;
            let kernel = View::row_major(self.kernel.get(p), self.f_conv, self.stft.frame_len);
            return Ok((0..masks.speakers())
                .map(|i| {
                    let masked = self.masked_conv(h, masks.speaker(i));
                    let mut frames = Mat::zeros(h.frames(), self.stft.frame_len);
                    gemm(masked.view(), kernel, &mut frames.data, 0.0);
                    dsp::overlap_add(&frames, self.stft.hop, out_len)
                })
                .collect());
        }
        let paths = self.decode_paths(h, masks, phase, stats, p, out_len)?;
        let a = self.alpha;
        Ok(paths
            .into_iter()
            .map(|d| {
                let spec = d.istft.expect("spectral path present when alpha < 1");
                d.deconv.iter().zip(&spec).map(|(x, y)| a * x + (1.0 - a) * y).collect()
            })
            .collect())
    }

    /// Backward from `∂L/∂ŝ_i`. Accumulates kernel gradients and returns
    /// `(∂L/∂masks [N × T·F], ∂L/∂H_conv [T × f_conv])`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        h: &FeatureMap,
        masks: &MaskSet,
        phase: &Mat,
        stats: &SpectralStats,
        grad_out: &[Vec<f64>],
        p: &[f64],
        grads: &mut [f64],
    ) -> (Mat, Mat) {
        let t = h.frames();
        let f = h.channels();
        let fc = self.f_conv;
        let l = self.stft.frame_len;
        let kernel = View::row_major(self.kernel.get(p), fc, l);
        let mut g_masks = Mat::zeros(masks.speakers(), t * f);
        let mut g_conv = Mat::zeros(t, fc);
        for (i, g) in grad_out.iter().enumerate() {
            let mask = masks.speaker(i);
            let mut g_frames = dsp::overlap_add_adjoint(g, t, l, self.stft.hop);
            g_frames.data.iter_mut().for_each(|v| *v *= self.alpha);
            let masked = self.masked_conv(h, mask);
            gemm(masked.view().t(), g_frames.view(), self.kernel.get_mut(grads), 1.0);
            let mut g_masked = Mat::zeros(t, fc);
            gemm(g_frames.view(), kernel.t(), &mut g_masked.data, 0.0);
            let gm = g_masks.row_mut(i);
            for r in 0..t {
                for c in 0..fc {
                    let gv = g_masked.get(r, c);
                    gm[r * f + c] = gv * h.values.get(r, c);
                    g_conv.data[r * fc + c] += gv * mask[r * f + c];
                }
            }
            if self.uses_istft() {
                let scaled: Vec<f64> = g.iter().map(|v| v * (1.0 - self.alpha)).collect();
                let g_mag = dsp::istft_magnitude_adjoint(&scaled, phase, &self.stft);
                for r in 0..t {
                    for k in 0..self.f_spec {
                        let std = h.values.get(r, fc + k);
                        let m = mask[r * f + fc + k];
                        let d = match self.mask_domain {
                            MaskDomain::Linear => libm::exp(std * stats.scale[k] + stats.mean[k]),
                            MaskDomain::Log => {
                                let mag = libm::exp(m * std * stats.scale[k] + stats.mean[k]);
                                mag * std * stats.scale[k]
                            }
                        };
                        gm[r * f + fc + k] = g_mag.get(r, k) * d;
                    }
                }
            }
        }
        (g_masks, g_conv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Encoder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        enc: Encoder,
        dec: Decoder,
        store: ParamStore,
        x: Vec<f64>,
    }

    fn fixture(alpha: f64, domain: MaskDomain) -> Fixture {
        let mut cfg = ModelConfig::default();
        cfg.conv_channels = 8;
        cfg.alpha = alpha;
        cfg.mask_domain = domain;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&cfg, &mut store, &mut rng);
        let dec = Decoder::new(&cfg, &mut store, &mut rng);
        let x = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        Fixture { enc, dec, store, x }
    }

    fn random_masks(frames: usize, channels: usize, seed: u64) -> MaskSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Mat::from_fn(2, frames * channels, |_, _| rng.random_range(0.0..1.0));
        crate::separator::cluster::normalize_across_speakers(&mut values);
        MaskSet { values, frames, channels }
    }

    #[test]
    fn alpha_one_is_the_deconv_path() {
        let fx = fixture(1.0, MaskDomain::Linear);
        let stats = SpectralStats::identity(11);
        let (h, tr) = fx.enc.encode(&fx.x, &fx.store.values, &stats).unwrap();
        let m = random_masks(h.frames(), h.channels(), 2);
        let out = fx.dec.decode(&h, &m, &tr.phase, &stats, &fx.store.values, 400).unwrap();
        let paths = fx.dec.decode_paths(&h, &m, &tr.phase, &stats, &fx.store.values, 400).unwrap();
        for (o, p) in out.iter().zip(&paths) {
            assert_eq!(o, &p.deconv);
            assert_eq!(o.len(), 400);
        }
    }

    #[test]
    fn alpha_zero_with_unit_masks_reconstructs_mixture() {
        let fx = fixture(0.0, MaskDomain::Linear);
        let stats = SpectralStats::identity(11);
        let (h, tr) = fx.enc.encode(&fx.x, &fx.store.values, &stats).unwrap();
        let ones = MaskSet { values: Mat::from_fn(1, h.frames() * h.channels(), |_, _| 1.0), frames: h.frames(), channels: h.channels() };
        let out = fx.dec.decode(&h, &ones, &tr.phase, &stats, &fx.store.values, 400).unwrap();
        let interior = 20..380;
        let err: f64 = interior.clone().map(|i| (out[0][i] - fx.x[i]).powi(2)).sum();
        let norm: f64 = interior.map(|i| fx.x[i].powi(2)).sum();
        assert!((err / norm).sqrt() < 1e-6);
    }

    #[test]
    fn alpha_half_averages_the_paths() {
        let fx = fixture(0.5, MaskDomain::Linear);
        let stats = SpectralStats::identity(11);
        let (h, tr) = fx.enc.encode(&fx.x, &fx.store.values, &stats).unwrap();
        let m = random_masks(h.frames(), h.channels(), 3);
        let out = fx.dec.decode(&h, &m, &tr.phase, &stats, &fx.store.values, 400).unwrap();
        let paths = fx.dec.decode_paths(&h, &m, &tr.phase, &stats, &fx.store.values, 400).unwrap();
        for (o, p) in out.iter().zip(&paths) {
            let spec = p.istft.as_ref().unwrap();
            for n in 0..400 {
                assert!((o[n] - 0.5 * (p.deconv[n] + spec[n])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn output_length_is_exact() {
        let fx = fixture(0.3, MaskDomain::Linear);
        let stats = SpectralStats::identity(11);
        let (h, tr) = fx.enc.encode(&fx.x, &fx.store.values, &stats).unwrap();
        let m = random_masks(h.frames(), h.channels(), 4);
        for len in [1, 57, 395, 400, 512] {
            let out = fx.dec.decode(&h, &m, &tr.phase, &stats, &fx.store.values, len).unwrap();
            assert!(out.iter().all(|o| o.len() == len));
        }
    }

    #[test]
    fn deconv_path_is_linear_in_masked_features() {
        let fx = fixture(1.0, MaskDomain::Linear);
        let stats = SpectralStats::identity(11);
        let (h, tr) = fx.enc.encode(&fx.x, &fx.store.values, &stats).unwrap();
        let m = random_masks(h.frames(), h.channels(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut h1 = h.clone();
        let mut h2 = h.clone();
        for v in h1.values.data.iter_mut().chain(h2.values.data.iter_mut()) {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut h12 = h.clone();
        for ((s, a), b) in h12.values.data.iter_mut().zip(&h1.values.data).zip(&h2.values.data) {
            *s = 2.0 * a - 0.5 * b;
        }
        let d = |h: &FeatureMap| fx.dec.decode(h, &m, &tr.phase, &stats, &fx.store.values, 400).unwrap();
        let (y1, y2, y12) = (d(&h1), d(&h2), d(&h12));
        for i in 0..2 {
            for n in 0..400 {
                assert!((y12[i][n] - (2.0 * y1[i][n] - 0.5 * y2[i][n])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let fx = fixture(0.5, MaskDomain::Linear);
        let stats = SpectralStats::identity(11);
        let (h, tr) = fx.enc.encode(&fx.x, &fx.store.values, &stats).unwrap();
        let m = random_masks(h.frames() - 1, h.channels(), 7);
        assert!(matches!(fx.dec.decode(&h, &m, &tr.phase, &stats, &fx.store.values, 400), Err(Error::Dimension(_))));
        let m = random_masks(h.frames(), h.channels(), 7);
        let bad_phase = Mat::zeros(h.frames() + 1, 11);
        assert!(matches!(fx.dec.decode(&h, &m, &bad_phase, &stats, &fx.store.values, 400), Err(Error::Dimension(_))));
    }

    fn gradient_check(alpha: f64, domain: MaskDomain) {
        let fx = fixture(alpha, domain);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let stats = SpectralStats { mean: (0..11).map(|_| rng.random_range(-1.0..1.0)).collect(), scale: (0..11).map(|_| rng.random_range(0.5..2.0)).collect() };
        let x = &fx.x[..120];
        let (h, tr) = fx.enc.encode(x, &fx.store.values, &stats).unwrap();
        let m = random_masks(h.frames(), h.channels(), 9);
        let up: Vec<Vec<f64>> = (0..2).map(|_| (0..120).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let obj = |h: &FeatureMap, m: &MaskSet, p: &[f64]| -> f64 {
            let out = fx.dec.decode(h, m, &tr.phase, &stats, p, 120).unwrap();
            out.iter().zip(&up).map(|(o, u)| o.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()).sum()
        };
        let mut grads = fx.store.zeros_like();
        let (gm, gc) = fx.dec.backward(&h, &m, &tr.phase, &stats, &up, &fx.store.values, &mut grads);
        let eps = 1e-6;
        let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6);
        let k = fx.dec.kernel;
        for i in k.offset..k.offset + k.len {
            let mut p = fx.store.values.clone();
            p[i] += eps;
            let a = obj(&h, &m, &p);
            p[i] -= 2.0 * eps;
            let fd = (a - obj(&h, &m, &p)) / (2.0 * eps);
            assert!(close(fd, grads[i]), "kernel {i}: {fd} vs {}", grads[i]);
        }
        for i in 0..m.values.data.len() {
            let mut mp = m.clone();
            mp.values.data[i] += eps;
            let a = obj(&h, &mp, &fx.store.values);
            mp.values.data[i] -= 2.0 * eps;
            let fd = (a - obj(&h, &mp, &fx.store.values)) / (2.0 * eps);
            assert!(close(fd, gm.data[i]), "mask {i}: {fd} vs {}", gm.data[i]);
        }
        for t in 0..h.frames() {
            for c in 0..8 {
                let mut hp = h.clone();
                let idx = t * h.channels() + c;
                hp.values.data[idx] += eps;
                let a = obj(&hp, &m, &fx.store.values);
                hp.values.data[idx] -= 2.0 * eps;
                let fd = (a - obj(&hp, &m, &fx.store.values)) / (2.0 * eps);
                assert!(close(fd, gc.get(t, c)), "conv ({t},{c}): {fd} vs {}", gc.get(t, c));
            }
        }
    }

    #[test]
    fn gradients_alpha_one() {
        gradient_check(1.0, MaskDomain::Linear);
    }

    #[test]
    fn gradients_blended_linear_domain() {
        gradient_check(0.4, MaskDomain::Linear);
    }

    #[test]
    fn gradients_blended_log_domain() {
        gradient_check(0.4, MaskDomain::Log);
    }
}
