//! The full separation model: encoder → separator → decoder, with an
//! explicit backward pass through all three.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::decoder::Decoder;
use crate::dsp::Waveform;
use crate::encoder::{Encoder, EncoderTrace, FeatureMap, SpectralStats};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::loss::{self, PitResult};
use crate::params::ParamStore;
use crate::separator::{MaskSet, Separator, SeparatorTrace};

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub stats: SpectralStats,
    pub encoder: Encoder,
    pub separator: Separator,
    pub decoder: Decoder,
}

/// Estimates plus everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub estimates: Vec<Vec<f64>>,
    pub features: FeatureMap,
    pub masks: MaskSet,
    encoder_trace: EncoderTrace,
    separator_trace: SeparatorTrace,
}

impl Model {
    /// Fresh parameters drawn from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&config, &mut params, &mut rng);
        let separator = Separator::new(&config, &mut params, &mut rng);
        let decoder = Decoder::new(&config, &mut params, &mut rng);
        let stats = SpectralStats::identity(config.spectral_channels());
        Ok(Model { config, params, stats, encoder, separator, decoder })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn speakers(&self) -> usize {
        self.config.speakers
    }

    pub fn set_stats(&mut self, stats: SpectralStats) -> Result<()> {
        let bins = self.config.spectral_channels();
        if stats.mean.len() != bins || stats.scale.len() != bins {
            return Err(Error::Dimension(format!(
                "spectral statistics for {} bins, model has {bins}",
                stats.mean.len()
            )));
        }
        if stats.scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || stats.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("spectral statistics".into()));
        }
        self.stats = stats;
        Ok(())
    }

    /// Overwrite one named parameter tensor, checking its shape.
    pub fn set_param(&mut self, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
        let entry = self
            .params
            .find(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?
            .clone();
        if entry.shape != shape || data.len() != entry.slot.len {
            return Err(Error::Dimension(format!(
                "parameter '{name}': expected shape {:?}, got {:?}",
                entry.shape, shape
            )));
        }
        entry.slot.get_mut(&mut self.params.values).copy_from_slice(data);
        Ok(())
    }

    pub fn forward(&self, x: &[f64], training: bool) -> Result<Forward> {
        let p = &self.params.values;
        let (features, encoder_trace) = self.encoder.encode(x, p, &self.stats)?;
        let (masks, separator_trace) = self.separator.forward(&features, p, training)?;
        let estimates = self.decoder.decode(&features, &masks, &encoder_trace.phase, &self.stats, p, x.len())?;
        Ok(Forward { estimates, features, masks, encoder_trace, separator_trace })
    }

    /// Accumulate `∂L/∂params` into `grads` given `∂L/∂estimates`.
    pub fn backward(&self, x: &[f64], fwd: &Forward, grad_estimates: &[Vec<f64>], grads: &mut [f64]) {
        let p = &self.params.values;
        let (g_masks, mut g_conv) = self.decoder.backward(
            &fwd.features,
            &fwd.masks,
            &fwd.encoder_trace.phase,
            &self.stats,
            grad_estimates,
            p,
            grads,
        );
        let g_h = self.separator.backward(&fwd.features, &fwd.separator_trace, &g_masks, p, grads);
        let fc = fwd.features.f_conv;
        for t in 0..g_conv.rows {
            for (g, h) in g_conv.row_mut(t).iter_mut().zip(&g_h.row(t)[..fc]) {
                *g += h;
            }
        }
        self.encoder.backward(x, &fwd.encoder_trace, &g_conv, grads);
    }

    /// PIT loss of one example and its parameter gradient.
    pub fn loss_and_grad(&self, mixture: &[f64], sources: &[Vec<f64>]) -> Result<(PitResult, Vec<f64>)> {
        self.check_sources(mixture, sources)?;
        let fwd = self.forward(mixture, true)?;
        let (pit, g_est) = loss::pit_loss_with_grad(sources, &fwd.estimates)?;
        if !pit.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss ({})", pit.loss)));
        }
        let mut grads = self.params.zeros_like();
        self.backward(mixture, &fwd, &g_est, &mut grads);
        Ok((pit, grads))
    }

    /// PIT loss without gradients (evaluation-mode clustering).
    pub fn loss(&self, mixture: &[f64], sources: &[Vec<f64>], training: bool) -> Result<PitResult> {
        self.check_sources(mixture, sources)?;
        let fwd = self.forward(mixture, training)?;
        loss::pit_loss(sources, &fwd.estimates)
    }

    fn check_sources(&self, mixture: &[f64], sources: &[Vec<f64>]) -> Result<()> {
        if sources.len() != self.speakers() {
            return Err(Error::Dimension(format!(
                "model separates {} speakers, got {} references",
                self.speakers(),
                sources.len()
            )));
        }
        if let Some(s) = sources.iter().find(|s| s.len() != mixture.len()) {
            return Err(Error::Dimension(format!(
                "reference length {} vs mixture length {}",
                s.len(),
                mixture.len()
            )));
        }
        Ok(())
    }

    /// Full-utterance inference; each estimate has the input's length.
    pub fn separate(&self, wave: &Waveform) -> Result<Vec<Waveform>> {
        if wave.sample_rate != self.config.sample_rate {
            return Err(Error::SampleRate { expected: self.config.sample_rate, found: wave.sample_rate });
        }
        let fwd = self.forward(&wave.samples, false)?;
        fwd.estimates
            .into_iter()
            .map(|s| Waveform::new(s, wave.sample_rate))
            .collect()
    }

    /// Masks only, for inspection.
    pub fn masks(&self, x: &[f64]) -> Result<MaskSet> {
        Ok(self.forward(x, false)?.masks)
    }

    pub fn features(&self, x: &[f64]) -> Result<FeatureMap> {
        Ok(self.encoder.encode(x, &self.params.values, &self.stats)?.0)
    }

    pub fn initial_centers(&self) -> Option<Mat> {
        self.separator.initial_centers(&self.params.values)
    }
}
