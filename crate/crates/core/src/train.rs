//! Segmenting, batching and the single-writer optimization step.
//!
//! Gradient computation for a batch is split from the parameter update so a
//! caller with threads can compute per-example gradients in parallel and
//! still reduce them in a fixed order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics::{improvement, Metric};
use crate::model::Model;
use crate::optim::{clip_grad_norm, Adam, Plateau};

/// One training or validation utterance held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub mixture: Vec<f64>,
    pub sources: Vec<Vec<f64>>,
}

/// A random crop of an example, ready for a gradient computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub id: String,
    pub mixture: Vec<f64>,
    pub sources: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidReport {
    pub loss: f64,
    pub si_snr_i: f64,
}

/// Serializable RNG position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub adam: Adam,
    pub plateau: Plateau,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate(&model.config)?;
        let adam = Adam::new(model.param_count(), &config);
        let plateau = Plateau::new(config.lr_patience, config.lr_decay);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer { model, config, adam, plateau, rng, step: 0, epoch: 0 })
    }

    pub fn segment_samples(&self) -> usize {
        self.config.segment_samples(self.model.config.sample_rate)
    }

    /// Random fixed-length crop; shorter examples are used whole.
    pub fn crop(&mut self, ex: &Example) -> Crop {
        let seg = self.segment_samples();
        let len = ex.mixture.len();
        if len <= seg {
            return Crop { id: ex.id.clone(), mixture: ex.mixture.clone(), sources: ex.sources.clone() };
        }
        let start = self.rng.random_range(0..=len - seg);
        Crop {
            id: ex.id.clone(),
            mixture: ex.mixture[start..start + seg].to_vec(),
            sources: ex.sources.iter().map(|s| s[start..start + seg].to_vec()).collect(),
        }
    }

    /// Loss and gradient of one crop, with the example id attached to errors.
    pub fn example_gradient(model: &Model, crop: &Crop) -> Result<(f64, Vec<f64>)> {
        let (pit, g) = model.loss_and_grad(&crop.mixture, &crop.sources).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{m} on example '{}'", crop.id)),
            other => other,
        })?;
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {i} on example '{}'",
                crop.id
            )));
        }
        Ok((pit.loss, g))
    }

    /// Average per-example results (in the given order), clip and update.
    pub fn apply(&mut self, results: Vec<(f64, Vec<f64>)>) -> Result<StepReport> {
        if results.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let n = results.len() as f64;
        let mut loss = 0.0;
        let mut grads = self.model.params.zeros_like();
        for (l, g) in results {
            loss += l;
            grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        loss /= n;
        grads.iter_mut().for_each(|g| *g /= n);
        let grad_norm = clip_grad_norm(&mut grads, self.config.clip_norm);
        self.adam.update(&mut self.model.params.values, &grads);
        self.step += 1;
        Ok(StepReport { step: self.step, loss, grad_norm, lr: self.adam.lr })
    }

    pub fn train_step(&mut self, batch: &[&Example]) -> Result<StepReport> {
        let crops: Vec<Crop> = batch.iter().map(|ex| self.crop(ex)).collect();
        let results = crops
            .iter()
            .map(|c| Self::example_gradient(&self.model, c))
            .collect::<Result<Vec<_>>>()?;
        self.apply(results)
    }

    /// Shuffled batch order for one epoch.
    pub fn epoch_batches(&mut self, count: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.config.batch_size).map(|c| c.to_vec()).collect()
    }

    /// One pass over `examples`, calling `on_step` after every update.
    pub fn run_epoch(
        &mut self,
        examples: &[Example],
        mut on_step: impl FnMut(&StepReport),
    ) -> Result<EpochReport> {
        if examples.is_empty() {
            return Err(Error::Config("no training examples".into()));
        }
        let batches = self.epoch_batches(examples.len());
        let mut total = 0.0;
        for b in &batches {
            let refs: Vec<&Example> = b.iter().map(|&i| &examples[i]).collect();
            let r = self.train_step(&refs)?;
            total += r.loss;
            on_step(&r);
        }
        self.epoch += 1;
        Ok(EpochReport { epoch: self.epoch, steps: batches.len(), train_loss: total / batches.len() as f64 })
    }

    /// Full-utterance loss and SI-SNR improvement with evaluation-mode clustering.
    pub fn validate(model: &Model, examples: &[Example]) -> Result<ValidReport> {
        if examples.is_empty() {
            return Err(Error::Config("no validation examples".into()));
        }
        let mut loss = 0.0;
        let mut gain = 0.0;
        for ex in examples {
            let fwd = model.forward(&ex.mixture, false)?;
            loss += crate::loss::pit_loss(&ex.sources, &fwd.estimates)?.loss;
            gain += improvement(Metric::SiSnr, &ex.sources, &fwd.estimates, &ex.mixture)?.improvement;
        }
        let n = examples.len() as f64;
        Ok(ValidReport { loss: loss / n, si_snr_i: gain / n })
    }

    /// Feed the validation loss to the plateau schedule; true on a new best.
    pub fn end_epoch(&mut self, valid_loss: f64) -> Result<bool> {
        if !valid_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {valid_loss}")));
        }
        Ok(self.plateau.observe(valid_loss, &mut self.adam.lr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::mixer::toy_sources;

    fn small_model() -> Model {
        Model::new(ModelConfig {
            conv_channels: 16,
            bottleneck: 16,
            hidden: 24,
            blocks: 3,
            repeats: 1,
            embed_dim: 6,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn toy(n: usize, len: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let [a, b] = toy_sources(len, 8000, i as u64);
                let mixture = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                Example { id: format!("toy{i}"), mixture, sources: alloc::vec![a, b] }
            })
            .collect()
    }

    fn config(batch: usize) -> TrainConfig {
        TrainConfig { batch_size: batch, segment_seconds: 0.1, ..TrainConfig::default() }
    }

    #[test]
    fn one_epoch_two_records_batch_one_is_two_steps() {
        let mut t = Trainer::new(small_model(), config(1)).unwrap();
        let data = toy(2, 1200);
        let r = t.run_epoch(&data, |_| {}).unwrap();
        assert_eq!(r.steps, 2);
        assert_eq!(t.step, 2);
        assert_eq!(t.adam.step, 2);
    }

    #[test]
    fn crops_have_segment_length() {
        let mut t = Trainer::new(small_model(), config(1)).unwrap();
        let ex = &toy(1, 2000)[0];
        let c = t.crop(ex);
        assert_eq!(c.mixture.len(), 800);
        assert!(c.sources.iter().all(|s| s.len() == 800));
        let short = &toy(1, 500)[0];
        assert_eq!(t.crop(short).mixture.len(), 500);
    }

    #[test]
    fn loss_decreases_on_a_fixed_toy_set() {
        let mut cfg = config(2);
        cfg.lr = 3e-3;
        let mut t = Trainer::new(small_model(), cfg).unwrap();
        let data = toy(2, 800);
        let refs: Vec<&Example> = data.iter().collect();
        let losses: Vec<f64> = (0..50).map(|_| t.train_step(&refs).unwrap().loss).collect();
        let first: f64 = losses[..10].iter().sum();
        let last: f64 = losses[40..].iter().sum();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn rng_state_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let _: u64 = rng.random();
        let state = RngState::capture(&rng);
        let mut back = state.restore();
        assert_eq!(rng.random::<u64>(), back.random::<u64>());
    }

    #[test]
    fn plateau_decays_learning_rate() {
        let mut t = Trainer::new(small_model(), config(1)).unwrap();
        assert!(t.end_epoch(1.0).unwrap());
        for _ in 0..3 {
            assert!(!t.end_epoch(1.0).unwrap());
        }
        assert_eq!(t.adam.lr, 5e-4);
        assert!(t.end_epoch(f64::NAN).is_err());
    }

    #[test]
    fn validation_reports_improvement() {
        let data = toy(2, 800);
        let r = Trainer::validate(&small_model(), &data).unwrap();
        assert!(r.loss.is_finite() && r.si_snr_i.is_finite());
    }
}
