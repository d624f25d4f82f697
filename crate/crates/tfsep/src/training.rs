//! Epoch loop on disk: per-example gradients in parallel, a single-writer
//! update, a JSONL metrics log and best/last checkpoints.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use tfsep_core::config::RunConfig;
use tfsep_core::encoder::SpectralStats;
use tfsep_core::model::Model;
use tfsep_core::train::{Crop, Example, StepReport, Trainer};

use crate::checkpoint::Checkpoint;
use crate::data;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::settings;

pub const BEST: &str = "best.ckpt";
pub const LAST: &str = "last.ckpt";
pub const METRICS: &str = "metrics.jsonl";

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub manifest: PathBuf,
    pub valid_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub config: RunConfig,
    pub resume: Option<PathBuf>,
    /// Overrides `train.epochs`, also when resuming.
    pub epochs: Option<usize>,
    pub max_steps: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_si_snr_i: f64,
    pub lr: f64,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: u64,
    pub best_valid_loss: f64,
    pub best: PathBuf,
    pub last: PathBuf,
}

/// One optimizer step with per-example gradients computed in parallel and
/// reduced in batch order.
pub fn parallel_step(trainer: &mut Trainer, batch: &[&Example]) -> Result<StepReport> {
    let crops: Vec<Crop> = batch.iter().map(|ex| trainer.crop(ex)).collect();
    let model = &trainer.model;
    let results = crops
        .par_iter()
        .map(|c| Trainer::example_gradient(model, c))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(trainer.apply(results)?)
}

/// One epoch, stopping early once `trainer.step` reaches `max_steps`.
pub fn parallel_epoch(
    trainer: &mut Trainer,
    examples: &[Example],
    max_steps: Option<u64>,
    mut on_step: impl FnMut(&StepReport),
) -> Result<(usize, f64)> {
    let batches = trainer.epoch_batches(examples.len());
    let mut total = 0.0;
    let mut steps = 0;
    for b in &batches {
        if max_steps.is_some_and(|m| trainer.step >= m) {
            break;
        }
        let refs: Vec<&Example> = b.iter().map(|&i| &examples[i]).collect();
        let r = parallel_step(trainer, &refs)?;
        total += r.loss;
        steps += 1;
        on_step(&r);
    }
    trainer.epoch += 1;
    Ok((steps, if steps > 0 { total / steps as f64 } else { f64::NAN }))
}

pub fn validate(model: &Model, examples: &[Example]) -> Result<(f64, f64)> {
    let per: Vec<(f64, f64)> = examples
        .par_iter()
        .map(|ex| {
            Trainer::validate(model, std::slice::from_ref(ex))
                .map(|r| (r.loss, r.si_snr_i))
                .map_err(|e| Error::record(&ex.id, e.into()))
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    Ok((per.iter().map(|p| p.0).sum::<f64>() / n, per.iter().map(|p| p.1).sum::<f64>() / n))
}

fn load_manifest(path: &PathBuf, rate: u32) -> Result<Vec<Example>> {
    let m = Manifest::load(path)?;
    if m.header.sample_rate != rate {
        return Err(tfsep_core::Error::SampleRate { expected: rate, found: m.header.sample_rate }.into());
    }
    let ex = data::load_examples(&m)?;
    if ex.is_empty() {
        return Err(Error::Usage(format!("{} has no records", path.display())));
    }
    Ok(ex)
}

pub fn run(opts: &TrainOptions) -> Result<TrainSummary> {
    let resumed = match &opts.resume {
        Some(p) => Some(Checkpoint::load(p)?.trainer()?),
        None => None,
    };
    let rate = resumed.as_ref().map_or(opts.config.model.sample_rate, |t| t.model.config.sample_rate);
    let train = load_manifest(&opts.manifest, rate)?;
    let mut trainer = match resumed {
        Some(t) => t,
        None => {
            let mut model = Model::new(opts.config.model.clone())?;
            if model.config.spectral {
                let stats = SpectralStats::estimate(
                    train.iter().map(|e| e.mixture.as_slice()),
                    &model.config.stft,
                    model.config.log_floor,
                )?;
                model.set_stats(stats)?;
            }
            Trainer::new(model, opts.config.train.clone())?
        }
    };
    if let Some(e) = opts.epochs {
        trainer.config.epochs = e;
    }
    let resolved = RunConfig { model: trainer.model.config.clone(), train: trainer.config.clone() };
    resolved.validate()?;
    settings::write_resolved(&opts.out_dir, &resolved)?;
    let valid = match &opts.valid_manifest {
        Some(p) => load_manifest(p, rate)?,
        None => {
            log::warn!("no validation manifest; validating on the training set");
            train.clone()
        }
    };
    let best_path = opts.out_dir.join(BEST);
    let last_path = opts.out_dir.join(LAST);
    let log_path = opts.out_dir.join(METRICS);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(opts.resume.is_some())
        .write(true)
        .truncate(opts.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut epochs_run = 0;
    while trainer.epoch < trainer.config.epochs && !opts.max_steps.is_some_and(|m| trainer.step >= m) {
        let (steps, train_loss) = parallel_epoch(&mut trainer, &train, opts.max_steps, |r| {
            log::debug!("step {} loss {:.4} grad-norm {:.3}", r.step, r.loss, r.grad_norm)
        })?;
        let (valid_loss, valid_si_snr_i) = validate(&trainer.model, &valid)?;
        let best = trainer.end_epoch(valid_loss)?;
        epochs_run += 1;
        let entry = EpochLog {
            epoch: trainer.epoch,
            step: trainer.step,
            train_loss,
            valid_loss,
            valid_si_snr_i,
            lr: trainer.adam.lr,
            best,
        };
        log::info!(
            "epoch {} ({} steps): train {:.3} valid {:.3} SI-SNRi {:.2} dB",
            entry.epoch,
            steps,
            train_loss,
            valid_loss,
            valid_si_snr_i
        );
        writeln!(log, "{}", serde_json::to_string(&entry).expect("log entry serializes"))
            .map_err(|e| Error::io(&log_path, e))?;
        let ck = Checkpoint::from_trainer(&trainer);
        ck.save(&last_path)?;
        if best {
            ck.save(&best_path)?;
        }
    }
    if !best_path.exists() {
        Checkpoint::from_trainer(&trainer).save(&best_path)?;
    }
    Ok(TrainSummary {
        epochs: epochs_run,
        steps: trainer.step,
        best_valid_loss: trainer.plateau.best,
        best: best_path,
        last: last_path,
    })
}
