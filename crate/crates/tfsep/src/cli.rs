//! `tfsep` subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tfsep_core::config::RunConfig;
use tfsep_core::mixer::Split;
use tfsep_core::model::Model;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::evaluate::{self, Condition, NoiseBank};
use crate::manifest::Manifest;
use crate::mix::{self, MixOptions};
use crate::report::{self, TableRow};
use crate::settings::{self, data_path};
use crate::training::{self, TrainOptions};
use crate::wav;

#[derive(Debug, Parser)]
#[command(
    name = "tfsep",
    version,
    about = "Cross-domain single-channel speech separation",
    after_help = "Relative data paths resolve against $TFSEP_DATA_ROOT when it is set.\n\
                  Exit codes: 0 success, 1 user error, 2 internal error."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize two-speaker mixtures and a manifest from a mono corpus
    Mix(MixArgs),
    /// Train a model on a manifest
    Train(TrainArgs),
    /// Separate one mixture into per-speaker WAV files
    Separate(SeparateArgs),
    /// Score a checkpoint on a manifest, clean and at noisy input SNRs
    Evaluate(EvaluateArgs),
    /// Report parameter counts and the resolved configuration
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set separator.centers=2` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Corpus root; speakers are top-level directories (or 3-character file prefixes)
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for audio and `<split>.jsonl`
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// train, valid or test
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    pub snr_lo: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub snr_hi: f64,
    /// Directory of noise recordings to add to every mixture
    #[arg(long)]
    pub noise_dir: Option<PathBuf>,
    /// Mixture-to-noise SNR in dB (requires --noise-dir)
    #[arg(long, allow_negative_numbers = true)]
    pub noise_snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8000)]
    pub sample_rate: u32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Validation manifest (defaults to the training manifest)
    #[arg(long)]
    pub valid_manifest: Option<PathBuf>,
    /// Output directory for checkpoints, metrics log and resolved config
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Shortcut for `--set train.epochs=N`; also applies when resuming
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many optimizer steps in total
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from a checkpoint with optimizer state
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Mixture WAV at the model's sample rate
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for `report.json` and `table.txt`
    #[arg(long)]
    pub out: PathBuf,
    /// Noise recordings for noisy conditions
    #[arg(long)]
    pub noise_dir: Option<PathBuf>,
    /// Comma-separated conditions: `clean` and/or input SNRs in dB
    #[arg(long, value_delimiter = ',')]
    pub conditions: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint to inspect; without it the configuration is built fresh
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mix(a) => cmd_mix(a),
        Command::Train(a) => cmd_train(a),
        Command::Separate(a) => cmd_separate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn cmd_mix(a: MixArgs) -> Result<()> {
    let opts = MixOptions {
        corpus: data_path(&a.corpus),
        out: a.out.clone(),
        count: a.count,
        split: Split::parse(&a.split)?,
        snr_lo: a.snr_lo,
        snr_hi: a.snr_hi,
        noise_dir: a.noise_dir.as_deref().map(data_path),
        noise_snr: a.noise_snr,
        seed: a.seed,
        sample_rate: a.sample_rate,
    };
    let m = mix::run(&opts)?;
    let resolved = format!(
        "corpus = {}\ncount = {}\nsplit = {}\nsnr_lo = {}\nsnr_hi = {}\nnoise_dir = {}\nnoise_snr = {}\nseed = {}\nsample_rate = {}\n",
        opts.corpus.display(),
        opts.count,
        opts.split.as_str(),
        opts.snr_lo,
        opts.snr_hi,
        opts.noise_dir.as_ref().map_or(String::new(), |d| d.display().to_string()),
        opts.noise_snr.map_or(String::new(), |v| v.to_string()),
        opts.seed,
        opts.sample_rate,
    );
    evaluate::write_file(&opts.out.join(format!("{}.mix.txt", opts.split.as_str())), &resolved)?;
    println!(
        "wrote {} mixtures to {}",
        m.records.len(),
        opts.out.join(format!("{}.jsonl", opts.split.as_str())).display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = if a.resume.is_some() {
        if a.config.config.is_some() || !a.config.set.is_empty() {
            return Err(Error::Usage("--config/--set cannot be combined with --resume (the checkpoint's configuration is used)".into()));
        }
        RunConfig::default()
    } else {
        let mut c = settings::resolve(a.config.config.as_deref(), &a.config.set)?;
        if let Some(e) = a.epochs {
            c.set("train.epochs", &e.to_string())?;
            c.validate()?;
        }
        c
    };
    let opts = TrainOptions {
        manifest: data_path(&a.manifest),
        valid_manifest: a.valid_manifest.as_deref().map(data_path),
        out_dir: a.out,
        config,
        resume: a.resume,
        epochs: a.epochs,
        max_steps: a.max_steps,
    };
    let s = training::run(&opts)?;
    println!(
        "trained {} epochs ({} steps); best validation loss {:.4}; checkpoint {}",
        s.epochs,
        s.steps,
        s.best_valid_loss,
        s.best.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(Model, RunConfig)> {
    let ck = Checkpoint::load(path)?;
    Ok((ck.model()?, ck.config))
}

fn cmd_separate(a: SeparateArgs) -> Result<()> {
    let (model, cfg) = load_model(&a.checkpoint)?;
    let input = data_path(&a.input);
    let wave = wav::read(&input)?;
    let outputs = model.separate(&wave)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mixture".into());
    for (i, w) in outputs.iter().enumerate() {
        let p = a.out.join(format!("{stem}_spk{}.wav", i + 1));
        wav::write(&p, w)?;
        println!("{}", p.display());
    }
    settings::write_resolved(&a.out, &cfg)?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let (model, cfg) = load_model(&a.checkpoint)?;
    let manifest = Manifest::load(&data_path(&a.manifest))?;
    let conditions = match &a.conditions {
        Some(list) => list.iter().map(|c| Condition::parse(c)).collect::<Result<Vec<_>>>()?,
        None if a.noise_dir.is_some() => {
            vec![Condition::Clean, Condition::Snr(20.0), Condition::Snr(15.0), Condition::Snr(10.0)]
        }
        None => vec![Condition::Clean],
    };
    let noise = match &a.noise_dir {
        Some(d) => Some(NoiseBank::load(&data_path(d), model.config.sample_rate)?),
        None => None,
    };
    let mut reports = Vec::new();
    for c in &conditions {
        let r = evaluate::evaluate(&model, &manifest, *c, noise.as_ref())?;
        println!(
            "{:>6}: SI-SNRi {:6.2} dB  SDRi {:6.2} dB  ({} scored, {} skipped)",
            r.condition,
            r.mean_si_snr_i,
            r.mean_sdr_i,
            r.utterances.len(),
            r.skipped.len()
        );
        reports.push(r);
    }
    let label = a.checkpoint.display().to_string();
    evaluate::write_file(&a.out.join("report.json"), &evaluate::report_json(&label, &cfg.to_text(), &reports))?;
    let table = report::render(&[TableRow::new(&cfg.model, reports)]);
    evaluate::write_file(&a.out.join("table.txt"), &table)?;
    settings::write_resolved(&a.out, &cfg)?;
    print!("\n{table}");
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let (model, cfg) = match &a.checkpoint {
        Some(p) => {
            if a.config.config.is_some() || !a.config.set.is_empty() {
                return Err(Error::Usage("--config/--set cannot be combined with --checkpoint".into()));
            }
            load_model(p)?
        }
        None => {
            let cfg = settings::resolve(a.config.config.as_deref(), &a.config.set)?;
            (Model::new(cfg.model.clone())?, cfg)
        }
    };
    println!("parameters by module:");
    for (prefix, n) in model.params.count_by_prefix() {
        println!("  {prefix:<24} {n:>12}");
    }
    println!("  {:<24} {:>12}", "total", model.param_count());
    println!(
        "feature channels: {} ({} conv + {} spectral); receptive field: +/-{} frames",
        model.config.feature_channels(),
        model.config.conv_channels,
        model.config.spectral_channels(),
        model.config.receptive_half_width()
    );
    println!("\nconfiguration:\n{}", cfg.to_text());
    Ok(())
}
