//! Corpus scanning and manifest generation on disk.

use std::path::{Path, PathBuf};

use tfsep_core::dsp::Waveform;
use tfsep_core::mixer::{self, Split, UtteranceRef};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::manifest::{Header, Manifest, MixtureRecord, FORMAT, VERSION};
use crate::wav;

#[derive(Debug, Clone)]
pub struct MixOptions {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub count: usize,
    pub split: Split,
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub noise_dir: Option<PathBuf>,
    pub noise_snr: Option<f64>,
    pub seed: u64,
    pub sample_rate: u32,
}

/// Sorted, slash-separated relative paths of every `.wav` under `dir`.
pub fn scan_wavs(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(Error::Usage(format!("{} is not a directory", dir.display())));
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| Error::Usage(format!("{}: {e}", dir.display())))?;
        let p = entry.path();
        if entry.file_type().is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            let rel = p.strip_prefix(dir).expect("walkdir yields children");
            let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.push(parts.join("/"));
        }
    }
    out.sort();
    Ok(out)
}

/// Speaker label: the top-level directory, or the first three characters of
/// the file stem for a flat corpus.
pub fn speaker_of(rel: &str) -> String {
    match rel.split_once('/') {
        Some((dir, _)) => dir.to_string(),
        None => {
            let stem = rel.rsplit_once('.').map_or(rel, |(s, _)| s);
            stem.chars().take(3).collect()
        }
    }
}

fn load_at(path: &Path, rate: u32) -> Result<Waveform> {
    let w = wav::read(path)?;
    Ok(mixer::resample(&w, rate)?)
}

/// Build and write mixtures, references and the manifest
/// `<out>/<split>.jsonl`; returns the manifest.
pub fn run(opts: &MixOptions) -> Result<Manifest> {
    if opts.count == 0 {
        return Err(Error::Usage("--count must be at least 1".into()));
    }
    let files = scan_wavs(&opts.corpus)?;
    let utts: Vec<UtteranceRef> = files
        .iter()
        .map(|f| UtteranceRef { id: f.clone(), speaker: speaker_of(f) })
        .collect();
    let (pool, speaker_disjoint) = mixer::select_split(&utts, opts.split);
    if !speaker_disjoint {
        log::warn!("too few speakers for a held-out {} split; using every speaker", opts.split.as_str());
    }
    let plan = mixer::plan_mixtures(&pool, opts.count, opts.snr_lo, opts.snr_hi, opts.seed)?;
    let noise_files = match (&opts.noise_dir, opts.noise_snr) {
        (Some(dir), Some(_)) => {
            let n = scan_wavs(dir)?;
            if n.is_empty() {
                return Err(Error::Usage(format!("no .wav files in {}", dir.display())));
            }
            n
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(Error::Usage("--noise-dir and --noise-snr must be given together".into()))
        }
        (None, None) => Vec::new(),
    };
    let width = opts.count.to_string().len().max(5);
    let mut records = Vec::with_capacity(plan.len());
    for (i, p) in plan.iter().enumerate() {
        let id = format!("{}{:0width$}", opts.split.as_str(), i);
        let rel = [pool[p.sources[0]].id.clone(), pool[p.sources[1]].id.clone()];
        let wrap = |e: Error| Error::record(&id, e);
        let s1 = load_at(&opts.corpus.join(&rel[0]), opts.sample_rate).map_err(wrap)?;
        let s2 = load_at(&opts.corpus.join(&rel[1]), opts.sample_rate).map_err(wrap)?;
        let mixed = mixer::mix_pair(&s1, &s2, p.snr_db).map_err(|e| wrap(e.into()))?;
        let [mut r1, mut r2] = mixed.sources;
        let mut mixture = mixed.mixture;
        let mut noise_path = None;
        if let Some(snr) = opts.noise_snr {
            let nrel = &noise_files[(p.seed % noise_files.len() as u64) as usize];
            let noise = load_at(&opts.noise_dir.as_ref().expect("checked above").join(nrel), opts.sample_rate)
                .map_err(wrap)?;
            mixture = mixer::add_noise(&mixture, &noise, snr, p.seed).map_err(|e| wrap(e.into()))?;
            noise_path = Some(nrel.clone());
        }
        let scale = mixer::limit_peak(&mut [&mut mixture, &mut r1, &mut r2], 0.999);
        let record = MixtureRecord {
            id: id.clone(),
            source_paths: rel.to_vec(),
            speakers: vec![pool[p.sources[0]].speaker.clone(), pool[p.sources[1]].speaker.clone()],
            gains: vec![scale, mixed.gain * scale],
            pair_snr_db: p.snr_db,
            noise_path,
            noise_snr_db: opts.noise_snr,
            seed: p.seed,
            out_len: mixture.len(),
            mixture: format!("mix/{id}.wav"),
            references: vec![format!("s1/{id}.wav"), format!("s2/{id}.wav")],
        };
        wav::write(&opts.out.join(&record.mixture), &mixture)?;
        wav::write(&opts.out.join(&record.references[0]), &r1)?;
        wav::write(&opts.out.join(&record.references[1]), &r2)?;
        records.push(record);
    }
    let manifest = Manifest {
        header: Header {
            format: FORMAT.into(),
            version: VERSION,
            split: opts.split.as_str().into(),
            sample_rate: opts.sample_rate,
            seed: opts.seed,
            speaker_disjoint,
            snr_range_db: [opts.snr_lo, opts.snr_hi],
            noise_snr_db: opts.noise_snr,
        },
        records,
        root: opts.out.clone(),
    };
    manifest.save(&opts.out.join(format!("{}.jsonl", opts.split.as_str())))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speaker_labels() {
        assert_eq!(speaker_of("spk1/a/b.wav"), "spk1");
        assert_eq!(speaker_of("01aa0101.wav"), "01a");
        assert_eq!(speaker_of("ab.wav"), "ab");
    }
}
