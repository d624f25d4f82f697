//! Loading manifest records into in-memory examples.

use tfsep_core::train::Example;

use crate::error::{Error, Result};
use crate::manifest::{Manifest, MixtureRecord};
use crate::wav;

fn check_rate(manifest: &Manifest, rate: u32) -> Result<()> {
    if rate != manifest.header.sample_rate {
        return Err(tfsep_core::Error::SampleRate { expected: manifest.header.sample_rate, found: rate }.into());
    }
    Ok(())
}

pub fn load_record(manifest: &Manifest, rec: &MixtureRecord) -> Result<Example> {
    let inner = || -> Result<Example> {
        let mix = wav::read(&manifest.resolve(&rec.mixture))?;
        check_rate(manifest, mix.sample_rate)?;
        let mut sources = Vec::with_capacity(rec.references.len());
        for r in &rec.references {
            let s = wav::read(&manifest.resolve(r))?;
            check_rate(manifest, s.sample_rate)?;
            if s.len() != mix.len() {
                return Err(Error::Usage(format!(
                    "reference {r} has {} samples, mixture has {}",
                    s.len(),
                    mix.len()
                )));
            }
            sources.push(s.samples);
        }
        Ok(Example { id: rec.id.clone(), mixture: mix.samples, sources })
    };
    inner().map_err(|e| Error::record(&rec.id, e))
}

pub fn load_examples(manifest: &Manifest) -> Result<Vec<Example>> {
    manifest.records.iter().map(|r| load_record(manifest, r)).collect()
}
