//! Line-delimited JSON manifests: one header line, then one line per mixture.
//! Paths are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "tfsep-manifest";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub split: String,
    pub sample_rate: u32,
    pub seed: u64,
    /// False when the corpus had too few speakers to hold this split out.
    pub speaker_disjoint: bool,
    pub snr_range_db: [f64; 2],
    pub noise_snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub id: String,
    /// Corpus-relative identifiers of the clean sources.
    pub source_paths: Vec<String>,
    pub speakers: Vec<String>,
    /// Linear gain applied to each source before summation.
    pub gains: Vec<f64>,
    pub pair_snr_db: f64,
    pub noise_path: Option<String>,
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
    pub out_len: usize,
    pub mixture: String,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: Header,
    pub records: Vec<MixtureRecord>,
    /// Directory the relative paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, msg: String| Error::Manifest { path: path.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| bad(1, "empty manifest".into()))?;
        let header: Header = serde_json::from_str(first).map_err(|e| bad(1, e.to_string()))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(bad(1, format!("unsupported manifest {} v{}", header.format, header.version)));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let rec: MixtureRecord = serde_json::from_str(line).map_err(|e| bad(i + 1, e.to_string()))?;
            if rec.references.len() != rec.source_paths.len() || rec.gains.len() != rec.source_paths.len() {
                return Err(bad(i + 1, format!("record '{}': source, gain and reference counts differ", rec.id)));
            }
            if rec.gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
                return Err(bad(i + 1, format!("record '{}': gains must be finite and positive", rec.id)));
            }
            records.push(rec);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { header, records, root })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}
