//! Run configuration from a `key = value` file plus `--set` overrides, and
//! data-root resolution.

use std::fs;
use std::path::{Path, PathBuf};

use tfsep_core::config::RunConfig;

use crate::error::{Error, Result};

pub const DATA_ROOT_ENV: &str = "TFSEP_DATA_ROOT";
pub const RESOLVED_CONFIG: &str = "config.txt";

pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)
            .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    }
    apply_overrides(&mut cfg, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn apply_overrides(cfg: &mut RunConfig, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects key=value, got '{o}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(())
}

/// Write the fully resolved configuration into `dir`.
pub fn write_resolved(dir: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(RESOLVED_CONFIG);
    fs::write(&p, cfg.to_text()).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

/// Relative paths resolve against `$TFSEP_DATA_ROOT` when it is set.
pub fn data_path(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if p.is_relative() && !root.is_empty() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}
