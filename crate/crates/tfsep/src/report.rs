//! Plain-text result tables laid out like the ablation table: one row per
//! configuration (encoder, K, alpha), grouped by whether the separator
//! clusters, one column per input condition.

use std::fmt::Write;

use tfsep_core::config::{ModelConfig, SeparatorMode};
use tfsep_core::metrics::EvalReport;

use crate::evaluate::SDR_CONVENTION;

#[derive(Debug, Clone)]
pub struct TableRow {
    pub encoder: String,
    pub clustering: bool,
    pub centers: Option<usize>,
    pub alpha: f64,
    pub reports: Vec<EvalReport>,
}

impl TableRow {
    pub fn new(config: &ModelConfig, reports: Vec<EvalReport>) -> Self {
        let clustering = config.mode == SeparatorMode::Clustering;
        TableRow {
            encoder: if config.spectral { "Time + Freq".into() } else { "Time".into() },
            clustering,
            centers: clustering.then_some(config.centers),
            alpha: config.alpha,
            reports,
        }
    }
}

fn column_label(condition: &str) -> String {
    if condition == "clean" {
        "Clean".into()
    } else {
        condition.replace("dB", " dB")
    }
}

fn block(out: &mut String, title: &str, rows: &[TableRow], columns: &[String], pick: fn(&EvalReport) -> f64) {
    let _ = writeln!(out, "{title}");
    let mut header = format!("{:<20} {:>3} {:>5}", "Encoder", "K", "alpha");
    for c in columns {
        let _ = write!(header, " | {:>8}", column_label(c));
    }
    let rule = "-".repeat(header.len());
    let _ = writeln!(out, "{header}\n{rule}");
    let mut n = 0;
    for (clustering, name) in [(false, "(I) No clustering in separator"), (true, "(II) With clustering in separator")] {
        let group: Vec<&TableRow> = rows.iter().filter(|r| r.clustering == clustering).collect();
        if group.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{name}");
        for r in group {
            n += 1;
            let k = r.centers.map_or("-".to_string(), |k| k.to_string());
            let mut line = format!("{:<20} {:>3} {:>5}", format!("({n}) {}", r.encoder), k, r.alpha);
            for c in columns {
                match r.reports.iter().find(|rep| &rep.condition == c) {
                    Some(rep) => {
                        let _ = write!(line, " | {:>8.2}", pick(rep));
                    }
                    None => {
                        let _ = write!(line, " | {:>8}", "-");
                    }
                }
            }
            let _ = writeln!(out, "{line}");
        }
    }
    let _ = writeln!(out, "{rule}");
}

pub fn render(rows: &[TableRow]) -> String {
    let mut columns: Vec<String> = Vec::new();
    for r in rows {
        for rep in &r.reports {
            if !columns.contains(&rep.condition) {
                columns.push(rep.condition.clone());
            }
        }
    }
    let mut out = String::new();
    block(&mut out, "SDR_i (dB)", rows, &columns, |r| r.mean_sdr_i);
    out.push('\n');
    block(&mut out, "SI-SNR_i (dB)", rows, &columns, |r| r.mean_si_snr_i);
    let _ = writeln!(out, "\nNote: {SDR_CONVENTION}.");
    out
}
