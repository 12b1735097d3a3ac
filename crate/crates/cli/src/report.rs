//! Result records and table rendering for `mmc report`.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// One result record, as written by `solve`, `sweep-alpha`, and
/// `respond-eval select`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportRecord {
    SpeakerId {
        label: String,
        accuracy: Option<f64>,
        turns: usize,
        sessions: usize,
        alpha: f64,
        solver: String,
        seed: u64,
    },
    ResponseSelection {
        label: String,
        accuracy: f64,
        items: usize,
        seed: u64,
    },
    AlphaSweep {
        label: String,
        seed: u64,
        series: Vec<(f64, f64)>,
    },
}

impl ReportRecord {
    pub fn label(&self) -> &str {
        match self {
            ReportRecord::SpeakerId { label, .. }
            | ReportRecord::ResponseSelection { label, .. }
            | ReportRecord::AlphaSweep { label, .. } => label,
        }
    }

    fn order(&self) -> u8 {
        match self {
            ReportRecord::SpeakerId { .. } => 0,
            ReportRecord::ResponseSelection { .. } => 1,
            ReportRecord::AlphaSweep { .. } => 2,
        }
    }
}

pub fn save_record(record: &ReportRecord, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(record)?;
    std::fs::write(path, format!("{json}\n"))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_record(path: &Path) -> Result<ReportRecord> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("decoding {}", path.display()))
}

fn percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

/// Renders the text report; records are sorted so output is independent of
/// input order.
pub fn render(records: &[ReportRecord]) -> String {
    let mut sorted: Vec<&ReportRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.order().cmp(&b.order()).then_with(|| a.label().cmp(b.label())));

    let mut out = String::new();
    let speaker: Vec<&ReportRecord> = sorted.iter().copied().filter(|r| r.order() == 0).collect();
    if !speaker.is_empty() {
        writeln!(out, "speaker identification accuracy").unwrap();
        writeln!(out, "{:<28} {:>9} {:>7} {:>9} {:>6} {:>6}", "label", "acc %", "turns", "sessions", "alpha", "seed").unwrap();
        for record in speaker {
            if let ReportRecord::SpeakerId { label, accuracy, turns, sessions, alpha, solver, seed } = record {
                let acc = accuracy.map_or_else(|| "n/a".to_string(), percent);
                writeln!(
                    out,
                    "{label:<28} {acc:>9} {turns:>7} {sessions:>9} {alpha:>6.2} {seed:>6}  ({solver})"
                )
                .unwrap();
            }
        }
        writeln!(out).unwrap();
    }

    let response: Vec<&ReportRecord> = sorted.iter().copied().filter(|r| r.order() == 1).collect();
    if !response.is_empty() {
        writeln!(out, "response selection accuracy").unwrap();
        writeln!(out, "{:<28} {:>9} {:>7} {:>6}", "label", "acc %", "items", "seed").unwrap();
        for record in response {
            if let ReportRecord::ResponseSelection { label, accuracy, items, seed } = record {
                writeln!(out, "{label:<28} {:>9} {items:>7} {seed:>6}", percent(*accuracy)).unwrap();
            }
        }
        writeln!(out).unwrap();
    }

    let sweeps: Vec<&ReportRecord> = sorted.iter().copied().filter(|r| r.order() == 2).collect();
    for record in sweeps {
        if let ReportRecord::AlphaSweep { label, seed, series } = record {
            writeln!(out, "alpha sweep '{label}' (seed {seed})").unwrap();
            writeln!(out, "{:>6} {:>9}", "alpha", "acc %").unwrap();
            for (alpha, accuracy) in series {
                writeln!(out, "{alpha:>6.2} {:>9}", percent(*accuracy)).unwrap();
            }
            writeln!(out).unwrap();
        }
    }
    out
}

/// Plottable TSV series for one sweep.
pub fn sweep_tsv(series: &[(f64, f64)]) -> String {
    let mut out = String::from("alpha\taccuracy\n");
    for (alpha, accuracy) in series {
        writeln!(out, "{alpha}\t{accuracy}").unwrap();
    }
    out
}
