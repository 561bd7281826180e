//! Report documents: JSON for machines, a fixed-column text table for people.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hashing;
use crate::lic::{MetricReport, Scale};
use crate::{Error, Result};

pub const TOOL: &str = "capbias";

/// Column order of the text table.
pub const TABLE_COLUMNS: [(&str, &str); 7] = [
    ("lic", "LIC"),
    ("lic_m", "LIC_M"),
    ("ratio", "Ratio"),
    ("error", "Error"),
    ("ba", "BA"),
    ("dba_g", "DBA_G"),
    ("dba_o", "DBA_O"),
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    /// Input role (e.g. `human_captions`) → sha256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    /// Free-text label for the table row, usually the captioning model.
    pub label: String,
    /// Seconds since the Unix epoch. Not part of [`Report::content_hash`].
    pub generated_at: u64,
    pub metrics: Vec<MetricReport>,
    pub provenance: Provenance,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn now() -> u64 {
    if let Some(fixed) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return fixed;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Report {
    pub fn new(label: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            label: label.into(),
            generated_at: now(),
            metrics: Vec::new(),
            provenance,
            warnings: Vec::new(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<&MetricReport> {
        self.metrics.iter().find(|m| m.name == name)
    }

    /// sha256 of the report with the timestamp zeroed.
    pub fn content_hash(&self) -> String {
        let mut copy = self.clone();
        copy.generated_at = 0;
        hashing::sha256_json(&copy)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes through a temporary sibling and renames, so a failed run never
    /// leaves a half-written report behind.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_json()?)
    }
}

pub(crate) fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A metric computed once from fixed inputs (BA, DBA, Ratio, Error). Unlike
/// a one-seed protocol run it has no spread to flag.
pub fn single_value(
    name: &str,
    value: f64,
    scale: Scale,
    config_hash: &str,
    corpus_hashes: Vec<String>,
) -> Result<MetricReport> {
    if !value.is_finite() {
        return Err(Error::Numerical(format!("metric '{name}' is not finite")));
    }
    Ok(MetricReport {
        name: name.to_string(),
        per_seed: vec![value],
        mean: value,
        std: None,
        scale,
        config_hash: config_hash.to_string(),
        corpus_hashes,
        flags: Vec::new(),
    })
}

fn cell(m: Option<&MetricReport>) -> String {
    match m {
        None => "-".to_string(),
        Some(m) => match m.std {
            Some(sd) => format!("{:.1} ± {:.1}", m.mean, sd),
            None if m.scale == Scale::X1 => format!("{:.2}", m.mean),
            None => format!("{:.1}", m.mean),
        },
    }
}

/// One row per report, columns LIC, LIC_M, Ratio, Error, BA, DBA_G, DBA_O;
/// `-` where a metric was not computed.
pub fn text_table(reports: &[Report]) -> String {
    let header: Vec<String> = std::iter::once("Model".to_string())
        .chain(TABLE_COLUMNS.iter().map(|(_, h)| h.to_string()))
        .collect();
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            std::iter::once(r.label.clone())
                .chain(TABLE_COLUMNS.iter().map(|(k, _)| cell(r.metric(k))))
                .collect()
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&rows)
                .map(|row| row[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let mut line = |row: &[String]| {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    };
    line(&header);
    for row in &rows {
        line(row);
    }
    out
}
