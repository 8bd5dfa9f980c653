//! Summary tables of run reports and the ablation heatmap.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::ablation::{AblationCell, Band, Factor};
use crate::error::{Error, Result};
use crate::training::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

const COLUMNS: [&str; 12] = [
    "dataset",
    "horizon",
    "config_hash",
    "test_mse",
    "test_mae",
    "best_val_loss",
    "params",
    "params_without_tables",
    "epochs",
    "stop_reason",
    "seconds_per_iteration",
    "peak_memory_bytes",
];

fn row(r: &RunReport) -> [String; 12] {
    [
        r.dataset.clone(),
        r.horizon.to_string(),
        r.config_hash[..r.config_hash.len().min(12)].to_string(),
        opt(r.test_mse),
        opt(r.test_mae),
        opt(r.best_val_loss),
        r.params.total.to_string(),
        r.params.without_tables.to_string(),
        r.epochs.len().to_string(),
        serde_json::to_value(r.stop_reason).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
        format!("{:.6}", r.seconds_per_iteration),
        r.peak_memory_bytes.to_string(),
    ]
}

/// Renders one line per report, sorted by dataset and horizon.
pub fn emit_report(reports: &[RunReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Input("no reports to summarize".into()));
    }
    let mut sorted: Vec<&RunReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.dataset.cmp(&b.dataset).then(a.horizon.cmp(&b.horizon)));
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(&sorted)?,
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(COLUMNS).map_err(csv_err)?;
            for r in sorted {
                w.write_record(row(r)).map_err(csv_err)?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv is UTF-8")
        }
        ReportFormat::Markdown => {
            let mut s = format!("| {} |\n|{}\n", COLUMNS.join(" | "), "---|".repeat(COLUMNS.len()));
            for r in sorted {
                let _ = writeln!(s, "| {} |", row(r).join(" | "));
            }
            s
        }
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn band_color(band: Band) -> Rgb<u8> {
    match band {
        Band::Green => Rgb([0x5c, 0x97, 0x50]),
        Band::Yellow => Rgb([0xeb, 0xe8, 0xa2]),
        Band::Red => Rgb([0xe3, 0x64, 0x64]),
    }
}

const MISSING: Rgb<u8> = Rgb([0xdd, 0xdd, 0xdd]);
const CELL: u32 = 24;

/// Ablation cells as CSV, one line per cell.
pub fn heatmap_csv(cells: &[AblationCell]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "horizon", "factor", "pct_delta", "p_value", "stars", "band", "mse_with", "mse_without"])
        .map_err(csv_err)?;
    for c in cells {
        w.write_record([
            c.dataset.clone(),
            c.horizon.to_string(),
            c.factor.label().to_string(),
            format!("{:+.1}", c.pct_delta),
            c.p_value.map(|p| format!("{p:.3e}")).unwrap_or_default(),
            c.stars.clone(),
            format!("{:?}", c.band).to_lowercase(),
            format!("{:.6}", c.mse_with),
            format!("{:.6}", c.mse_without),
        ])
        .map_err(csv_err)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv is UTF-8"))
}

/// Rows are (dataset, horizon) in first-seen order, columns follow
/// [`Factor::ALL`]; absent cells are grey.
pub fn heatmap_image(cells: &[AblationCell]) -> Result<RgbImage> {
    if cells.is_empty() {
        return Err(Error::Input("no ablation cells".into()));
    }
    let mut rows: Vec<(String, usize)> = Vec::new();
    for c in cells {
        let key = (c.dataset.clone(), c.horizon);
        if !rows.contains(&key) {
            rows.push(key);
        }
    }
    let (w, h) = (Factor::ALL.len() as u32 * CELL, rows.len() as u32 * CELL);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    for (ri, key) in rows.iter().enumerate() {
        for (ci, f) in Factor::ALL.iter().enumerate() {
            let color = cells
                .iter()
                .find(|c| c.factor == *f && c.dataset == key.0 && c.horizon == key.1)
                .map(|c| band_color(c.band))
                .unwrap_or(MISSING);
            for y in 1..CELL - 1 {
                for x in 1..CELL - 1 {
                    img.put_pixel(ci as u32 * CELL + x, ri as u32 * CELL + y, color);
                }
            }
        }
    }
    Ok(img)
}

/// Writes `<stem>.png` and its CSV twin `<stem>.csv` into `dir`.
pub fn emit_heatmap(cells: &[AblationCell], dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let img = heatmap_image(cells)?;
    std::fs::write(dir.join(format!("{stem}.csv")), heatmap_csv(cells)?)?;
    img.save(dir.join(format!("{stem}.png")))?;
    Ok(())
}
