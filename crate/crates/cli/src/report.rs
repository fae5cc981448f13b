//! report.json, per-task IoU tables and prediction overlays.

use std::fs;
use std::path::Path;

use hierseg_core::io::write_image;
use hierseg_core::pipeline::{EvalScope, Evaluation, ImagePrediction, Variant};
use hierseg_core::{CorpusIndex, Image, IouReport, LabelMap, RunConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: RunConfig,
    pub config_hash: String,
    pub split_seed: u64,
    /// Generator settings found next to the corpus index, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<serde_json::Value>,
    pub scope: EvalScope,
    /// One entry per variant, in ablation-table order.
    pub runs: Vec<Evaluation>,
}

/// Colour of `class` in the usual VOC-style colormap; class 0 is black.
pub fn class_color(class: u8) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = class;
    for j in 0..8 {
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v |= ((c >> ch) & 1) << (7 - j);
        }
        c >>= 3;
    }
    rgb
}

/// Blends the class colours 50/50 over `img`, rounding down.
pub fn overlay(img: &Image, labels: &LabelMap) -> Result<Image, CliError> {
    if !labels.same_dims(img.width, img.height) {
        return Err(CliError::data(format!(
            "overlay: labels are {}x{}, image is {}x{}",
            labels.width, labels.height, img.width, img.height
        )));
    }
    let mut out = img.clone();
    for (px, &c) in out.data.chunks_exact_mut(3).zip(&labels.data) {
        let color = class_color(c);
        for (v, k) in px.iter_mut().zip(color) {
            *v = ((u16::from(*v) + u16::from(k)) / 2) as u8;
        }
    }
    Ok(out)
}

fn write_table(path: &Path, reports: &[(&str, &IouReport)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::env(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::env(format!("{}: {e}", path.display()));
    if let Some((_, first)) = reports.first() {
        w.write_record(first.csv_header()).map_err(io)?;
    }
    for (variant, r) in reports {
        w.write_record(r.csv_row(variant)).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::env(format!("{}: {e}", path.display())))
}

/// Writes `report.json`, `component_iou.csv` and `damage_iou.csv` under `out_dir`.
pub fn write_report_files(report: &Report, out_dir: &Path) -> Result<(), CliError> {
    if report.runs.is_empty() {
        return Err(CliError::data("report has no runs"));
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::env(format!("{}: {e}", out_dir.display())))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    let path = out_dir.join("report.json");
    fs::write(&path, json).map_err(|e| CliError::env(format!("{}: {e}", path.display())))?;
    let rows = |pick: fn(&Evaluation) -> &IouReport| -> Vec<(&str, &IouReport)> {
        report.runs.iter().map(|r| (r.metadata.variant.as_str(), pick(r))).collect()
    };
    write_table(&out_dir.join("component_iou.csv"), &rows(|r| &r.component))?;
    write_table(&out_dir.join("damage_iou.csv"), &rows(|r| &r.damage))
}

/// Overlay PNGs under `out_dir/overlays/<variant>/`.
pub fn write_overlays(
    index: &CorpusIndex,
    predictions: &[(Variant, Vec<ImagePrediction>)],
    out_dir: &Path,
) -> Result<usize, CliError> {
    let mut written = 0;
    for (variant, preds) in predictions {
        let dir = out_dir.join("overlays").join(variant.key().replace('+', "_"));
        fs::create_dir_all(&dir).map_err(|e| CliError::env(format!("{}: {e}", dir.display())))?;
        for p in preds {
            let entry = index
                .get(&p.image_id)
                .ok_or_else(|| CliError::data(format!("no index entry for `{}`", p.image_id)))?;
            let img = hierseg_core::io::read_image(&index.resolve(&entry.image))?;
            for (suffix, labels) in [("component", &p.component), ("damage", &p.damage)] {
                let path = dir.join(format!("{}_{suffix}.png", p.image_id));
                write_image(&path, &overlay(&img, labels)?)?;
                written += 1;
            }
        }
    }
    Ok(written)
}

/// Plain-text table of mean IoUs for the terminal.
pub fn summary_table(report: &Report) -> String {
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
    let mut out = format!("{:<24} {:>10} {:>10}\n", "variant", "component", "damage");
    for r in &report.runs {
        out += &format!(
            "{:<24} {:>10} {:>10}\n",
            r.metadata.variant,
            fmt(r.component.mean_iou),
            fmt(r.damage.mean_iou)
        );
    }
    out
}
