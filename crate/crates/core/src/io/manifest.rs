//! Dataset manifest: CSV with header `bundle_path,label,center_x,center_y`.
//!
//! Each row names a directory. When it holds `k.csv` and `eps_prime.csv` those
//! maps are used as-is (with `metal_flag` from `summary.txt`, if present);
//! otherwise it is read as a frame bundle and handed to a recovery callback.
//! Relative paths resolve against the manifest's directory. Rows are numbered
//! from 1, not counting the header.

use std::path::{Path, PathBuf};

use super::{read_bundle, read_file, read_map_csv, read_text};
use crate::classify::{extract_features, MaterialDataset};
use crate::domain::{ParamMaps, TsfStack};
use crate::error::{Result, TsfError};

/// Cached map files looked for in a row's directory.
pub const MAP_FILES: [&str; 2] = ["k.csv", "eps_prime.csv"];
const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// 1-based data row number.
    pub row: usize,
    pub bundle_path: PathBuf,
    pub label: String,
    pub center_x: usize,
    pub center_y: usize,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let ctx = path.display().to_string();
    let base = path.parent().unwrap_or(Path::new(""));
    let bytes = read_file(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = r.headers().map_err(|e| TsfError::format(&ctx, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["bundle_path", "label", "center_x", "center_y"] {
        return Err(TsfError::format(&ctx, "header must be bundle_path,label,center_x,center_y"));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let at = |msg: String| TsfError::format(format!("{ctx} row {row}"), msg);
        let rec = rec.map_err(|e| at(e.to_string()))?;
        let coord = |j: usize, name: &str| {
            rec[j]
                .parse::<usize>()
                .map_err(|_| at(format!("{name} must be a pixel index, got '{}'", &rec[j])))
        };
        if rec[1].is_empty() {
            return Err(at("label is empty".into()));
        }
        rows.push(ManifestRow {
            row,
            bundle_path: base.join(&rec[0]),
            label: rec[1].to_string(),
            center_x: coord(2, "center_x")?,
            center_y: coord(3, "center_y")?,
        });
    }
    Ok(rows)
}

/// `metal_flag` from a `summary.txt`, false when absent.
pub fn read_summary_metal_flag(dir: &Path) -> Result<bool> {
    let path = dir.join(SUMMARY_FILE);
    if !path.exists() {
        return Ok(false);
    }
    let text = read_text(&path)?;
    for line in text.lines() {
        if let Some(v) = line.trim().strip_prefix("metal_flag=") {
            return match v.trim() {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(TsfError::format(
                    path.display().to_string(),
                    format!("metal_flag must be true or false, got '{other}'"),
                )),
            };
        }
    }
    Ok(false)
}

/// Builds a dataset of `w x w` feature windows.
///
/// `recover` turns a bundle into maps and a metal flag; it is called only for
/// rows without cached maps.
pub fn load_dataset<F>(manifest: &Path, w: usize, mut recover: F) -> Result<MaterialDataset>
where
    F: FnMut(&ManifestRow, &TsfStack) -> Result<(ParamMaps, bool)>,
{
    let rows = read_manifest(manifest)?;
    let mut data = MaterialDataset::new(Vec::new());
    for row in &rows {
        let in_row = |e: TsfError| TsfError::format(format!("{} row {}", manifest.display(), row.row), e.to_string());
        let dir = &row.bundle_path;
        if !dir.is_dir() {
            return Err(in_row(TsfError::invalid(format!("{} does not exist", dir.display()))));
        }
        let (params, metal) = if MAP_FILES.iter().all(|f| dir.join(f).is_file()) {
            let k = read_map_csv(&dir.join(MAP_FILES[0])).map_err(in_row)?;
            let e = read_map_csv(&dir.join(MAP_FILES[1])).map_err(in_row)?;
            let params = ParamMaps::new(k, e).map_err(in_row)?;
            (params, read_summary_metal_flag(dir).map_err(in_row)?)
        } else {
            let stack = read_bundle(dir).map_err(in_row)?;
            recover(row, &stack).map_err(in_row)?
        };
        let fv = extract_features(&params, row.center_x, row.center_y, w).map_err(in_row)?;
        let label = data.label_index(&row.label);
        data.push(fv, label, metal);
    }
    Ok(data)
}
