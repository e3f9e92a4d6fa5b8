//! CSV and PGM emitters for maps, temperature curves, loss histories and
//! confusion matrices.

use std::path::Path;

use super::{atomic_write, read_file};
use crate::adjoint::LossReport;
use crate::classify::ConfusionMatrix;
use crate::domain::{Map2, TsfStack};
use crate::error::{Result, TsfError};

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(&mut buf);
        fill(&mut w).map_err(|e| TsfError::invalid(format!("CSV encoding failed: {e}")))?;
        w.flush().map_err(|e| TsfError::invalid(format!("CSV encoding failed: {e}")))?;
    }
    Ok(buf)
}

/// One row per `y`, shortest round-trip decimal form.
pub fn write_map_csv(map: &Map2, path: &Path) -> Result<()> {
    if !map.all_finite() {
        return Err(TsfError::invalid("map holds non-finite values"));
    }
    let bytes = csv_bytes(|w| {
        for row in map.data.chunks(map.nx) {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

pub fn read_map_csv(path: &Path) -> Result<Map2> {
    let ctx = path.display().to_string();
    let bytes = read_file(path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes.as_slice());
    let mut data = Vec::new();
    let mut nx = 0;
    let mut ny = 0;
    for (y, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| TsfError::format(&ctx, e.to_string()))?;
        if y == 0 {
            nx = rec.len();
        } else if rec.len() != nx {
            return Err(TsfError::format(&ctx, format!("row {} has {} values, expected {nx}", y + 1, rec.len())));
        }
        for (x, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| TsfError::format(&ctx, format!("row {} column {} is not a number: '{field}'", y + 1, x + 1)))?;
            data.push(v);
        }
        ny += 1;
    }
    if ny == 0 || nx == 0 {
        return Err(TsfError::format(&ctx, "map is empty"));
    }
    Map2::from_vec(nx, ny, data)
}

/// 16-bit grey level of `v` on the `[lo, hi]` scale.
pub fn pgm_level(v: f64, lo: f64, hi: f64) -> u16 {
    (65535.0 * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u16
}

/// Binary 16-bit PGM (P5), big-endian samples, row `y = 0` first.
pub fn write_map_pgm(map: &Map2, path: &Path, lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(TsfError::invalid(format!("PGM scale needs lo < hi, got [{lo}, {hi}]")));
    }
    if !map.all_finite() {
        return Err(TsfError::invalid("map holds non-finite values"));
    }
    let mut bytes = format!("P5\n{} {}\n65535\n", map.nx, map.ny).into_bytes();
    for &v in &map.data {
        bytes.extend_from_slice(&pgm_level(v, lo, hi).to_be_bytes());
    }
    atomic_write(path, &bytes)
}

/// `time_s` then one column per requested pixel, one row per frame.
pub fn write_curve_csv(stack: &TsfStack, pixels: &[(usize, usize)], path: &Path) -> Result<()> {
    for &(x, y) in pixels {
        if x >= stack.nx() || y >= stack.ny() {
            return Err(TsfError::invalid(format!(
                "pixel ({x}, {y}) is outside the {}x{} frame",
                stack.nx(),
                stack.ny()
            )));
        }
    }
    let bytes = csv_bytes(|w| {
        let mut header = vec!["time_s".to_string()];
        header.extend(pixels.iter().map(|(x, y)| format!("x{x}_y{y}")));
        w.write_record(&header)?;
        if pixels.is_empty() {
            return Ok(());
        }
        for (t, frame) in stack.frames.iter().enumerate() {
            let mut row = vec![stack.capture.frame_time(t).to_string()];
            row.extend(pixels.iter().map(|&(x, y)| frame.get(x, y).to_string()));
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

pub fn write_loss_csv(history: &[LossReport], path: &Path) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(["epoch", "mse"])?;
        for (i, l) in history.iter().enumerate() {
            w.write_record([i.to_string(), l.mse.to_string()])?;
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

/// Header row `true\pred,<labels>`, then one row per true class.
pub fn write_confusion_csv(m: &ConfusionMatrix, path: &Path) -> Result<()> {
    let bytes = csv_bytes(|w| {
        let mut header = vec!["true\\pred".to_string()];
        header.extend(m.label_names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in m.label_names.iter().zip(&m.counts) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

/// Reads `true_label,predicted_label` pairs produced by another classifier.
pub fn read_predictions_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let ctx = path.display().to_string();
    let bytes = read_file(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = r.headers().map_err(|e| TsfError::format(&ctx, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["true_label", "predicted_label"] {
        return Err(TsfError::format(&ctx, "header must be true_label,predicted_label"));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| TsfError::format(&ctx, format!("row {}: {e}", i + 1)))?;
            Ok((rec[0].to_string(), rec[1].to_string()))
        })
        .collect()
}
