//! On-disk formats: frame bundles, run configuration, emitted maps and curves,
//! and dataset manifests.
//!
//! Every file is written to a temporary sibling and renamed into place.

mod bundle;
mod config;
mod emit;
mod manifest;

pub use bundle::{read_bundle, write_bundle, BundleMeta, FORMAT_VERSION};
pub use config::{RunConfig, TruthSpec};
pub use emit::{
    read_map_csv, read_predictions_csv, write_confusion_csv, write_curve_csv, write_loss_csv, write_map_csv,
    write_map_pgm, pgm_level,
};
pub use manifest::{load_dataset, read_manifest, read_summary_metal_flag, ManifestRow, MAP_FILES};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, TsfError};

/// Writes `bytes` to `path` atomically.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| TsfError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| TsfError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| TsfError::io(path, e))?;
    tmp.persist(path).map_err(|e| TsfError::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| TsfError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| TsfError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| TsfError::io(path, e))
}
