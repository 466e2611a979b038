//! `id,label,path` listings of scalogram files. Paths are relative to the
//! directory holding the manifest.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use gwvae::data::LabeledImage;
use gwvae::signal::{read_scg1, Label};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    pub path: String,
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::input(path.display(), e))?;
    w.write_record(["id", "label", "path"])
        .map_err(|e| CliError::input(path.display(), e))?;
    for e in entries {
        w.write_record([e.id.as_str(), e.label.as_str(), e.path.as_str()])
            .map_err(|err| CliError::input(path.display(), err))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let fail = |e: &dyn std::fmt::Display| CliError::input(path.display(), e);
    let mut r = csv::Reader::from_path(path).map_err(|e| fail(&e))?;
    let headers = r.headers().map_err(|e| fail(&e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "label", "path"] {
        return Err(fail(&format!(
            "header must be id,label,path, found {headers:?}"
        )));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| fail(&e))?;
            let label = rec[1].parse::<Label>().map_err(|e| fail(&e))?;
            Ok(ManifestEntry {
                id: rec[0].to_string(),
                label,
                path: rec[2].to_string(),
            })
        })
        .collect()
}

/// Reads every listed SCG1 file.
pub fn load_images(manifest: &Path) -> Result<Vec<LabeledImage>, CliError> {
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let file: PathBuf = base.join(&e.path);
            let reader = File::open(&file).map_err(|err| CliError::input(file.display(), err))?;
            let image = read_scg1(BufReader::new(reader))
                .map_err(|err| CliError::input(file.display(), err))?;
            Ok(LabeledImage {
                id: e.id,
                label: e.label,
                image,
            })
        })
        .collect()
}

/// Filesystem-safe stem for a signal id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = File::create(path).map_err(|e| CliError::input(path.display(), e))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
