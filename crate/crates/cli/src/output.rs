use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::CliError;

/// Output files written to temporaries first and renamed into place together,
/// so a failing command leaves no partial output behind.
#[derive(Default)]
pub struct Staged {
    files: Vec<(PathBuf, NamedTempFile)>,
}

impl Staged {
    pub fn add(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let mut tmp = NamedTempFile::new_in(&dir).map_err(|e| CliError::from(e).context(&dir))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        self.files.push((path.to_path_buf(), tmp));
        Ok(())
    }

    pub fn commit(self) -> Result<(), CliError> {
        for (path, tmp) in self.files {
            tmp.persist(&path)
                .map_err(|e| CliError::from(e.error).context(&path))?;
        }
        Ok(())
    }
}

pub fn csv_bytes<T: Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    let err = |e: csv::Error| CliError {
        code: 2,
        message: format!("cannot format CSV: {e}"),
    };
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError {
        code: 2,
        message: format!("cannot format CSV: {e}"),
    })
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError {
        code: 2,
        message: format!("cannot format JSON: {e}"),
    })?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// `path` with `suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
