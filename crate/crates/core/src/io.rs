//! Shared text serialization helpers.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Round-trip-exact float formatting (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_text(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Numeric CSV with a header row; every record must have `columns` fields.
pub fn read_csv_rows(path: impl AsRef<Path>, columns: usize) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if record.len() < columns {
            return Err(Error::Parse(format!(
                "{}: row {} has {} fields, expected {columns}",
                path.display(),
                line + 2,
                record.len()
            )));
        }
        let row = record
            .iter()
            .take(columns)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: `{f}`: {e}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}
