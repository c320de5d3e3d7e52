//! CSV and JSON artifacts, written atomically through a temp file in the target directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn atomic_write(path: &Path, body: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io(&dir))?;
    tmp.write_all(body).map_err(io(path))?;
    tmp.as_file().sync_all().map_err(io(path))?;
    tmp.persist(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn csv_bytes(table: &Table) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Usage(format!("csv encoding failed: {e}"));
    w.write_record(&table.header).map_err(csv_err)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| format_number(*v))).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Usage(format!("csv encoding failed: {e}")))
}

pub fn emit_csv(table: &Table, path: &Path) -> Result<(), CliError> {
    atomic_write(path, &csv_bytes(table)?)
}

pub fn read_csv(path: &Path) -> Result<Table, CliError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let mut t = Table { header, rows: Vec::new() };
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| CliError::Usage(format!("{}: bad number {f:?}", path.display()))))
            .collect::<Result<Vec<_>, _>>()?;
        t.rows.push(row);
    }
    Ok(t)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut body = serde_json::to_vec_pretty(value).map_err(|e| CliError::Usage(format!("json encoding failed: {e}")))?;
    body.push(b'\n');
    atomic_write(path, &body)
}
