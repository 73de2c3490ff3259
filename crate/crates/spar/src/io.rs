//! CSV ingestion and table output.
//!
//! Output tables start with `#` comment lines recording how they were made,
//! then a header row. Floats use the shortest representation that parses back
//! to the same value. Files are written to a temporary sibling and renamed
//! into place.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use spar_core::Matrix;

use crate::error::{AppError, Result};

/// Named numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub data: Matrix,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestReport {
    /// Data rows read from the file.
    pub rows: usize,
    /// Cells in the selected columns that were NaN, empty or infinite.
    pub nan_cells: usize,
    /// Rows dropped because of such cells.
    pub dropped_rows: usize,
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).trim(csv::Trim::All).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> AppError {
    AppError::format(path, e.to_string())
}

/// Reads the named columns of a headed CSV file, in the order given. Rows
/// with a missing or non-finite value in any selected column are dropped and
/// reported; any other non-numeric cell is an error.
pub fn read_columns(path: &Path, columns: &[String]) -> Result<(Table, IngestReport)> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(AppError::format(path, "empty file"));
    }
    let mut idx = Vec::with_capacity(columns.len());
    for c in columns {
        match header.iter().position(|h| h == c) {
            Some(i) => idx.push(i),
            None => return Err(AppError::format(path, format!("missing column `{c}`"))),
        }
    }
    let mut data = Vec::new();
    let mut report = IngestReport::default();
    let mut record = csv::StringRecord::new();
    let mut row = vec![0.0; columns.len()];
    while rdr.read_record(&mut record).map_err(|e| csv_error(path, e))? {
        report.rows += 1;
        let mut bad = 0;
        for (k, &i) in idx.iter().enumerate() {
            let cell = record.get(i).unwrap_or("");
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| AppError::Cell {
                    path: path.to_path_buf(),
                    row: report.rows,
                    column: columns[k].clone(),
                    message: format!("`{cell}` is not a number"),
                })?
            };
            if !v.is_finite() {
                bad += 1;
            }
            row[k] = v;
        }
        if bad > 0 {
            report.nan_cells += bad;
            report.dropped_rows += 1;
        } else {
            data.extend_from_slice(&row);
        }
    }
    if report.rows == 0 {
        return Err(AppError::format(path, "no data rows"));
    }
    let n = data.len() / columns.len().max(1);
    let data = Matrix::from_vec(n, columns.len(), data)?;
    Ok((Table { names: columns.to_vec(), data }, report))
}

/// Reads every column of a headed numeric CSV file.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = reader(path)?;
    let names: Vec<String> = rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    Ok(read_columns(path, &names)?.0)
}

/// Shortest round-trip text for a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Header comment block of an output table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub command: String,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    pub params: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Self { command: command.into(), ..Self::default() }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn config(mut self, text: &str) -> Self {
        self.config_sha256 = Some(sha256_hex(text.as_bytes()));
        self
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.push((key.into(), value.to_string()));
        self
    }

    fn lines(&self) -> Vec<String> {
        let mut out = vec![format!("# producer: spar {}", env!("CARGO_PKG_VERSION")), format!("# command: {}", self.command)];
        if let Some(s) = self.seed {
            out.push(format!("# seed: {s}"));
        }
        if let Some(h) = &self.config_sha256 {
            out.push(format!("# config_sha256: {h}"));
        }
        for (k, v) in &self.params {
            out.push(format!("# {k}: {v}"));
        }
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp: PathBuf = dir.join(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(|e| AppError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| AppError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

/// A table under construction: string cells, rendered as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct OutTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl OutTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_f64(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| fmt_f64(v)).collect());
    }

    pub fn render(&self, provenance: &Provenance) -> Vec<u8> {
        let mut out = Vec::new();
        for line in provenance.lines() {
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }

    pub fn write(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        atomic_write(path, &self.render(provenance))
    }
}

/// Row-by-row table writer for outputs too large to hold as strings. The
/// file appears at `path` only after [`CsvSink::finish`].
pub struct CsvSink {
    path: PathBuf,
    tmp: PathBuf,
    writer: csv::Writer<BufWriter<fs::File>>,
    cells: Vec<String>,
}

impl CsvSink {
    pub fn create<S: AsRef<str>>(path: &Path, provenance: &Provenance, header: &[S]) -> Result<Self> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
        tmp_name.push(".tmp");
        let tmp = dir.join(tmp_name);
        let mut file = BufWriter::new(fs::File::create(&tmp).map_err(|e| AppError::io(&tmp, e))?);
        for line in provenance.lines() {
            writeln!(file, "{line}").map_err(|e| AppError::io(&tmp, e))?;
        }
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header.iter().map(|h| h.as_ref())).map_err(|e| AppError::format(&tmp, e.to_string()))?;
        Ok(Self { path: path.to_path_buf(), tmp, writer, cells: Vec::new() })
    }

    pub fn write_f64(&mut self, row: &[f64]) -> Result<()> {
        self.cells.clear();
        self.cells.extend(row.iter().map(|&v| fmt_f64(v)));
        self.writer.write_record(&self.cells).map_err(|e| AppError::format(&self.tmp, e.to_string()))
    }

    pub fn finish(self) -> Result<()> {
        let tmp = self.tmp;
        let file = self.writer.into_inner().map_err(|e| AppError::format(&tmp, e.to_string()))?;
        let file = file.into_inner().map_err(|e| AppError::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| AppError::io(&tmp, e))?;
        fs::rename(&tmp, &self.path).map_err(|e| AppError::io(&self.path, e))
    }
}
