//! Flat tab-separated tables with a header row. Lines starting with `#` are
//! comments and carry free-form metadata.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("table error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub struct TableWriter<W: Write> {
    inner: W,
    columns: usize,
}

impl TableWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: &[&str]) -> Result<Self, TableError> {
        Self::new(BufWriter::new(File::create(path)?), header)
    }

    /// Like [`TableWriter::create`] but emits `# key=value` comment lines first.
    pub fn create_with_meta(
        path: impl AsRef<Path>,
        meta: &[(&str, String)],
        header: &[&str],
    ) -> Result<Self, TableError> {
        let mut out = BufWriter::new(File::create(path)?);
        for (k, v) in meta {
            writeln!(out, "# {k}={v}")?;
        }
        Self::new(out, header)
    }
}

impl<W: Write> TableWriter<W> {
    pub fn new(mut inner: W, header: &[&str]) -> Result<Self, TableError> {
        writeln!(inner, "{}", header.join("\t"))?;
        Ok(Self {
            inner,
            columns: header.len(),
        })
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<(), TableError> {
        debug_assert_eq!(fields.len(), self.columns);
        let mut first = true;
        for f in fields {
            if !first {
                self.inner.write_all(b"\t")?;
            }
            first = false;
            let f = f.as_ref();
            if f.contains(['\t', '\n']) {
                return Err(TableError::Parse {
                    line: 0,
                    reason: format!("field {f:?} contains a tab or newline"),
                });
            }
            self.inner.write_all(f.as_bytes())?;
        }
        self.inner.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), TableError> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads a table file and projects each row onto `columns` (by header name).
/// Returns `(line number, values)` pairs.
pub fn read_rows(
    path: impl AsRef<Path>,
    columns: &[&str],
) -> Result<Vec<(usize, Vec<String>)>, TableError> {
    let file = File::open(path)?;
    read_rows_from(file, columns)
}

pub fn read_rows_from<R: io::Read>(
    reader: R,
    columns: &[&str],
) -> Result<Vec<(usize, Vec<String>)>, TableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .comment(Some(b'#'))
        .quoting(false)
        .flexible(false)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let positions = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| TableError::MissingColumn(c.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let values = positions.iter().map(|&p| rec[p].to_string()).collect();
        out.push((line, values));
    }
    Ok(out)
}

/// Reads `# key=value` comment lines from the top of a table file.
pub fn read_meta(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, TableError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| {
            let (k, v) = l.trim_start_matches('#').trim().split_once('=')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect())
}

pub fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

pub fn parse_f64(s: &str, line: usize) -> Result<f64, TableError> {
    s.trim().parse::<f64>().map_err(|_| TableError::Parse {
        line,
        reason: format!("bad number {s:?}"),
    })
}

/// Formats an optional float, using `NA` for absent values.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}
