use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use uqroute_core::table::{self, TableWriter};
use uqroute_core::trace::TraceError;
use uqroute_core::{load_traces, ConfidenceScore, TraceSet, UqMethod};

use crate::CliError;

/// `<path><suffix>`, e.g. `scores.tsv.discarded.tsv`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn expand(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no .jsonl trace files in {}", path.display())));
    }
    Ok(files)
}

/// Loads trace files and directories of `.jsonl` files into one set.
/// Records without a dataset tag take their file stem. With `unique_ids`,
/// an id repeated across files is an error.
pub fn load_trace_inputs(
    paths: &[PathBuf],
    require_labels: bool,
    unique_ids: bool,
) -> Result<TraceSet, CliError> {
    let mut merged = TraceSet::default();
    let mut seen = HashSet::new();
    for p in paths {
        for file in expand(p)? {
            let mut set = load_traces(&file, require_labels)?;
            let stem = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            for rec in &mut set.records {
                if rec.dataset.is_empty() {
                    rec.dataset = stem.clone();
                }
                if unique_ids && !seen.insert(rec.id.clone()) {
                    return Err(TraceError::DuplicateId(rec.id.clone()).into());
                }
            }
            if merged.header.is_none() {
                merged.header = set.header.take();
            }
            merged.records.append(&mut set.records);
        }
    }
    merged.source = paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(",");
    Ok(merged)
}

/// `start:step:end` (inclusive) or a comma list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::Usage(format!("bad grid {spec:?}: {why}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let grid = if let [a, step, b] = spec.split(':').collect::<Vec<_>>()[..] {
        let (a, step, b) = (num(a)?, num(step)?, num(b)?);
        if !(step > 0.0) || b < a {
            return Err(bad("need step > 0 and end >= start"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9)
            .collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if grid.is_empty() || grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(bad("values must lie in [0, 1]"));
    }
    Ok(grid)
}

pub type Table = TableWriter<Box<dyn Write>>;

/// A table on `path`, or on stdout when `path` is `None`.
pub fn table_out(path: Option<&Path>, header: &[&str]) -> Result<Table, CliError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    Ok(TableWriter::new(sink, header)?)
}

pub struct ScoresFile {
    pub method: UqMethod,
    pub scores: Vec<ConfidenceScore>,
    pub n_discarded: usize,
}

pub const SCORE_COLUMNS: [&str; 3] = ["trace_id", "method", "confidence"];
pub const DISCARDED_SUFFIX: &str = ".discarded.tsv";

/// Reads a scores table written by `score`, plus its discarded sidecar if present.
pub fn read_scores(path: &Path) -> Result<ScoresFile, CliError> {
    let rows = table::read_rows(path, &SCORE_COLUMNS)?;
    let mut method = None;
    let mut scores = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let m: UqMethod = row[1]
            .parse()
            .map_err(|e: String| CliError::Usage(format!("{}:{line}: {e}", path.display())))?;
        if *method.get_or_insert(m) != m {
            return Err(CliError::Usage(format!(
                "{}: mixes methods {} and {m}",
                path.display(),
                method.unwrap()
            )));
        }
        let value = table::parse_f64(&row[2], line)?;
        if !(0.0..=1.0).contains(&value) {
            return Err(CliError::Usage(format!(
                "{}:{line}: confidence {value} outside [0, 1]",
                path.display()
            )));
        }
        scores.push(ConfidenceScore::new(m, value, row[0].clone()));
    }
    let method =
        method.ok_or_else(|| CliError::Usage(format!("{}: no scores", path.display())))?;
    let discarded = sidecar(path, DISCARDED_SUFFIX);
    let n_discarded = if discarded.exists() {
        table::read_rows(&discarded, &["trace_id"])?.len()
    } else {
        0
    };
    Ok(ScoresFile {
        method,
        scores,
        n_discarded,
    })
}
