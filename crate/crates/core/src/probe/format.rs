//! Versioned plain-text probe files.
//!
//! ```text
//! uqroute-probe 1
//! dims 8 256 128 64 1
//! activation leaky_relu 0.01
//! layer 0
//! <out_dim lines of in_dim weights>
//! bias <out_dim values>
//! layer 1
//! ...
//! ```
//!
//! Values are written in shortest round-trip decimal form, so save/load is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DenseLayer, ProbeError, ProbeModel, LEAKY_SLOPE};

pub const PROBE_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "uqroute-probe";

pub fn write_probe<W: Write>(model: &ProbeModel, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{MAGIC} {PROBE_FORMAT_VERSION}")?;
    let dims: Vec<String> = model.dims().iter().map(usize::to_string).collect();
    writeln!(out, "dims {}", dims.join(" "))?;
    writeln!(out, "activation leaky_relu {LEAKY_SLOPE}")?;
    for (i, layer) in model.layers.iter().enumerate() {
        writeln!(out, "layer {i}")?;
        for j in 0..layer.out_dim {
            write_values(&mut out, None, layer.row(j))?;
        }
        write_values(&mut out, Some("bias"), &layer.bias)?;
    }
    Ok(())
}

fn write_values<W: Write>(out: &mut W, tag: Option<&str>, values: &[f64]) -> std::io::Result<()> {
    let mut first = true;
    if let Some(t) = tag {
        out.write_all(t.as_bytes())?;
        first = false;
    }
    for v in values {
        if !first {
            out.write_all(b" ")?;
        }
        first = false;
        write!(out, "{v}")?;
    }
    out.write_all(b"\n")
}

pub fn save_probe(model: &ProbeModel, path: impl AsRef<Path>) -> Result<(), ProbeError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_probe(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_probe(path: impl AsRef<Path>) -> Result<ProbeModel, ProbeError> {
    read_probe(BufReader::new(File::open(path)?))
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String, ProbeError> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, reason: impl Into<String>) -> ProbeError {
        ProbeError::Format {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn values(&mut self, tag: Option<&str>, expected: usize) -> Result<Vec<f64>, ProbeError> {
        let text = self.next()?;
        let mut parts = text.split_ascii_whitespace();
        if let Some(t) = tag {
            if parts.next() != Some(t) {
                return Err(self.err(format!("expected {t:?} line")));
            }
        }
        let vals = parts
            .map(|p| p.parse::<f64>().map_err(|_| self.err(format!("bad number {p:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(self.err("non-finite parameter"));
        }
        Ok(vals)
    }
}

pub fn read_probe<R: BufRead>(reader: R) -> Result<ProbeModel, ProbeError> {
    let mut lines = Lines {
        inner: reader.lines(),
        line: 0,
    };
    let head = lines.next()?;
    if head.trim() != format!("{MAGIC} {PROBE_FORMAT_VERSION}") {
        return Err(lines.err(format!("unsupported header {head:?}")));
    }
    let dims_line = lines.next()?;
    let dims = dims_line
        .strip_prefix("dims ")
        .ok_or_else(|| lines.err("expected dims line"))?
        .split_ascii_whitespace()
        .map(|d| d.parse::<usize>().map_err(|_| lines.err(format!("bad dim {d:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let act = lines.next()?;
    let slope = act
        .strip_prefix("activation leaky_relu ")
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| lines.err("expected activation line"))?;
    if slope != LEAKY_SLOPE {
        return Err(lines.err(format!("unsupported leaky slope {slope}")));
    }
    let mut model = ProbeModel::zeros(&dims)?;
    for (i, layer) in model.layers.iter_mut().enumerate() {
        let tag = lines.next()?;
        if tag.trim() != format!("layer {i}") {
            return Err(lines.err(format!("expected \"layer {i}\"")));
        }
        let DenseLayer {
            in_dim,
            out_dim,
            weights,
            bias,
        } = layer;
        for j in 0..*out_dim {
            let row = lines.values(None, *in_dim)?;
            weights[j * *in_dim..(j + 1) * *in_dim].copy_from_slice(&row);
        }
        *bias = lines.values(Some("bias"), *out_dim)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let model = ProbeModel::random(&[6, 32, 16, 8, 1], 77).unwrap();
        let mut buf = Vec::new();
        write_probe(&model, &mut buf).unwrap();
        let back = read_probe(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rejects_bad_files() {
        let model = ProbeModel::random(&[2, 3, 1], 1).unwrap();
        let mut buf = Vec::new();
        write_probe(&model, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let wrong_version = text.replacen("uqroute-probe 1", "uqroute-probe 9", 1);
        assert!(matches!(
            read_probe(wrong_version.as_bytes()),
            Err(ProbeError::Format { line: 1, .. })
        ));
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(read_probe(truncated.as_bytes()).is_err());
        let short_row = text.replacen("layer 0\n", "layer 0\n1.0\n", 1);
        assert!(read_probe(short_row.as_bytes()).is_err());
    }
}
