//! Dataset ingestion and export, plus the CSV side files written by the
//! experiment driver.
//!
//! Every float written here uses 17 significant digits, so a value read back
//! is bit-identical to the one written.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Result, ScmlError};
use crate::linalg::sq_euclidean;
use crate::metric::Triplet;
use crate::optim::TraceRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Libsvm,
}

impl std::str::FromStr for Format {
    type Err = ScmlError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "libsvm" | "svmlight" => Ok(Format::Libsvm),
            other => Err(ScmlError::InvalidArgument(format!("unknown format `{other}`"))),
        }
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn ingest(path: &Path, format: Format) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    match format {
        Format::Csv => parse_csv(&text),
        Format::Libsvm => parse_libsvm(&text, None),
    }
}

/// Comma-separated rows, label in the last column. A first row whose feature
/// cells are all non-numeric is taken as a header.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut header: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    let mut first = true;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(ScmlError::Parse { line: lineno, msg: "need at least one feature and a label".into() });
        }
        match width {
            Some(w) if w != cells.len() => {
                return Err(ScmlError::Parse { line: lineno, msg: format!("expected {w} columns, found {}", cells.len()) });
            }
            _ => width = Some(cells.len()),
        }
        let feats = &cells[..cells.len() - 1];
        if first {
            first = false;
            if feats.iter().all(|c| c.parse::<f64>().is_err()) {
                header = Some(feats.iter().map(|s| s.to_string()).collect());
                continue;
            }
        }
        for (j, c) in feats.iter().enumerate() {
            let v: f64 = c
                .parse()
                .map_err(|_| ScmlError::Parse { line: lineno, msg: format!("column {}: `{c}` is not numeric", j + 1) })?;
            if !v.is_finite() {
                return Err(ScmlError::Parse { line: lineno, msg: format!("column {}: non-finite value", j + 1) });
            }
            values.push(v);
        }
        raw_labels.push(cells[cells.len() - 1].to_string());
    }
    if raw_labels.is_empty() {
        return Err(ScmlError::Empty("input file"));
    }
    let d = width.expect("rows seen") - 1;
    let x = Array2::from_shape_vec((raw_labels.len(), d), values).expect("row widths checked");
    let mut ds = Dataset::from_raw_labels(x, &raw_labels)?;
    ds.feature_names = header;
    Ok(ds)
}

/// Sparse `label idx:val ...` lines with 1-based indices. The dimension is
/// the largest index seen unless given.
pub fn parse_libsvm(text: &str, dim: Option<usize>) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut raw_labels = Vec::new();
    let mut max_idx = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label = tokens.next().expect("nonempty line");
        let mut row = Vec::new();
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| ScmlError::Parse { line: lineno, msg: format!("`{tok}` is not idx:val") })?;
            let i: usize = i.parse().map_err(|_| ScmlError::Parse { line: lineno, msg: format!("bad index `{i}`") })?;
            if i == 0 {
                return Err(ScmlError::Parse { line: lineno, msg: "indices are 1-based".into() });
            }
            let v: f64 = v.parse().map_err(|_| ScmlError::Parse { line: lineno, msg: format!("`{v}` is not numeric") })?;
            if !v.is_finite() {
                return Err(ScmlError::Parse { line: lineno, msg: "non-finite value".into() });
            }
            max_idx = max_idx.max(i);
            row.push((i - 1, v));
        }
        rows.push(row);
        raw_labels.push(label.to_string());
    }
    if rows.is_empty() {
        return Err(ScmlError::Empty("input file"));
    }
    let d = match dim {
        Some(d) if d < max_idx => {
            return Err(ScmlError::InvalidArgument(format!("feature index {max_idx} exceeds dimension {d}")));
        }
        Some(d) => d,
        None => max_idx.max(1),
    };
    let mut x = Array2::zeros((rows.len(), d));
    for (r, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            x[[r, j]] = v;
        }
    }
    Dataset::from_raw_labels(x, &raw_labels)
}

/// Writes `ds` in the CSV layout read by [`parse_csv`], with a header row.
pub fn export_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    let names: Vec<String> = match &ds.feature_names {
        Some(n) => n.clone(),
        None => (1..=ds.dim()).map(|j| format!("x{j}")).collect(),
    };
    out.push_str(&names.join(","));
    out.push_str(",label\n");
    for i in 0..ds.n() {
        for v in ds.row(i) {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        match &ds.class_names {
            Some(c) => out.push_str(&c[ds.label(i)]),
            None => {
                let _ = write!(out, "{}", ds.label(i));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    Ok(fs::write(path, export_csv(ds))?)
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("epoch,objective,validation_error,nnz\n");
    for r in trace {
        let val = r.validation_error.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.epoch, fmt_f64(r.objective), val, r.nnz);
    }
    out
}

/// Triplet indices with the squared Euclidean distances from the anchor.
pub fn triplets_csv(ds: &Dataset, triplets: &[Triplet]) -> String {
    let mut out = String::from("anchor,target,impostor,d_target,d_impostor\n");
    for t in triplets {
        let a = ds.row(t.anchor);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t.anchor,
            t.target,
            t.impostor,
            fmt_f64(sq_euclidean(a, ds.row(t.target))),
            fmt_f64(sq_euclidean(a, ds.row(t.impostor)))
        );
    }
    out
}
