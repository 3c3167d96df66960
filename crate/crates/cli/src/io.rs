//! CSV and JSON file helpers shared by the subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use stablerules_core::data::{ColumnKind, FeatureMatrix, LabelVector, SampleWeights};
use stablerules_core::{Error, Result};

/// Numeric table split into features and an optional label column.
pub struct NumericData {
    pub x: FeatureMatrix,
    pub y: Option<Vec<f64>>,
}

/// Read a headed CSV of numbers. The column named `label`, if present,
/// becomes `y`. Columns holding only 0 and 1 are typed binary.
pub fn read_numeric_csv(path: &Path, label: &str) -> Result<NumericData> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_pos = header.iter().position(|h| h == label);
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (j, col) in cols.iter_mut().enumerate() {
            let cell = rec.get(j).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::ParseError {
                row: r + 1,
                col: j,
                value: cell.to_string(),
            })?;
            col.push(v);
        }
    }
    let n = cols.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let y = label_pos.map(|j| cols[j].clone());
    let feats: Vec<usize> = (0..header.len()).filter(|&j| Some(j) != label_pos).collect();
    let values = DMatrix::from_fn(n, feats.len(), |i, k| cols[feats[k]][i]);
    let names = feats.iter().map(|&j| header[j].clone()).collect();
    let kinds = feats
        .iter()
        .map(|&j| {
            if cols[j].iter().all(|&v| v == 0.0 || v == 1.0) {
                ColumnKind::Binary
            } else {
                ColumnKind::Continuous
            }
        })
        .collect();
    Ok(NumericData {
        x: FeatureMatrix::new(values, names, kinds)?,
        y,
    })
}

pub fn require_labels(data: &NumericData, label: &str) -> Result<Vec<f64>> {
    data.y
        .clone()
        .ok_or_else(|| Error::SchemaMismatch(format!("no label column `{label}`")))
}

/// Class labels given as 0/1 or -1/+1.
pub fn binary_labels(y: &[f64]) -> Result<LabelVector> {
    LabelVector::binary(y.iter().map(|&v| if v == 0.0 { -1.0 } else { v }).collect())
}

pub fn read_weights(path: &Path) -> Result<SampleWeights> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["weight"] {
        return Err(Error::SchemaMismatch("weights file must have the single column `weight`".into()));
    }
    let mut w = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(0).unwrap_or("").trim();
        w.push(cell.parse().map_err(|_| Error::ParseError {
            row: r + 1,
            col: 0,
            value: cell.to_string(),
        })?);
    }
    SampleWeights::new(w)
}

pub fn weights_csv(w: &SampleWeights) -> String {
    let mut s = String::from("weight\n");
    for v in w.as_slice() {
        let _ = writeln!(s, "{v}");
    }
    s
}

pub fn matrix_csv(x: &FeatureMatrix, label: Option<(&str, &[f64])>) -> String {
    let mut s = x.column_names().join(",");
    if let Some((name, _)) = label {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for i in 0..x.nrows() {
        let row: Vec<String> = (0..x.ncols()).map(|j| x.values()[(i, j)].to_string()).collect();
        s.push_str(&row.join(","));
        if let Some((_, y)) = label {
            let _ = write!(s, ",{}", y[i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::from)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// `d.csv` -> `d.json`. An output that is already JSON gets `.meta.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "json") {
        out.with_extension("meta.json")
    } else {
        out.with_extension("json")
    }
}

/// `r.csv` -> `r_<suffix>.csv`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    out.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

/// Fail before any work if an output directory does not exist.
pub fn check_output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::Config(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

pub fn check_input(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("input file {} does not exist", path.display())))
    }
}
