use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MultiViewDataset;
use crate::diffcore::{atomic_write, Tensor};
use crate::error::{Error, Result};

/// Files of a CSV-backed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvPaths {
    pub view1: PathBuf,
    pub view2: PathBuf,
    pub labels: PathBuf,
    /// Optional `present` column (0/1) for the view that may be missing.
    #[serde(default)]
    pub mask: Option<PathBuf>,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, e.to_string())
}

/// Float matrix with an `f0,f1,...` header.
pub fn read_matrix_csv(path: &Path) -> Result<Tensor> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let d = header.len();
    if d == 0 {
        return Err(parse_err(path, 1, "empty header"));
    }
    for (j, h) in header.iter().enumerate() {
        if h.trim() != format!("f{j}") {
            return Err(parse_err(path, 1, format!("expected column f{j}, found {h:?}")));
        }
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != d {
            return Err(parse_err(path, line, format!("expected {d} fields, found {}", rec.len())));
        }
        for cell in rec.iter() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("non-numeric cell {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite cell {cell:?}")));
            }
            values.push(v);
        }
        rows += 1;
    }
    Tensor::matrix(rows, d, values)
}

fn read_int_column(path: &Path, name: &str) -> Result<Vec<(i64, u64)>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() != 1 || header.get(0).map(str::trim) != Some(name) {
        return Err(parse_err(path, 1, format!("expected a single `{name}` column")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let cell = rec.get(0).unwrap_or("");
        let v: i64 = cell
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("non-integer cell {cell:?}")))?;
        out.push((v, line));
    }
    Ok(out)
}

/// Load a two-view dataset. Label `-1` marks an unlabeled row. When
/// `num_classes` is `None` it is one more than the largest label.
pub fn load_csv_views(paths: &CsvPaths, num_classes: Option<usize>) -> Result<MultiViewDataset> {
    let x1 = read_matrix_csv(&paths.view1)?;
    let x2 = read_matrix_csv(&paths.view2)?;
    let raw = read_int_column(&paths.labels, "label")?;
    let n = x1.rows();
    for (p, rows) in [(&paths.view2, x2.rows()), (&paths.labels, raw.len())] {
        if rows != n {
            return Err(parse_err(p, rows as u64 + 1, format!("row count {rows} differs from view 1's {n}")));
        }
    }
    let k = match num_classes {
        Some(k) => k,
        None => raw.iter().map(|&(v, _)| v).max().map_or(2, |m| (m + 1).max(2) as usize),
    };
    let mut labels = Vec::with_capacity(n);
    for &(v, line) in &raw {
        labels.push(match v {
            -1 => None,
            v if v >= 0 && (v as usize) < k => Some(v as usize),
            v => return Err(parse_err(&paths.labels, line, format!("label {v} outside {{-1, 0..{}}}", k - 1))),
        });
    }
    let ds = MultiViewDataset::new(vec![x1, x2], labels, k)?;
    match &paths.mask {
        None => Ok(ds),
        Some(mp) => {
            let raw = read_int_column(mp, "present")?;
            if raw.len() != n {
                return Err(parse_err(mp, raw.len() as u64 + 1, format!("row count {} differs from {n}", raw.len())));
            }
            let mut present = Vec::with_capacity(n);
            for (v, line) in raw {
                present.push(match v {
                    0 => false,
                    1 => true,
                    v => return Err(parse_err(mp, line, format!("presence flag {v} is not 0/1"))),
                });
            }
            ds.with_presence(1, present)
        }
    }
}

fn matrix_csv_string(t: &Tensor) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..t.cols()).map(|j| format!("f{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..t.rows() {
        let cells: Vec<String> = t.row_slice(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Write a matrix with an `f0,f1,...` header; values round-trip exactly.
pub fn write_matrix_csv(path: &Path, t: &Tensor) -> Result<()> {
    atomic_write(path, matrix_csv_string(t).as_bytes())
}

/// Write views, labels (`-1` for unlabeled) and, if any row is masked, the
/// presence column.
pub fn write_csv_views(ds: &MultiViewDataset, paths: &CsvPaths) -> Result<()> {
    write_matrix_csv(&paths.view1, ds.view(0))?;
    write_matrix_csv(&paths.view2, ds.view(1))?;
    let mut labels = String::from("label\n");
    for y in ds.labels() {
        labels.push_str(&y.map_or("-1".to_string(), |y| y.to_string()));
        labels.push('\n');
    }
    atomic_write(&paths.labels, labels.as_bytes())?;
    if let Some(mp) = &paths.mask {
        let mut s = String::from("present\n");
        for &p in ds.present() {
            s.push_str(if p { "1\n" } else { "0\n" });
        }
        atomic_write(mp, s.as_bytes())?;
    }
    Ok(())
}
