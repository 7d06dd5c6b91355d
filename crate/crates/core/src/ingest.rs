//! Reading and writing tensors, margin sets and input-output tables.
//!
//! Tensors use a long CSV layout: a header naming each dimension followed by
//! a final `value` column, then one row per cell. Every combination of the
//! observed labels must appear exactly once. Labels keep the order in which
//! they first appear, so writing and reading back preserves the layout.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io_analysis::{AnalysisError, IOTable};
use crate::tensor::{increment, AlignError, Dim, MarginSet, Tensor, TensorError};

pub const VALUE_COLUMN: &str = "value";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: negative value {value}")]
    NegativeValue { line: u64, value: f64 },
    #[error("line {line}: cell {labels:?} already given on line {first_line}")]
    DuplicateCell {
        line: u64,
        first_line: u64,
        labels: Vec<String>,
    },
    #[error("missing cell {labels:?}")]
    MissingCell { labels: Vec<String> },
    #[error("schema: {0}")]
    Schema(String),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        source: Box<IngestError>,
    },
}

impl IngestError {
    /// Innermost error, past any file context.
    pub fn root(&self) -> &IngestError {
        match self {
            IngestError::InFile { source, .. } => source.root(),
            other => other,
        }
    }

    fn in_file(self, path: &Path) -> IngestError {
        match self {
            e @ (IngestError::Io { .. } | IngestError::InFile { .. }) => e,
            e => IngestError::InFile {
                path: path.to_path_buf(),
                source: Box::new(e),
            },
        }
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File, IngestError> {
    File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map_or(0, |p| p.line());
    IngestError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Format a value so that parsing it back yields the same bits.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn parse_value(field: &str, line: u64) -> Result<f64, IngestError> {
    let value: f64 = field.trim().parse().map_err(|_| IngestError::Parse {
        line,
        message: format!("`{field}` is not a decimal number"),
    })?;
    if !value.is_finite() {
        return Err(IngestError::Parse {
            line,
            message: format!("`{field}` is not finite"),
        });
    }
    if value < 0.0 {
        return Err(IngestError::NegativeValue { line, value });
    }
    Ok(value)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, IngestError> {
    let path = path.as_ref();
    read_tensor_from(open(path)?).map_err(|e| e.in_file(path))
}

pub fn read_tensor_from(reader: impl Read) -> Result<Tensor, IngestError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv.headers().map_err(csv_error)?.clone();
    if header.is_empty() || &header[header.len() - 1] != VALUE_COLUMN {
        return Err(IngestError::Schema(format!(
            "last column must be `{VALUE_COLUMN}`, header is {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let names: Vec<String> = header.iter().take(header.len() - 1).map(String::from).collect();
    let ndim = names.len();

    let mut labels: Vec<Vec<String>> = vec![Vec::new(); ndim];
    let mut lookup: Vec<HashMap<String, usize>> = vec![HashMap::new(); ndim];
    let mut rows: Vec<(Vec<usize>, f64, u64)> = Vec::new();
    for record in csv.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let mut index = Vec::with_capacity(ndim);
        for (k, field) in record.iter().take(ndim).enumerate() {
            let next = labels[k].len();
            let i = *lookup[k].entry(field.to_string()).or_insert_with(|| {
                labels[k].push(field.to_string());
                next
            });
            index.push(i);
        }
        rows.push((index, parse_value(&record[ndim], line)?, line));
    }
    if rows.is_empty() {
        return Err(IngestError::Schema("no data rows".into()));
    }

    let dims: Vec<Dim> = names
        .into_iter()
        .zip(labels)
        .map(|(name, l)| Dim::labeled(name, l))
        .collect();
    let shape: Vec<usize> = dims.iter().map(|d| d.size).collect();
    let len = shape.iter().product::<usize>();
    let mut values = vec![0.0; len];
    let mut seen: Vec<Option<u64>> = vec![None; len];
    let label_names = |index: &[usize]| -> Vec<String> {
        index.iter().zip(&dims).map(|(&i, d)| d.label(i)).collect()
    };
    for (index, value, line) in rows {
        let pos = index.iter().zip(&shape).fold(0, |acc, (&i, &n)| acc * n + i);
        if let Some(first_line) = seen[pos] {
            return Err(IngestError::DuplicateCell {
                line,
                first_line,
                labels: label_names(&index),
            });
        }
        seen[pos] = Some(line);
        values[pos] = value;
    }
    if let Some(pos) = seen.iter().position(Option::is_none) {
        let mut index = vec![0; ndim];
        let mut rest = pos;
        for k in (0..ndim).rev() {
            index[k] = rest % shape[k];
            rest /= shape[k];
        }
        return Err(IngestError::MissingCell {
            labels: label_names(&index),
        });
    }
    Ok(Tensor::new(dims, values)?)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut file = create(path)?;
    write_tensor_to(t, &mut file).map_err(|e| e.in_file(path))?;
    file.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_tensor_to(t: &Tensor, writer: impl Write) -> Result<(), IngestError> {
    write_grid(t.dims(), t.values(), VALUE_COLUMN, writer)
}

/// Long-format writer for any grid over `dims`, including signed ones.
pub fn write_grid(
    dims: &[Dim],
    values: &[f64],
    value_column: &str,
    writer: impl Write,
) -> Result<(), IngestError> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = dims.iter().map(|d| d.name.as_str()).collect();
    header.push(value_column);
    csv.write_record(&header).map_err(csv_error)?;
    let shape: Vec<usize> = dims.iter().map(|d| d.size).collect();
    let mut index = vec![0; dims.len()];
    for &v in values {
        let mut record: Vec<String> = index.iter().zip(dims).map(|(&i, d)| d.label(i)).collect();
        record.push(format_value(v));
        csv.write_record(&record).map_err(csv_error)?;
        increment(&mut index, &shape);
    }
    csv.flush().map_err(|source| IngestError::Io {
        path: PathBuf::new(),
        source,
    })
}

/// Wide 2-D CSV: header `corner,col1,col2,...`, then `row_label,v1,v2,...`.
pub fn read_wide_matrix(path: impl AsRef<Path>) -> Result<Tensor, IngestError> {
    let path = path.as_ref();
    read_wide_matrix_from(open(path)?).map_err(|e| e.in_file(path))
}

pub fn read_wide_matrix_from(reader: impl Read) -> Result<Tensor, IngestError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv.headers().map_err(csv_error)?.clone();
    if header.len() < 2 {
        return Err(IngestError::Schema("wide matrix needs at least one value column".into()));
    }
    let cols: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for record in csv.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push(record[0].to_string());
        for field in record.iter().skip(1) {
            values.push(parse_value(field, line)?);
        }
    }
    if rows.is_empty() {
        return Err(IngestError::Schema("no data rows".into()));
    }
    Ok(Tensor::new(
        vec![Dim::labeled("row", rows), Dim::labeled("col", cols)],
        values,
    )?)
}

/// JSON manifest listing one margin file per tensor dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginManifest {
    pub tensor_dims: Vec<String>,
    pub margins: Vec<MarginEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginEntry {
    /// Path relative to the manifest's directory, or absolute.
    pub file: String,
    pub dropped_dim: String,
}

fn read_manifest(path: &Path) -> Result<MarginManifest, IngestError> {
    serde_json::from_reader(open(path)?).map_err(|e| IngestError::from(e).in_file(path))
}

/// Margin tensors in dimension order, checked against the manifest.
fn read_margin_files(manifest_path: &Path) -> Result<(MarginManifest, Vec<Tensor>), IngestError> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let names = &manifest.tensor_dims;
    if manifest.margins.len() != names.len() {
        return Err(IngestError::Schema(format!(
            "{} margins listed for {} tensor dimensions",
            manifest.margins.len(),
            names.len()
        )));
    }
    let mut margins = Vec::with_capacity(names.len());
    for (d, name) in names.iter().enumerate() {
        let matches: Vec<&MarginEntry> = manifest
            .margins
            .iter()
            .filter(|m| &m.dropped_dim == name)
            .collect();
        let entry = match matches.as_slice() {
            [one] => *one,
            [] => return Err(IngestError::Schema(format!("no margin drops dimension `{name}`"))),
            _ => {
                return Err(IngestError::Schema(format!(
                    "more than one margin drops dimension `{name}`"
                )))
            }
        };
        let path = base.join(&entry.file);
        let margin = read_tensor(&path)?;
        let mut expected = names.clone();
        expected.remove(d);
        let found: Vec<String> = margin.dims().iter().map(|x| x.name.clone()).collect();
        if found != expected {
            return Err(IngestError::Schema(format!(
                "{}: dimensions {found:?}, expected {expected:?}",
                path.display()
            )));
        }
        margins.push(margin);
    }
    Ok((manifest, margins))
}

/// Read margins, inferring the parent dimensions from the files.
///
/// Every parent dimension must survive in at least one margin, so this needs
/// `D >= 2`; use [`read_margins_for`] when the tensor is at hand.
pub fn read_margins(manifest_path: impl AsRef<Path>) -> Result<MarginSet, IngestError> {
    let (manifest, margins) = read_margin_files(manifest_path.as_ref())?;
    let ndim = manifest.tensor_dims.len();
    let mut parent = Vec::with_capacity(ndim);
    for k in 0..ndim {
        // Margin 0 keeps every dimension but 0; margin 1 keeps dimension 0.
        let (source, pos) = if k == 0 { (1, 0) } else { (0, k - 1) };
        let dim = margins
            .get(source)
            .map(|m| m.dims()[pos].clone())
            .ok_or_else(|| {
                IngestError::Schema("cannot infer tensor shape from a single margin".into())
            })?;
        parent.push(dim);
    }
    assemble(parent, margins)
}

/// Read margins whose labels are lined up with an existing tensor's dimensions.
pub fn read_margins_for(
    manifest_path: impl AsRef<Path>,
    parent: &[Dim],
) -> Result<MarginSet, IngestError> {
    let (manifest, margins) = read_margin_files(manifest_path.as_ref())?;
    let names: Vec<&str> = parent.iter().map(|d| d.name.as_str()).collect();
    if manifest.tensor_dims != names {
        return Err(IngestError::Schema(format!(
            "manifest dimensions {:?} differ from tensor dimensions {names:?}",
            manifest.tensor_dims
        )));
    }
    assemble(parent.to_vec(), margins)
}

fn assemble(parent: Vec<Dim>, margins: Vec<Tensor>) -> Result<MarginSet, IngestError> {
    let aligned = margins
        .into_iter()
        .enumerate()
        .map(|(d, m)| {
            let mut want = parent.clone();
            want.remove(d);
            m.align_labels(&want)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MarginSet::new(parent, aligned)?)
}

/// Write each margin as `<stem>_<dim>.csv` next to a `<stem>.json` manifest.
pub fn write_margins(set: &MarginSet, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf, IngestError> {
    let dir = dir.as_ref();
    let mut entries = Vec::new();
    for (dim, margin) in set.parent_dims().iter().zip(set.margins()) {
        let file = format!("{stem}_{}.csv", dim.name);
        write_tensor(margin, dir.join(&file))?;
        entries.push(MarginEntry {
            file,
            dropped_dim: dim.name.clone(),
        });
    }
    let manifest = MarginManifest {
        tensor_dims: set.parent_dims().iter().map(|d| d.name.clone()).collect(),
        margins: entries,
    };
    let path = dir.join(format!("{stem}.json"));
    let file = create(&path)?;
    serde_json::to_writer_pretty(file, &manifest).map_err(|e| IngestError::from(e).in_file(&path))?;
    Ok(path)
}

/// Border vectors of an input-output table, one row per industry.
///
/// Columns: an industry label, then `p`, `v1`, `v2` and optionally `u1`,
/// `u2` in any order. Missing totals are computed from the flows.
pub fn read_io_table(
    flows_path: impl AsRef<Path>,
    vectors_path: impl AsRef<Path>,
) -> Result<IOTable, IngestError> {
    let flows = read_tensor(flows_path.as_ref())?;
    let vectors_path = vectors_path.as_ref();
    read_io_table_from(flows, open(vectors_path)?).map_err(|e| e.in_file(vectors_path))
}

pub fn read_io_table_from(flows: Tensor, vectors: impl Read) -> Result<IOTable, IngestError> {
    if flows.ndim() != 2 {
        return Err(IngestError::Schema(format!(
            "flows must be 2-D, got {} dimensions",
            flows.ndim()
        )));
    }
    // Receiving industries follow the order of supplying ones.
    let mut col_dim = flows.dims()[0].clone();
    col_dim.name = flows.dims()[1].name.clone();
    let flows = flows.align_labels(&[flows.dims()[0].clone(), col_dim])?;
    let industries = &flows.dims()[0];

    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(vectors);
    let header = csv.headers().map_err(csv_error)?.clone();
    let column = |name: &str| header.iter().skip(1).position(|h| h == name).map(|i| i + 1);
    let mut columns: HashMap<&str, Vec<f64>> = HashMap::new();
    let wanted: Vec<(&str, usize)> = ["u1", "u2", "p", "v1", "v2"]
        .into_iter()
        .filter_map(|name| column(name).map(|c| (name, c)))
        .collect();
    for required in ["p", "v1", "v2"] {
        if column(required).is_none() {
            return Err(IngestError::Schema(format!("vectors file lacks column `{required}`")));
        }
    }
    for (name, _) in &wanted {
        columns.insert(name, vec![f64::NAN; industries.size]);
    }
    let mut seen = vec![false; industries.size];
    for record in csv.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let label = &record[0];
        let i = (0..industries.size)
            .find(|&i| industries.label(i) == label)
            .ok_or_else(|| IngestError::Parse {
                line,
                message: format!("industry `{label}` does not appear in the flows"),
            })?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(IngestError::Parse {
                line,
                message: format!("industry `{label}` listed twice"),
            });
        }
        for (name, c) in &wanted {
            let field = record.get(*c).ok_or_else(|| IngestError::Parse {
                line,
                message: format!("missing `{name}` field"),
            })?;
            let value: f64 = field.parse().map_err(|_| IngestError::Parse {
                line,
                message: format!("`{field}` is not a decimal number"),
            })?;
            columns.get_mut(name).expect("column registered")[i] = value;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(IngestError::MissingCell {
            labels: vec![industries.label(i)],
        });
    }
    let u1 = match columns.remove("u1") {
        Some(v) => v,
        None => flows.margin(1)?.into_values(),
    };
    let u2 = match columns.remove("u2") {
        Some(v) => v,
        None => flows.margin(0)?.into_values(),
    };
    let take = |columns: &mut HashMap<&str, Vec<f64>>, name| columns.remove(name).expect("required");
    let p = take(&mut columns, "p");
    let v1 = take(&mut columns, "v1");
    let v2 = take(&mut columns, "v2");
    Ok(IOTable::new(flows, u1, u2, p, v1, v2)?)
}
