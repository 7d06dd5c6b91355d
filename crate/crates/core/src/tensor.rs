//! Dense nonnegative D-dimensional tensors with named dimensions.
//!
//! Values are stored flat in row-major order: the last dimension varies
//! fastest. Dimension identity is positional; names and labels only travel
//! along as metadata for files and reports.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("expected {expected} values for shape {shape:?}, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("negative value {value} at flat position {position}")]
    NegativeValue { position: usize, value: f64 },
    #[error("non-finite value {value} at flat position {position}")]
    NonFiniteValue { position: usize, value: f64 },
    #[error("dimension name `{0}` is used more than once")]
    DuplicateDimName(String),
    #[error("dimension `{0}` has size 0")]
    EmptyDim(String),
    #[error("dimension `{name}` has {labels} labels but size {size}")]
    LabelCount {
        name: String,
        size: usize,
        labels: usize,
    },
    #[error("dimension index {dim} out of range for a {ndim}-dimensional tensor")]
    DimOutOfRange { dim: usize, ndim: usize },
    #[error("index has {got} components, tensor has {ndim} dimensions")]
    IndexRank { got: usize, ndim: usize },
    #[error("index {index} out of bounds for dimension {dim} of size {size}")]
    IndexOutOfBounds { dim: usize, index: usize, size: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("expected {expected} margins, got {actual}")]
    MarginCount { expected: usize, actual: usize },
}

/// One axis of a tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dim {
    pub name: String,
    pub size: usize,
    /// Optional display labels, one per position along the axis.
    pub labels: Option<Vec<String>>,
}

impl Dim {
    pub fn new(name: impl Into<String>, size: usize) -> Self {
        Dim {
            name: name.into(),
            size,
            labels: None,
        }
    }

    pub fn labeled<S: Into<String>>(name: impl Into<String>, labels: Vec<S>) -> Self {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        Dim {
            name: name.into(),
            size: labels.len(),
            labels: Some(labels),
        }
    }

    /// Label at `i`, falling back to the decimal index when unlabeled.
    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(labels) => labels[i].clone(),
            None => i.to_string(),
        }
    }
}

/// Dimensions named `d0`, `d1`, ... with the given sizes.
pub fn anonymous_dims(shape: &[usize]) -> Vec<Dim> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &n)| Dim::new(format!("d{i}"), n))
        .collect()
}

fn validate_dims(dims: &[Dim]) -> Result<(), TensorError> {
    for (i, dim) in dims.iter().enumerate() {
        if dim.size == 0 {
            return Err(TensorError::EmptyDim(dim.name.clone()));
        }
        if let Some(labels) = &dim.labels {
            if labels.len() != dim.size {
                return Err(TensorError::LabelCount {
                    name: dim.name.clone(),
                    size: dim.size,
                    labels: labels.len(),
                });
            }
        }
        if dims[..i].iter().any(|other| other.name == dim.name) {
            return Err(TensorError::DuplicateDimName(dim.name.clone()));
        }
    }
    Ok(())
}

pub(crate) fn check_value(position: usize, value: f64) -> Result<(), TensorError> {
    if !value.is_finite() {
        Err(TensorError::NonFiniteValue { position, value })
    } else if value < 0.0 {
        Err(TensorError::NegativeValue { position, value })
    } else {
        Ok(())
    }
}

/// Dense nonnegative tensor.
///
/// A tensor with no dimensions is a scalar holding exactly one value; it
/// appears as the margin of a one-dimensional tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<Dim>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<Dim>, values: Vec<f64>) -> Result<Self, TensorError> {
        validate_dims(&dims)?;
        let shape: Vec<usize> = dims.iter().map(|d| d.size).collect();
        let expected = shape.iter().product::<usize>();
        if values.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: values.len(),
            });
        }
        for (position, &value) in values.iter().enumerate() {
            check_value(position, value)?;
        }
        Ok(Tensor { dims, values })
    }

    /// Tensor with anonymous dimension names.
    pub fn from_shape(shape: &[usize], values: Vec<f64>) -> Result<Self, TensorError> {
        Tensor::new(anonymous_dims(shape), values)
    }

    pub fn filled(dims: Vec<Dim>, value: f64) -> Result<Self, TensorError> {
        let len = dims.iter().map(|d| d.size).product();
        Tensor::new(dims, vec![value; len])
    }

    /// Row-major 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(nrows * ncols);
        for row in rows {
            if row.len() != ncols {
                return Err(TensorError::LengthMismatch {
                    shape: vec![nrows, ncols],
                    expected: ncols,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Tensor::from_shape(&[nrows, ncols], values)
    }

    /// One-dimensional tensor.
    pub fn vector(values: Vec<f64>) -> Result<Self, TensorError> {
        let n = values.len();
        Tensor::from_shape(&[n], values)
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    pub fn shape(&self) -> Vec<usize> {
        self.dims.iter().map(|d| d.size).collect()
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Unchecked mutable access; callers keep the nonnegativity invariant.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Same dimensions, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, TensorError> {
        Tensor::new(self.dims.clone(), values)
    }

    /// Replace the dimension metadata, keeping values. Sizes must agree.
    pub fn with_dims(self, dims: Vec<Dim>) -> Result<Self, TensorError> {
        validate_dims(&dims)?;
        let new_shape: Vec<usize> = dims.iter().map(|d| d.size).collect();
        if new_shape != self.shape() {
            return Err(TensorError::ShapeMismatch {
                left: self.shape(),
                right: new_shape,
            });
        }
        Ok(Tensor {
            dims,
            values: self.values,
        })
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Multiply every element by a nonnegative finite factor.
    pub fn scaled(&self, factor: f64) -> Result<Self, TensorError> {
        self.with_values(self.values.iter().map(|v| v * factor).collect())
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize, TensorError> {
        if index.len() != self.dims.len() {
            return Err(TensorError::IndexRank {
                got: index.len(),
                ndim: self.dims.len(),
            });
        }
        let mut offset = 0;
        for (dim, (&i, d)) in index.iter().zip(&self.dims).enumerate() {
            if i >= d.size {
                return Err(TensorError::IndexOutOfBounds {
                    dim,
                    index: i,
                    size: d.size,
                });
            }
            offset = offset * d.size + i;
        }
        Ok(offset)
    }

    /// Multi-index of a flat row-major position.
    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        let mut index = vec![0; self.dims.len()];
        for (slot, d) in index.iter_mut().zip(&self.dims).rev() {
            *slot = offset % d.size;
            offset /= d.size;
        }
        index
    }

    pub fn get(&self, index: &[usize]) -> Result<f64, TensorError> {
        Ok(self.values[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<(), TensorError> {
        let position = self.offset(index)?;
        check_value(position, value)?;
        self.values[position] = value;
        Ok(())
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(TensorError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            })
        }
    }

    /// Sizes of the (outer, fiber, inner) blocks around dimension `d`.
    ///
    /// Element `(o, k, i)` lives at `(o * fiber + k) * inner + i`, and its
    /// margin entry at `o * inner + i`.
    pub(crate) fn fiber_layout(&self, d: usize) -> Result<(usize, usize, usize), TensorError> {
        if d >= self.dims.len() {
            return Err(TensorError::DimOutOfRange {
                dim: d,
                ndim: self.dims.len(),
            });
        }
        let outer = self.dims[..d].iter().map(|x| x.size).product();
        let inner = self.dims[d + 1..].iter().map(|x| x.size).product();
        Ok((outer, self.dims[d].size, inner))
    }

    /// Dimensions with `d` removed.
    pub fn dims_without(&self, d: usize) -> Result<Vec<Dim>, TensorError> {
        if d >= self.dims.len() {
            return Err(TensorError::DimOutOfRange {
                dim: d,
                ndim: self.dims.len(),
            });
        }
        let mut dims = self.dims.clone();
        dims.remove(d);
        Ok(dims)
    }

    /// Sum over dimension `d`, keeping the remaining dimensions in order.
    pub fn margin(&self, d: usize) -> Result<Tensor, TensorError> {
        let (outer, fiber, inner) = self.fiber_layout(d)?;
        let mut sums = vec![0.0; outer * inner];
        margin_into(&self.values, outer, fiber, inner, &mut sums);
        Ok(Tensor {
            dims: self.dims_without(d)?,
            values: sums,
        })
    }

    /// Reorder the labels of every labeled dimension to follow `dims`.
    ///
    /// Both sides must carry the same label sets per dimension; used to line
    /// up files whose rows appeared in a different order.
    pub fn align_labels(&self, dims: &[Dim]) -> Result<Tensor, AlignError> {
        if dims.len() != self.dims.len() {
            return Err(AlignError::Rank {
                expected: dims.len(),
                actual: self.dims.len(),
            });
        }
        let mut perms: Vec<Vec<usize>> = Vec::with_capacity(dims.len());
        for (mine, want) in self.dims.iter().zip(dims) {
            if mine.size != want.size {
                return Err(AlignError::Size {
                    dim: want.name.clone(),
                    expected: want.size,
                    actual: mine.size,
                });
            }
            let perm = match (&mine.labels, &want.labels) {
                (Some(have), Some(target)) => target
                    .iter()
                    .map(|label| {
                        have.iter().position(|h| h == label).ok_or_else(|| {
                            AlignError::UnknownLabel {
                                dim: want.name.clone(),
                                label: label.clone(),
                            }
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                _ => (0..mine.size).collect(),
            };
            perms.push(perm);
        }
        let mut values = Vec::with_capacity(self.values.len());
        let mut out_dims = self.dims.clone();
        for (out, want) in out_dims.iter_mut().zip(dims) {
            if out.labels.is_some() && want.labels.is_some() {
                out.labels = want.labels.clone();
            }
        }
        let shape: Vec<usize> = dims.iter().map(|d| d.size).collect();
        let mut index = vec![0usize; shape.len()];
        let mut source = vec![0usize; shape.len()];
        for _ in 0..self.values.len() {
            for (k, &i) in index.iter().enumerate() {
                source[k] = perms[k][i];
            }
            values.push(self.values[self.offset(&source).expect("aligned index in range")]);
            increment(&mut index, &shape);
        }
        Ok(Tensor {
            dims: out_dims,
            values,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("expected {expected} dimensions, got {actual}")]
    Rank { expected: usize, actual: usize },
    #[error("dimension `{dim}` has size {actual}, expected {expected}")]
    Size {
        dim: String,
        expected: usize,
        actual: usize,
    },
    #[error("label `{label}` of dimension `{dim}` not found")]
    UnknownLabel { dim: String, label: String },
}

/// Advance a row-major multi-index; wraps to all zeros after the last cell.
pub(crate) fn increment(index: &mut [usize], shape: &[usize]) {
    for k in (0..index.len()).rev() {
        index[k] += 1;
        if index[k] < shape[k] {
            return;
        }
        index[k] = 0;
    }
}

/// Accumulate fiber sums into `sums` (overwritten), in natural index order.
pub(crate) fn margin_into(values: &[f64], outer: usize, fiber: usize, inner: usize, sums: &mut [f64]) {
    sums.iter_mut().for_each(|s| *s = 0.0);
    for o in 0..outer {
        let acc = &mut sums[o * inner..(o + 1) * inner];
        let block = &values[o * fiber * inner..(o + 1) * fiber * inner];
        for row in block.chunks_exact(inner) {
            for (s, v) in acc.iter_mut().zip(row) {
                *s += v;
            }
        }
    }
}

impl fmt::Display for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self
            .dims
            .iter()
            .map(|d| format!("{}={}", d.name, d.size))
            .collect();
        write!(f, "Tensor[{}]", names.join(", "))
    }
}

/// One target margin per dimension of a parent tensor.
///
/// Entry `d` holds the sums over dimension `d`, so its shape is the parent
/// shape with position `d` deleted.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginSet {
    parent: Vec<Dim>,
    margins: Vec<Tensor>,
}

impl MarginSet {
    pub fn new(parent: Vec<Dim>, margins: Vec<Tensor>) -> Result<Self, TensorError> {
        validate_dims(&parent)?;
        if margins.len() != parent.len() {
            return Err(TensorError::MarginCount {
                expected: parent.len(),
                actual: margins.len(),
            });
        }
        let shape: Vec<usize> = parent.iter().map(|d| d.size).collect();
        for (d, margin) in margins.iter().enumerate() {
            let mut expected = shape.clone();
            expected.remove(d);
            if margin.shape() != expected {
                return Err(TensorError::ShapeMismatch {
                    left: expected,
                    right: margin.shape(),
                });
            }
        }
        Ok(MarginSet { parent, margins })
    }

    /// All `D` margins of an existing tensor.
    pub fn of(t: &Tensor) -> MarginSet {
        let margins = (0..t.ndim())
            .map(|d| t.margin(d).expect("dimension in range"))
            .collect();
        MarginSet {
            parent: t.dims().to_vec(),
            margins,
        }
    }

    pub fn parent_dims(&self) -> &[Dim] {
        &self.parent
    }

    pub fn parent_shape(&self) -> Vec<usize> {
        self.parent.iter().map(|d| d.size).collect()
    }

    pub fn ndim(&self) -> usize {
        self.parent.len()
    }

    pub fn get(&self, d: usize) -> Option<&Tensor> {
        self.margins.get(d)
    }

    pub fn margins(&self) -> &[Tensor] {
        &self.margins
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.margins.iter()
    }

    /// Largest margin grand total.
    pub fn max_total(&self) -> f64 {
        self.margins.iter().map(Tensor::total).fold(0.0, f64::max)
    }
}
