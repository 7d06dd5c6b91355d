//! Input-output tables, technical coefficients and the Leontief inverse.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

/// Relative tolerance for the accounting identities of a table.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

/// Reciprocal condition number below which `I - A` counts as singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("flows must be a square matrix, got shape {0:?}")]
    NotSquare(Vec<usize>),
    #[error("vector `{name}` has length {actual}, expected {expected}")]
    VectorLength {
        name: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("vector `{name}` has non-finite entry at {index}")]
    NonFinite { name: &'static str, index: usize },
    #[error("{identity} fails for industry {index}: {lhs} vs {rhs}")]
    IdentityViolation {
        identity: Identity,
        index: usize,
        lhs: f64,
        rhs: f64,
    },
    #[error("industry {industry} has denominator {denominator} but nonzero inflows")]
    ZeroDenominator { industry: usize, denominator: f64 },
    #[error("I - A is singular (reciprocal condition estimate {rcond:e})")]
    SingularMatrix { rcond: f64 },
}

/// The four accounting identities of an input-output table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Identity {
    /// `u1[i] = sum_j x[i][j]`
    RowTotal,
    /// `p[i] = u1[i] + v1[i]`
    OutputBalance,
    /// `u2[j] = sum_i x[i][j]`
    ColumnTotal,
    /// `p[j] = u2[j] + v2[j]`
    InputBalance,
}

impl std::fmt::Display for Identity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Identity::RowTotal => "row total u1 = sum_j x",
            Identity::OutputBalance => "output equation p = u1 + v1",
            Identity::ColumnTotal => "column total u2 = sum_i x",
            Identity::InputBalance => "input equation p = u2 + v2",
        })
    }
}

/// Industry-by-industry input-output table.
///
/// `flows[i][j]` is the flow from industry `i` to industry `j`; `u1` and `u2`
/// are its row and column totals, `v1` final demand, `v2` value added and
/// `p` total resources.
#[derive(Debug, Clone, PartialEq)]
pub struct IOTable {
    flows: Tensor,
    u1: Vec<f64>,
    u2: Vec<f64>,
    p: Vec<f64>,
    v1: Vec<f64>,
    v2: Vec<f64>,
}

fn agrees(lhs: f64, rhs: f64) -> bool {
    (lhs - rhs).abs() <= IDENTITY_TOLERANCE * lhs.abs().max(rhs.abs())
}

impl IOTable {
    pub fn new(
        flows: Tensor,
        u1: Vec<f64>,
        u2: Vec<f64>,
        p: Vec<f64>,
        v1: Vec<f64>,
        v2: Vec<f64>,
    ) -> Result<Self, AnalysisError> {
        let n = square_size(&flows)?;
        for (name, v) in [("u1", &u1), ("u2", &u2), ("p", &p), ("v1", &v1), ("v2", &v2)] {
            if v.len() != n {
                return Err(AnalysisError::VectorLength {
                    name,
                    expected: n,
                    actual: v.len(),
                });
            }
            if let Some(index) = v.iter().position(|x| !x.is_finite()) {
                return Err(AnalysisError::NonFinite { name, index });
            }
        }
        let table = IOTable {
            flows,
            u1,
            u2,
            p,
            v1,
            v2,
        };
        table.check_identities()?;
        Ok(table)
    }

    /// Table whose totals follow from the flows and the two border vectors.
    ///
    /// `p` is taken from the output side; the input side is then checked.
    pub fn from_flows(flows: Tensor, v1: Vec<f64>, v2: Vec<f64>) -> Result<Self, AnalysisError> {
        square_size(&flows)?;
        let u1 = flows.margin(1)?.into_values();
        let u2 = flows.margin(0)?.into_values();
        if v1.len() != u1.len() {
            return Err(AnalysisError::VectorLength {
                name: "v1",
                expected: u1.len(),
                actual: v1.len(),
            });
        }
        let p = u1.iter().zip(&v1).map(|(a, b)| a + b).collect();
        IOTable::new(flows, u1, u2, p, v1, v2)
    }

    fn check_identities(&self) -> Result<(), AnalysisError> {
        let row_sums = self.flows.margin(1)?;
        let col_sums = self.flows.margin(0)?;
        let checks: [(Identity, Vec<(f64, f64)>); 4] = [
            (
                Identity::RowTotal,
                self.u1.iter().copied().zip(row_sums.values().iter().copied()).collect(),
            ),
            (
                Identity::OutputBalance,
                self.p
                    .iter()
                    .zip(self.u1.iter().zip(&self.v1))
                    .map(|(&p, (u, v))| (p, u + v))
                    .collect(),
            ),
            (
                Identity::ColumnTotal,
                self.u2.iter().copied().zip(col_sums.values().iter().copied()).collect(),
            ),
            (
                Identity::InputBalance,
                self.p
                    .iter()
                    .zip(self.u2.iter().zip(&self.v2))
                    .map(|(&p, (u, v))| (p, u + v))
                    .collect(),
            ),
        ];
        for (identity, pairs) in checks {
            if let Some((index, &(lhs, rhs))) =
                pairs.iter().enumerate().find(|(_, (l, r))| !agrees(*l, *r))
            {
                return Err(AnalysisError::IdentityViolation {
                    identity,
                    index,
                    lhs,
                    rhs,
                });
            }
        }
        Ok(())
    }

    /// Swap in new flows, e.g. a balanced estimate; identities are re-checked.
    pub fn with_flows(&self, flows: Tensor) -> Result<Self, AnalysisError> {
        IOTable::new(
            flows,
            self.u1.clone(),
            self.u2.clone(),
            self.p.clone(),
            self.v1.clone(),
            self.v2.clone(),
        )
    }

    pub fn size(&self) -> usize {
        self.u1.len()
    }

    pub fn flows(&self) -> &Tensor {
        &self.flows
    }

    pub fn u1(&self) -> &[f64] {
        &self.u1
    }

    pub fn u2(&self) -> &[f64] {
        &self.u2
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn v1(&self) -> &[f64] {
        &self.v1
    }

    pub fn v2(&self) -> &[f64] {
        &self.v2
    }
}

fn square_size(t: &Tensor) -> Result<usize, AnalysisError> {
    match t.shape().as_slice() {
        [r, c] if r == c => Ok(*r),
        other => Err(AnalysisError::NotSquare(other.to_vec())),
    }
}

/// Denominator used when normalizing flows into technical coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoefficientMode {
    /// `a[i][j] = x[i][j] / p[j]`. Makes `p = L v1` an identity of the table.
    #[default]
    TotalOutput,
    /// `a[i][j] = x[i][j] / u1[j]`, dividing by the row total of the receiving industry.
    RowTotal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    a: Tensor,
}

impl CoefficientMatrix {
    pub fn new(a: Tensor) -> Result<Self, AnalysisError> {
        square_size(&a)?;
        Ok(CoefficientMatrix { a })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.a
    }

    pub fn size(&self) -> usize {
        self.a.dims()[0].size
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.size();
        DMatrix::from_row_slice(n, n, self.a.values())
    }
}

pub fn technical_coefficients(
    table: &IOTable,
    mode: CoefficientMode,
) -> Result<CoefficientMatrix, AnalysisError> {
    let n = table.size();
    let denominators = match mode {
        CoefficientMode::TotalOutput => table.p(),
        CoefficientMode::RowTotal => table.u1(),
    };
    let x = table.flows().values();
    let mut a = vec![0.0; n * n];
    for (j, &den) in denominators.iter().enumerate() {
        if den > 0.0 {
            for i in 0..n {
                a[i * n + j] = x[i * n + j] / den;
            }
        } else if (0..n).any(|i| x[i * n + j] != 0.0) {
            return Err(AnalysisError::ZeroDenominator {
                industry: j,
                denominator: den,
            });
        }
    }
    CoefficientMatrix::new(table.flows().with_values(a)?)
}

/// Reasons to doubt that `I - A` has a nonnegative inverse.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralWarning {
    RowSumAtLeastOne { index: usize, sum: f64 },
    ColumnSumAtLeastOne { index: usize, sum: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeontiefInverse {
    /// `(I - A)^-1`. May hold negative entries when `A` is not productive.
    pub matrix: DMatrix<f64>,
    /// Reciprocal 1-norm condition number of `I - A`.
    pub rcond: f64,
    pub warnings: Vec<SpectralWarning>,
}

impl LeontiefInverse {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// Row-major entries.
    pub fn row_major(&self) -> Vec<f64> {
        self.matrix.transpose().as_slice().to_vec()
    }

    /// As a tensor, with the coefficient matrix's dimension metadata.
    pub fn to_tensor(&self, like: &CoefficientMatrix) -> Result<Tensor, TensorError> {
        like.tensor().with_values(self.row_major())
    }

    pub fn predict(&self, v1: &[f64]) -> Result<Vec<f64>, AnalysisError> {
        mat_vec(&self.row_major(), self.size(), v1)
    }
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `L = (I - A)^-1` via LU factorization with partial pivoting.
pub fn leontief_inverse(a: &CoefficientMatrix) -> Result<LeontiefInverse, AnalysisError> {
    let n = a.size();
    let am = a.to_matrix();
    let mut warnings = Vec::new();
    for (index, row) in am.row_iter().enumerate() {
        let sum = row.sum();
        if sum >= 1.0 {
            warnings.push(SpectralWarning::RowSumAtLeastOne { index, sum });
        }
    }
    for (index, col) in am.column_iter().enumerate() {
        let sum = col.sum();
        if sum >= 1.0 {
            warnings.push(SpectralWarning::ColumnSumAtLeastOne { index, sum });
        }
    }
    let system = DMatrix::<f64>::identity(n, n) - am;
    let singular = |rcond| AnalysisError::SingularMatrix { rcond };
    let lu = system.clone().lu();
    let inverse = lu
        .solve(&DMatrix::<f64>::identity(n, n))
        .ok_or_else(|| singular(0.0))?;
    let rcond = 1.0 / (norm1(&system) * norm1(&inverse));
    if !(rcond >= SINGULAR_RCOND) {
        return Err(singular(if rcond.is_nan() { 0.0 } else { rcond }));
    }
    Ok(LeontiefInverse {
        matrix: inverse,
        rcond,
        warnings,
    })
}

/// `p = L v1`.
pub fn predict_resources(l: &Tensor, v1: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    let n = square_size(l)?;
    mat_vec(l.values(), n, v1)
}

fn mat_vec(row_major: &[f64], n: usize, v: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if v.len() != n {
        return Err(AnalysisError::VectorLength {
            name: "v1",
            expected: n,
            actual: v.len(),
        });
    }
    Ok(row_major
        .chunks_exact(n)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect())
}
