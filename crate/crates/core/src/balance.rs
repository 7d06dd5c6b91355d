//! Multidimensional RAS balancing.
//!
//! Each sweep visits every dimension once and rescales all fibers along it
//! so the fiber sums hit the target margin. Two-dimensional RAS is the
//! `D = 2` case of the same routine.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{increment, margin_into, Dim, MarginSet, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalanceError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("margins are incompatible: {} violation(s), first: {}", violations.len(), violations[0])]
    IncompatibleMargins { violations: Vec<MarginViolation> },
    #[error(
        "fiber {fiber:?} along dimension {dim} sums to zero but its target margin is {target}"
    )]
    ZeroFiberPositiveMargin {
        dim: usize,
        fiber: Vec<usize>,
        target: f64,
    },
}

/// Order in which dimensions are adjusted within a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OrderPolicy {
    #[default]
    FixedAscending,
    /// A permutation of `0..D`.
    FixedCustom(Vec<usize>),
    /// Fresh shuffle of `0..D` before every sweep, from a seeded ChaCha8 stream.
    RandomPerIteration(u64),
}

/// Which stopping rules may end the run early. `max_iterations` always applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationMode {
    Iterations,
    Delta,
    MarginResidual,
    #[default]
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    MaxIterations,
    Delta,
    MarginResidual,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TerminationReason::MaxIterations => "max_iterations",
            TerminationReason::Delta => "delta",
            TerminationReason::MarginResidual => "margin_residual",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceConfig {
    pub max_iterations: usize,
    /// Stop when the Frobenius change over one sweep drops below this. `0` disables.
    pub delta_threshold: f64,
    /// Stop when the quadratic margin mismatch drops below this. `0` disables.
    pub margin_threshold: f64,
    pub order_policy: OrderPolicy,
    pub termination_mode: TerminationMode,
    /// Up-front compatibility tolerance, as a fraction of the largest margin total.
    pub compatibility_tolerance: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            max_iterations: 10_000,
            delta_threshold: 0.0,
            margin_threshold: 1e-8,
            order_policy: OrderPolicy::FixedAscending,
            termination_mode: TerminationMode::Any,
            compatibility_tolerance: 1e-6,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self, ndim: usize) -> Result<(), BalanceError> {
        let bad = |msg: String| Err(BalanceError::InvalidConfig(msg));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        for (name, v) in [
            ("delta_threshold", self.delta_threshold),
            ("margin_threshold", self.margin_threshold),
            ("compatibility_tolerance", self.compatibility_tolerance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if let OrderPolicy::FixedCustom(order) = &self.order_policy {
            let mut seen = vec![false; ndim];
            let is_perm = order.len() == ndim
                && order.iter().all(|&d| d < ndim && !std::mem::replace(&mut seen[d], true));
            if !is_perm {
                return bad(format!("order {order:?} is not a permutation of 0..{ndim}"));
            }
        }
        Ok(())
    }

    fn delta_active(&self) -> bool {
        matches!(
            self.termination_mode,
            TerminationMode::Delta | TerminationMode::Any
        )
    }

    fn residual_active(&self) -> bool {
        matches!(
            self.termination_mode,
            TerminationMode::MarginResidual | TerminationMode::Any
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceResult {
    pub solution: Tensor,
    pub iterations_run: usize,
    /// Frobenius distance between the last two sweeps.
    pub final_delta: f64,
    /// Quadratic margin mismatch of the solution.
    pub final_margin_residual: f64,
    pub termination_reason: TerminationReason,
    pub converged: bool,
    /// Per-sweep Frobenius change, one entry per sweep.
    pub delta_history: Vec<f64>,
    /// Per-sweep margin residual, one entry per sweep.
    pub residual_history: Vec<f64>,
}

/// One failed pairwise compatibility condition.
///
/// `lhs` is the sum of margin `e` over dimension `d`, `rhs` the sum of margin
/// `d` over dimension `e`; `index` addresses the remaining dimensions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginViolation {
    pub d: usize,
    pub e: usize,
    pub index: Vec<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

impl std::fmt::Display for MarginViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "margins {} and {} disagree at {:?}: {} vs {}",
            self.d, self.e, self.index, self.lhs, self.rhs
        )
    }
}

/// Pairwise check that margins agree on their shared sub-sums.
pub fn check_margin_compatibility(margins: &MarginSet, tolerance: f64) -> Vec<MarginViolation> {
    let mut out = Vec::new();
    let ndim = margins.ndim();
    for e in 1..ndim {
        for d in 0..e {
            // In margin e, dimension d keeps its position; in margin d, e shifts down by one.
            let lhs = margins.margins()[e].margin(d).expect("d < e <= ndim - 1");
            let rhs = margins.margins()[d].margin(e - 1).expect("e - 1 < ndim - 1");
            for (pos, (&l, &r)) in lhs.values().iter().zip(rhs.values()).enumerate() {
                if (l - r).abs() > tolerance || !(l - r).is_finite() {
                    out.push(MarginViolation {
                        d,
                        e,
                        index: lhs.unravel(pos),
                        lhs: l,
                        rhs: r,
                    });
                }
            }
        }
    }
    out
}

/// Rescale the fibers of `x` along `d` to match the target margin `u_d`.
pub fn adjust_dimension(x: &Tensor, u_d: &Tensor, d: usize) -> Result<Tensor, BalanceError> {
    let (outer, fiber, inner) = x.fiber_layout(d)?;
    let expected = x.dims_without(d)?;
    let expected_shape: Vec<usize> = expected.iter().map(|d| d.size).collect();
    if u_d.shape() != expected_shape {
        return Err(TensorError::ShapeMismatch {
            left: expected_shape,
            right: u_d.shape(),
        }
        .into());
    }
    let mut out = x.clone();
    let mut sums = vec![0.0; outer * inner];
    adjust_in_place(out.values_mut(), u_d.values(), (outer, fiber, inner), &mut sums)
        .map_err(|pos| zero_fiber_error(d, &expected, pos, u_d.values()[pos]))?;
    Ok(out)
}

fn zero_fiber_error(d: usize, margin_dims: &[Dim], pos: usize, target: f64) -> BalanceError {
    let shape: Vec<usize> = margin_dims.iter().map(|d| d.size).collect();
    let mut fiber = vec![0; shape.len()];
    let mut rest = pos;
    for k in (0..shape.len()).rev() {
        fiber[k] = rest % shape[k];
        rest /= shape[k];
    }
    BalanceError::ZeroFiberPositiveMargin {
        dim: d,
        fiber,
        target,
    }
}

/// Core update. On a zero-sum fiber with positive target, returns its margin offset.
fn adjust_in_place(
    values: &mut [f64],
    target: &[f64],
    (outer, fiber, inner): (usize, usize, usize),
    sums: &mut [f64],
) -> Result<(), usize> {
    margin_into(values, outer, fiber, inner, sums);
    for (pos, (s, &u)) in sums.iter_mut().zip(target).enumerate() {
        *s = if *s > 0.0 {
            u / *s
        } else if u > 0.0 {
            return Err(pos);
        } else {
            1.0
        };
    }
    for o in 0..outer {
        let factors = &sums[o * inner..(o + 1) * inner];
        let block = &mut values[o * fiber * inner..(o + 1) * fiber * inner];
        for row in block.chunks_exact_mut(inner) {
            for (v, f) in row.iter_mut().zip(factors) {
                *v *= f;
            }
        }
    }
    Ok(())
}

/// Frobenius distance between two iterates.
pub fn delta_metric(x_t: &Tensor, x_prev: &Tensor) -> Result<f64, TensorError> {
    x_t.same_shape(x_prev)?;
    Ok(frobenius(x_t.values(), x_prev.values()))
}

pub(crate) fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Square root of the summed squared mismatch between every margin of `x`
/// and its target.
pub fn margin_residual(x: &Tensor, margins: &MarginSet) -> Result<f64, TensorError> {
    if x.shape() != margins.parent_shape() {
        return Err(TensorError::ShapeMismatch {
            left: x.shape(),
            right: margins.parent_shape(),
        });
    }
    let mut buf = Vec::new();
    Ok(residual_with(x.values(), &x.shape(), margins, &mut buf))
}

fn residual_with(values: &[f64], shape: &[usize], margins: &MarginSet, buf: &mut Vec<f64>) -> f64 {
    let mut total = 0.0;
    for (d, target) in margins.iter().enumerate() {
        let (outer, fiber, inner) = layout(shape, d);
        buf.resize(outer * inner, 0.0);
        margin_into(values, outer, fiber, inner, buf);
        total += frobenius(buf, target.values()).powi(2);
    }
    total.sqrt()
}

fn layout(shape: &[usize], d: usize) -> (usize, usize, usize) {
    (
        shape[..d].iter().product(),
        shape[d],
        shape[d + 1..].iter().product(),
    )
}

/// Balance `m` against `margins` by iterative proportional adjustment.
///
/// Hitting `max_iterations` before a stopping rule fires is not an error: the
/// result comes back with `converged == false` so the near-solution and its
/// diagnostics can still be inspected.
pub fn balance(
    m: &Tensor,
    margins: &MarginSet,
    config: &BalanceConfig,
) -> Result<BalanceResult, BalanceError> {
    let ndim = m.ndim();
    if ndim == 0 {
        return Err(BalanceError::InvalidConfig(
            "cannot balance a zero-dimensional tensor".into(),
        ));
    }
    config.validate(ndim)?;
    let shape = m.shape();
    if shape != margins.parent_shape() {
        return Err(TensorError::ShapeMismatch {
            left: shape,
            right: margins.parent_shape(),
        }
        .into());
    }
    let tolerance = config.compatibility_tolerance * margins.max_total();
    let violations = check_margin_compatibility(margins, tolerance);
    if !violations.is_empty() {
        return Err(BalanceError::IncompatibleMargins { violations });
    }

    let layouts: Vec<_> = (0..ndim).map(|d| layout(&shape, d)).collect();
    let mut x = m.clone();
    let mut prev = m.values().to_vec();
    let mut sums = Vec::new();
    let mut order: Vec<usize> = match &config.order_policy {
        OrderPolicy::FixedCustom(order) => order.clone(),
        _ => (0..ndim).collect(),
    };
    let mut rng = match config.order_policy {
        OrderPolicy::RandomPerIteration(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };

    let mut delta_history = Vec::new();
    let mut residual_history = Vec::new();
    let mut reason = TerminationReason::MaxIterations;
    for _ in 0..config.max_iterations {
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        prev.copy_from_slice(x.values());
        for &d in &order {
            let (outer, _, inner) = layouts[d];
            sums.resize(outer * inner, 0.0);
            let target = margins.margins()[d].values();
            adjust_in_place(x.values_mut(), target, layouts[d], &mut sums).map_err(|pos| {
                zero_fiber_error(d, margins.margins()[d].dims(), pos, target[pos])
            })?;
        }
        let delta = frobenius(x.values(), &prev);
        let residual = residual_with(x.values(), &shape, margins, &mut sums);
        delta_history.push(delta);
        residual_history.push(residual);

        if config.residual_active() && residual < config.margin_threshold {
            reason = TerminationReason::MarginResidual;
            break;
        }
        if config.delta_active() && delta < config.delta_threshold {
            reason = TerminationReason::Delta;
            break;
        }
    }

    let final_margin_residual = *residual_history.last().expect("at least one sweep");
    let converged = match reason {
        TerminationReason::MaxIterations => final_margin_residual < config.margin_threshold,
        _ => true,
    };
    Ok(BalanceResult {
        solution: x,
        iterations_run: delta_history.len(),
        final_delta: *delta_history.last().expect("at least one sweep"),
        final_margin_residual,
        termination_reason: reason,
        converged,
        delta_history,
        residual_history,
    })
}

/// Two-dimensional RAS: scale `m` to the given row and column totals.
///
/// Exactly [`balance`] with margin 0 = column totals (sums over rows) and
/// margin 1 = row totals (sums over columns).
pub fn classical_ras(
    m: &Tensor,
    row_totals: &[f64],
    col_totals: &[f64],
    config: &BalanceConfig,
) -> Result<BalanceResult, BalanceError> {
    if m.ndim() != 2 {
        return Err(BalanceError::InvalidConfig(format!(
            "classical RAS needs a 2-D matrix, got {} dimensions",
            m.ndim()
        )));
    }
    let margins = two_way_margins(m, row_totals, col_totals)?;
    balance(m, &margins, config)
}

/// Margin set for a matrix from row and column totals.
pub fn two_way_margins(
    m: &Tensor,
    row_totals: &[f64],
    col_totals: &[f64],
) -> Result<MarginSet, TensorError> {
    let cols = Tensor::new(m.dims_without(0)?, col_totals.to_vec())?;
    let rows = Tensor::new(m.dims_without(1)?, row_totals.to_vec())?;
    MarginSet::new(m.dims().to_vec(), vec![cols, rows])
}

/// A ratio of cell products that multiplicative margin scaling must leave unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureFamily {
    pub numerator: Vec<Vec<usize>>,
    pub denominator: Vec<Vec<usize>>,
}

impl StructureFamily {
    /// Alternating product over the corners of the box spanned by `low` and
    /// `high`: corners with an even count of `high` coordinates go on top.
    ///
    /// In two dimensions this is the cross-product ratio
    /// `m[a][c] * m[b][d] / (m[a][d] * m[b][c])`.
    pub fn sub_box(low: &[usize], high: &[usize]) -> Self {
        assert_eq!(low.len(), high.len(), "corner ranks differ");
        let ndim = low.len();
        let mut numerator = Vec::new();
        let mut denominator = Vec::new();
        for mask in 0u64..(1u64 << ndim) {
            let cell: Vec<usize> = (0..ndim)
                .map(|k| if mask >> k & 1 == 1 { high[k] } else { low[k] })
                .collect();
            if mask.count_ones() % 2 == 0 {
                numerator.push(cell);
            } else {
                denominator.push(cell);
            }
        }
        StructureFamily {
            numerator,
            denominator,
        }
    }

    /// Numerator `cells`, denominator built by permuting each coordinate
    /// across cells: denominator cell `l` takes coordinate `k` from
    /// `cells[perms[k][l]]`.
    pub fn from_permutations(cells: &[Vec<usize>], perms: &[Vec<usize>]) -> Self {
        let denominator = (0..cells.len())
            .map(|l| (0..perms.len()).map(|k| cells[perms[k][l]][k]).collect())
            .collect();
        StructureFamily {
            numerator: cells.to_vec(),
            denominator,
        }
    }

    /// Ratio of cell products in `t`, evaluated in log space.
    pub fn ratio(&self, t: &Tensor) -> Result<f64, StructureError> {
        let log_sum = |cells: &[Vec<usize>]| -> Result<f64, StructureError> {
            let mut acc = 0.0;
            for cell in cells {
                let v = t.get(cell)?;
                if v <= 0.0 {
                    return Err(StructureError::NonPositiveCell {
                        index: cell.clone(),
                        value: v,
                    });
                }
                acc += v.ln();
            }
            Ok(acc)
        };
        Ok((log_sum(&self.numerator)? - log_sum(&self.denominator)?).exp())
    }
}

/// Every sub-box family with `low[k] < high[k]` in each dimension.
pub fn all_sub_box_families(shape: &[usize]) -> Vec<StructureFamily> {
    let pairs: Vec<Vec<(usize, usize)>> = shape
        .iter()
        .map(|&n| {
            (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .collect()
        })
        .collect();
    if pairs.iter().any(Vec::is_empty) {
        return Vec::new();
    }
    let counts: Vec<usize> = pairs.iter().map(Vec::len).collect();
    let total: usize = counts.iter().product();
    let mut pick = vec![0; shape.len()];
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        let low: Vec<usize> = pick.iter().zip(&pairs).map(|(&i, p)| p[i].0).collect();
        let high: Vec<usize> = pick.iter().zip(&pairs).map(|(&i, p)| p[i].1).collect();
        out.push(StructureFamily::sub_box(&low, &high));
        increment(&mut pick, &counts);
    }
    out
}

/// `count` random sub-box families with distinct corners in every dimension.
pub fn sample_sub_box_families(shape: &[usize], count: usize, seed: u64) -> Vec<StructureFamily> {
    use rand::Rng;
    if shape.iter().any(|&n| n < 2) {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (low, high): (Vec<usize>, Vec<usize>) = shape
                .iter()
                .map(|&n| {
                    let a = rng.random_range(0..n);
                    let b = (a + rng.random_range(1..n)) % n;
                    (a.min(b), a.max(b))
                })
                .unzip();
            StructureFamily::sub_box(&low, &high)
        })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StructureError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cell {index:?} is {value}; structure ratios need positive cells")]
    NonPositiveCell { index: Vec<usize>, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureViolation {
    pub family: usize,
    pub initial_ratio: f64,
    pub solution_ratio: f64,
}

/// Compare each family's ratio in `m` and `x`; relative tolerance.
pub fn structure_conservation_check(
    m: &Tensor,
    x: &Tensor,
    families: &[StructureFamily],
    tolerance: f64,
) -> Result<Vec<StructureViolation>, StructureError> {
    m.same_shape(x)?;
    let mut out = Vec::new();
    for (family, fam) in families.iter().enumerate() {
        let initial_ratio = fam.ratio(m)?;
        let solution_ratio = fam.ratio(x)?;
        if (solution_ratio - initial_ratio).abs() > tolerance * initial_ratio.abs() {
            out.push(StructureViolation {
                family,
                initial_ratio,
                solution_ratio,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn compatibility_two_dims() {
        let m = t(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let ok = two_way_margins(&m, &[3.0, 1.0], &[2.0, 2.0]).unwrap();
        assert!(check_margin_compatibility(&ok, 1e-12).is_empty());
        let bad = two_way_margins(&m, &[3.0, 1.0], &[2.0, 3.0]).unwrap();
        let v = check_margin_compatibility(&bad, 1e-12);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].d, v[0].e), (0, 1));
        assert_eq!((v[0].lhs, v[0].rhs), (4.0, 5.0));
        assert!(v[0].index.is_empty());
    }

    #[test]
    fn compatibility_three_dims_from_common_tensor() {
        let x = Tensor::from_shape(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert!(check_margin_compatibility(&MarginSet::of(&x), 1e-12).is_empty());
    }

    #[test]
    fn compatibility_three_dims_reports_index() {
        let x = Tensor::from_shape(&[2, 2, 2], vec![1.0; 8]).unwrap();
        let mut margins = MarginSet::of(&x).margins().to_vec();
        margins[2].set(&[1, 0], 5.0).unwrap();
        let set = MarginSet::new(x.dims().to_vec(), margins).unwrap();
        let v = check_margin_compatibility(&set, 1e-12);
        // Entry (1, 0) of margin 2 feeds the (0, 2) condition at index [0]
        // and the (1, 2) condition at index [1].
        assert_eq!(v.len(), 2);
        assert_eq!((v[0].d, v[0].e, v[0].index.clone()), (0, 2, vec![0]));
        assert_eq!((v[1].d, v[1].e, v[1].index.clone()), (1, 2, vec![1]));
    }

    #[test]
    fn adjust_rows() {
        let x = t(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let rows = Tensor::vector(vec![3.0, 1.0]).unwrap();
        let out = adjust_dimension(&x, &rows, 1).unwrap();
        assert_eq!(out.values(), &[1.5, 1.5, 0.5, 0.5]);
    }

    #[test]
    fn adjust_zero_fibers() {
        let x = t(&[vec![1.0, 1.0], vec![0.0, 0.0]]);
        let out = adjust_dimension(&x, &Tensor::vector(vec![4.0, 0.0]).unwrap(), 1).unwrap();
        assert_eq!(out.values(), &[2.0, 2.0, 0.0, 0.0]);
        let err = adjust_dimension(&x, &Tensor::vector(vec![4.0, 5.0]).unwrap(), 1).unwrap_err();
        assert_eq!(
            err,
            BalanceError::ZeroFiberPositiveMargin {
                dim: 1,
                fiber: vec![1],
                target: 5.0
            }
        );
    }

    #[test]
    fn adjust_shape_mismatch() {
        let x = t(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let bad = Tensor::vector(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            adjust_dimension(&x, &bad, 0),
            Err(BalanceError::Tensor(TensorError::ShapeMismatch { .. }))
        ));
    }

    #[test]
    fn fixed_point_in_one_sweep() {
        let m = Tensor::from_shape(&[2, 2, 2], vec![1.0; 8]).unwrap();
        let r = balance(&m, &MarginSet::of(&m), &BalanceConfig::default()).unwrap();
        assert_eq!(r.solution, m);
        assert_eq!(r.iterations_run, 1);
        assert_eq!(r.final_margin_residual, 0.0);
        assert!(r.converged);
        assert_eq!(r.termination_reason, TerminationReason::MarginResidual);
    }

    #[test]
    fn one_step_two_way() {
        let m = t(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let r = classical_ras(&m, &[3.0, 1.0], &[2.0, 2.0], &BalanceConfig::default()).unwrap();
        assert_eq!(r.solution.values(), &[1.5, 1.5, 0.5, 0.5]);
        assert!(r.converged);
    }

    #[test]
    fn incompatible_margins_refused() {
        let m = t(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let err = classical_ras(&m, &[3.0, 1.0], &[2.0, 3.0], &BalanceConfig::default()).unwrap_err();
        match err {
            BalanceError::IncompatibleMargins { violations } => {
                assert_eq!(violations[0].lhs, 4.0);
                assert_eq!(violations[0].rhs, 5.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn not_converged_is_flagged() {
        let m = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let config = BalanceConfig {
            max_iterations: 1,
            ..Default::default()
        };
        let r = classical_ras(&m, &[4.0, 6.0], &[5.0, 5.0], &config).unwrap();
        assert!(!r.converged);
        assert_eq!(r.termination_reason, TerminationReason::MaxIterations);
        assert_eq!(r.iterations_run, 1);
        assert!(r.final_margin_residual > config.margin_threshold);
    }

    #[test]
    fn delta_rule_fires() {
        let m = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let config = BalanceConfig {
            delta_threshold: 1e-3,
            margin_threshold: 0.0,
            termination_mode: TerminationMode::Delta,
            ..Default::default()
        };
        let r = classical_ras(&m, &[4.0, 6.0], &[5.0, 5.0], &config).unwrap();
        assert_eq!(r.termination_reason, TerminationReason::Delta);
        assert!(r.final_delta < 1e-3);
        assert!(r.converged);
    }

    #[test]
    fn iterations_mode_runs_to_cap() {
        let m = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let config = BalanceConfig {
            max_iterations: 7,
            termination_mode: TerminationMode::Iterations,
            ..Default::default()
        };
        let r = classical_ras(&m, &[4.0, 6.0], &[5.0, 5.0], &config).unwrap();
        assert_eq!(r.iterations_run, 7);
        assert_eq!(r.termination_reason, TerminationReason::MaxIterations);
    }

    #[test]
    fn config_validation() {
        let bad_order = BalanceConfig {
            order_policy: OrderPolicy::FixedCustom(vec![0, 0, 1]),
            ..Default::default()
        };
        assert!(bad_order.validate(3).is_err());
        let ok_order = BalanceConfig {
            order_policy: OrderPolicy::FixedCustom(vec![2, 0, 1]),
            ..Default::default()
        };
        assert!(ok_order.validate(3).is_ok());
        let zero_iter = BalanceConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(zero_iter.validate(2).is_err());
        let negative = BalanceConfig {
            margin_threshold: -1.0,
            ..Default::default()
        };
        assert!(negative.validate(2).is_err());
    }

    #[test]
    fn delta_and_residual_examples() {
        let a = t(&[vec![0.0, 3.0], vec![4.0, 0.0]]);
        let z = t(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(delta_metric(&a, &a).unwrap(), 0.0);
        assert_eq!(delta_metric(&a, &z).unwrap(), 5.0);
        assert!(delta_metric(&a, &Tensor::vector(vec![1.0]).unwrap()).is_err());

        let x = t(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(margin_residual(&x, &MarginSet::of(&x)).unwrap(), 0.0);
        let targets = two_way_margins(&x, &[3.0, 1.0], &[2.0, 2.0]).unwrap();
        assert_eq!(margin_residual(&x, &targets).unwrap(), 2f64.sqrt());
    }

    #[test]
    fn sub_box_two_dims_is_cross_ratio() {
        let fam = StructureFamily::sub_box(&[0, 0], &[1, 1]);
        assert_eq!(fam.numerator, vec![vec![0, 0], vec![1, 1]]);
        assert_eq!(fam.denominator, vec![vec![1, 0], vec![0, 1]]);
        let m = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!((fam.ratio(&m).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn permutation_family_matches_sub_box_in_two_dims() {
        let cells = vec![vec![0, 0], vec![1, 1]];
        let fam = StructureFamily::from_permutations(&cells, &[vec![0, 1], vec![1, 0]]);
        assert_eq!(fam.denominator, vec![vec![0, 1], vec![1, 0]]);
        let m = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let sb = StructureFamily::sub_box(&[0, 0], &[1, 1]);
        assert!((fam.ratio(&m).unwrap() - sb.ratio(&m).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn structure_check_detects_perturbation() {
        let m = t(&[vec![1.0, 2.0, 5.0], vec![3.0, 4.0, 6.0]]);
        let families = all_sub_box_families(&m.shape());
        assert_eq!(families.len(), 3);
        assert!(structure_conservation_check(&m, &m, &families, 1e-12)
            .unwrap()
            .is_empty());
        let mut x = m.clone();
        x.set(&[0, 2], 7.0).unwrap();
        let v = structure_conservation_check(&m, &x, &families, 1e-12).unwrap();
        let touched: Vec<usize> = v.iter().map(|s| s.family).collect();
        // Families containing column 2: (0,2) and (1,2).
        assert_eq!(touched, vec![1, 2]);
        let mut z = m.clone();
        z.set(&[0, 0], 0.0).unwrap();
        assert!(matches!(
            structure_conservation_check(&m, &z, &families, 1e-12),
            Err(StructureError::NonPositiveCell { .. })
        ));
    }

    #[test]
    fn sampled_families_are_valid_boxes() {
        let fams = sample_sub_box_families(&[4, 3, 2], 50, 9);
        assert_eq!(fams.len(), 50);
        for f in &fams {
            assert_eq!(f.numerator.len(), 4);
            assert_eq!(f.denominator.len(), 4);
        }
        assert_eq!(fams, sample_sub_box_families(&[4, 3, 2], 50, 9));
    }
}
