//! Reference implementations and instance generators shared by the
//! integration tests. Nothing here calls into the balancing engine.

#![allow(dead_code)]

use std::collections::HashMap;

use mdras::{MarginSet, Tensor};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_values(len: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_shape(shape, random_values(len, lo, hi, rng)).unwrap()
}

/// Positive seed tensor plus margins taken from an unrelated positive tensor,
/// so the margins are compatible and the problem is feasible.
pub fn feasible_instance(shape: &[usize], rng: &mut ChaCha8Rng) -> (Tensor, MarginSet) {
    let m = random_tensor(shape, 0.5, 2.0, rng);
    let truth = random_tensor(shape, 0.5, 2.0, rng);
    (m, MarginSet::of(&truth))
}

/// Every multi-index of `shape` in row-major order.
pub fn all_indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in shape {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..n).map(move |i| {
                    let mut p = prefix.clone();
                    p.push(i);
                    p
                })
            })
            .collect();
    }
    out
}

/// Margin by visiting every cell and keying on the index with `d` removed.
pub fn brute_margin(t: &Tensor, d: usize) -> HashMap<Vec<usize>, f64> {
    let mut sums = HashMap::new();
    for index in all_indices(&t.shape()) {
        let mut key = index.clone();
        key.remove(d);
        *sums.entry(key).or_insert(0.0) += t.get(&index).unwrap();
    }
    sums
}

pub fn brute_frobenius(a: &Tensor, b: &Tensor) -> f64 {
    let mut acc = 0.0;
    for index in all_indices(&a.shape()) {
        let diff = a.get(&index).unwrap() - b.get(&index).unwrap();
        acc += diff * diff;
    }
    acc.sqrt()
}

pub fn brute_residual(x: &Tensor, margins: &MarginSet) -> f64 {
    let mut acc = 0.0;
    for d in 0..x.ndim() {
        for (key, sum) in brute_margin(x, d) {
            let diff = sum - margins.get(d).unwrap().get(&key).unwrap();
            acc += diff * diff;
        }
    }
    acc.sqrt()
}

/// Double-double number: unevaluated sum `hi + lo`, about 32 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd {
            hi: s,
            lo: b - (s - a),
        }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = Self::two_sum(self.hi, o.hi);
        let (t, f) = Self::two_sum(self.lo, o.lo);
        let r = Self::quick(s, e + t);
        Self::quick(r.hi, r.lo + f)
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(Dd {
            hi: -o.hi,
            lo: -o.lo,
        })
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Self::quick(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::new(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::new(q2)));
        let q3 = r.hi / o.hi;
        Self::quick(q1, q2).add(Dd::new(q3))
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Straight-line two-way IPF in double-double: column step then row step,
/// repeated until the margin residual is below `1e-28` (or `max_sweeps`).
/// Returns the row-major solution and the final residual.
pub fn ipf_oracle_dd(
    m: &[Vec<f64>],
    rows: &[f64],
    cols: &[f64],
    max_sweeps: usize,
) -> (Vec<f64>, f64) {
    let nc = m[0].len();
    let mut x: Vec<Vec<Dd>> = m.iter().map(|r| r.iter().map(|&v| Dd::new(v)).collect()).collect();
    let mut residual = f64::INFINITY;
    for _ in 0..max_sweeps {
        for j in 0..nc {
            let mut s = Dd::new(0.0);
            for row in &x {
                s = s.add(row[j]);
            }
            let f = Dd::new(cols[j]).div(s);
            for row in x.iter_mut() {
                row[j] = row[j].mul(f);
            }
        }
        for (i, row) in x.iter_mut().enumerate() {
            let mut s = Dd::new(0.0);
            for v in row.iter() {
                s = s.add(*v);
            }
            let f = Dd::new(rows[i]).div(s);
            for v in row.iter_mut() {
                *v = v.mul(f);
            }
        }
        let mut acc = 0.0;
        for j in 0..nc {
            let mut s = Dd::new(0.0);
            for row in &x {
                s = s.add(row[j]);
            }
            acc += s.sub(Dd::new(cols[j])).to_f64().powi(2);
        }
        for (i, row) in x.iter().enumerate() {
            let mut s = Dd::new(0.0);
            for v in row {
                s = s.add(*v);
            }
            acc += s.sub(Dd::new(rows[i])).to_f64().powi(2);
        }
        residual = acc.sqrt();
        if residual < 1e-28 {
            break;
        }
    }
    (x.iter().flatten().map(|v| v.to_f64()).collect(), residual)
}

/// Linear constraint rows: one per margin cell, with a 1 for every tensor
/// cell in that fiber.
pub fn constraint_matrix(shape: &[usize]) -> Vec<Vec<usize>> {
    let cells = all_indices(shape);
    let mut rows = Vec::new();
    for d in 0..shape.len() {
        let mut reduced = shape.to_vec();
        reduced.remove(d);
        for key in all_indices(&reduced) {
            let members = cells
                .iter()
                .enumerate()
                .filter(|(_, c)| {
                    let mut k = (*c).clone();
                    k.remove(d);
                    k == key
                })
                .map(|(pos, _)| pos)
                .collect();
            rows.push(members);
        }
    }
    rows
}

fn constraint_targets(margins: &MarginSet) -> Vec<f64> {
    margins.iter().flat_map(|m| m.values().iter().copied()).collect()
}

/// KL projection of `m` onto `{x >= 0 : every margin of x equals its target}`.
///
/// Minimizes the convex dual `sum_c m_c exp((A^T l)_c) - b^T l` by damped
/// Newton steps; the Hessian `A diag(x) A^T` is singular along redundant
/// constraints, so steps use an SVD pseudo-inverse.
pub fn kl_projection(m: &Tensor, margins: &MarginSet) -> Vec<f64> {
    let shape = m.shape();
    let rows = constraint_matrix(&shape);
    let b = DVector::from_vec(constraint_targets(margins));
    let k = rows.len();
    let n = m.len();
    let mut a = DMatrix::<f64>::zeros(k, n);
    for (r, members) in rows.iter().enumerate() {
        for &c in members {
            a[(r, c)] = 1.0;
        }
    }
    let m0 = DVector::from_column_slice(m.values());
    let primal = |lambda: &DVector<f64>| -> DVector<f64> {
        let eta = a.transpose() * lambda;
        DVector::from_iterator(n, m0.iter().zip(eta.iter()).map(|(mc, e)| mc * e.exp()))
    };
    let dual = |lambda: &DVector<f64>| -> f64 { primal(lambda).sum() - b.dot(lambda) };

    let mut lambda = DVector::<f64>::zeros(k);
    for _ in 0..200 {
        let x = primal(&lambda);
        let grad = &a * &x - &b;
        if grad.norm() < 1e-13 * b.norm() {
            break;
        }
        let hess = &a * DMatrix::from_diagonal(&x) * a.transpose();
        let step = hess
            .svd(true, true)
            .solve(&(-&grad), 1e-12 * x.max())
            .expect("svd solve");
        let f0 = dual(&lambda);
        let slope = grad.dot(&step);
        let mut t = 1.0;
        while dual(&(&lambda + t * &step)) > f0 + 1e-4 * t * slope && t > 1e-12 {
            t *= 0.5;
        }
        lambda += t * step;
    }
    primal(&lambda).as_slice().to_vec()
}

/// `(I - A)^-1` for a 2x2 `A` by the adjugate formula.
pub fn inverse_2x2_of_i_minus(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let (p, q, r, s) = (1.0 - a[0][0], -a[0][1], -a[1][0], 1.0 - a[1][1]);
    let det = p * s - q * r;
    [[s / det, -q / det], [-r / det, p / det]]
}

/// `sum_{k=0..=terms} A^k`, row-major.
pub fn neumann_series(a: &[f64], n: usize, terms: usize) -> Vec<f64> {
    let mut power = vec![0.0; n * n];
    for i in 0..n {
        power[i * n + i] = 1.0;
    }
    let mut sum = power.clone();
    for _ in 0..terms {
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let p = power[i * n + k];
                for j in 0..n {
                    next[i * n + j] += p * a[k * n + j];
                }
            }
        }
        power = next;
        for (s, p) in sum.iter_mut().zip(&power) {
            *s += p;
        }
    }
    sum
}

/// Random `n x n` coefficient matrix with each row summing to a random value in
/// `(0, max_row_sum]`.
pub fn random_coefficients(n: usize, max_row_sum: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut a = Vec::with_capacity(n * n);
    for _ in 0..n {
        let row = random_values(n, 0.0, 1.0, rng);
        let total: f64 = row.iter().sum();
        let target = rng.random_range(0.0..max_row_sum);
        a.extend(row.iter().map(|v| v / total * target));
    }
    a
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
