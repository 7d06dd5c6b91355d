//! Distances between tables and relative-deviation reports.

use serde::Serialize;

use crate::balance::frobenius;
use crate::tensor::{Dim, Tensor, TensorError};

/// Frobenius norm of `x - y`, all dimensions flattened.
pub fn frobenius_distance(x: &Tensor, y: &Tensor) -> Result<f64, TensorError> {
    x.same_shape(y)?;
    Ok(frobenius(x.values(), y.values()))
}

/// Sum of all slices along `d`, e.g. regional tables summed to a national one.
pub fn aggregate_slices(x: &Tensor, d: usize) -> Result<Tensor, TensorError> {
    x.margin(d)
}

/// `(value - reference) / reference`; positive means `value` overestimates.
pub fn relative_difference(value: f64, reference: f64) -> f64 {
    (value - reference) / reference
}

/// How cells with a zero reference value are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    /// Every zero-reference cell is flagged (NaN) and left out of the summary.
    #[default]
    FlagAll,
    /// Zero against zero counts as 0; zero against nonzero is flagged.
    ZeroIfBothZero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdCount {
    pub threshold: f64,
    /// Unflagged cells with `|deviation| > threshold`.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationSummary {
    pub max_abs_relative: f64,
    pub mean_abs_relative: f64,
    pub frobenius_of_difference: f64,
    pub flagged_cells: usize,
    pub exceeding: Vec<ThresholdCount>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationOptions {
    pub zero_policy: ZeroPolicy,
    pub thresholds: Vec<f64>,
}

impl Default for DeviationOptions {
    fn default() -> Self {
        DeviationOptions {
            zero_policy: ZeroPolicy::FlagAll,
            thresholds: vec![0.01, 0.1, 1.0],
        }
    }
}

/// Cellwise relative deviation of an estimate from a reference table.
///
/// `values` is a signed grid with the reference's shape; flagged cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub reference_name: String,
    pub estimate_name: String,
    pub dims: Vec<Dim>,
    pub values: Vec<f64>,
    pub zero_policy: ZeroPolicy,
    pub summary: DeviationSummary,
}

impl DeviationReport {
    pub fn named(mut self, reference: impl Into<String>, estimate: impl Into<String>) -> Self {
        self.reference_name = reference.into();
        self.estimate_name = estimate.into();
        self
    }

    /// Summary statistics from the grid alone; `frobenius_of_difference` needs
    /// the raw tables and is carried over.
    pub fn recompute_summary(&self, thresholds: &[f64]) -> DeviationSummary {
        summarize(&self.values, thresholds, self.summary.frobenius_of_difference)
    }
}

fn summarize(values: &[f64], thresholds: &[f64], frobenius_of_difference: f64) -> DeviationSummary {
    let kept: Vec<f64> = values.iter().filter(|v| !v.is_nan()).map(|v| v.abs()).collect();
    let max_abs_relative = kept.iter().copied().fold(0.0, f64::max);
    let mean_abs_relative = if kept.is_empty() {
        0.0
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    DeviationSummary {
        max_abs_relative,
        mean_abs_relative,
        frobenius_of_difference,
        flagged_cells: values.len() - kept.len(),
        exceeding: thresholds
            .iter()
            .map(|&threshold| ThresholdCount {
                threshold,
                count: kept.iter().filter(|&&v| v > threshold).count(),
            })
            .collect(),
    }
}

pub fn relative_deviation(
    reference: &Tensor,
    estimate: &Tensor,
    options: &DeviationOptions,
) -> Result<DeviationReport, TensorError> {
    reference.same_shape(estimate)?;
    let values: Vec<f64> = reference
        .values()
        .iter()
        .zip(estimate.values())
        .map(|(&r, &e)| {
            if r != 0.0 {
                relative_difference(e, r)
            } else if e == 0.0 && options.zero_policy == ZeroPolicy::ZeroIfBothZero {
                0.0
            } else {
                f64::NAN
            }
        })
        .collect();
    let fro = frobenius(reference.values(), estimate.values());
    Ok(DeviationReport {
        reference_name: "reference".into(),
        estimate_name: "estimate".into(),
        dims: reference.dims().to_vec(),
        summary: summarize(&values, &options.thresholds, fro),
        values,
        zero_policy: options.zero_policy,
    })
}

/// Symmetric table of pairwise Frobenius distances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.values[i][j])
    }

    /// Plain-text table with `decimals` digits after the point.
    pub fn render(&self, decimals: usize) -> String {
        let cells: Vec<Vec<String>> = self
            .values
            .iter()
            .map(|row| row.iter().map(|v| format!("{v:.decimals$}")).collect())
            .collect();
        let label_width = self.names.iter().map(String::len).max().unwrap_or(0);
        let col_width = cells
            .iter()
            .flatten()
            .map(String::len)
            .chain(self.names.iter().map(String::len))
            .max()
            .unwrap_or(0);
        let mut out = format!("{:label_width$}", "");
        for name in &self.names {
            out.push_str(&format!("  {name:>col_width$}"));
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&cells) {
            out.push_str(&format!("{name:<label_width$}"));
            for cell in row {
                out.push_str(&format!("  {cell:>col_width$}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn distance_matrix(tables: &[(String, Tensor)]) -> Result<DistanceMatrix, TensorError> {
    let n = tables.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = frobenius_distance(&tables[i].1, &tables[j].1)?;
            values[i][j] = d;
            values[j][i] = d;
        }
    }
    Ok(DistanceMatrix {
        names: tables.iter().map(|(name, _)| name.clone()).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn frobenius_examples() {
        let a = t(&[vec![0.0, 3.0], vec![4.0, 0.0]]);
        let z = t(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(frobenius_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(frobenius_distance(&a, &z).unwrap(), 5.0);
        assert!(frobenius_distance(&a, &Tensor::vector(vec![0.0]).unwrap()).is_err());
    }

    #[test]
    fn quarterly_sum() {
        let q = [1.0, 2.0, 3.0, 4.0];
        let mut values = Vec::new();
        for v in q {
            values.extend([v; 4]);
        }
        // dims (row, col, quarter): each cell repeated across four quarters.
        let x = Tensor::from_shape(&[2, 2, 4], values).unwrap();
        assert_eq!(aggregate_slices(&x, 2).unwrap().values(), &[4.0, 8.0, 12.0, 16.0]);
    }

    #[test]
    fn deviation_examples() {
        let r = t(&[vec![2.0, 1.0], vec![0.0, 0.0]]);
        let e = t(&[vec![4.2, 1.0], vec![0.0, 1.0]]);
        let rep = relative_deviation(&r, &r, &DeviationOptions::default()).unwrap();
        assert_eq!(rep.summary.max_abs_relative, 0.0);
        assert_eq!(rep.summary.flagged_cells, 2);

        let both = DeviationOptions {
            zero_policy: ZeroPolicy::ZeroIfBothZero,
            ..Default::default()
        };
        let rep = relative_deviation(&r, &e, &both).unwrap();
        assert!((rep.values[0] - 1.10).abs() < 1e-12);
        assert_eq!(rep.values[1], 0.0);
        assert_eq!(rep.values[2], 0.0);
        assert!(rep.values[3].is_nan());
        assert_eq!(rep.summary.flagged_cells, 1);
        assert!((rep.summary.mean_abs_relative - 1.1 / 3.0).abs() < 1e-12);
        assert_eq!(rep.summary.exceeding[2], ThresholdCount { threshold: 1.0, count: 1 });
        assert_eq!(rep.recompute_summary(&[0.01, 0.1, 1.0]), rep.summary);

        let flag = relative_deviation(&r, &e, &DeviationOptions::default()).unwrap();
        assert!(flag.values[2].is_nan());
        assert_eq!(flag.summary.flagged_cells, 2);
        assert!((flag.summary.mean_abs_relative - 0.55).abs() < 1e-12);
    }

    #[test]
    fn overestimation_gap() {
        // Frobenius distances to the real table: classical 53 696, multidimensional 50 346.
        let gap = relative_difference(53_696.0, 50_346.0);
        assert!((gap * 100.0 - 6.65).abs() < 0.005);
    }

    #[test]
    fn distance_matrix_layout() {
        let a = t(&[vec![0.0, 3.0], vec![4.0, 0.0]]);
        let z = t(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let single = distance_matrix(&[("A".into(), a.clone())]).unwrap();
        assert_eq!(single.values, vec![vec![0.0]]);
        let pair = distance_matrix(&[("A".into(), a), ("Z".into(), z)]).unwrap();
        assert_eq!(pair.get("A", "Z"), Some(5.0));
        assert_eq!(pair.get("Z", "A"), Some(5.0));
        assert_eq!(pair.get("A", "A"), Some(0.0));
    }

    #[test]
    fn render_mirrors_symmetric_table() {
        let m = DistanceMatrix {
            names: vec!["Real".into(), "RAS".into(), "DRAS".into()],
            values: vec![
                vec![0.0, 53_696.0, 50_346.0],
                vec![53_696.0, 0.0, 48_782.0],
                vec![50_346.0, 48_782.0, 0.0],
            ],
        };
        let text = m.render(0);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["Real", "RAS", "DRAS"]);
        assert_eq!(
            lines[1].split_whitespace().collect::<Vec<_>>(),
            ["Real", "0", "53696", "50346"]
        );
        assert_eq!(
            lines[3].split_whitespace().collect::<Vec<_>>(),
            ["DRAS", "50346", "48782", "0"]
        );
    }
}
