//! Finite metric spaces over real vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Order of a Minkowski norm. Only the closed-form orders are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    Inf,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "1",
            Norm::L2 => "2",
            Norm::Inf => "inf",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(Norm::L1),
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" | "infinity" => Ok(Norm::Inf),
            other => Err(Error::InvalidParam(format!(
                "norm order must be one of 1, 2, inf (got {other:?})"
            ))),
        }
    }
}

impl Norm {
    /// Distance without validation. Accumulates left to right.
    #[inline]
    pub fn dist(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Norm::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Norm::L2 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Norm::Inf => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Gradient of `dist(a, b)` with respect to `a`, added into `out` scaled
    /// by `scale`. The gradient with respect to `b` is the negation.
    ///
    /// Subgradients at kinks are taken as zero: `sign(0) = 0` for L1, the
    /// zero vector for L2 at `a == b`, and the first maximizing axis for L∞.
    pub fn accumulate_grad(self, a: &[f64], b: &[f64], dist: f64, scale: f64, out: &mut [f64]) {
        match self {
            Norm::L1 => {
                for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                    *o += scale * sign(x - y);
                }
            }
            Norm::L2 => {
                if dist > 0.0 {
                    let s = scale / dist;
                    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                        *o += s * (x - y);
                    }
                }
            }
            Norm::Inf => {
                let mut best = 0;
                let mut best_val = f64::NEG_INFINITY;
                for (k, (x, y)) in a.iter().zip(b).enumerate() {
                    let v = (x - y).abs();
                    if v > best_val {
                        best_val = v;
                        best = k;
                    }
                }
                if !a.is_empty() {
                    out[best] += scale * sign(a[best] - b[best]);
                }
            }
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Minkowski distance `(Σ|a_i − b_i|^p)^(1/p)` between two vectors.
pub fn minkowski_dist(a: &[f64], b: &[f64], p: Norm) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vector component"));
    }
    Ok(p.dist(a, b))
}

/// Dense symmetric `n×n` distance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a matrix from row-major entries. No axiom checks are made, so
    /// this can hold arbitrary (possibly non-metric) data for auditing.
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: entries.len(),
            });
        }
        Ok(Self { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Ok(Self { n, entries })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

pub(crate) fn check_same_dim(xs: &[Vec<f64>]) -> Result<()> {
    if let Some(first) = xs.first() {
        let dim = first.len();
        for x in xs {
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
        }
    }
    Ok(())
}

/// All-pairs distance matrix. Rows are computed independently (in parallel
/// with the `parallel` feature); the diagonal is exactly zero.
pub fn pairwise_matrix(xs: &[Vec<f64>], p: Norm) -> Result<DistanceMatrix> {
    check_same_dim(xs)?;
    if xs.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vector component"));
    }
    let n = xs.len();
    let mut entries = vec![0.0; n * n];
    par::for_each_chunk_mut(&mut entries, n, |i, row| {
        for (j, e) in row.iter_mut().enumerate() {
            if i != j {
                *e = p.dist(&xs[i], &xs[j]);
            }
        }
    });
    Ok(DistanceMatrix { n, entries })
}

/// Violations found by [`validate_metric_axioms`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AxiomReport {
    /// `(i, j, value)` with a negative entry.
    pub negative: Vec<(usize, usize, f64)>,
    /// `(i, value)` with a diagonal entry that is not zero within tolerance.
    pub nonzero_diagonal: Vec<(usize, f64)>,
    /// `(i, j)` with `i < j` and `|m(i,j) − m(j,i)| > tol`.
    pub asymmetric: Vec<(usize, usize)>,
    /// `(i, j, k, excess)` with `m(i,k) > m(i,j) + m(j,k) + tol`.
    pub triangle: Vec<(usize, usize, usize, f64)>,
}

impl AxiomReport {
    pub fn violation_count(&self) -> usize {
        self.negative.len() + self.nonzero_diagonal.len() + self.asymmetric.len() + self.triangle.len()
    }

    pub fn is_metric(&self) -> bool {
        self.violation_count() == 0
    }
}

/// Exhaustive O(n³) check of non-negativity, identity, symmetry and the
/// triangle inequality.
pub fn validate_metric_axioms(m: &DistanceMatrix, tol: f64) -> AxiomReport {
    let n = m.len();
    let mut report = AxiomReport::default();
    for i in 0..n {
        let d = m.get(i, i);
        if d.abs() > tol {
            report.nonzero_diagonal.push((i, d));
        }
        for j in 0..n {
            let v = m.get(i, j);
            if v < -tol || v.is_nan() {
                report.negative.push((i, j, v));
            }
            if i < j && (v - m.get(j, i)).abs() > tol {
                report.asymmetric.push((i, j));
            }
        }
    }
    let per_row: Vec<Vec<(usize, usize, usize, f64)>> = par::map_range(n, |i| {
        let mut found = Vec::new();
        for j in 0..n {
            for k in 0..n {
                let excess = m.get(i, k) - (m.get(i, j) + m.get(j, k));
                if excess > tol {
                    found.push((i, j, k, excess));
                }
            }
        }
        found
    });
    report.triangle = per_row.into_iter().flatten().collect();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minkowski_examples() {
        assert_eq!(minkowski_dist(&[0.0, 0.0], &[0.0, 0.0], Norm::L2).unwrap(), 0.0);
        assert_eq!(minkowski_dist(&[3.0, 4.0], &[0.0, 0.0], Norm::L2).unwrap(), 5.0);
        assert_eq!(
            minkowski_dist(&[1.0, 2.0, 3.0], &[4.0, 6.0, 3.0], Norm::L1).unwrap(),
            7.0
        );
        assert_eq!(
            minkowski_dist(&[1.0, 2.0, 3.0], &[4.0, 6.0, 3.0], Norm::Inf).unwrap(),
            4.0
        );
        for p in [Norm::L1, Norm::L2, Norm::Inf] {
            assert_eq!(minkowski_dist(&[-2.5], &[4.0], p).unwrap(), 6.5);
        }
    }

    #[test]
    fn minkowski_errors() {
        assert!(matches!(
            minkowski_dist(&[1.0], &[1.0, 2.0], Norm::L2),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            minkowski_dist(&[f64::NAN], &[1.0], Norm::L1),
            Err(Error::NonFinite(_))
        ));
        assert!(minkowski_dist(&[f64::INFINITY], &[1.0], Norm::Inf).is_err());
    }

    #[test]
    fn norm_parsing() {
        assert_eq!("1".parse::<Norm>().unwrap(), Norm::L1);
        assert_eq!("2".parse::<Norm>().unwrap(), Norm::L2);
        assert_eq!("inf".parse::<Norm>().unwrap(), Norm::Inf);
        assert!("3".parse::<Norm>().is_err());
    }

    #[test]
    fn pairwise_examples() {
        let m = pairwise_matrix(&[vec![0.0]], Norm::L1).unwrap();
        assert_eq!(m.entries(), &[0.0]);

        let m = pairwise_matrix(&[vec![0.0], vec![1.0], vec![3.0]], Norm::L1).unwrap();
        assert_eq!(m.entries(), &[0.0, 1.0, 3.0, 1.0, 0.0, 2.0, 3.0, 2.0, 0.0]);

        let v = vec![1.5, -2.0];
        let m = pairwise_matrix(&[v.clone(), v], Norm::L2).unwrap();
        assert_eq!(m.entries(), &[0.0; 4]);

        let m = pairwise_matrix(&[], Norm::L2).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn pairwise_rejects_ragged() {
        assert!(pairwise_matrix(&[vec![0.0], vec![1.0, 2.0]], Norm::L2).is_err());
    }

    #[test]
    fn axioms_clean_on_pairwise() {
        let xs = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5], vec![3.0, 3.0]];
        for p in [Norm::L1, Norm::L2, Norm::Inf] {
            let m = pairwise_matrix(&xs, p).unwrap();
            assert!(validate_metric_axioms(&m, 1e-9).is_metric());
        }
    }

    #[test]
    fn axioms_detect_asymmetry() {
        let m = DistanceMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        let r = validate_metric_axioms(&m, 1e-9);
        assert_eq!(r.asymmetric, vec![(0, 1)]);
    }

    #[test]
    fn axioms_detect_triangle() {
        let m = DistanceMatrix::from_rows(&[
            vec![0.0, 1.0, 5.0],
            vec![1.0, 0.0, 1.0],
            vec![5.0, 1.0, 0.0],
        ])
        .unwrap();
        let r = validate_metric_axioms(&m, 1e-9);
        // 0→2 via 1 and 2→0 via 1, each exceeding by 3
        assert_eq!(r.triangle, vec![(0, 1, 2, 3.0), (2, 1, 0, 3.0)]);
        assert!(r.asymmetric.is_empty());
        assert!(r.negative.is_empty());
    }

    #[test]
    fn axioms_detect_negative_and_diagonal() {
        let m = DistanceMatrix::from_rows(&[vec![0.5, -1.0], vec![-1.0, 0.0]]).unwrap();
        let r = validate_metric_axioms(&m, 1e-9);
        assert_eq!(r.negative.len(), 2);
        assert_eq!(r.nonzero_diagonal, vec![(0, 0.5)]);
    }
}
