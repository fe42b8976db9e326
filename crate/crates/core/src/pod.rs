//! Snapshot matrices and POD bases from the thin SVD.
//!
//! Modes are Euclidean-orthonormal. On the uniform grids used here the
//! cell-area weighted inner product is a constant multiple of the dot
//! product, so the weight cancels in every projection coefficient.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::hf::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotKind {
    Transformed,
    Untransformed,
    InverseDisplacement,
}

/// Dense snapshot matrix stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub n_rows: usize,
    pub columns: Vec<Field>,
    pub samples: Vec<Sample>,
    pub kind: SnapshotKind,
}

impl SnapshotMatrix {
    pub fn new(columns: Vec<Field>, samples: Vec<Sample>, kind: SnapshotKind) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::arg("snapshot matrix needs at least one column"));
        }
        if columns.len() != samples.len() {
            return Err(Error::arg("snapshot column count differs from sample count"));
        }
        let n_rows = columns[0].len();
        if n_rows == 0 || columns.iter().any(|c| c.len() != n_rows) {
            return Err(Error::arg("snapshot columns must share a nonzero length"));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("snapshot matrix has non-finite entries".into()));
        }
        Ok(Self {
            n_rows,
            columns,
            samples,
            kind,
        })
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.columns.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.n_rows, self.n_cols(), |i, j| self.columns[j][i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodBasis {
    pub n_rows: usize,
    /// Leading left singular vectors, `modes.len() == n`.
    pub modes: Vec<Vec<f64>>,
    /// All singular values in non-increasing order.
    pub singular_values: Vec<f64>,
}

/// Left singular vectors for the `n` largest singular values. Each mode's
/// largest-magnitude entry is made positive.
pub fn compute_pod(s: &SnapshotMatrix, n: usize) -> Result<PodBasis> {
    let max_n = s.n_rows.min(s.n_cols());
    if n < 1 || n > max_n {
        return Err(Error::arg(format!("requested {n} modes, valid range is 1..={max_n}")));
    }
    let svd = s
        .to_faer()
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
    let u = svd.U();
    let sv = svd.S().column_vector();
    let k = sv.nrows();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| sv[i].max(0.0)).collect();
    let modes = order[..n]
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = (0..s.n_rows).map(|r| u[(r, c)]).collect();
            fix_sign(&mut v);
            v
        })
        .collect();
    Ok(PodBasis {
        n_rows: s.n_rows,
        modes,
        singular_values,
    })
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// `√(Σ_{i>n} σᵢ²) / √(Σ σᵢ²)`; zero for a zero matrix.
pub fn projection_error(singular_values: &[f64], n: usize) -> f64 {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    let tail: f64 = singular_values.iter().skip(n).map(|s| s * s).sum();
    (tail / total).sqrt()
}

impl PodBasis {
    pub fn n(&self) -> usize {
        self.modes.len()
    }

    pub fn projection_error(&self, n: usize) -> f64 {
        projection_error(&self.singular_values, n)
    }

    /// Keeps the first `n` modes.
    pub fn truncated(&self, n: usize) -> Result<PodBasis> {
        if n < 1 || n > self.n() {
            return Err(Error::arg(format!("cannot truncate {} modes to {n}", self.n())));
        }
        Ok(PodBasis {
            n_rows: self.n_rows,
            modes: self.modes[..n].to_vec(),
            singular_values: self.singular_values.clone(),
        })
    }

    /// `αᵢ = ⟨vᵢ, f⟩ / ‖vᵢ‖²`.
    pub fn project(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.n_rows {
            return Err(Error::arg("field length does not match the basis"));
        }
        Ok(self
            .modes
            .iter()
            .map(|v| {
                let vv: f64 = v.iter().map(|x| x * x).sum();
                v.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() / vv
            })
            .collect())
    }

    pub fn reconstruct(&self, alpha: &[f64]) -> Result<Field> {
        if alpha.len() > self.n() {
            return Err(Error::arg(format!("{} coefficients for {} modes", alpha.len(), self.n())));
        }
        let mut out = vec![0.0; self.n_rows];
        for (a, v) in alpha.iter().zip(&self.modes) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += a * x;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(cols: Vec<Vec<f64>>) -> SnapshotMatrix {
        let m = cols.len();
        SnapshotMatrix::new(cols, vec![vec![0.0]; m], SnapshotKind::Untransformed).unwrap()
    }

    #[test]
    fn diagonal_matrix() {
        let s = matrix(vec![vec![3.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let b = compute_pod(&s, 2).unwrap();
        assert_eq!(b.n(), 2);
        for (a, e) in b.singular_values.iter().zip([3.0, 2.0, 1.0]) {
            assert!((a - e).abs() < 1e-14);
        }
        assert!((b.modes[0][0] - 1.0).abs() < 1e-14 && (b.modes[1][1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_one_is_exact_with_one_mode() {
        let u = [1.0, -2.0, 0.5, 4.0];
        let cols: Vec<Vec<f64>> = [1.0, 3.0, -2.0].iter().map(|c| u.iter().map(|x| c * x).collect()).collect();
        let s = matrix(cols.clone());
        let b = compute_pod(&s, 1).unwrap();
        assert!(b.projection_error(1) < 1e-15);
        for c in &cols {
            let r = b.reconstruct(&b.project(c).unwrap()).unwrap();
            assert!(r.iter().zip(c).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn error_at_zero_modes_is_one() {
        assert_eq!(projection_error(&[2.0, 1.0], 0), 1.0);
        assert_eq!(projection_error(&[2.0, 1.0], 2), 0.0);
    }

    #[test]
    fn mode_count_is_validated() {
        let s = matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(matches!(compute_pod(&s, 0), Err(Error::Argument(_))));
        assert!(matches!(compute_pod(&s, 3), Err(Error::Argument(_))));
    }
}
