//! Small dense linear algebra: a cyclic Jacobi eigensolver for symmetric
//! matrices and a Householder QR least-squares solver. Both work on
//! row-major `Vec<f64>` buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues sorted non-increasing.
    pub values: Vec<f64>,
    /// Eigenvectors, `vectors[k]` belongs to `values[k]`, unit norm.
    pub vectors: Vec<Vec<f64>>,
}

/// Cyclic Jacobi rotation sweep. `a` is `n x n`, row-major, assumed
/// symmetric (only the upper triangle is trusted).
pub fn symmetric_eigen(a: &[f64], n: usize) -> SymmetricEigen {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    for i in 0..n {
        for j in 0..i {
            m[i * n + j] = m[j * n + i];
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let total: f64 = m.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off <= 1e-32 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ties in index order
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&k| m[k * n + k]).collect();
    let vectors = order
        .iter()
        .map(|&k| (0..n).map(|r| v[r * n + k]).collect())
        .collect();
    SymmetricEigen { values, vectors }
}

/// Result of a least-squares solve.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: Vec<f64>,
    /// Euclidean norm of `A x - b` at the solution.
    pub residual_norm: f64,
}

/// Relative threshold on `|R_kk|` below which column `k` is declared
/// linearly dependent on the previous ones.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Minimizes `|A x - b|` with Householder QR. `a` is `rows x cols`,
/// row-major, with `rows >= cols`.
pub fn least_squares(a: &[f64], rows: usize, cols: usize, b: &[f64]) -> Result<LeastSquares> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(b.len(), rows);
    if rows < cols {
        return Err(Error::Underdetermined {
            observed: rows,
            required: cols,
        });
    }
    // column-major copy makes the reflector updates contiguous
    let mut q: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..rows).map(|r| a[r * cols + c]).collect())
        .collect();
    let mut rhs = b.to_vec();
    let col_scale = q
        .iter()
        .map(|c| libm::sqrt(c.iter().map(|x| x * x).sum::<f64>()))
        .fold(0.0, f64::max);
    let mut diag = vec![0.0; cols];

    for k in 0..cols {
        let norm = libm::sqrt(q[k][k..].iter().map(|x| x * x).sum::<f64>());
        if norm <= RANK_TOLERANCE * col_scale || norm == 0.0 {
            return Err(Error::RankDeficient { index: k });
        }
        let alpha = if q[k][k] > 0.0 { -norm } else { norm };
        let mut house: Vec<f64> = q[k][k..].to_vec();
        house[0] -= alpha;
        let hnorm2: f64 = house.iter().map(|x| x * x).sum();
        diag[k] = alpha;
        if hnorm2 > 0.0 {
            for col in q.iter_mut().skip(k + 1) {
                let dot: f64 = house.iter().zip(&col[k..]).map(|(h, x)| h * x).sum();
                let f = 2.0 * dot / hnorm2;
                for (x, h) in col[k..].iter_mut().zip(&house) {
                    *x -= f * h;
                }
            }
            let dot: f64 = house.iter().zip(&rhs[k..]).map(|(h, x)| h * x).sum();
            let f = 2.0 * dot / hnorm2;
            for (x, h) in rhs[k..].iter_mut().zip(&house) {
                *x -= f * h;
            }
        }
    }

    let mut x = vec![0.0; cols];
    for k in (0..cols).rev() {
        let mut s = rhs[k];
        for j in (k + 1)..cols {
            s -= q[j][k] * x[j];
        }
        x[k] = s / diag[k];
    }
    let residual_norm = libm::sqrt(rhs[cols..].iter().map(|v| v * v).sum::<f64>());
    Ok(LeastSquares {
        solution: x,
        residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat_vec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        (0..rows)
            .map(|r| (0..cols).map(|c| a[r * cols + c] * x[c]).sum())
            .collect()
    }

    #[test]
    fn eigen_of_diagonal_is_sorted() {
        let a = [1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0];
        let e = symmetric_eigen(&a, 3);
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        assert_eq!(e.vectors[0], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn eigen_pairs_satisfy_definition() {
        let a = [4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 5.0];
        let e = symmetric_eigen(&a, 3);
        for (val, vec) in e.values.iter().zip(&e.vectors) {
            let av = mat_vec(&a, 3, 3, vec);
            for i in 0..3 {
                assert!((av[i] - val * vec[i]).abs() < 1e-12);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = e.vectors[i].iter().zip(&e.vectors[j]).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn least_squares_exact_system() {
        let a = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let b = mat_vec(&a, 3, 2, &[2.0, -3.0]);
        let ls = least_squares(&a, 3, 2, &b).unwrap();
        assert!((ls.solution[0] - 2.0).abs() < 1e-14);
        assert!((ls.solution[1] + 3.0).abs() < 1e-14);
        assert!(ls.residual_norm < 1e-14);
    }

    #[test]
    fn least_squares_line_fit_residual() {
        // fit y = c through (0,0),(0,2): c = 1, residual sqrt(2)
        let a = [1.0, 1.0];
        let ls = least_squares(&a, 2, 1, &[0.0, 2.0]).unwrap();
        assert!((ls.solution[0] - 1.0).abs() < 1e-15);
        assert!((ls.residual_norm - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dependent_columns_are_reported() {
        let a = [1.0, 2.0, 2.0, 4.0, 3.0, 6.0];
        assert_eq!(
            least_squares(&a, 3, 2, &[1.0, 2.0, 3.0]).unwrap_err(),
            Error::RankDeficient { index: 1 }
        );
    }

    #[test]
    fn too_few_rows() {
        let a = [1.0, 2.0];
        assert!(matches!(
            least_squares(&a, 1, 2, &[1.0]),
            Err(Error::Underdetermined { .. })
        ));
    }
}
