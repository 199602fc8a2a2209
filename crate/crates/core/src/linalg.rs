//! Small dense linear algebra: just enough for least squares, Newton
//! steps, and covariance matrices of a few dozen studies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Result of a pivoted-QR least-squares solve.
#[derive(Debug, Clone)]
pub struct Lstsq {
    /// Solution in original column order.
    pub coefficients: Vec<f64>,
    /// Residual sum of squares.
    pub rss: f64,
    /// Numerical rank at the relative tolerance.
    pub rank: usize,
}

/// Least squares via Householder QR with column pivoting.
///
/// Declares the system rank deficient when a pivot falls below
/// `rel_tol` times the largest pivot, and refuses to solve in that
/// case: callers want a full-rank fit or an error, not a minimum-norm
/// patch-up.
pub fn lstsq(a: &Mat, y: &[f64], rel_tol: f64) -> Result<Lstsq> {
    let n = a.rows();
    let p = a.cols();
    assert_eq!(y.len(), n);
    if n < p {
        return Err(Error::InsufficientRows {
            found: n,
            required: p,
        });
    }

    let mut r = a.clone();
    let mut qty = y.to_vec();
    let mut perm: Vec<usize> = (0..p).collect();
    // Remaining squared norms of each column, updated as we eliminate.
    let mut col_norms: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| r[(i, j)] * r[(i, j)]).sum())
        .collect();

    for k in 0..p {
        // Pivot: bring the column with the largest remaining norm to k.
        let (jmax, _) = col_norms
            .iter()
            .enumerate()
            .skip(k)
            .fold(
                (k, -1.0),
                |best, (j, &v)| if v > best.1 { (j, v) } else { best },
            );
        if jmax != k {
            for i in 0..n {
                let tmp = r[(i, k)];
                r[(i, k)] = r[(i, jmax)];
                r[(i, jmax)] = tmp;
            }
            col_norms.swap(k, jmax);
            perm.swap(k, jmax);
        }

        // Householder vector for column k below the diagonal.
        let mut norm = 0.0;
        for i in k..n {
            norm += r[(i, k)] * r[(i, k)];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue; // column is exactly zero; pivots below will catch it
        }
        let alpha = if r[(k, k)] >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            // Apply I - 2vv'/v'v to the trailing columns and to y.
            for j in k..p {
                let mut dot = 0.0;
                for (idx, i) in (k..n).enumerate() {
                    dot += v[idx] * r[(i, j)];
                }
                let scale = 2.0 * dot / vnorm2;
                for (idx, i) in (k..n).enumerate() {
                    r[(i, j)] -= scale * v[idx];
                }
            }
            let mut dot = 0.0;
            for (idx, i) in (k..n).enumerate() {
                dot += v[idx] * qty[i];
            }
            let scale = 2.0 * dot / vnorm2;
            for (idx, i) in (k..n).enumerate() {
                qty[i] -= scale * v[idx];
            }
        }
        r[(k, k)] = alpha;
        for i in (k + 1)..n {
            r[(i, k)] = 0.0;
        }
        for j in (k + 1)..p {
            col_norms[j] -= r[(k, j)] * r[(k, j)];
            if col_norms[j] < 0.0 {
                col_norms[j] = 0.0;
            }
        }
    }

    let pivot_max = (0..p).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    let rank = (0..p)
        .take_while(|&k| r[(k, k)].abs() > rel_tol * pivot_max && pivot_max > 0.0)
        .count();
    if rank < p {
        return Err(Error::RankDeficient { rank, cols: p });
    }

    // Back substitution on the permuted system.
    let mut beta_perm = vec![0.0; p];
    for k in (0..p).rev() {
        let mut acc = qty[k];
        for j in (k + 1)..p {
            acc -= r[(k, j)] * beta_perm[j];
        }
        beta_perm[k] = acc / r[(k, k)];
    }
    let mut coefficients = vec![0.0; p];
    for k in 0..p {
        coefficients[perm[k]] = beta_perm[k];
    }
    let rss: f64 = qty[p..].iter().map(|x| x * x).sum();

    Ok(Lstsq {
        coefficients,
        rss,
        rank,
    })
}

/// Cholesky factor L (lower triangular) of a symmetric positive-definite
/// matrix; errors if a pivot is not strictly positive.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if acc <= 0.0 {
                    return Err(Error::RankDeficient { rank: j, cols: n });
                }
                l[(i, j)] = acc.sqrt();
            } else {
                l[(i, j)] = acc / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solve A x = b for symmetric positive-definite A via Cholesky.
pub fn solve_spd(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky(a)?;
    let n = a.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[(i, k)] * y[k];
        }
        y[i] = acc / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in (i + 1)..n {
            acc -= l[(k, i)] * x[k];
        }
        x[i] = acc / l[(i, i)];
    }
    Ok(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
/// Returned in ascending order.
pub fn symmetric_eigenvalues(a: &Mat) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_recovers_exact_linear_fit() {
        // y = 1 + 2 x1 - 3 x2 with no noise
        let rows: Vec<Vec<f64>> = vec![
            vec![1.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 2.0, 1.0],
            vec![1.0, -1.0, 3.0],
        ];
        let a = Mat::from_rows(&rows);
        let y: Vec<f64> = rows.iter().map(|r| 1.0 + 2.0 * r[1] - 3.0 * r[2]).collect();
        let fit = lstsq(&a, &y, 1e-10).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!((fit.coefficients[2] + 3.0).abs() < 1e-12);
        assert!(fit.rss < 1e-20);
        assert_eq!(fit.rank, 3);
    }

    #[test]
    fn lstsq_residuals_orthogonal_to_design() {
        // Fixed pseudo-random data, checked against the normal equations.
        let mut state = 88172645463325252u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let n = 40;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, next(), next(), next()]).collect();
        let y: Vec<f64> = (0..n).map(|_| next()).collect();
        let a = Mat::from_rows(&rows);
        let fit = lstsq(&a, &y, 1e-10).unwrap();
        for j in 0..4 {
            let mut dot = 0.0;
            for i in 0..n {
                let pred: f64 = rows[i]
                    .iter()
                    .zip(&fit.coefficients)
                    .map(|(x, b)| x * b)
                    .sum();
                dot += rows[i][j] * (y[i] - pred);
            }
            assert!(dot.abs() < 1e-8, "column {j} not orthogonal: {dot}");
        }
    }

    #[test]
    fn lstsq_detects_duplicate_column() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let x = i as f64;
                vec![1.0, x, x]
            })
            .collect();
        let a = Mat::from_rows(&rows);
        let y = vec![0.0; 10];
        match lstsq(&a, &y, 1e-10) {
            Err(Error::RankDeficient { .. }) => {}
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        let a = Mat::from_rows(&[
            vec![4.0, 2.0, 0.6],
            vec![2.0, 5.0, 1.0],
            vec![0.6, 1.0, 3.0],
        ]);
        let x_true = vec![1.0, -2.0, 0.5];
        let b = a.matvec(&x_true);
        let x = solve_spd(&a, &b).unwrap();
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_eigenvalues_match_known_matrix() {
        // eig([[2,1],[1,2]]) = {1, 3}
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let e = symmetric_eigenvalues(&a);
        assert!((e[0] - 1.0).abs() < 1e-10);
        assert!((e[1] - 3.0).abs() < 1e-10);
    }
}
