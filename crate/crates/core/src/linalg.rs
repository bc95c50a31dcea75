//! Small dense least-squares helpers on column-major designs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Thin QR factorisation of a design given as columns, computed by
/// modified Gram-Schmidt with one reorthogonalisation pass.
#[derive(Debug, Clone)]
pub(crate) struct Qr {
    q: Vec<Vec<f64>>,
    r: DMatrix<f64>,
}

const RANK_TOL: f64 = 1e-9;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Factorises the design; the first column that is (numerically) a linear
/// combination of the preceding ones is reported by name.
pub(crate) fn qr(cols: &[Vec<f64>], names: &[String]) -> Result<Qr> {
    let p = cols.len();
    let n = cols.first().map_or(0, Vec::len);
    if n < p {
        return Err(Error::InvalidData(format!("{n} rows cannot identify {p} coefficients")));
    }
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut r = DMatrix::zeros(p, p);
    for (j, col) in cols.iter().enumerate() {
        if col.len() != n {
            return Err(Error::Mismatch(format!("column `{}` has {} rows, expected {n}", names[j], col.len())));
        }
        let scale = dot(col, col).sqrt();
        let mut v = col.clone();
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = dot(qi, &v);
                r[(i, j)] += c;
                v.iter_mut().zip(qi).for_each(|(vk, qk)| *vk -= c * qk);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if !(norm > RANK_TOL * scale) || scale == 0.0 {
            return Err(Error::SingularDesign {
                column: names[j].clone(),
            });
        }
        r[(j, j)] = norm;
        v.iter_mut().for_each(|vk| *vk /= norm);
        q.push(v);
    }
    Ok(Qr { q, r })
}

impl Qr {
    /// Least-squares coefficients for the response `y`.
    pub(crate) fn solve(&self, y: &[f64]) -> Vec<f64> {
        let p = self.q.len();
        let mut b: Vec<f64> = self.q.iter().map(|qi| dot(qi, y)).collect();
        for j in (0..p).rev() {
            for k in j + 1..p {
                b[j] -= self.r[(j, k)] * b[k];
            }
            b[j] /= self.r[(j, j)];
        }
        b
    }

    /// `(X'X)^{-1} = R^{-1} R^{-T}`.
    pub(crate) fn gram_inverse(&self) -> DMatrix<f64> {
        let p = self.q.len();
        let mut rinv = DMatrix::identity(p, p);
        // R is upper triangular; solve R * rinv = I column by column.
        for c in 0..p {
            for j in (0..p).rev() {
                let mut s = if j == c { 1.0 } else { 0.0 };
                for k in j + 1..p {
                    s -= self.r[(j, k)] * rinv[(k, c)];
                }
                rinv[(j, c)] = s / self.r[(j, j)];
            }
        }
        &rinv * rinv.transpose()
    }
}

pub(crate) fn least_squares(cols: &[Vec<f64>], names: &[String], y: &[f64]) -> Result<Vec<f64>> {
    Ok(qr(cols, names)?.solve(y))
}

/// Fitted values `sum_j cols[j] * beta[j]`.
pub(crate) fn predict(cols: &[Vec<f64>], beta: &[f64]) -> Vec<f64> {
    let n = cols.first().map_or(0, Vec::len);
    (0..n).map(|i| cols.iter().zip(beta).map(|(c, b)| c[i] * b).sum()).collect()
}

/// HC1 covariance from per-observation influence rows:
/// `n / (n - p) * (1/n^2) * sum psi_i psi_i'`.
pub(crate) fn hc1_from_influence(influence: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = influence.shape();
    let scale = 1.0 / (n as f64 * (n as f64 - p as f64).max(1.0));
    let mut v = influence.transpose() * influence;
    v *= scale;
    // symmetrise against rounding
    let vt = v.transpose();
    (v + vt) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn exact_fit_and_gram_inverse() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let cols = vec![vec![1.0; 10], x.clone()];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let f = qr(&cols, &names(2)).unwrap();
        let b = f.solve(&y);
        assert_abs_diff_eq!(b[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], -2.0, epsilon = 1e-12);
        let m = DMatrix::from_fn(10, 2, |r, c| cols[c][r]);
        let g = m.transpose() * &m;
        let prod = g * f.gram_inverse();
        assert!((prod - DMatrix::identity(2, 2)).abs().max() < 1e-10);
    }

    #[test]
    fn collinear_column_is_named() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let twice: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let cols = vec![vec![1.0; 10], x, twice];
        match qr(&cols, &names(3)) {
            Err(Error::SingularDesign { column }) => assert_eq!(column, "c2"),
            other => panic!("{other:?}"),
        }
    }
}
