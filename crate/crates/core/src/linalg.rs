//! Dense helpers: a column-major complex matrix, LU and Cholesky solves,
//! and a one-sided Jacobi singular value decomposition.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Column-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![Complex64::default(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = Complex64::new(1.0, 0.0);
        }
        m
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut Complex64 {
        &mut self.data[c * self.rows + r]
    }

    pub fn col(&self, c: usize) -> &[Complex64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// y = A x
    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![Complex64::default(); self.rows];
        for c in 0..self.cols {
            let xc = x[c];
            for (yi, aic) in y.iter_mut().zip(self.col(c)) {
                *yi += aic * xc;
            }
        }
        y
    }

    /// y = A^H x
    pub fn matvec_adjoint(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![Complex64::default(); self.cols];
        for c in 0..self.cols {
            let mut acc = Complex64::default();
            for (aic, xi) in self.col(c).iter().zip(x) {
                acc += aic.conj() * xi;
            }
            y[c] = acc;
        }
        y
    }
}

/// Solve A X = B by LU with partial pivoting; A is consumed.
pub fn lu_solve(mut a: CMat, b: &CMat) -> Result<CMat> {
    let n = a.rows;
    if a.cols != n || b.rows != n {
        return Err(Error::argument("lu_solve: shape mismatch"));
    }
    let mut pivots = vec![0usize; n];
    for k in 0..n {
        let mut piv = k;
        let mut best = a.at(k, k).norm_sqr();
        for r in k + 1..n {
            let mag = a.at(r, k).norm_sqr();
            if mag > best {
                best = mag;
                piv = r;
            }
        }
        if best == 0.0 {
            return Err(Error::numeric("lu_solve: singular matrix"));
        }
        pivots[k] = piv;
        if piv != k {
            for c in 0..n {
                a.data.swap(c * n + k, c * n + piv);
            }
        }
        let inv = Complex64::new(1.0, 0.0) / a.at(k, k);
        for r in k + 1..n {
            let factor = a.at(r, k) * inv;
            *a.at_mut(r, k) = factor;
            for c in k + 1..n {
                let sub = factor * a.at(k, c);
                *a.at_mut(r, c) -= sub;
            }
        }
    }
    let mut x = b.clone();
    for col in 0..x.cols {
        let xc = x.col_mut(col);
        // Apply the full row permutation before touching L: the stored
        // multipliers refer to the final row ordering, not the ordering at
        // the elimination step that produced them.
        for k in 0..n {
            xc.swap(k, pivots[k]);
        }
        for k in 0..n {
            let xk = xc[k];
            for r in k + 1..n {
                xc[r] -= a.at(r, k) * xk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = xc[k];
            for c in k + 1..n {
                acc -= a.at(k, c) * xc[c];
            }
            xc[k] = acc / a.at(k, k);
        }
    }
    Ok(x)
}

/// Solve the real symmetric positive definite system A x = b by Cholesky.
/// `a` is row-major n*n.
pub fn cholesky_solve(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != n * n || b.len() != n {
        return Err(Error::argument("cholesky_solve: shape mismatch"));
    }
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::numeric("cholesky_solve: matrix not positive definite"));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    Ok(y)
}

/// Economy singular value decomposition A = U diag(S) V^H by one-sided
/// Jacobi rotations; singular values are returned in nonincreasing order.
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

const JACOBI_MAX_SWEEPS: usize = 30;

pub fn jacobi_svd(a: &CMat) -> Result<Svd> {
    if a.rows < a.cols {
        // factorize the adjoint and swap factors
        let mut ah = CMat::zeros(a.cols, a.rows);
        for r in 0..a.rows {
            for c in 0..a.cols {
                *ah.at_mut(c, r) = a.at(r, c).conj();
            }
        }
        let svd = jacobi_svd(&ah)?;
        return Ok(Svd {
            u: svd.v,
            s: svd.s,
            v: svd.u,
        });
    }
    let m = a.rows;
    let n = a.cols;
    let mut b = a.clone();
    let mut v = CMat::identity(n);
    let tol = 1e-14;
    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = Complex64::default();
                {
                    let (head, tail) = b.data.split_at(q * m);
                    let bp = &head[p * m..p * m + m];
                    let bq = &tail[..m];
                    for i in 0..m {
                        app += bp[i].norm_sqr();
                        aqq += bq[i].norm_sqr();
                        apq += bp[i].conj() * bq[i];
                    }
                }
                let mag = apq.norm();
                if mag <= tol * (app * aqq).sqrt() || mag == 0.0 {
                    continue;
                }
                rotated = true;
                // phase factor making the 2x2 Gram block real symmetric
                let phase = apq / mag;
                let zeta = (aqq - app) / (2.0 * mag);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let rot = |mat: &mut CMat, rows: usize| {
                    let (head, tail) = mat.data.split_at_mut(q * rows);
                    let bp = &mut head[p * rows..p * rows + rows];
                    let bq = &mut tail[..rows];
                    let u = phase.conj();
                    for i in 0..rows {
                        let xp = bp[i];
                        let xq = bq[i] * u;
                        bp[i] = c * xp - s * xq;
                        bq[i] = s * xp + c * xq;
                    }
                };
                rot(&mut b, m);
                rot(&mut v, n);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numeric(format!(
            "jacobi_svd did not converge within {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }
    // column norms are the singular values
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|c| b.col(c).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let mut u = CMat::zeros(m, n);
    let mut vs = CMat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        s.push(sigma);
        let scale = if sigma > 0.0 { 1.0 / sigma } else { 0.0 };
        for i in 0..m {
            *u.at_mut(i, dst) = b.at(i, src) * scale;
        }
        for i in 0..n {
            *vs.at_mut(i, dst) = v.at(i, src);
        }
    }
    Ok(Svd { u, s, v: vs })
}
