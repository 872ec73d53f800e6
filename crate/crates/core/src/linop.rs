//! The Born measurement operator A = stack_i G_S diag(E_inc^(i)) and the
//! regularized normal-equation conjugate-gradient solver that forms the
//! data-consistency block.
//!
//! The contrast is real and nonnegative, so the least-squares problem is
//! solved over real chi with normal operator M = Re(A^H A).

use crate::error::{Error, Result};
use crate::forward::{green_measure, incident_fields, GreenMeasure};
use crate::linalg::CMat;
use crate::scene::Scenario;
use num_complex::Complex64;

pub struct BornOperator {
    gs: GreenMeasure,
    e_inc: CMat,
    /// Cached dense normal matrix Re(A^H A), row-major N x N.
    gram: Option<Vec<f64>>,
}

impl BornOperator {
    pub fn new(gs: GreenMeasure, e_inc: CMat) -> Result<Self> {
        if e_inc.rows != gs.grid().len() {
            return Err(Error::argument(
                "incident fields are not on the measurement operator grid",
            ));
        }
        Ok(BornOperator {
            gs,
            e_inc,
            gram: None,
        })
    }

    /// Operator for a scenario's inversion grid.
    pub fn for_scenario(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let k0 = scenario.wavenumber();
        let gs = green_measure(&scenario.inversion_grid, &scenario.rx_ring, k0)?;
        let e_inc = incident_fields(&scenario.inversion_grid, &scenario.tx_ring, k0)?;
        BornOperator::new(gs, e_inc)
    }

    /// Unknown count N (inversion-grid cells).
    pub fn unknowns(&self) -> usize {
        self.e_inc.rows
    }

    /// Measurement count N_r * N_i.
    pub fn measurements(&self) -> usize {
        self.gs.receiver_count() * self.e_inc.cols
    }

    pub fn incidences(&self) -> usize {
        self.e_inc.cols
    }

    pub fn receivers(&self) -> usize {
        self.gs.receiver_count()
    }

    pub fn grid(&self) -> &crate::scene::Grid {
        self.gs.grid()
    }

    /// A chi: per incidence i, block i = G_S (E_inc^(i) .* chi), stacked in
    /// incidence order.
    pub fn apply(&self, chi: &[f64]) -> Result<Vec<Complex64>> {
        let n = self.unknowns();
        if chi.len() != n {
            return Err(Error::argument(format!(
                "born_apply expects {n} unknowns, got {}",
                chi.len()
            )));
        }
        if chi.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("born_apply requires finite contrast values"));
        }
        let nr = self.receivers();
        let mut out = vec![Complex64::default(); self.measurements()];
        let mut scaled = vec![Complex64::default(); n];
        for i in 0..self.incidences() {
            for ((s, e), &c) in scaled.iter_mut().zip(self.e_inc.col(i)).zip(chi) {
                *s = e * c;
            }
            let y = self.gs.matrix().matvec(&scaled);
            out[i * nr..(i + 1) * nr].copy_from_slice(&y);
        }
        Ok(out)
    }

    /// Re(A^H y), the real-restricted adjoint.
    pub fn adjoint(&self, y: &[Complex64]) -> Result<Vec<f64>> {
        if y.len() != self.measurements() {
            return Err(Error::argument(format!(
                "born_adjoint expects {} measurements, got {}",
                self.measurements(),
                y.len()
            )));
        }
        let n = self.unknowns();
        let nr = self.receivers();
        let mut out = vec![0.0f64; n];
        for i in 0..self.incidences() {
            let block = &y[i * nr..(i + 1) * nr];
            let u = self.gs.matrix().matvec_adjoint(block);
            for ((o, e), ui) in out.iter_mut().zip(self.e_inc.col(i)).zip(u) {
                *o += (e.conj() * ui).re;
            }
        }
        Ok(out)
    }

    /// M v = Re(A^H A) v, using the cached Gram matrix when available.
    pub fn normal_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if let Some(gram) = &self.gram {
            let n = self.unknowns();
            if v.len() != n {
                return Err(Error::argument("normal_apply: length mismatch"));
            }
            let mut out = vec![0.0f64; n];
            for (row, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (g, x) in gram[row * n..(row + 1) * n].iter().zip(v) {
                    acc += g * x;
                }
                *o = acc;
            }
            Ok(out)
        } else {
            self.adjoint(&self.apply(v)?)
        }
    }

    /// Materialize and cache Re(A^H A); M_{mn} = Re((G^H G)_{mn} *
    /// sum_i conj(e_mi) e_ni).
    pub fn cache_gram(&mut self) {
        if self.gram.is_some() {
            return;
        }
        let n = self.unknowns();
        let g = self.gs.matrix();
        let nr = self.receivers();
        let ni = self.incidences();
        let mut gram = vec![0.0f64; n * n];
        for m in 0..n {
            let gm = g.col(m);
            for p in m..n {
                let gp = g.col(p);
                let mut b = Complex64::default();
                for q in 0..nr {
                    b += gm[q].conj() * gp[q];
                }
                let mut c = Complex64::default();
                for i in 0..ni {
                    c += self.e_inc.at(m, i).conj() * self.e_inc.at(p, i);
                }
                let val = (b * c).re;
                gram[m * n + p] = val;
                gram[p * n + m] = val;
            }
        }
        self.gram = Some(gram);
    }

    pub fn has_gram(&self) -> bool {
        self.gram.is_some()
    }

    /// Scale of the normal operator (mean diagonal of Re(A^H A)), used to
    /// place regularization grids.
    pub fn normal_scale(&self) -> f64 {
        let n = self.unknowns();
        if let Some(gram) = &self.gram {
            (0..n).map(|i| gram[i * n + i]).sum::<f64>() / n as f64
        } else {
            let g = self.gs.matrix();
            let mut trace = 0.0;
            for m in 0..n {
                let col_norm: f64 = g.col(m).iter().map(|z| z.norm_sqr()).sum();
                let e_norm: f64 = (0..self.incidences())
                    .map(|i| self.e_inc.at(m, i).norm_sqr())
                    .sum();
                trace += col_norm * e_norm;
            }
            trace / n as f64
        }
    }

    /// Dense stacked realization, (N_r * N_i) x N. Limited to N <= 4096.
    pub fn dense(&self) -> Result<CMat> {
        let n = self.unknowns();
        if n > 4096 {
            return Err(Error::argument(format!(
                "dense Born operator limited to 4096 unknowns, got {n}"
            )));
        }
        let nr = self.receivers();
        let mut a = CMat::zeros(self.measurements(), n);
        for col in 0..n {
            for i in 0..self.incidences() {
                let e = self.e_inc.at(col, i);
                for q in 0..nr {
                    *a.at_mut(i * nr + q, col) = self.gs.matrix().at(q, col) * e;
                }
            }
        }
        Ok(a)
    }
}

/// Convergence report of one normal-equation CG run.
#[derive(Clone, Debug)]
pub struct NormalSolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Relative residual 2-norm after each iteration.
    pub residual_history: Vec<f64>,
}

/// Solve (M + lambda I) chi = adjoint(data) + lambda z by conjugate
/// gradients from a zero start; M = Re(A^H A) is symmetric positive
/// semidefinite, so M + lambda I is SPD and CG applies.
pub fn cg_solve_normal(
    a: &BornOperator,
    lambda: f64,
    data: &[Complex64],
    z: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, NormalSolveReport)> {
    if !(lambda > 0.0) {
        return Err(Error::argument(format!("lambda must be > 0, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(Error::argument(format!("tolerance must be > 0, got {tol}")));
    }
    let n = a.unknowns();
    if z.len() != n {
        return Err(Error::argument("cg_solve_normal: z length mismatch"));
    }
    let mut rhs = a.adjoint(data)?;
    for (r, &zi) in rhs.iter_mut().zip(z) {
        *r += lambda * zi;
    }
    cg_solve_spd(a, lambda, &rhs, tol, max_iter)
}

/// CG on (M + lambda I) x = rhs; shared by the forward data-consistency
/// block and the backward CG blocks of the unrolled gradient.
pub fn cg_solve_spd(
    a: &BornOperator,
    lambda: f64,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, NormalSolveReport)> {
    let n = rhs.len();
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rhs_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            NormalSolveReport {
                iterations: 0,
                final_residual: 0.0,
                converged: true,
                residual_history: Vec::new(),
            },
        ));
    }
    let mut x = vec![0.0f64; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let mut history = Vec::new();
    for iter in 0..max_iter {
        let mut ap = a.normal_apply(&p)?;
        for (api, &pi) in ap.iter_mut().zip(&p) {
            *api += lambda * pi;
        }
        let p_ap: f64 = p.iter().zip(&ap).map(|(pi, api)| pi * api).sum();
        if p_ap <= 0.0 {
            return Err(Error::numeric(
                "cg_solve_normal: operator lost positive definiteness",
            ));
        }
        let alpha = rs / p_ap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let rel = rs_new.sqrt() / rhs_norm;
        history.push(rel);
        if rel < tol {
            return Ok((
                x,
                NormalSolveReport {
                    iterations: iter + 1,
                    final_residual: rel,
                    converged: true,
                    residual_history: history,
                },
            ));
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    let final_residual = *history.last().unwrap();
    Ok((
        x,
        NormalSolveReport {
            iterations: max_iter,
            final_residual,
            converged: false,
            residual_history: history,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::green_measure;
    use crate::linalg::cholesky_solve;
    use crate::scene::{make_grid, make_ring};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 10x10 inversion grid, 3 incidences, 5 receivers.
    fn small_operator() -> BornOperator {
        let grid = make_grid(2.0, 10).unwrap();
        let k0 = 8.0;
        let gs = green_measure(&grid, &make_ring(5, 6.0).unwrap(), k0).unwrap();
        let e_inc =
            crate::forward::incident_fields(&grid, &make_ring(3, 12.0).unwrap(), k0).unwrap();
        BornOperator::new(gs, e_inc).unwrap()
    }

    fn random_real(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn random_complex(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn apply_zero_and_linearity() {
        let a = small_operator();
        let zero = a.apply(&vec![0.0; a.unknowns()]).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));

        let chi = random_real(a.unknowns(), 1);
        let base = a.apply(&chi).unwrap();
        let scaled: Vec<f64> = chi.iter().map(|v| 2.5 * v).collect();
        let big = a.apply(&scaled).unwrap();
        let norm: f64 = base.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for (b, s) in base.iter().zip(&big) {
            assert!((b * 2.5 - s).norm() < 1e-12 * norm);
        }
    }

    #[test]
    fn apply_matches_dense() {
        let a = small_operator();
        let dense = a.dense().unwrap();
        let chi = random_real(a.unknowns(), 2);
        let chi_c: Vec<Complex64> = chi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let fast = a.apply(&chi).unwrap();
        let slow = dense.matvec(&chi_c);
        let norm: f64 = slow.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for (f, s) in fast.iter().zip(&slow) {
            assert!((f - s).norm() < 1e-12 * norm);
        }

        let y = random_complex(a.measurements(), 3);
        let adj_fast = a.adjoint(&y).unwrap();
        let adj_slow: Vec<f64> = dense.matvec_adjoint(&y).iter().map(|z| z.re).collect();
        let anorm: f64 = adj_slow.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (f, s) in adj_fast.iter().zip(&adj_slow) {
            assert!((f - s).abs() < 1e-12 * anorm);
        }
    }

    #[test]
    fn adjoint_identity() {
        let a = small_operator();
        let chi = random_real(a.unknowns(), 4);
        let y = random_complex(a.measurements(), 5);
        let ax = a.apply(&chi).unwrap();
        let aty = a.adjoint(&y).unwrap();
        let lhs: f64 = ax.iter().zip(&y).map(|(u, v)| (u.conj() * v).re).sum();
        let rhs: f64 = chi.iter().zip(&aty).map(|(u, v)| u * v).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn normal_operator_is_symmetric_and_gram_matches() {
        let mut a = small_operator();
        let u = random_real(a.unknowns(), 6);
        let v = random_real(a.unknowns(), 7);
        let mu = a.normal_apply(&u).unwrap();
        let mv = a.normal_apply(&v).unwrap();
        let lhs: f64 = mu.iter().zip(&v).map(|(x, y)| x * y).sum();
        let rhs: f64 = u.iter().zip(&mv).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));

        a.cache_gram();
        let mu_gram = a.normal_apply(&u).unwrap();
        let scale: f64 = mu.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (x, y) in mu.iter().zip(&mu_gram) {
            assert!((x - y).abs() < 1e-11 * scale.max(1.0));
        }
    }

    #[test]
    fn cg_reduces_to_z_when_operator_vanishes() {
        // all-zero incident fields make M = 0
        let grid = make_grid(2.0, 6).unwrap();
        let gs = green_measure(&grid, &make_ring(4, 6.0).unwrap(), 8.0).unwrap();
        let e_inc = CMat::zeros(grid.len(), 2);
        let a = BornOperator::new(gs, e_inc).unwrap();
        let z = random_real(a.unknowns(), 8);
        let data = vec![Complex64::default(); a.measurements()];
        let (chi, report) = cg_solve_normal(&a, 1.0, &data, &z, 1e-10, 100).unwrap();
        assert!(report.converged);
        for (c, zi) in chi.iter().zip(&z) {
            assert!((c - zi).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_huge_lambda_is_dominated_by_z() {
        let a = small_operator();
        let z = random_real(a.unknowns(), 9);
        let data = random_complex(a.measurements(), 10);
        let lambda = 1e9;
        let (chi, report) = cg_solve_normal(&a, lambda, &data, &z, 1e-12, 200).unwrap();
        assert!(report.converged);
        let rhs_data = a.adjoint(&data).unwrap();
        let z_norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err: f64 = chi
            .iter()
            .zip(&z)
            .zip(&rhs_data)
            .map(|((c, zi), d)| (c - zi - d / lambda).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-6 * z_norm);
    }

    #[test]
    fn cg_matches_dense_cholesky() {
        let mut a = small_operator();
        a.cache_gram();
        let n = a.unknowns();
        let z = random_real(n, 11);
        let data = random_complex(a.measurements(), 12);
        let lambda = 0.5 * a.normal_scale().max(1e-12);
        let (chi, report) = cg_solve_normal(&a, lambda, &data, &z, 1e-12, 500).unwrap();
        assert!(report.converged);

        // independent dense route
        let dense = a.dense().unwrap();
        let mut m = vec![0.0f64; n * n];
        for row in 0..n {
            for col in 0..n {
                let mut acc = Complex64::default();
                for k in 0..a.measurements() {
                    acc += dense.at(k, row).conj() * dense.at(k, col);
                }
                m[row * n + col] = acc.re + if row == col { lambda } else { 0.0 };
            }
        }
        let mut rhs: Vec<f64> = dense.matvec_adjoint(&data).iter().map(|v| v.re).collect();
        for (r, &zi) in rhs.iter_mut().zip(&z) {
            *r += lambda * zi;
        }
        let oracle = cholesky_solve(&m, n, &rhs).unwrap();
        let scale: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err: f64 = chi
            .iter()
            .zip(&oracle)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-8 * scale.max(1.0), "err {err}");
    }

    #[test]
    fn cg_satisfies_normal_equation_residual() {
        let a = small_operator();
        let z = random_real(a.unknowns(), 13);
        let data = random_complex(a.measurements(), 14);
        let tol = 1e-8;
        let lambda = 0.1 * a.normal_scale().max(1e-12);
        let (chi, report) = cg_solve_normal(&a, lambda, &data, &z, tol, 500).unwrap();
        assert!(report.converged);
        let mut rhs = a.adjoint(&data).unwrap();
        for (r, &zi) in rhs.iter_mut().zip(&z) {
            *r += lambda * zi;
        }
        let mut lhs = a.normal_apply(&chi).unwrap();
        for (l, c) in lhs.iter_mut().zip(&chi) {
            *l += lambda * c;
        }
        let res: f64 = lhs
            .iter()
            .zip(&rhs)
            .map(|(l, r)| (l - r).powi(2))
            .sum::<f64>()
            .sqrt();
        let rhs_norm: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res / rhs_norm < 2.0 * tol);
    }

    #[test]
    fn cg_error_energy_norm_is_monotone() {
        let mut a = small_operator();
        a.cache_gram();
        let n = a.unknowns();
        let z = random_real(n, 15);
        let data = random_complex(a.measurements(), 16);
        let lambda = 0.05 * a.normal_scale();
        // exact solution via a long, tight CG run
        let (exact, _) = cg_solve_normal(&a, lambda, &data, &z, 1e-14, 2000).unwrap();

        // rebuild the iteration and track the (M + lambda I)-norm of the error
        let mut rhs = a.adjoint(&data).unwrap();
        for (r, &zi) in rhs.iter_mut().zip(&z) {
            *r += lambda * zi;
        }
        let energy = |e: &[f64]| -> f64 {
            let mut me = a.normal_apply(e).unwrap();
            for (m, &ei) in me.iter_mut().zip(e) {
                *m += lambda * ei;
            }
            e.iter().zip(&me).map(|(x, y)| x * y).sum::<f64>().sqrt()
        };
        let mut x = vec![0.0; n];
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rs: f64 = r.iter().map(|v| v * v).sum();
        let mut last = f64::INFINITY;
        for _ in 0..40 {
            let mut ap = a.normal_apply(&p).unwrap();
            for (api, &pi) in ap.iter_mut().zip(&p) {
                *api += lambda * pi;
            }
            let alpha = rs / p.iter().zip(&ap).map(|(x, y)| x * y).sum::<f64>();
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let err: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
            let e = energy(&err);
            if e < 1e-10 * energy(&exact) {
                break; // error at rounding level, monotonicity no longer meaningful
            }
            assert!(e <= last * (1.0 + 1e-10), "energy norm must not increase");
            last = e;
            let rs_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rs_new / rs;
            rs = rs_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
    }
}
