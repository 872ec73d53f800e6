//! Method-of-moments forward solver: Richmond-discretized Green's operators,
//! incident fields, total-field solve, scattered-field synthesis, and noise
//! injection.
//!
//! Time convention is exp(+j w t) with the outgoing 2D Green's function
//! g = (-j/4) H0_2(k0 |r - r'|). The k0^2 factor of the volume integral
//! equation is folded into the Green's operators, so E_tot = E_inc + G_D
//! chi E_tot holds with G entries equal to k0^2 times the cell integral of g.

use crate::error::{Error, Result};
use crate::fft2::Fft2;
use crate::linalg::{lu_solve, CMat};
use crate::scene::{ContrastMap, Grid, SensorRing};
use crate::specfun::{hankel2_0, hankel2_1, j1};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Richmond equal-area-circle radius for a square cell of size h.
fn equivalent_radius(h: f64) -> f64 {
    h / std::f64::consts::PI.sqrt()
}

/// Common prefactor of off-diagonal entries:
/// k0^2 * (-j/4) * (2 pi a / k0) J1(k0 a) = -(j pi k0 a / 2) J1(k0 a).
fn off_diagonal_factor(k0: f64, a: f64) -> Complex64 {
    -J * (0.5 * std::f64::consts::PI * k0 * a) * j1(k0 * a)
}

/// Analytic self term: -(j pi k0 a / 2) H1_2(k0 a) - 1.
fn self_term(k0: f64, a: f64) -> Complex64 {
    -J * (0.5 * std::f64::consts::PI * k0 * a) * hankel2_1(k0 * a) - 1.0
}

// ---------------------------------------------------------------------------
// GreenDomain
// ---------------------------------------------------------------------------

/// Domain Green's operator G_D as a translation-invariant stencil with a
/// circulant embedding for fast application.
pub struct GreenDomain {
    grid: Grid,
    k0: f64,
    off_factor: Complex64,
    self_term: Complex64,
    /// 2D FFT of the 2n x 2n circulant embedding of the stencil.
    spectrum: Vec<Complex64>,
    fft: Fft2,
}

pub fn green_domain(grid: &Grid, k0: f64) -> Result<GreenDomain> {
    if !(k0 > 0.0) {
        return Err(Error::argument(format!("wavenumber must be > 0, got {k0}")));
    }
    let n = grid.n();
    let h = grid.cell_size();
    let a = equivalent_radius(h);
    let off = off_diagonal_factor(k0, a);
    let selfv = self_term(k0, a);
    let stencil = |di: i64, dj: i64| -> Complex64 {
        if di == 0 && dj == 0 {
            selfv
        } else {
            let rho = h * ((di * di + dj * dj) as f64).sqrt();
            off * hankel2_0(k0 * rho)
        }
    };
    let m = 2 * n;
    let mut spectrum = vec![Complex64::default(); m * m];
    for p in 0..m {
        let dj = if p < n { p as i64 } else { p as i64 - m as i64 };
        for q in 0..m {
            let di = if q < n { q as i64 } else { q as i64 - m as i64 };
            if di.unsigned_abs() as usize >= n || dj.unsigned_abs() as usize >= n {
                continue; // padding rows/columns of the embedding
            }
            spectrum[p * m + q] = stencil(di, dj);
        }
    }
    let fft = Fft2::new(m, m);
    fft.forward(&mut spectrum);
    Ok(GreenDomain {
        grid: grid.clone(),
        k0,
        off_factor: off,
        self_term: selfv,
        spectrum,
        fft,
    })
}

impl GreenDomain {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn wavenumber(&self) -> f64 {
        self.k0
    }

    /// Stencil value at a lattice offset.
    pub fn entry_offset(&self, di: i64, dj: i64) -> Complex64 {
        if di == 0 && dj == 0 {
            self.self_term
        } else {
            let h = self.grid.cell_size();
            let rho = h * ((di * di + dj * dj) as f64).sqrt();
            self.off_factor * hankel2_0(self.k0 * rho)
        }
    }

    /// Dense N x N realization (memory is the caller's problem).
    pub fn dense(&self) -> CMat {
        let n = self.grid.n();
        let count = n * n;
        let mut g = CMat::zeros(count, count);
        for ry in 0..n {
            for rx in 0..n {
                let row = ry * n + rx;
                for cy in 0..n {
                    for cx in 0..n {
                        let col = cy * n + cx;
                        *g.at_mut(row, col) =
                            self.entry_offset(rx as i64 - cx as i64, ry as i64 - cy as i64);
                    }
                }
            }
        }
        g
    }
}

/// G_D v via circulant embedding of the 2-level Toeplitz kernel and FFTs.
pub fn toeplitz_matvec(gd: &GreenDomain, v: &[Complex64]) -> Vec<Complex64> {
    let n = gd.grid.n();
    assert_eq!(v.len(), n * n, "toeplitz_matvec: vector length mismatch");
    let m = 2 * n;
    let mut buf = vec![Complex64::default(); m * m];
    for iy in 0..n {
        buf[iy * m..iy * m + n].copy_from_slice(&v[iy * n..(iy + 1) * n]);
    }
    gd.fft.forward(&mut buf);
    for (b, s) in buf.iter_mut().zip(&gd.spectrum) {
        *b *= s;
    }
    gd.fft.inverse(&mut buf);
    let mut out = vec![Complex64::default(); n * n];
    for iy in 0..n {
        out[iy * n..(iy + 1) * n].copy_from_slice(&buf[iy * m..iy * m + n]);
    }
    out
}

// ---------------------------------------------------------------------------
// GreenMeasure
// ---------------------------------------------------------------------------

/// Measurement Green's operator G_S, dense N_r x N.
pub struct GreenMeasure {
    grid: Grid,
    k0: f64,
    positions: Vec<(f64, f64)>,
    matrix: CMat,
}

pub fn green_measure(grid: &Grid, rx: &SensorRing, k0: f64) -> Result<GreenMeasure> {
    if !(k0 > 0.0) {
        return Err(Error::argument(format!("wavenumber must be > 0, got {k0}")));
    }
    let half = 0.5 * grid.extent();
    let positions = rx.positions();
    for &(x, y) in &positions {
        if x.abs() <= half && y.abs() <= half {
            return Err(Error::argument(format!(
                "receiver at ({x}, {y}) lies inside the DOI"
            )));
        }
    }
    let a = equivalent_radius(grid.cell_size());
    let off = off_diagonal_factor(k0, a);
    let centers = grid.centers();
    let mut matrix = CMat::zeros(positions.len(), centers.len());
    for (ncell, &(cx, cy)) in centers.iter().enumerate() {
        for (q, &(px, py)) in positions.iter().enumerate() {
            let rho = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
            *matrix.at_mut(q, ncell) = off * hankel2_0(k0 * rho);
        }
    }
    Ok(GreenMeasure {
        grid: grid.clone(),
        k0,
        positions,
        matrix,
    })
}

impl GreenMeasure {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn wavenumber(&self) -> f64 {
        self.k0
    }

    pub fn receiver_count(&self) -> usize {
        self.positions.len()
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }
}

// ---------------------------------------------------------------------------
// incident fields
// ---------------------------------------------------------------------------

/// E_inc(r, j) = (-j/4) H0_2(k0 |r - r_j|) for unit line sources.
pub fn incident_fields(grid: &Grid, tx: &SensorRing, k0: f64) -> Result<CMat> {
    if !(k0 > 0.0) {
        return Err(Error::argument(format!("wavenumber must be > 0, got {k0}")));
    }
    let centers = grid.centers();
    let h = grid.cell_size();
    let mut fields = CMat::zeros(centers.len(), tx.count());
    for (j, (tx_x, tx_y)) in tx.positions().into_iter().enumerate() {
        let col = fields.col_mut(j);
        for (ncell, &(cx, cy)) in centers.iter().enumerate() {
            let rho = ((tx_x - cx).powi(2) + (tx_y - cy).powi(2)).sqrt();
            if rho < h {
                return Err(Error::argument(format!(
                    "transmitter at ({tx_x}, {tx_y}) is closer than one cell to a grid center"
                )));
            }
            col[ncell] = -J * 0.25 * hankel2_0(k0 * rho);
        }
    }
    Ok(fields)
}

/// Incident and total fields for one scene.
pub struct FieldSet {
    pub e_inc: CMat,
    pub e_tot: CMat,
}

// ---------------------------------------------------------------------------
// total-field solve
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 2000,
        }
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Solve (I - G_D diag(chi)) e = b by BiCGStab with a zero initial guess.
fn bicgstab(
    gd: &GreenDomain,
    chi: &[f64],
    b: &[Complex64],
    opts: SolveOptions,
) -> Result<Vec<Complex64>> {
    let apply = |e: &[Complex64]| -> Vec<Complex64> {
        let scaled: Vec<Complex64> = e.iter().zip(chi).map(|(v, &c)| v * c).collect();
        let gv = toeplitz_matvec(gd, &scaled);
        e.iter().zip(gv).map(|(v, g)| v - g).collect()
    };
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(vec![Complex64::default(); n]);
    }
    let mut x = vec![Complex64::default(); n];
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let mut rho = Complex64::new(1.0, 0.0);
    let mut alpha = Complex64::new(1.0, 0.0);
    let mut omega = Complex64::new(1.0, 0.0);
    let mut v = vec![Complex64::default(); n];
    let mut p = vec![Complex64::default(); n];
    for iter in 0..opts.max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.norm() < 1e-300 {
            return Err(Error::Solver {
                residual: norm(&r) / b_norm,
                iterations: iter,
                context: " (BiCGStab breakdown)".into(),
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        v = apply(&p);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<Complex64> = (0..n).map(|i| r[i] - alpha * v[i]).collect();
        if norm(&s) / b_norm < opts.tol {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return Ok(x);
        }
        let t = apply(&s);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) / b_norm < opts.tol {
            // confirm with the true residual before returning
            let ax = apply(&x);
            let true_res: f64 = (0..n)
                .map(|i| (b[i] - ax[i]).norm_sqr())
                .sum::<f64>()
                .sqrt()
                / b_norm;
            if true_res < opts.tol {
                return Ok(x);
            }
        }
    }
    Err(Error::Solver {
        residual: norm(&r) / b_norm,
        iterations: opts.max_iter,
        context: " (total-field BiCGStab)".into(),
    })
}

/// Matrix-free total-field solve, one BiCGStab run per incidence.
pub fn solve_total_field(gd: &GreenDomain, chi: &ContrastMap, e_inc: &CMat) -> Result<CMat> {
    solve_total_field_with(gd, chi, e_inc, SolveOptions::default())
}

pub fn solve_total_field_with(
    gd: &GreenDomain,
    chi: &ContrastMap,
    e_inc: &CMat,
    opts: SolveOptions,
) -> Result<CMat> {
    if chi.grid != *gd.grid() {
        return Err(Error::argument("contrast map is not on the operator grid"));
    }
    if e_inc.rows != gd.grid().len() {
        return Err(Error::argument("incident field shape mismatch"));
    }
    if chi.values.iter().all(|&c| c == 0.0) {
        return Ok(e_inc.clone());
    }
    let mut e_tot = CMat::zeros(e_inc.rows, e_inc.cols);
    for col in 0..e_inc.cols {
        let e = bicgstab(gd, &chi.values, e_inc.col(col), opts)?;
        e_tot.col_mut(col).copy_from_slice(&e);
    }
    Ok(e_tot)
}

/// Dense direct total-field solve, for grids up to 48 x 48.
pub fn solve_total_field_dense(gd: &GreenDomain, chi: &ContrastMap, e_inc: &CMat) -> Result<CMat> {
    let n = gd.grid().n();
    if n > 48 {
        return Err(Error::argument(format!(
            "dense total-field solve is limited to 48x48 grids, got {n}x{n}"
        )));
    }
    if chi.grid != *gd.grid() {
        return Err(Error::argument("contrast map is not on the operator grid"));
    }
    let count = gd.grid().len();
    let g = gd.dense();
    let mut system = CMat::identity(count);
    for c in 0..count {
        let chi_c = chi.values[c];
        for r in 0..count {
            *system.at_mut(r, c) -= g.at(r, c) * chi_c;
        }
    }
    lu_solve(system, e_inc)
}

// ---------------------------------------------------------------------------
// scattered data and noise
// ---------------------------------------------------------------------------

/// Measured scattered fields, receivers x incidences.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatteredData {
    pub values: CMat,
    pub noise_level: f64,
    pub seed: u64,
}

/// E_sca = G_S diag(chi) E_tot.
pub fn scattered_field(gs: &GreenMeasure, chi: &ContrastMap, e_tot: &CMat) -> Result<ScatteredData> {
    if chi.grid != *gs.grid() {
        return Err(Error::argument("contrast map is not on the operator grid"));
    }
    if e_tot.rows != gs.grid().len() {
        return Err(Error::argument("total field shape mismatch"));
    }
    let mut values = CMat::zeros(gs.receiver_count(), e_tot.cols);
    let mut scaled = vec![Complex64::default(); e_tot.rows];
    for col in 0..e_tot.cols {
        for (s, (e, &c)) in scaled.iter_mut().zip(e_tot.col(col).iter().zip(&chi.values)) {
            *s = e * c;
        }
        let y = gs.matrix().matvec(&scaled);
        values.col_mut(col).copy_from_slice(&y);
    }
    Ok(ScatteredData {
        values,
        noise_level: 0.0,
        seed: 0,
    })
}

/// Add circular complex Gaussian noise rescaled so that
/// ||n||_F / ||data||_F equals `level` exactly.
pub fn add_noise(data: &ScatteredData, level: f64, seed: u64) -> Result<ScatteredData> {
    if !(level >= 0.0) {
        return Err(Error::argument(format!("noise level must be >= 0, got {level}")));
    }
    if level == 0.0 {
        return Ok(ScatteredData {
            values: data.values.clone(),
            noise_level: 0.0,
            seed,
        });
    }
    let data_norm = data.values.frob_norm();
    if data_norm == 0.0 {
        return Err(Error::argument(
            "cannot add relative noise to all-zero scattered data",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let phi = 2.0 * std::f64::consts::PI * u2;
        Complex64::new(r * phi.cos(), r * phi.sin())
    };
    let noise: Vec<Complex64> = (0..data.values.data.len()).map(|_| gauss()).collect();
    let noise_norm = noise.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let scale = level * data_norm / noise_norm;
    let mut out = data.values.clone();
    for (o, n) in out.data.iter_mut().zip(noise) {
        *o += n * scale;
    }
    Ok(ScatteredData {
        values: out,
        noise_level: level,
        seed,
    })
}
