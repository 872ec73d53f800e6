//! Classical linear reconstructions: Born-approximation inversion via
//! Tikhonov-regularized conjugate gradients and via truncated singular value
//! decomposition, plus the physical-range projection shared by all
//! reconstructors.

use crate::error::{Error, Result};
use crate::forward::ScatteredData;
use crate::linalg::jacobi_svd;
use crate::linop::{cg_solve_normal, BornOperator};
use crate::scene::ContrastMap;
use num_complex::Complex64;

/// Default upper clamp for the contrast (eps_r = 2.4).
pub const CHI_MAX_DEFAULT: f64 = 1.4;

/// Default CG stopping tolerance for the baseline solves.
pub const BASELINE_CG_TOL: f64 = 1e-10;

/// Default CG iteration cap for the baseline solves.
pub const BASELINE_CG_MAX_ITER: usize = 2000;

/// Elementwise clamp to the physical contrast range [0, chi_max].
pub fn project_physical(chi: &[f64], chi_max: f64) -> Result<Vec<f64>> {
    if !(chi_max > 0.0) {
        return Err(Error::argument(format!(
            "chi_max must be > 0, got {chi_max}"
        )));
    }
    Ok(chi.iter().map(|&v| v.clamp(0.0, chi_max)).collect())
}

fn flatten_data(a: &BornOperator, data: &ScatteredData) -> Result<Vec<Complex64>> {
    if data.values.rows != a.receivers() || data.values.cols != a.incidences() {
        return Err(Error::argument(format!(
            "data is {}x{}, operator expects {}x{}",
            data.values.rows,
            data.values.cols,
            a.receivers(),
            a.incidences()
        )));
    }
    // Column-major receivers x incidences flattens to the stacked
    // per-incidence measurement vector the operator uses.
    Ok(data.values.data.clone())
}

/// Born-approximation reconstruction by Tikhonov-regularized CG on the
/// normal equations, followed by the physical-range projection.
pub fn ba_tikhonov(a: &BornOperator, data: &ScatteredData, lambda: f64) -> Result<ContrastMap> {
    let y = flatten_data(a, data)?;
    let z = vec![0.0; a.unknowns()];
    let (chi, _) = cg_solve_normal(a, lambda, &y, &z, BASELINE_CG_TOL, BASELINE_CG_MAX_ITER)?;
    let projected = project_physical(&chi, CHI_MAX_DEFAULT)?;
    ContrastMap::from_values(a.grid().clone(), projected)
}

/// Born-approximation reconstruction by a rank-truncated pseudo-inverse of
/// the dense Born matrix, followed by the physical-range projection.
pub fn ba_tsvd(a: &BornOperator, data: &ScatteredData, rank: usize) -> Result<ContrastMap> {
    let y = flatten_data(a, data)?;
    let max_rank = a.measurements().min(a.unknowns());
    if rank == 0 || rank > max_rank {
        return Err(Error::argument(format!(
            "rank must be in 1..={max_rank}, got {rank}"
        )));
    }
    let dense = a.dense()?;
    let svd = jacobi_svd(&dense)?;
    let n = a.unknowns();
    let mut chi = vec![0.0f64; n];
    for k in 0..rank {
        if svd.s[k] == 0.0 {
            break;
        }
        let mut coeff = Complex64::default();
        for (u, yi) in svd.u.col(k).iter().zip(&y) {
            coeff += u.conj() * yi;
        }
        coeff /= svd.s[k];
        for (c, v) in chi.iter_mut().zip(svd.v.col(k)) {
            *c += (coeff * v).re;
        }
    }
    let projected = project_physical(&chi, CHI_MAX_DEFAULT)?;
    ContrastMap::from_values(a.grid().clone(), projected)
}

/// Pick a Tikhonov weight by grid search: seven log-spaced multiples of the
/// operator's normal-matrix scale, scored by relative permittivity error
/// against a known validation contrast.
pub fn select_lambda(
    a: &BornOperator,
    data: &ScatteredData,
    truth: &ContrastMap,
) -> Result<f64> {
    if truth.grid != *a.grid() {
        return Err(Error::argument(
            "validation contrast is not on the operator grid",
        ));
    }
    let scale = a.normal_scale();
    let mut best = (f64::INFINITY, scale);
    for e in -4..=2 {
        let lambda = scale * 10f64.powi(e);
        let rec = ba_tikhonov(a, data, lambda)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (&r, &t) in rec.values.iter().zip(&truth.values) {
            num += (r - t) * (r - t);
            den += (t + 1.0) * (t + 1.0);
        }
        let score = (num / den).sqrt();
        if score < best.0 {
            best = (score, lambda);
        }
    }
    Ok(best.1)
}
