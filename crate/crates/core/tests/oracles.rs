//! Numerical oracles: the library's special functions, Green's operators,
//! and forward solver checked against independent quadrature and analytic
//! series references.

mod common;

use common::*;
use lmn_isp::forward::{
    green_domain, green_measure, incident_fields, scattered_field, solve_total_field,
    toeplitz_matvec,
};
use lmn_isp::linalg::cholesky_solve;
use lmn_isp::linop::{cg_solve_normal, BornOperator};
use lmn_isp::scene::{ContrastMap, Grid, Scenario, SensorRing};
use lmn_isp::specfun::{bessel_j, bessel_y};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 1000 points spanning (0, 100]; spacing avoids landing on Bessel roots.
fn sample_points() -> Vec<f64> {
    (1..=1000).map(|i| 0.1 * i as f64).collect()
}

#[test]
fn bessel_match_quadrature_oracle() {
    let mut worst = 0.0f64;
    for x in sample_points() {
        for n in [0u32, 1] {
            let rj = (bessel_j(n, x).unwrap() - oracle_j(n, x)).abs() / oracle_j(n, x).abs();
            let ry = (bessel_y(n, x).unwrap() - oracle_y(n, x)).abs() / oracle_y(n, x).abs();
            worst = worst.max(rj).max(ry);
        }
    }
    assert!(worst < 1e-10, "worst relative error {worst:.3e}");
}

#[test]
fn bessel_wronskian() {
    let mut worst = 0.0f64;
    for x in sample_points() {
        let w = bessel_j(1, x).unwrap() * bessel_y(0, x).unwrap()
            - bessel_j(0, x).unwrap() * bessel_y(1, x).unwrap();
        let expect = 2.0 / (std::f64::consts::PI * x);
        worst = worst.max(((w - expect) / expect).abs());
    }
    assert!(worst < 1e-9, "worst Wronskian error {worst:.3e}");
}

#[test]
fn green_domain_matches_cell_quadrature() {
    let grid = Grid::new(2.0, 24).unwrap();
    let k0 = Scenario::reference(24, 8, 0).unwrap().wavenumber();
    let gd = green_domain(&grid, k0).unwrap();
    let h = grid.cell_size();

    // Off-diagonal entries over a spread of offsets.
    let mut worst_adjacent = 0.0f64;
    let mut worst_far = 0.0f64;
    for (di, dj) in [
        (1i64, 0i64),
        (0, 1),
        (1, 1),
        (2, 0),
        (2, 2),
        (3, 1),
        (4, 0),
        (4, 3),
        (5, 5),
        (8, 2),
        (10, 10),
        (15, 0),
        (17, 11),
        (23, 23),
    ] {
        let entry = gd.entry_offset(di, dj);
        let oracle = cell_integral(k0, h, (0.0, 0.0), (di as f64 * h, dj as f64 * h), 32);
        let rel = (entry - oracle).norm() / oracle.norm();
        let far = di.abs().max(dj.abs()) > 3;
        if far {
            worst_far = worst_far.max(rel);
        } else {
            worst_adjacent = worst_adjacent.max(rel);
        }
    }
    assert!(worst_adjacent < 1e-3, "adjacent {worst_adjacent:.3e}");
    assert!(worst_far < 1e-6, "far {worst_far:.3e}");

    // Self term against the polar quadrature around the singularity.
    let self_entry = gd.entry_offset(0, 0);
    let oracle = self_integral(k0, h);
    let rel = (self_entry - oracle).norm() / oracle.norm();
    assert!(rel < 1e-3, "self term {rel:.3e}");
}

#[test]
fn green_measure_matches_cell_quadrature() {
    let grid = Grid::new(2.0, 24).unwrap();
    let scenario = Scenario::reference(24, 8, 0).unwrap();
    let k0 = scenario.wavenumber();
    let gs = green_measure(&grid, &scenario.rx_ring, k0).unwrap();
    let centers = grid.centers();
    let positions = [0usize, 7, 19, 31];
    let cells = [0usize, 24 * 12 + 12, 24 * 23 + 5, 24 * 24 - 1];
    let mut worst = 0.0f64;
    for &q in &positions {
        let rx = scenario.rx_ring.position(q);
        for &c in &cells {
            let entry = gs.matrix().at(q, c);
            let oracle = cell_integral(k0, grid.cell_size(), centers[c], rx, 32);
            worst = worst.max((entry - oracle).norm() / oracle.norm());
        }
    }
    assert!(worst < 1e-6, "worst G_S entry error {worst:.3e}");
}

/// Pin the test-side cylinder series itself against an externally computed
/// reference value (independent Bessel implementation) at one tx/rx pair.
#[test]
fn cylinder_series_reference_value() {
    let k0 = Scenario::reference(64, 8, 0).unwrap().wavenumber();
    let rx = (3.0 * 0.7f64.cos(), 3.0 * 0.7f64.sin());
    let got = cylinder_scattered(k0, 0.25, 2.0, (6.0, 0.0), rx, 35);
    let expect = Complex64::new(0.0026865854638932272, 4.4758512063584e-05);
    assert!(
        (got - expect).norm() / expect.norm() < 1e-10,
        "series value {got} vs reference {expect}"
    );
}

#[test]
fn forward_solver_matches_cylinder_series() {
    let err64 = cylinder_error(64);
    assert!(err64 < 0.03, "64x64 cylinder error {err64:.4}");
    let err32 = cylinder_error(32);
    assert!(err32 < 0.06, "32x32 cylinder error {err32:.4}");
}

#[test]
fn born_approximation_holds_for_weak_scatterer() {
    let scenario = Scenario::reference(32, 8, 0).unwrap();
    let k0 = scenario.wavenumber();
    let grid = &scenario.forward_grid;
    let mut map = ContrastMap::zeros(grid.clone());
    for (i, &(x, y)) in grid.centers().iter().enumerate() {
        if x * x + y * y <= 0.25 * 0.25 {
            map.values[i] = 0.01;
        }
    }
    let gd = green_domain(grid, k0).unwrap();
    let gs = green_measure(grid, &scenario.rx_ring, k0).unwrap();
    let e_inc = incident_fields(grid, &scenario.tx_ring, k0).unwrap();
    let e_tot = solve_total_field(&gd, &map, &e_inc).unwrap();
    let full = scattered_field(&gs, &map, &e_tot).unwrap();
    let born = scattered_field(&gs, &map, &e_inc).unwrap();
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (a, b) in born.values.data.iter().zip(&full.values.data) {
        num += (a - b).norm_sqr();
        den += b.norm_sqr();
    }
    let rel = (num / den).sqrt();
    assert!(rel < 0.02, "Born vs full MoM deviation {rel:.4}");
}

#[test]
fn toeplitz_matvec_matches_dense() {
    let grid = Grid::new(2.0, 12).unwrap();
    let k0 = Scenario::reference(12, 8, 0).unwrap().wavenumber();
    let gd = green_domain(&grid, k0).unwrap();
    let dense = gd.dense();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v: Vec<Complex64> = (0..144)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let fast = toeplitz_matvec(&gd, &v);
    let slow = dense.matvec(&v);
    let num: f64 = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = slow.iter().map(|z| z.norm_sqr()).sum();
    assert!((num / den).sqrt() < 1e-10);
}


#[test]
fn cg_normal_solve_matches_dense_direct() {
    let mut scenario = Scenario::reference(20, 10, 0).unwrap();
    scenario.tx_ring = SensorRing::new(8, 12.0).unwrap();
    scenario.rx_ring = SensorRing::new(16, 6.0).unwrap();
    let mut a = BornOperator::for_scenario(&scenario).unwrap();
    a.cache_gram();
    let n = a.unknowns();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let chi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
    let data = a.apply(&chi).unwrap();
    let lambda = 1e-3 * a.normal_scale();
    let (cg, _) = cg_solve_normal(&a, lambda, &data, &vec![0.0; n], 1e-12, 4000).unwrap();

    // Dense (Re(A^H A) + lambda I) chi = Re(A^H y) by Cholesky.
    let mut m = vec![0.0; n * n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let col = a.normal_apply(&e).unwrap();
        for r in 0..n {
            m[r * n + c] = col[r] + if r == c { lambda } else { 0.0 };
        }
    }
    let direct = cholesky_solve(&m, n, &a.adjoint(&data).unwrap()).unwrap();
    let num: f64 = cg.iter().zip(&direct).map(|(p, q)| (p - q) * (p - q)).sum();
    let den: f64 = direct.iter().map(|v| v * v).sum();
    assert!((num / den).sqrt() < 1e-8);
}

#[test]
fn adjoint_identity() {
    let scenario = Scenario::reference(16, 10, 3).unwrap();
    let a = BornOperator::for_scenario(&scenario).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..a.unknowns()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<Complex64> = (0..a.measurements())
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let lhs: f64 = a
        .apply(&x)
        .unwrap()
        .iter()
        .zip(&y)
        .map(|(p, q)| (p.conj() * q).re)
        .sum();
    let rhs: f64 = x.iter().zip(&a.adjoint(&y).unwrap()).map(|(p, q)| p * q).sum();
    let scale: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(((lhs - rhs) / scale).abs() < 1e-12);
}
