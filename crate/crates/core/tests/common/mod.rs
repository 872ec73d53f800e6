//! Shared test-side oracles: quadrature-based Bessel functions, cell-integral
//! Green's kernels, and the analytic line-source/dielectric-cylinder series.
//! Everything here is derived independently of the library's numerics.

#![allow(dead_code)]

use num_complex::Complex64;
use std::f64::consts::PI;

const J: Complex64 = Complex64::new(0.0, 1.0);

// ---------------------------------------------------------------------------
// Gauss–Legendre quadrature
// ---------------------------------------------------------------------------

/// Quadrature nodes and their weights.
type Rule = (Vec<f64>, Vec<f64>);

/// Memoized nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> Rule {
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard.entry(n).or_insert_with(|| compute_gauss_legendre(n)).clone()
}

/// Newton iteration on the Legendre polynomial from the Chebyshev-like guess.
fn compute_gauss_legendre(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Evaluate P_n and P_n' by the three-term recurrence.
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0f64, x);
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrate f over [a, b] with an n-point Gauss–Legendre rule.
pub fn gl_integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| wi * f(mid + half * xi))
        .sum::<f64>()
        * half
}

// ---------------------------------------------------------------------------
// quadrature Bessel oracles (integral representations)
// ---------------------------------------------------------------------------

/// Bessel's integral: J_n(x) = (1/pi) ∫_0^pi cos(n t - x sin t) dt.
pub fn oracle_j(n: u32, x: f64) -> f64 {
    let nf = n as f64;
    gl_integrate(|t| (nf * t - x * t.sin()).cos(), 0.0, PI, 600) / PI
}

/// Schläfli/Heine representation:
/// Y_n(x) = (1/pi) ∫_0^pi sin(x sin t - n t) dt
///        - (1/pi) ∫_0^inf [e^{n t} + (-1)^n e^{-n t}] e^{-x sinh t} dt.
pub fn oracle_y(n: u32, x: f64) -> f64 {
    let nf = n as f64;
    let osc = gl_integrate(|t| (x * t.sin() - nf * t).sin(), 0.0, PI, 600) / PI;
    // The tail integrand dies once x sinh t dominates; cut where the
    // exponent drops 60 below its maximum.
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    let cut = ((nf + 60.0) / x + 1.0).max(2.0).asinh() + 1.0;
    let tail = gl_integrate(
        |t| ((nf * t).exp() + sign * (-nf * t).exp()) * (-x * t.sinh()).exp(),
        0.0,
        cut,
        600,
    ) / PI;
    osc - tail
}

// ---------------------------------------------------------------------------
// higher-order Bessel sequences (recurrences, independent of the library)
// ---------------------------------------------------------------------------

/// J_0..J_nmax by Miller's downward recurrence, normalized with the
/// Neumann identity J_0 + 2 J_2 + 2 J_4 + ... = 1.
pub fn jn_seq(nmax: usize, x: f64) -> Vec<f64> {
    let start = nmax + 20 + (1.5 * x) as usize;
    let mut high = 0.0f64;
    let mut cur = 1e-30f64;
    let mut out = vec![0.0; nmax + 1];
    let mut norm = 0.0f64;
    for k in (0..=start).rev() {
        let next = 2.0 * (k as f64 + 1.0) / x * cur - high;
        high = cur;
        cur = next;
        if k <= nmax {
            out[k] = cur;
        }
        if k > 0 && k.is_multiple_of(2) {
            norm += 2.0 * cur;
        }
        // Rescale to dodge overflow for large start orders.
        if cur.abs() > 1e250 {
            high /= 1e250;
            cur /= 1e250;
            norm /= 1e250;
            for v in out.iter_mut() {
                *v /= 1e250;
            }
        }
    }
    norm += cur;
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// Y_0..Y_nmax by the (upward-stable) recurrence from the quadrature seeds.
pub fn yn_seq(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    out[0] = oracle_y(0, x);
    if nmax >= 1 {
        out[1] = oracle_y(1, x);
    }
    for k in 1..nmax {
        out[k + 1] = 2.0 * k as f64 / x * out[k] - out[k - 1];
    }
    out
}

/// H^(2)_0..H^(2)_nmax = J_n - j Y_n.
pub fn hn2_seq(nmax: usize, x: f64) -> Vec<Complex64> {
    let j = jn_seq(nmax, x);
    let y = yn_seq(nmax, x);
    j.iter()
        .zip(&y)
        .map(|(&a, &b)| Complex64::new(a, -b))
        .collect()
}

// ---------------------------------------------------------------------------
// Green's-kernel cell integrals (quadrature oracle)
// ---------------------------------------------------------------------------

fn h02(x: f64) -> Complex64 {
    Complex64::new(oracle_j(0, x), -oracle_y(0, x))
}

/// k0^2 (-j/4) ∫_disk H0^(2)(k0 |r_obs - r'|) dA' over the equal-area disk
/// of radius a = h/√π centered at `cell`, by a polar rule: Gauss–Legendre in
/// radius, trapezoid (spectrally accurate for a periodic integrand) in
/// angle. This validates the closed-form analytic integration of the
/// discretization; the disk-vs-square modeling error is covered by the
/// forward-solver physics test instead.
pub fn cell_integral(k0: f64, h: f64, cell: (f64, f64), obs: (f64, f64), order: usize) -> Complex64 {
    let a = h / PI.sqrt();
    let (rn, rw) = gauss_legendre(order);
    let n_ang = 4 * order;
    let mut acc = Complex64::default();
    for (ri, rwi) in rn.iter().zip(&rw) {
        let rho = 0.5 * a * (ri + 1.0);
        for p in 0..n_ang {
            let theta = 2.0 * PI * p as f64 / n_ang as f64;
            let sx = cell.0 + rho * theta.cos();
            let sy = cell.1 + rho * theta.sin();
            let d = ((obs.0 - sx).powi(2) + (obs.1 - sy).powi(2)).sqrt();
            acc += rwi * rho * h02(k0 * d);
        }
    }
    acc * (0.5 * a) * (2.0 * PI / n_ang as f64) * k0 * k0 * (-J * 0.25)
}

/// Self entry: k0^2 (-j/4) ∫_disk H0^(2)(k0 rho) dA' with the observation
/// point at the disk center; the closed form's "- 1" arises from the lower
/// integration limit, so no extra subtraction appears here. The substitution
/// rho = a t^2 tames the logarithmic singularity of Y0 at the origin.
pub fn self_integral(k0: f64, h: f64) -> Complex64 {
    let a = h / PI.sqrt();
    let (tn, tw) = gauss_legendre(128);
    let mut acc = Complex64::default();
    for (ti, twi) in tn.iter().zip(&tw) {
        let t = 0.5 * (ti + 1.0);
        let rho = a * t * t;
        // integrand rho * H0 with d(rho) = 2 a t dt
        acc += twi * 0.5 * h02(k0 * rho) * rho * 2.0 * a * t;
    }
    acc * 2.0 * PI * k0 * k0 * (-J * 0.25)
}

// ---------------------------------------------------------------------------
// analytic dielectric cylinder (TM line source)
// ---------------------------------------------------------------------------

/// Relative Frobenius error between the library solver's receiver data and
/// the analytic cylinder series (eps_r = 2, radius 0.25 m, reference
/// scenario), over every transmitter/receiver pair. The cylinder is
/// rasterized with 8x8-supersampled area weighting so the comparison
/// measures solver physics rather than staircase error.
pub fn cylinder_error(forward_n: usize) -> f64 {
    use lmn_isp::forward::{
        green_domain, green_measure, incident_fields, scattered_field, solve_total_field,
    };
    use lmn_isp::scene::{ContrastMap, Scenario};

    let scenario = Scenario::reference(forward_n, 8, 0).unwrap();
    let k0 = scenario.wavenumber();
    let grid = &scenario.forward_grid;
    let eps_r = 2.0;
    let radius = 0.25;

    let mut map = ContrastMap::zeros(grid.clone());
    let h = grid.cell_size();
    for (i, &(x, y)) in grid.centers().iter().enumerate() {
        let mut inside = 0usize;
        for sx in 0..8 {
            for sy in 0..8 {
                let px = x + h * ((sx as f64 + 0.5) / 8.0 - 0.5);
                let py = y + h * ((sy as f64 + 0.5) / 8.0 - 0.5);
                if px * px + py * py <= radius * radius {
                    inside += 1;
                }
            }
        }
        map.values[i] = (eps_r - 1.0) * inside as f64 / 64.0;
    }
    let gd = green_domain(grid, k0).unwrap();
    let gs = green_measure(grid, &scenario.rx_ring, k0).unwrap();
    let e_inc = incident_fields(grid, &scenario.tx_ring, k0).unwrap();
    let e_tot = solve_total_field(&gd, &map, &e_inc).unwrap();
    let data = scattered_field(&gs, &map, &e_tot).unwrap();

    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for t in 0..scenario.tx_ring.count() {
        let tx = scenario.tx_ring.position(t);
        for q in 0..scenario.rx_ring.count() {
            let rx = scenario.rx_ring.position(q);
            let exact = cylinder_scattered(k0, radius, eps_r, tx, rx, 35);
            num += (data.values.at(q, t) - exact).norm_sqr();
            den += exact.norm_sqr();
        }
    }
    (num / den).sqrt()
}

/// The pinned toy instance for unrolled gradient checks: 8x8 inversion
/// grid, 2 incidences, 4 receivers, K = 2, D = 3, 4 channels, with the
/// input scale calibrated so ReLU preactivations sit far from their kinks
/// (required for a meaningful finite-difference comparison at step 1e-4).
pub fn toy_grad_setup(
    use_bn: bool,
) -> (
    lmn_isp::linop::BornOperator,
    lmn_isp::forward::ScatteredData,
    lmn_isp::scene::ContrastMap,
    lmn_isp::lmn::LmnModel,
) {
    use lmn_isp::linalg::CMat;
    use lmn_isp::linop::BornOperator;
    use lmn_isp::scene::{ContrastMap, Scenario, SensorRing};
    use rand::{Rng, SeedableRng};

    let mut scenario = Scenario::reference(16, 8, 0).unwrap();
    scenario.tx_ring = SensorRing::new(2, 12.0).unwrap();
    scenario.rx_ring = SensorRing::new(4, 6.0).unwrap();
    let mut a = BornOperator::for_scenario(&scenario).unwrap();
    a.cache_gram();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let chi: Vec<f64> = (0..a.unknowns()).map(|_| rng.gen_range(0.0..0.3)).collect();
    let label = ContrastMap::from_values(a.grid().clone(), chi.clone()).unwrap();
    let yv = a.apply(&chi).unwrap();
    let mut values = CMat::zeros(a.receivers(), a.incidences());
    values.data.copy_from_slice(&yv);
    let data = lmn_isp::forward::ScatteredData {
        values,
        noise_level: 0.0,
        seed: 0,
    };
    let mut model = lmn_isp::lmn::LmnModel::new(3, 4, use_bn, 2, 13).unwrap();
    let sample = lmn_isp::train::Sample {
        label: label.clone(),
        data: data.clone(),
    };
    lmn_isp::train::calibrate_input_scale(&mut model, &a, std::slice::from_ref(&sample)).unwrap();
    (a, data, label, model)
}

/// Scattered field at `rx` for a unit line source at `tx` illuminating a
/// homogeneous cylinder (radius a, relative permittivity eps_r) centered at
/// the origin, from the cylindrical-harmonics series. The incident-field
/// normalization matches the solver: E_inc = (-j/4) H0^(2)(k0 |r - r_tx|).
pub fn cylinder_scattered(
    k0: f64,
    a: f64,
    eps_r: f64,
    tx: (f64, f64),
    rx: (f64, f64),
    mmax: usize,
) -> Complex64 {
    let kd = k0 * eps_r.sqrt();
    let rho_s = (tx.0 * tx.0 + tx.1 * tx.1).sqrt();
    let phi_s = tx.1.atan2(tx.0);
    let rho_r = (rx.0 * rx.0 + rx.1 * rx.1).sqrt();
    let phi_r = rx.1.atan2(rx.0);

    // Order mmax+1 so that derivatives via J_{m-1} - J_{m+1} are available.
    let top = mmax + 1;
    let j0a = jn_seq(top + 1, k0 * a);
    let jda = jn_seq(top + 1, kd * a);
    let h0a = hn2_seq(top + 1, k0 * a);
    let h_rx = hn2_seq(top, k0 * rho_r);
    let h_tx = hn2_seq(top, k0 * rho_s);

    let djr = |seq: &[f64], m: usize| -> f64 {
        if m == 0 {
            -seq[1]
        } else {
            0.5 * (seq[m - 1] - seq[m + 1])
        }
    };
    let dhc = |seq: &[Complex64], m: usize| -> Complex64 {
        if m == 0 {
            -seq[1]
        } else {
            0.5 * (seq[m - 1] - seq[m + 1])
        }
    };

    let mut total = Complex64::default();
    for m in 0..=mmax {
        let jp0 = djr(&j0a, m);
        let jpd = djr(&jda, m);
        let hp0 = dhc(&h0a, m);
        // Continuity of E_z and dE_z/drho at rho = a.
        let num = kd * jpd * j0a[m] - k0 * jp0 * jda[m];
        let den = k0 * hp0 * jda[m] - kd * jpd * h0a[m];
        let am = num / den;
        let factor = if m == 0 { 1.0 } else { 2.0 };
        total += factor * am * h_rx[m] * h_tx[m] * (m as f64 * (phi_r - phi_s)).cos();
    }
    total * (-J * 0.25)
}
