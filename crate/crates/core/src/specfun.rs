//! Bessel functions J0, J1, Y0, Y1 and the Hankel function of the second
//! kind, the kernel of every Green's-function evaluation in this crate.
//!
//! Small arguments (x <= 20) use the ascending power series accumulated in
//! double-double arithmetic so that the alternating-series cancellation does
//! not eat into the f64 result. Large arguments use the Hankel asymptotic
//! expansion, whose smallest term is below 1e-16 once x > 20.

// Coefficient tables intentionally carry more digits than f64 resolves: the
// extra digits document the exact rational/dd values they were derived from.
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Euler-Mascheroni constant.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Crossover between the power series and the asymptotic expansion.
const SERIES_LIMIT: f64 = 20.0;

// ---------------------------------------------------------------------------
// double-double arithmetic (only what the series need)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    #[inline]
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    fn value(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    fn add(self, other: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, other.hi);
        let (t1, t2) = two_sum(self.lo, other.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }

    #[inline]
    fn mul(self, other: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, other.hi);
        let p2 = p2 + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }

    #[inline]
    fn mul_f64(self, b: f64) -> Dd {
        let (p1, p2) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p1, p2 + self.lo * b);
        Dd { hi, lo }
    }

    #[inline]
    fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let (p1, p2) = two_prod(q1, b);
        // remainder of the first quotient digit, still in double-double
        let (r1, r2) = two_sum(self.hi, -p1);
        let q2 = (r1 + (r2 + self.lo - p2)) / b;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }
    }

    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

// ---------------------------------------------------------------------------
// power series, x <= SERIES_LIMIT
// ---------------------------------------------------------------------------

/// q = x^2 / 4 as a double-double.
#[inline]
fn quarter_square(x: f64) -> Dd {
    let (p1, p2) = two_prod(x, x);
    Dd {
        hi: p1 * 0.25,
        lo: p2 * 0.25,
    }
}

fn j0_series(x: f64) -> f64 {
    let q = quarter_square(x).neg();
    let mut term = Dd::from(1.0);
    let mut sum = term;
    for k in 1..200u32 {
        term = term.mul(q).div_f64((k as f64) * (k as f64));
        sum = sum.add(term);
        if term.hi.abs() < 1e-30 {
            break;
        }
    }
    sum.value()
}

fn j1_series(x: f64) -> f64 {
    let q = quarter_square(x).neg();
    let mut term = Dd::from(1.0);
    let mut sum = term;
    for k in 1..200u32 {
        term = term.mul(q).div_f64((k as f64) * (k as f64 + 1.0));
        sum = sum.add(term);
        if term.hi.abs() < 1e-30 {
            break;
        }
    }
    sum.mul_f64(0.5 * x).value()
}

fn y0_series(x: f64) -> f64 {
    let q = quarter_square(x).neg();
    // S = sum_{k>=1} (-1)^{k+1} H_k (x^2/4)^k / (k!)^2 = -sum t_k H_k
    let mut term = Dd::from(1.0);
    let mut harmonic = Dd::from(0.0);
    let mut s = Dd::from(0.0);
    for k in 1..200u32 {
        term = term.mul(q).div_f64((k as f64) * (k as f64));
        harmonic = harmonic.add(Dd::from(1.0).div_f64(k as f64));
        s = s.add(term.mul(harmonic).neg());
        if term.hi.abs() < 1e-30 {
            break;
        }
    }
    let log_part = ((x / 2.0).ln() + EULER_GAMMA) * j0_series(x);
    core::f64::consts::FRAC_2_PI * (log_part + s.value())
}

fn y1_series(x: f64) -> f64 {
    let q = quarter_square(x).neg();
    // S = sum_{k>=0} (-1)^k (H_k + H_{k+1}) (x^2/4)^k / (k! (k+1)!)
    let mut term = Dd::from(1.0);
    let mut harmonic = Dd::from(0.0); // H_k
    let mut s = Dd::from(1.0); // k = 0 contribution: H_0 + H_1 = 1
    for k in 1..200u32 {
        term = term.mul(q).div_f64((k as f64) * (k as f64 + 1.0));
        harmonic = harmonic.add(Dd::from(1.0).div_f64(k as f64));
        let h_pair = harmonic.add(harmonic).add(Dd::from(1.0).div_f64(k as f64 + 1.0));
        s = s.add(term.mul(h_pair));
        if term.hi.abs() < 1e-30 {
            break;
        }
    }
    let log_part = ((x / 2.0).ln() + EULER_GAMMA) * j1_series(x);
    core::f64::consts::FRAC_2_PI * log_part
        - core::f64::consts::FRAC_2_PI / x
        - s.mul_f64(x / (2.0 * core::f64::consts::PI)).value()
}

// ---------------------------------------------------------------------------
// Hankel asymptotic expansion, x > SERIES_LIMIT
// ---------------------------------------------------------------------------

/// Modulus series P(nu, x), Q(nu, x) of the Hankel expansion, summed to the
/// smallest term (far below 1e-16 for x > 20).
fn asymptotic_pq(order: u32, x: f64) -> (f64, f64) {
    let four_nu2 = 4.0 * (order as f64) * (order as f64);
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a: f64 = 1.0; // a_k(nu) / x^k
    let mut prev = f64::INFINITY;
    for k in 0..40u32 {
        let mag = a.abs();
        if mag >= prev {
            break;
        }
        prev = mag;
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sign * a;
        } else {
            q += sign * a;
        }
        let m = 2.0 * k as f64 + 1.0;
        a *= (four_nu2 - m * m) / (8.0 * (k as f64 + 1.0) * x);
        if mag < 1e-19 {
            break;
        }
    }
    (p, q)
}

/// Phase constants (2*nu + 1) * pi / 4 split in two doubles.
#[allow(clippy::approx_constant)] // double-double split; the high word IS pi/4
fn phase_shift(order: u32) -> (f64, f64) {
    match order {
        0 => (7.853981633974483e-1, 3.061616997868383e-17),
        _ => (2.356194490192345e0, 9.1848509936051484e-17),
    }
}

fn j_asymptotic(order: u32, x: f64) -> f64 {
    let (p, q) = asymptotic_pq(order, x);
    let (c_hi, c_lo) = phase_shift(order);
    let chi = (x - c_hi) - c_lo;
    (2.0 / (core::f64::consts::PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

fn y_asymptotic(order: u32, x: f64) -> f64 {
    let (p, q) = asymptotic_pq(order, x);
    let (c_hi, c_lo) = phase_shift(order);
    let chi = (x - c_hi) - c_lo;
    (2.0 / (core::f64::consts::PI * x)).sqrt() * (p * chi.sin() + q * chi.cos())
}

// ---------------------------------------------------------------------------
// public surface
// ---------------------------------------------------------------------------

fn check_order(order: u32) -> Result<()> {
    if order > 1 {
        return Err(Error::argument(format!(
            "unsupported Bessel order {order}; only 0 and 1 are implemented"
        )));
    }
    Ok(())
}

/// J0(x), assuming x >= 0.
pub fn j0(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x <= SERIES_LIMIT {
        j0_series(x)
    } else {
        j_asymptotic(0, x)
    }
}

/// J1(x), assuming x >= 0.
pub fn j1(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x <= SERIES_LIMIT {
        j1_series(x)
    } else {
        j_asymptotic(1, x)
    }
}

/// Y0(x), assuming x > 0.
pub fn y0(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x <= SERIES_LIMIT {
        y0_series(x)
    } else {
        y_asymptotic(0, x)
    }
}

/// Y1(x), assuming x > 0.
pub fn y1(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x <= SERIES_LIMIT {
        y1_series(x)
    } else {
        y_asymptotic(1, x)
    }
}

/// Bessel function of the first kind, orders 0 and 1.
pub fn bessel_j(order: u32, x: f64) -> Result<f64> {
    check_order(order)?;
    if !(x >= 0.0) {
        return Err(Error::argument(format!(
            "bessel_j requires x >= 0, got {x}"
        )));
    }
    Ok(if order == 0 { j0(x) } else { j1(x) })
}

/// Bessel function of the second kind, orders 0 and 1.
pub fn bessel_y(order: u32, x: f64) -> Result<f64> {
    check_order(order)?;
    if !(x > 0.0) {
        return Err(Error::argument(format!(
            "bessel_y requires x > 0 (logarithmic singularity at the origin), got {x}"
        )));
    }
    Ok(if order == 0 { y0(x) } else { y1(x) })
}

/// Hankel function of the second kind, H2_nu(x) = J_nu(x) - j Y_nu(x).
pub fn hankel2(order: u32, x: f64) -> Result<Complex64> {
    check_order(order)?;
    if !(x > 0.0) {
        return Err(Error::argument(format!(
            "hankel2 requires x > 0, got {x}"
        )));
    }
    Ok(Complex64::new(bessel_j(order, x)?, -bessel_y(order, x)?))
}

/// H2_0(x) without argument checks, for inner kernel loops.
#[inline]
pub fn hankel2_0(x: f64) -> Complex64 {
    Complex64::new(j0(x), -y0(x))
}

/// H2_1(x) without argument checks, for inner kernel loops.
#[inline]
pub fn hankel2_1(x: f64) -> Complex64 {
    Complex64::new(j1(x), -y1(x))
}
