//! `log I_ν(x)` for the orders that show up in vMF normalizers
//! (ν = d/2 − 1, so up to ~2048) and concentrations up to ~1e6.
//!
//! Three regimes:
//! - ν ≥ [`UNIFORM_MIN_ORDER`]: Debye's uniform expansion in ν, valid for
//!   every x > 0.
//! - small ν, x ≤ 1000 + ν²: the ascending power series, summed in scaled
//!   form. All terms are positive, so it is accurate wherever it is used.
//! - small ν, larger x: Hankel's large-argument expansion.

use std::f64::consts::PI;
use std::sync::OnceLock;

use statrs::function::gamma::ln_gamma;

pub const UNIFORM_MIN_ORDER: f64 = 25.0;
const DEBYE_TERMS: usize = 10;
const LN_RESCALE: f64 = 644.7238260383328; // 280 * ln 10
const RESCALE: f64 = 1e-280;

/// Coefficients of the Debye polynomials `u_k(t)`, lowest power first.
fn debye_polynomials() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        // u_{k+1}(t) = ½ t²(1 − t²) u_k'(t) + ⅛ ∫₀ᵗ (1 − 5s²) u_k(s) ds
        let mut polys = vec![vec![1.0]];
        for k in 0..DEBYE_TERMS {
            let u = &polys[k];
            let deg = u.len() + 3;
            let mut next = vec![0.0; deg];
            for (p, &c) in u.iter().enumerate().skip(1) {
                let d = c * p as f64; // coefficient of t^(p-1)
                next[p + 1] += 0.5 * d;
                next[p + 3] -= 0.5 * d;
            }
            for (p, &c) in u.iter().enumerate() {
                next[p + 1] += 0.125 * c / (p + 1) as f64;
                next[p + 3] -= 0.625 * c / (p + 3) as f64;
            }
            while next.last() == Some(&0.0) {
                next.pop();
            }
            polys.push(next);
        }
        polys
    })
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

fn log_iv_uniform(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let s = (1.0 + z * z).sqrt();
    let t = 1.0 / s;
    let eta = s + (z / (1.0 + s)).ln();
    let mut sum = 0.0;
    let mut nu_pow = 1.0;
    for u in debye_polynomials() {
        sum += horner(u, t) / nu_pow;
        nu_pow *= nu;
    }
    nu * eta - 0.5 * (2.0 * PI * nu).ln() - 0.5 * s.ln() + sum.ln()
}

fn log_iv_series(nu: f64, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let log_t0 = nu * (0.5 * x).ln() - ln_gamma(nu + 1.0);
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut log_scale = 0.0;
    let mut k = 0.0f64;
    loop {
        k += 1.0;
        term *= q / (k * (k + nu));
        sum += term;
        if sum > 1e280 {
            sum *= RESCALE;
            term *= RESCALE;
            log_scale += LN_RESCALE;
        }
        // past the peak the terms shrink geometrically
        if term < 1e-17 * sum && k * (k + nu) > q {
            break;
        }
    }
    log_t0 + log_scale + sum.ln()
}

fn log_iv_large_argument(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut k = 1.0f64;
    loop {
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (8.0 * k * x);
        if next.abs() >= term.abs() || next == 0.0 {
            break;
        }
        sum += next;
        term = next;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
        k += 1.0;
    }
    x - 0.5 * (2.0 * PI * x).ln() + sum.ln()
}

/// Natural log of the modified Bessel function of the first kind.
///
/// Domain: `nu ≥ 0`, `x > 0`. Returns NaN outside it.
pub fn log_bessel_iv(nu: f64, x: f64) -> f64 {
    if !(nu >= 0.0 && x > 0.0) {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    if nu >= UNIFORM_MIN_ORDER {
        log_iv_uniform(nu, x)
    } else if x <= 1000.0 + nu * nu {
        log_iv_series(nu, x)
    } else {
        log_iv_large_argument(nu, x)
    }
}
