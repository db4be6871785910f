//! Pairwise probability from squared embedding distance.
//!
//! For two points at squared Euclidean distance `d2` in an `n`-dimensional
//! embedding, the pair statistic follows an F(1, n) distribution, so
//!
//! ```text
//! P(d2, n) = I_x(1/2, n/2),   x = d2 / (d2 + n)
//! ```
//!
//! with `I_x` the regularized incomplete beta function. Two forward paths are
//! provided: a continued-fraction evaluation accurate to ~1e-10
//! ([`f_cdf_exact`], the oracle) and a closed-form Laplace approximation of
//! the equivalent hypergeometric form ([`f_cdf_laplace`]). The gradient with
//! respect to `d2` is the exact beta density composed with `dx/dd2`, so the
//! backward path never differentiates through the approximation.

use crate::error::{DenError, Result};
use statrs::function::gamma::ln_gamma;

/// Beta-function parameter `a` fixed by the F(1, n) statistic.
const BETA_A: f64 = 0.5;

/// Squared-distance floor used inside gradient evaluation; at d2 = 0 the
/// x^(a-1) factor diverges for a = 1/2.
pub const GRAD_D2_MIN: f64 = 1e-8;

/// The Laplace path is within 2% relative error of the oracle only for
/// x <= `LAPLACE_X_MAX` and n <= `LAPLACE_N_MAX` (validated empirically);
/// outside that region [`f_cdf_laplace`] falls back to [`f_cdf_exact`].
pub const LAPLACE_X_MAX: f64 = 0.84;
pub const LAPLACE_N_MAX: usize = 8;

fn check_domain(d2: f64, n: usize) -> Result<()> {
    if d2 < 0.0 || d2.is_nan() {
        return Err(DenError::Numerical(format!(
            "squared distance must be nonnegative, got {d2}"
        )));
    }
    if n < 1 {
        return Err(DenError::Numerical(
            "embedding dimension must be >= 1".into(),
        ));
    }
    Ok(())
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta (Lentz's algorithm).
fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;

    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;

        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;

        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b) to ~1e-10 absolute accuracy.
fn betainc_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    // Continued fraction converges fast only below the symmetry point.
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cont_frac(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cont_frac(b, a, 1.0 - x) / b
    }
}

/// Oracle forward path: I_x(1/2, n/2) with x = d2/(d2+n), via continued
/// fraction.
pub fn f_cdf_exact(d2: f64, n: usize) -> Result<f64> {
    check_domain(d2, n)?;
    let nf = n as f64;
    let x = d2 / (d2 + nf);
    Ok(betainc_reg(BETA_A, nf / 2.0, x))
}

/// Laplace approximation of 2F1(aa, bb; cc; x) via its Euler integral,
/// with the gamma prefactor replaced by its Stirling form so the leading
/// errors cancel. Requires cc > bb > 0. Returns None when the stationary
/// point leaves (0, 1) or the curvature is not positive.
fn hyp2f1_laplace(aa: f64, bb: f64, cc: f64, x: f64) -> Option<f64> {
    // Stationary point of h(y) = bb ln y + (cc-bb) ln(1-y) - aa ln(1-xy)
    // solves x(cc-aa) y^2 + (x(aa-bb) - cc) y + bb = 0.
    let tau = x * (aa - bb) - cc;
    let disc = tau * tau - 4.0 * x * (cc - aa) * bb;
    if disc < 0.0 {
        return None;
    }
    let y = 2.0 * bb / (disc.sqrt() - tau);
    if !(0.0..1.0).contains(&y) || y == 0.0 {
        return None;
    }
    let h2 = bb / (y * y) + (cc - bb) / ((1.0 - y) * (1.0 - y))
        - aa * x * x / ((1.0 - x * y) * (1.0 - x * y));
    if h2 <= 0.0 {
        return None;
    }
    let prefactor = cc.powf(cc - 0.5) / (bb.powf(bb - 0.5) * (cc - bb).powf(cc - bb - 0.5));
    let core = y.powf(bb) * (1.0 - y).powf(cc - bb) * (1.0 - x * y).powf(-aa) / (y * (1.0 - y));
    Some(prefactor * core / h2.sqrt())
}

/// Approximate forward path through the hypergeometric identity
/// B(x; a, b) = 2F1(a, 1-b; a+1; x) x^a / a with the 2F1 evaluated by
/// Laplace approximation. Falls back to the oracle outside the validated
/// region (see [`LAPLACE_X_MAX`] / [`LAPLACE_N_MAX`]).
pub fn f_cdf_laplace(d2: f64, n: usize) -> Result<f64> {
    check_domain(d2, n)?;
    let nf = n as f64;
    let x = d2 / (d2 + nf);
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x > LAPLACE_X_MAX || n > LAPLACE_N_MAX {
        return f_cdf_exact(d2, n);
    }
    let a = BETA_A;
    let b = nf / 2.0;
    // 2F1 is symmetric in its first two arguments; swapping puts the
    // positive parameter a in the integrable slot (cc > a > 0).
    match hyp2f1_laplace(1.0 - b, a, a + 1.0, x) {
        Some(f) => {
            let b_incomplete = f * x.powf(a) / a;
            let p = b_incomplete / ln_beta(a, b).exp();
            Ok(p.clamp(0.0, 1.0))
        }
        None => f_cdf_exact(d2, n),
    }
}

/// Exact derivative dP/dd2: the beta density at x(d2) times dx/dd2.
///
/// d2 is floored at [`GRAD_D2_MIN`] since the density diverges at 0 for
/// a = 1/2.
pub fn f_cdf_grad(d2: f64, n: usize) -> Result<f64> {
    check_domain(d2, n)?;
    let d2 = d2.max(GRAD_D2_MIN);
    let nf = n as f64;
    let a = BETA_A;
    let b = nf / 2.0;
    let x = d2 / (d2 + nf);
    let ln_density = (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b);
    let dx_dd2 = nf / ((d2 + nf) * (d2 + nf));
    Ok(ln_density.exp() * dx_dd2)
}

/// Loss and its derivative with respect to squared distance for one pair:
/// P for positives (pulled together), 1 - P for negatives (pushed apart).
///
/// Uses the oracle forward so the reported value is consistent with the
/// closed-form gradient; [`f_cdf_laplace`] remains the cheap approximate
/// path for sweeps and diagnostics.
pub fn pair_loss(d2: f64, n: usize, is_positive: bool) -> Result<(f64, f64)> {
    let p = f_cdf_exact(d2, n)?;
    let g = f_cdf_grad(d2, n)?;
    if is_positive {
        Ok((p, g))
    } else {
        Ok((1.0 - p, -g))
    }
}
