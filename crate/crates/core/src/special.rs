//! Special functions: the regularized incomplete beta function and the
//! binomial distribution function built on it.

use statrs::function::beta::ln_beta;

const MAX_ITER: usize = 500;
const TINY: f64 = 1e-300;

/// Regularized incomplete beta function `I_x(a, b)`.
///
/// Continued fraction (modified Lentz) on whichever of `I_x(a, b)` and
/// `1 - I_{1-x}(b, a)` converges faster. Returns `None` for out-of-domain
/// arguments or when the fraction does not converge.
pub fn beta_reg(a: f64, b: f64, x: f64) -> Option<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return None;
    }
    if x == 0.0 {
        return Some(0.0);
    }
    if x == 1.0 {
        return Some(1.0);
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        beta_cf(b, a, 1.0 - x).map(|v| 1.0 - v)
    } else {
        beta_cf(a, b, x)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> Option<f64> {
    let ln_prefix = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    let prefix = ln_prefix.exp() / a;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut f = d;

    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let even = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + even * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + even / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        f *= d * c;

        let odd = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + odd * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + odd / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        f *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            return Some((prefix * f).clamp(0.0, 1.0));
        }
    }
    None
}

/// `P(S <= k)` by summing probability mass terms in log space, with
/// log-factorials accumulated directly. Independent of [`beta_reg`].
pub(crate) fn binomial_cdf_by_summation(k: u64, n: u64, p: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    let (ln_p, ln_q) = (p.ln(), (1.0 - p).ln());
    let mut ln_fact = Vec::with_capacity(n as usize + 1);
    ln_fact.push(0.0);
    for i in 1..=n {
        ln_fact.push(ln_fact[i as usize - 1] + (i as f64).ln());
    }
    let ln_pmf = |i: u64| {
        ln_fact[n as usize] - ln_fact[i as usize] - ln_fact[(n - i) as usize]
            + i as f64 * ln_p
            + (n - i) as f64 * ln_q
    };
    let terms: Vec<f64> = (0..=k).map(ln_pmf).collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = terms.iter().map(|t| (t - top).exp()).sum();
    (top + total.ln()).exp().min(1.0)
}
