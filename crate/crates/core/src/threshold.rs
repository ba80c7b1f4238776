//! Robustness thresholds for the ensemble score.
//!
//! The votes of `N` independently trained base learners at a point `x` are
//! `Binom(N, p(x))`. Requiring the retrained ensemble to reach majority with
//! probability at least `1 - alpha` is equivalent to `p(x) >= p*(N, alpha)`,
//! and the trained ensemble's score is a plug-in estimate of `p(x)`. The
//! functions here compute that threshold and its variants.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::special::{beta_reg, binomial_cdf_by_summation};

/// Absolute bisection tolerance on `p` for [`p_star`].
pub const BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum ThresholdError {
    #[error("ensemble size must be at least 1")]
    EmptyEnsemble,
    #[error("vote count {k} out of range for ensemble of size {n}")]
    VotesOutOfRange { k: u64, n: u64 },
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("beta must lie in (0, 1), got {0}")]
    Beta(f64),
    #[error("incomplete beta continued fraction did not converge for k={k}, n={n}, p={p}")]
    NoConvergence { k: u64, n: u64, p: f64 },
    #[error("continuous feature count {k} exceeds feature count {d}")]
    FeatureCounts { k: u32, d: u32 },
}

/// Which vote count counts as "not reaching majority" when `N` is even.
///
/// For odd `N` both readings coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MajorityReading {
    /// `g_N(p) = P(S <= floor(N/2))`. Satisfies the monotonicity chain in `N`
    /// and `p* >= 1/2` for `alpha <= 1/2`; for even `N` the resulting condition
    /// is sufficient rather than exact.
    #[default]
    Inclusive,
    /// `g_N(p) = P(S < N/2)`, the exact probability of missing majority.
    Strict,
}

impl MajorityReading {
    fn cutoff(self, n: u64) -> u64 {
        match self {
            MajorityReading::Inclusive => n / 2,
            MajorityReading::Strict => n.div_ceil(2) - 1,
        }
    }
}

/// `P(S <= k)` for `S ~ Binom(n, p)`.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> Result<f64, ThresholdError> {
    if k > n {
        return Err(ThresholdError::VotesOutOfRange { k, n });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(ThresholdError::Probability(p));
    }
    if k == n || p == 0.0 {
        return Ok(1.0);
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    // P(S <= k) = I_{1-p}(n - k, k + 1)
    match beta_reg((n - k) as f64, (k + 1) as f64, 1.0 - p) {
        Some(v) => Ok(v),
        None if n <= 64 => Ok(binomial_cdf_by_summation(k, n, p)),
        None => Err(ThresholdError::NoConvergence { k, n, p }),
    }
}

/// Probability that a retrained ensemble of size `n` does not reach majority
/// when each base learner votes for the target with probability `p`.
pub fn g_hat(n: u64, p: f64, reading: MajorityReading) -> Result<f64, ThresholdError> {
    if n == 0 {
        return Err(ThresholdError::EmptyEnsemble);
    }
    binomial_cdf(reading.cutoff(n), n, p)
}

/// The robustness threshold `p*(N, alpha)`: the unique `p` with `g_N(p) = alpha`.
pub fn p_star(n: u64, alpha: f64, reading: MajorityReading) -> Result<f64, ThresholdError> {
    if n == 0 {
        return Err(ThresholdError::EmptyEnsemble);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ThresholdError::Alpha(alpha));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if g_hat(n, mid, reading)? > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two-sided normal quantile used by the Agresti-Coull margin: `Phi^-1(1 - beta/2)`.
pub fn z_beta(beta: f64) -> Result<f64, ThresholdError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(ThresholdError::Beta(beta));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - beta / 2.0))
}

/// Agresti-Coull center `(N p* + 2) / (N + 4)`.
pub fn agresti_coull_center(n: u64, p_star: f64) -> f64 {
    (n as f64 * p_star + 2.0) / (n as f64 + 4.0)
}

/// `rho* = p* + z_beta * sqrt(rho_AC (1 - rho_AC) / N)`, clamped to 1.
pub fn robust_saa_from_p_star(n: u64, p_star: f64, beta: f64) -> Result<f64, ThresholdError> {
    if n == 0 {
        return Err(ThresholdError::EmptyEnsemble);
    }
    let rho_ac = agresti_coull_center(n, p_star);
    let z = z_beta(beta)?;
    Ok((p_star + z * (rho_ac * (1.0 - rho_ac) / n as f64).sqrt()).min(1.0))
}

pub fn robust_saa_threshold(
    n: u64,
    alpha: f64,
    beta: f64,
    reading: MajorityReading,
) -> Result<f64, ThresholdError> {
    let p = p_star(n, alpha, reading)?;
    robust_saa_from_p_star(n, p, beta)
}

/// How the score threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum RobustnessMode {
    /// Plain majority, `tau = 1/2`.
    Naive,
    /// `tau = p*(N, alpha)`.
    DirectSaa,
    /// `tau = rho*(N, alpha, beta)`.
    RobustSaa { beta: f64 },
    /// Unanimity, `tau = 1`.
    Convex,
}

impl RobustnessMode {
    pub fn name(&self) -> &'static str {
        match self {
            RobustnessMode::Naive => "naive",
            RobustnessMode::DirectSaa => "direct-saa",
            RobustnessMode::RobustSaa { .. } => "robust-saa",
            RobustnessMode::Convex => "convex",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSpec {
    pub n: u64,
    pub alpha: f64,
    pub mode: RobustnessMode,
    #[serde(default)]
    pub reading: MajorityReading,
}

impl RobustnessSpec {
    pub fn new(n: u64, alpha: f64, mode: RobustnessMode) -> Self {
        RobustnessSpec {
            n,
            alpha,
            mode,
            reading: MajorityReading::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub tau: f64,
    pub p_star: f64,
    pub rho_ac: f64,
    pub rho_star: f64,
    /// `NaN` unless the mode is robust-saa.
    pub z_beta: f64,
    pub min_votes: u64,
}

/// Smallest integer `k` with `k / n >= tau`, compared exactly.
pub fn min_votes(n: u64, tau: f64) -> u64 {
    if tau <= 0.0 {
        return 0;
    }
    let nf = n as f64;
    let passes = |m: u64| m as f64 / nf >= tau;
    // Start at the rounded ceiling and settle on the boundary of the float
    // comparison the score check uses.
    let mut k = ((nf * tau).ceil() as u64).min(n);
    while k > 0 && passes(k - 1) {
        k -= 1;
    }
    while k < n && !passes(k) {
        k += 1;
    }
    k
}

pub fn select_threshold(spec: &RobustnessSpec) -> Result<ThresholdResult, ThresholdError> {
    let n = spec.n;
    if n == 0 {
        return Err(ThresholdError::EmptyEnsemble);
    }
    let p = p_star(n, spec.alpha, spec.reading)?;
    let rho_ac = agresti_coull_center(n, p);
    let (tau, rho_star, z) = match spec.mode {
        RobustnessMode::Naive => (0.5, f64::NAN, f64::NAN),
        RobustnessMode::DirectSaa => (p, f64::NAN, f64::NAN),
        RobustnessMode::RobustSaa { beta } => {
            let rho = robust_saa_from_p_star(n, p, beta)?;
            (rho, rho, z_beta(beta)?)
        }
        RobustnessMode::Convex => (1.0, f64::NAN, f64::NAN),
    };
    Ok(ThresholdResult {
        tau,
        p_star: p,
        rho_ac,
        rho_star,
        z_beta: z,
        min_votes: min_votes(n, tau),
    })
}

/// Finite-sample failure probability for the unanimity (convex) approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FiniteSampleBound {
    /// `delta < 1`.
    Delta(f64),
    /// The bound is at least 1 (or `2^(d-k)` overflowed) and says nothing.
    Vacuous,
}

impl FiniteSampleBound {
    pub fn value(self) -> Option<f64> {
        match self {
            FiniteSampleBound::Delta(v) => Some(v),
            FiniteSampleBound::Vacuous => None,
        }
    }
}

/// `delta = exp[(2^(d-k) (k+1) - 1)(ln(1/alpha) + alpha) - alpha N / 2]`
/// for `k` continuous features out of `d`.
pub fn finite_sample_delta(
    n: u64,
    alpha: f64,
    k: u32,
    d: u32,
) -> Result<FiniteSampleBound, ThresholdError> {
    if n == 0 {
        return Err(ThresholdError::EmptyEnsemble);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ThresholdError::Alpha(alpha));
    }
    if k > d {
        return Err(ThresholdError::FeatureCounts { k, d });
    }
    let discrete = d - k;
    if discrete > 60 {
        return Ok(FiniteSampleBound::Vacuous);
    }
    let support = (1u64 << discrete) as f64 * (k as f64 + 1.0) - 1.0;
    let log_delta = support * ((1.0 / alpha).ln() + alpha) - 0.5 * alpha * n as f64;
    if log_delta >= 0.0 || !log_delta.is_finite() {
        return Ok(FiniteSampleBound::Vacuous);
    }
    Ok(FiniteSampleBound::Delta(log_delta.exp()))
}

/// Rows of `p*` against the robustness target `1 - alpha` for several ensemble sizes.
pub fn p_star_by_target(
    sizes: &[u64],
    targets: &[f64],
    reading: MajorityReading,
) -> Result<Vec<(f64, Vec<f64>)>, ThresholdError> {
    targets
        .iter()
        .map(|&t| {
            let row = sizes
                .iter()
                .map(|&n| p_star(n, 1.0 - t, reading))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((t, row))
        })
        .collect()
}

/// Rows of `p*` against the ensemble size for several tolerances.
pub fn p_star_by_size(
    sizes: &[u64],
    alphas: &[f64],
    reading: MajorityReading,
) -> Result<Vec<(u64, Vec<f64>)>, ThresholdError> {
    sizes
        .iter()
        .map(|&n| {
            let row = alphas
                .iter()
                .map(|&a| p_star(n, a, reading))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((n, row))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const INC: MajorityReading = MajorityReading::Inclusive;
    const STRICT: MajorityReading = MajorityReading::Strict;

    #[test]
    fn binomial_cdf_examples() {
        assert_eq!(binomial_cdf(2, 2, 0.5).unwrap(), 1.0);
        assert_eq!(binomial_cdf(0, 3, 0.0).unwrap(), 1.0);
        assert!((binomial_cdf(1, 2, 0.5).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn binomial_cdf_rejects_bad_arguments() {
        assert_eq!(
            binomial_cdf(3, 2, 0.5),
            Err(ThresholdError::VotesOutOfRange { k: 3, n: 2 })
        );
        assert_eq!(binomial_cdf(1, 2, 1.5), Err(ThresholdError::Probability(1.5)));
        assert!(binomial_cdf(1, 2, f64::NAN).is_err());
    }

    #[test]
    fn g_hat_examples() {
        assert!((g_hat(3, 0.5, INC).unwrap() - 0.5).abs() < 1e-14);
        assert!((g_hat(3, 0.5, STRICT).unwrap() - 0.5).abs() < 1e-14);
        for n in 1..50 {
            assert_eq!(g_hat(n, 0.0, INC).unwrap(), 1.0);
            assert_eq!(g_hat(n, 0.0, STRICT).unwrap(), 1.0);
        }
        // P(S <= 0) for Binom(2, 1/2)
        assert!((g_hat(2, 0.5, STRICT).unwrap() - 0.25).abs() < 1e-15);
        // P(S <= 1) for Binom(2, 1/2)
        assert!((g_hat(2, 0.5, INC).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(g_hat(0, 0.5, INC), Err(ThresholdError::EmptyEnsemble));
    }

    #[test]
    fn p_star_examples() {
        assert!((p_star(101, 0.5, INC).unwrap() - 0.5).abs() < 1e-10);
        // (1-p)^2 (1+2p) = 1/4
        let p = p_star(3, 0.25, INC).unwrap();
        assert!(((1.0 - p).powi(2) * (1.0 + 2.0 * p) - 0.25).abs() < 1e-9);
        assert!((p - 0.674).abs() < 1e-3);
        for n in [1, 2, 7, 50, 100, 201] {
            assert!(p_star(n, 0.1, INC).unwrap() > p_star(n, 0.3, INC).unwrap());
        }
        // single learner: g_1(p) = 1 - p
        assert!((p_star(1, 0.2, INC).unwrap() - 0.8).abs() < 1e-10);
        assert_eq!(p_star(5, 0.0, INC), Err(ThresholdError::Alpha(0.0)));
        assert_eq!(p_star(5, 1.0, INC), Err(ThresholdError::Alpha(1.0)));
    }

    #[test]
    fn robust_saa_examples() {
        assert_eq!(agresti_coull_center(100, 0.5), 0.5);
        let rho = robust_saa_from_p_star(100, 0.5, 0.05).unwrap();
        let expected = 0.5 + 1.959963984540054 * (0.25f64 / 100.0).sqrt();
        assert!((rho - expected).abs() < 1e-9);
        assert!((rho - 0.598).abs() < 1e-3);
        assert_eq!(robust_saa_from_p_star(1, 0.99, 0.01).unwrap(), 1.0);
        assert!(z_beta(0.0).is_err());
    }

    #[test]
    fn robust_saa_decreasing_in_beta_and_above_p_star() {
        for n in [11, 50, 100, 400] {
            for alpha in [0.05, 0.2, 0.5] {
                let p = p_star(n, alpha, INC).unwrap();
                let mut prev = f64::INFINITY;
                for beta in [0.001, 0.01, 0.05, 0.1, 0.3, 0.6, 0.9, 0.999] {
                    let rho = robust_saa_threshold(n, alpha, beta, INC).unwrap();
                    assert!(rho >= p);
                    assert!(rho <= prev);
                    prev = rho;
                }
            }
        }
    }

    #[test]
    fn select_threshold_modes() {
        let naive = select_threshold(&RobustnessSpec::new(100, 0.1, RobustnessMode::Naive)).unwrap();
        assert_eq!(naive.tau, 0.5);
        assert_eq!(naive.min_votes, 50);
        let naive_odd = select_threshold(&RobustnessSpec::new(101, 0.1, RobustnessMode::Naive)).unwrap();
        assert_eq!(naive_odd.min_votes, 51);

        let convex = select_threshold(&RobustnessSpec::new(37, 0.3, RobustnessMode::Convex)).unwrap();
        assert_eq!(convex.tau, 1.0);
        assert_eq!(convex.min_votes, 37);

        let direct = select_threshold(&RobustnessSpec::new(101, 0.5, RobustnessMode::DirectSaa)).unwrap();
        assert!((direct.tau - 0.5).abs() < 1e-10);
        assert_eq!(direct.min_votes, 51);

        let robust = select_threshold(&RobustnessSpec::new(
            100,
            0.1,
            RobustnessMode::RobustSaa { beta: 0.05 },
        ))
        .unwrap();
        assert!(robust.tau > robust.p_star);
        assert_eq!(robust.tau, robust.rho_star);
        assert!((robust.z_beta - 1.959963984540054).abs() < 1e-9);
    }

    #[test]
    fn min_votes_exact() {
        assert_eq!(min_votes(100, 0.5), 50);
        assert_eq!(min_votes(101, 0.5), 51);
        assert_eq!(min_votes(3, 2.0 / 3.0), 2);
        assert_eq!(min_votes(10, 0.7), 7);
        assert_eq!(min_votes(10, 0.7000000001), 8);
        assert_eq!(min_votes(10, 1.0), 10);
        assert_eq!(min_votes(10, 0.0), 0);
        // 0.1 * 3 rounds to 0.30000000000000004 but k = 1 still suffices
        assert_eq!(min_votes(3, 0.1), 1);
        for n in 1..300u64 {
            for k in 0..=n {
                let tau = k as f64 / n as f64;
                let m = min_votes(n, tau);
                assert!(m as f64 / n as f64 >= tau);
                assert!(m == 0 || ((m - 1) as f64 / n as f64) < tau);
            }
        }
    }

    #[test]
    fn finite_sample_examples() {
        let delta = finite_sample_delta(100, 0.1, 2, 2).unwrap().value().unwrap();
        let expected = (2.0 * (10f64.ln() + 0.1) - 5.0).exp();
        assert!((delta - expected).abs() < 1e-12);
        assert!((delta - 0.823).abs() < 1e-3);

        let d1000 = finite_sample_delta(1000, 0.1, 3, 5).unwrap().value().unwrap();
        let d2000 = finite_sample_delta(2000, 0.1, 3, 5).unwrap().value().unwrap();
        assert!(d2000 < d1000);

        // d = k = 0: exponent -> -N/2 + small as alpha -> 1
        let near_one = finite_sample_delta(200, 0.999, 0, 0).unwrap().value().unwrap();
        assert!(near_one < 1.0);

        assert_eq!(finite_sample_delta(10, 0.1, 2, 2).unwrap(), FiniteSampleBound::Vacuous);
        assert_eq!(finite_sample_delta(10_000, 0.1, 0, 61).unwrap(), FiniteSampleBound::Vacuous);
        assert!(finite_sample_delta(10, 0.1, 3, 2).is_err());
    }

    #[test]
    fn sweep_tables_have_requested_shape() {
        let rows = p_star_by_target(&[50, 100, 200], &[0.5, 0.9], INC).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].1.len(), 3);
        let rows = p_star_by_size(&[1, 2, 3], &[0.1, 0.25, 0.5, 0.75], INC).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].1.len(), 4);
    }
}
