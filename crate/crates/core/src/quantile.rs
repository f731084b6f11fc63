//! Quantiles of the standard normal and chi-square laws.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("probability {p} must lie in (0, 1)")))
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_probability(p)?;
    Ok(Normal::standard().inverse_cdf(p))
}

/// `z_{1 - (1 - level)/2}`, the half-width multiplier of a two-sided interval.
pub fn two_sided_critical(level: f64) -> Result<f64> {
    check_probability(level)?;
    normal_quantile(1.0 - (1.0 - level) / 2.0)
}

/// Two-sided p-value of a standard normal statistic.
pub fn two_sided_pvalue(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

pub fn chi2_cdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(dof as f64 / 2.0, x / 2.0)
    }
}

/// Chi-square quantile with `dof` degrees of freedom, solved by safeguarded
/// Newton iteration on the regularized lower incomplete gamma function.
pub fn chi2_quantile(dof: usize, p: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidInput("chi-square degrees of freedom must be positive".into()));
    }
    check_probability(p)?;
    let a = dof as f64 / 2.0;
    let k = dof as f64;
    // Wilson–Hilferty start, or the lower-tail series when it fails.
    let z = normal_quantile(p)?;
    let c = 2.0 / (9.0 * k);
    let cube = 1.0 - c + z * c.sqrt();
    let mut x = if cube > 0.0 {
        k * cube.powi(3)
    } else {
        2.0 * ((p.ln() + ln_gamma(a + 1.0)) / a).exp()
    };

    let mut lo = 0.0f64;
    let mut hi = x.max(1.0);
    while chi2_cdf(dof, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let ln_norm = ln_gamma(a) + a * std::f64::consts::LN_2;
    for _ in 0..200 {
        let f = chi2_cdf(dof, x) - p;
        if f < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let density = ((a - 1.0) * x.ln() - x / 2.0 - ln_norm).exp();
        let mut next = if density > 0.0 && density.is_finite() { x - f / density } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bisection on the CDF: slow but independent of the Newton path.
    fn bisect_chi2(dof: usize, p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1000.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if chi2_cdf(dof, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn chi2_reference_values() {
        let q = chi2_quantile(2, 0.95).unwrap();
        // For two degrees of freedom the quantile is -2 ln(1 - p).
        assert!((q - (-2.0 * 0.05f64.ln())).abs() < 1e-12);
        assert!((q - 5.991464547107979).abs() < 1e-8 * q);
        let q1 = chi2_quantile(1, 0.5).unwrap();
        assert!((q1 - 0.454936423119572).abs() < 1e-8 * q1);
    }

    #[test]
    fn chi2_matches_bisection() {
        for dof in 1..=10 {
            for &p in &[1e-6, 0.01, 0.05, 0.3, 0.5, 0.9, 0.95, 0.99, 0.999999] {
                let a = chi2_quantile(dof, p).unwrap();
                let b = bisect_chi2(dof, p);
                assert!((a - b).abs() <= 1e-8 * b.max(1e-12), "dof={dof} p={p} {a} {b}");
            }
        }
    }

    #[test]
    fn chi2_small_p_goes_to_zero() {
        assert!(chi2_quantile(2, 1e-12).unwrap() < 1e-10);
        assert!(chi2_quantile(1, 0.0).is_err());
        assert!(chi2_quantile(1, 1.0).is_err());
        assert!(chi2_quantile(0, 0.5).is_err());
    }

    #[test]
    fn chi2_monte_carlo_cross_check() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let q = chi2_quantile(3, 0.95).unwrap();
        let n = 200_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let s: f64 = (0..3).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); z * z }).sum();
            if s > q {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.05).abs() < 4.0 * (0.05f64 * 0.95 / n as f64).sqrt());
    }

    #[test]
    fn chi2_matches_reference_table() {
        // Independent reference quantiles (frozen).
        let table = [
        (1, 1e-06, 1.5707963267957187e-12),
        (1, 0.05, 0.003932140000019522),
        (1, 0.5, 0.454936423119572),
        (1, 0.95, 3.841458820694124),
        (1, 0.999999, 23.92812697687947),
        (2, 1e-06, 2.0000010000006676e-06),
        (2, 0.05, 0.10258658877510106),
        (2, 0.5, 1.386294361119891),
        (2, 0.95, 5.991464547107979),
        (2, 0.999999, 27.631021115871036),
        (3, 1e-06, 0.00024181048720124264),
        (3, 0.05, 0.35184631774927144),
        (3, 0.5, 2.3659738843753377),
        (3, 0.95, 7.814727903251179),
        (3, 0.999999, 30.66484970615427),
        (5, 1e-06, 0.012896160206497087),
        (5, 0.05, 1.1454762260617692),
        (5, 0.5, 4.351460191095526),
        (5, 0.95, 11.070497693516351),
        (5, 0.999999, 35.88818687961042),
        (10, 1e-06, 0.3381260032429545),
        (10, 0.05, 3.9402991361190605),
        (10, 0.5, 9.34181776559197),
        (10, 0.95, 18.307038053275146),
        (10, 0.999999, 46.86304684671568),
        ];
        for (dof, p, expected) in table {
            let q = chi2_quantile(dof, p).unwrap();
            assert!((q - expected).abs() <= 1e-8 * expected, "dof={dof} p={p} {q} vs {expected}");
        }
    }

    #[test]
    fn normal_reference_values() {
        assert!((two_sided_critical(0.95).unwrap() - 1.959963984540054).abs() < 1e-12);
        assert!((two_sided_critical(0.90).unwrap() - 1.6448536269514722).abs() < 1e-12);
        assert!(normal_quantile(0.5).unwrap().abs() < 1e-15);
        assert!((normal_quantile(1e-10).unwrap() + 6.361340902404056).abs() < 1e-9);
        assert!((two_sided_pvalue(1.959963984540054) - 0.05).abs() < 1e-10);
    }
}
