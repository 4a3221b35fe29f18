//! Gaussian tail helpers that stay finite far into the tails.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Scaled complementary error function `exp(x²)·erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 10.0 {
        return (x * x).exp() * erfc(x);
    }
    // Laplace continued fraction, evaluated bottom-up.
    let mut t = x;
    for k in (1..=60).rev() {
        t = x + (k as f64 / 2.0) / t;
    }
    FRAC_1_SQRT_PI / t
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, polished by Newton steps on [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    let mut z = Normal::standard().inverse_cdf(p);
    if z.is_finite() {
        for _ in 0..2 {
            let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            if density > 0.0 {
                z -= (normal_cdf(z) - p) / density;
            }
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfcx_is_continuous_at_the_switch() {
        let below = erfcx(10.0 - 1e-9);
        let above = erfcx(10.0);
        assert!((below - above).abs() / above < 1e-9);
    }

    #[test]
    fn erfcx_asymptote() {
        // erfcx(x) ~ 1/(x√π) (1 - 1/(2x²) + 3/(4x⁴))
        let x = 40.0_f64;
        let series = FRAC_1_SQRT_PI / x * (1.0 - 0.5 / (x * x) + 0.75 / x.powi(4));
        assert!((erfcx(x) - series).abs() / series < 1e-8);
        assert!((erfcx(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [0.01, 0.3, 0.5, 0.975] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-12);
        }
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
    }
}
