//! Standard normal tail helpers.

use libm::erfc;
use std::f64::consts::SQRT_2;

/// P(N(0,1) > x).
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// P(N(0,1) <= x).
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// The constant c with P(|N(0,1)| >= c) = alpha, found by bisection on erfc.
pub fn two_sided_critical(alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1), got {alpha}");
    // P(|N| >= c) = erfc(c / sqrt 2), decreasing in c.
    let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if erfc(mid / SQRT_2) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_values_match_tables() {
        assert!((two_sided_critical(0.05) - 1.959963984540054).abs() < 1e-11);
        assert!((two_sided_critical(0.9) - 0.125661346855074).abs() < 1e-11);
        assert!((two_sided_critical(0.5) - 0.674489750196082).abs() < 1e-11);
    }

    #[test]
    fn tails_are_complementary() {
        for x in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            assert!((sf(x) + cdf(x) - 1.0).abs() < 1e-15);
        }
        assert!((sf(0.0) - 0.5).abs() < 1e-15);
        assert!((cdf(1.0) - 0.841344746068543).abs() < 1e-13);
    }
}
