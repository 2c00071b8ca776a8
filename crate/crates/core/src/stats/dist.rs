//! Normal and Student-t tail probabilities.

use core::f64::consts::SQRT_2;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Two-sided normal p-value `P(|Z| >= |z|)`.
pub fn normal_two_sided(z: f64) -> f64 {
    libm::erfc(z.abs() / SQRT_2).min(1.0)
}

/// Two-sided Student-t p-value `P(|T| >= |t|)` with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    // The continued fraction converges fast for x < (a + 1) / (a + b + 2).
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_fraction(1.0 - x, b, a) / b
    }
}

// Lentz's method for the incomplete beta continued fraction.
fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
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
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
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

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

    #[test]
    fn normal_matches_reference() {
        let n = Normal::new(0.0, 1.0).unwrap();
        for z in [-4.0, -1.96, -0.3, 0.0, 0.7, 2.5, 6.0] {
            assert!((normal_cdf(z) - n.cdf(z)).abs() < 1e-11, "z = {z}");
            assert!((normal_two_sided(z) - 2.0 * n.sf(f64::abs(z))).abs() < 1e-11);
        }
        assert!((normal_cdf(-1.96) - 0.024997895148220435).abs() < 1e-16);
    }

    #[test]
    fn student_t_matches_reference() {
        for df in [1.0, 2.0, 5.0, 13.0, 98.0] {
            let t = StudentsT::new(0.0, 1.0, df).unwrap();
            for x in [0.0, 0.1, 0.9, 2.0, 4.5, 12.0] {
                let expected = 2.0 * t.sf(x);
                assert!((student_t_two_sided(x, df) - expected).abs() < 1e-12, "df {df} t {x}");
                assert!((student_t_two_sided(-x, df) - expected).abs() < 1e-12);
            }
        }
    }
}
