//! Scalar distribution functions used by the screening tests.
//!
//! Everything here is built on the regularized incomplete gamma function,
//! computed by the usual series / continued-fraction split.

use crate::error::{Error, Result};

/// Natural log of the gamma function (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-16;

/// Lower regularized incomplete gamma P(a, x) by its power series.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Upper regularized incomplete gamma Q(a, x) by modified Lentz continued fraction.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
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
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Upper regularized incomplete gamma function Q(a, x) = Γ(a, x) / Γ(a).
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    if a <= 0.0 {
        return Err(Error::Domain(format!("gamma_q requires a > 0, got {a}")));
    }
    if x < 0.0 {
        return Err(Error::Domain(format!("gamma_q requires x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - gamma_p_series(a, x))
    } else {
        Ok(gamma_q_cf(a, x))
    }
}

/// Chi-square survival function: upper-tail probability at `x` with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::Domain("chi2_sf requires df >= 1".into()));
    }
    if x < 0.0 {
        return Err(Error::Domain(format!("chi2_sf requires x >= 0, got {x}")));
    }
    gamma_q(df as f64 / 2.0, x / 2.0)
}

/// Standard normal survival function P(Z > z).
///
/// Uses erfc(u) = Q(1/2, u^2) so the whole module shares one gamma implementation.
pub fn normal_sf(z: f64) -> f64 {
    if z < 0.0 {
        return 1.0 - normal_sf(-z);
    }
    if z == 0.0 {
        return 0.5;
    }
    0.5 * gamma_q(0.5, z * z / 2.0).expect("valid arguments")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(2.0), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(5.0), 24.0_f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            ln_gamma(0.5),
            std::f64::consts::PI.sqrt().ln(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn chi2_sf_at_zero_is_one() {
        for df in 1..=12 {
            assert_eq!(chi2_sf(0.0, df).unwrap(), 1.0);
        }
    }

    #[test]
    fn chi2_sf_df2_closed_form() {
        for &x in &[1.0, 5.0, 10.0] {
            assert_abs_diff_eq!(chi2_sf(x, 2).unwrap(), (-x / 2.0).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn chi2_sf_df4_matches_quadrature() {
        // adaptive-quadrature oracle over the density on random points
        let mut state = 0x9e3779b97f4a7c15u64;
        for _ in 0..20 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let x = (state >> 11) as f64 / (1u64 << 53) as f64 * 30.0;
            let expect = crate::testutil::chi2_sf_quadrature(x, 4);
            assert_abs_diff_eq!(chi2_sf(x, 4).unwrap(), expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn chi2_sf_rejects_negative() {
        assert!(matches!(chi2_sf(-1.0, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn normal_sf_symmetry_and_values() {
        assert_abs_diff_eq!(normal_sf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_sf(1.959963984540054), 0.025, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_sf(-1.0) + normal_sf(1.0), 1.0, epsilon = 1e-14);
    }
}
