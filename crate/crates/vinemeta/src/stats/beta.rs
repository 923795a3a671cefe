//! Gamma/beta special functions and the Beta distribution in the
//! mean-dispersion parametrization used by the latent margins.
//!
//! Beta(pi, gamma) has shapes a = pi(1-gamma)/gamma, b = (1-pi)(1-gamma)/gamma,
//! so E[X] = pi and Var[X] = pi(1-pi)*gamma.

use crate::error::{Error, Result};

/// ln Gamma(x) for x > 0 (Lanczos, g = 7, 9 coefficients; ~1e-13 relative).
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires x > 0, got {x}");
    const G: f64 = 7.0;
    // Published coefficients, kept at their full printed precision.
    #[allow(clippy::excessive_precision)]
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// ln B(a, b).
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta I_x(a, b) via the standard continued fraction
/// (modified Lentz), with the symmetry switch at x = (a+1)/(a+b+2).
pub fn betainc_reg(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "betainc_reg requires a,b > 0");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta (Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0_f64;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
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
        // odd step
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

/// Beta density at x for shapes (a, b).
pub fn beta_pdf(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)).exp()
}

/// Beta quantile for shapes (a, b): Newton on I_x(a,b) - p with a bisection
/// safeguard; terminates when the CDF is matched to 1e-12 or the bracket
/// collapses below 1e-14.
pub fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta_quantile requires a,b > 0");
    assert!((0.0..=1.0).contains(&p), "beta_quantile requires p in [0,1]");
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x = a / (a + b); // mean as the seed
    for _ in 0..200 {
        let f = betainc_reg(a, b, x) - p;
        if f.abs() < 1e-12 {
            return x;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dens = beta_pdf(a, b, x);
        let mut next = if dens > 1e-290 { x - f / dens } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi); // bisection fallback
        }
        if (next - x).abs() < 1e-14 * x.max(1e-3) {
            return next;
        }
        x = next;
    }
    x
}

/// Shape parameters (a, b) of Beta(pi, gamma) in mean-dispersion form.
pub fn beta_shapes(pi: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::domain(format!("beta mean must lie in (0,1), got {pi}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain(format!(
            "beta dispersion must lie in (0,1), got {gamma}"
        )));
    }
    let scale = (1.0 - gamma) / gamma;
    Ok((pi * scale, (1.0 - pi) * scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values: mpmath, 50 digits.
    #[test]
    fn ln_gamma_matches_reference() {
        assert!((ln_gamma(7.6) - 7.729_749_704_307_014).abs() < 1e-12);
        assert!((ln_gamma(0.3) - 1.0957979948180755).abs() < 1e-12);
        assert!((ln_gamma(123.456) - 469.60554712992947).abs() < 2e-10);
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(2.0)).abs() < 1e-13);
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-13);
    }

    #[test]
    fn ln_beta_matches_reference() {
        assert!((ln_beta(7.6, 11.4) - -12.613063325958435).abs() < 1e-11);
    }

    #[test]
    fn betainc_matches_reference() {
        assert!((betainc_reg(7.6, 11.4, 0.3) - 0.188_696_651_580_864_6).abs() < 1e-12);
        assert!((betainc_reg(2.0, 2.0, 0.5) - 0.5).abs() < 1e-14);
        assert!((betainc_reg(0.5, 0.5, 0.9) - 0.795_167_235_300_866_5).abs() < 1e-12);
        assert_eq!(betainc_reg(2.0, 3.0, 0.0), 0.0);
        assert_eq!(betainc_reg(2.0, 3.0, 1.0), 1.0);
    }

    #[test]
    fn quantile_matches_reference() {
        // median and 1st percentile of Beta(7.6, 11.4), i.e. pi=0.4, gamma=0.05
        let (a, b) = beta_shapes(0.4, 0.05).unwrap();
        assert!((a - 7.6).abs() < 1e-12 && (b - 11.4).abs() < 1e-12);
        assert!((beta_quantile(a, b, 0.5) - 0.396_420_771_722_098_8).abs() < 1e-10);
        assert!((beta_quantile(a, b, 0.01) - 0.16846585009142069).abs() < 1e-10);
    }

    #[test]
    fn quantile_round_trip() {
        for &(a, b) in &[(7.6, 11.4), (0.8, 0.7), (2.0, 5.0), (40.0, 3.0)] {
            for i in 1..40 {
                let p = i as f64 / 40.0;
                let x = beta_quantile(a, b, p);
                let back = betainc_reg(a, b, x);
                assert!(
                    (back - p).abs() < 1e-10,
                    "a={a} b={b} p={p}: x={x} back={back}"
                );
            }
        }
    }

    #[test]
    fn mean_dispersion_moments() {
        // sample moments via quantile of a uniform grid (midpoint rule is
        // enough at this tolerance, and is how the simulator draws values)
        let (a, b) = beta_shapes(0.7, 0.1).unwrap();
        let n = 200_001;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for i in 0..n {
            let u = (i as f64 + 0.5) / n as f64;
            let x = beta_quantile(a, b, u);
            mean += x;
            m2 += x * x;
        }
        mean /= n as f64;
        let var = m2 / n as f64 - mean * mean;
        assert!((mean - 0.7).abs() < 1e-3, "mean={mean}");
        let want_var = 0.7 * 0.3 * 0.1;
        assert!((var - want_var).abs() < 0.002 * want_var.max(0.01), "var={var}");
    }

    #[test]
    fn shapes_reject_bad_domains() {
        assert!(beta_shapes(0.0, 0.05).is_err());
        assert!(beta_shapes(0.4, 1.0).is_err());
        assert!(beta_shapes(1.2, 0.5).is_err());
    }
}
