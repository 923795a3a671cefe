//! Debye function of order 1, needed for the Frank copula's tau(theta) map.
//!
//! D1(x) = (1/x) * int_0^x t/(e^t - 1) dt, with D1(0) = 1 and the reflection
//! D1(-x) = D1(x) + x/2. Evaluated by the Bernoulli series for |x| < 1 and the
//! exponential tail series otherwise; both converge to ~1e-15 absolute.

/// Debye function D1.
pub fn debye1(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x < 0.0 {
        return debye1(-x) - x / 2.0;
    }
    if x < 1.0 {
        debye1_series(x)
    } else {
        debye1_tail(x)
    }
}

/// Bernoulli series, accurate for |x| < 1 (truncation < 1e-16 there) and
/// still ~2e-14 at x = 1.
fn debye1_series(x: f64) -> f64 {
    // D1(x) = 1 - x/4 + sum_{k>=1} B_{2k} x^{2k} / ((2k+1) (2k)!)
    const C: [f64; 7] = [
        1.0 / 36.0,
        -1.0 / 3600.0,
        1.0 / 211_680.0,
        -1.0 / 10_886_400.0,
        1.0 / 526_901_760.0,
        -691.0 / 16_999_766_784_000.0,
        1.0 / 1_120_863_744_000.0,
    ];
    let x2 = x * x;
    let mut acc = 0.0;
    let mut xp = x2;
    for &c in &C {
        acc += c * xp;
        xp *= x2;
    }
    1.0 - 0.25 * x + acc
}

/// Exponential tail series, accurate for x >= 1.
fn debye1_tail(x: f64) -> f64 {
    // D1(x) = (pi^2/6 - sum_{k>=1} e^{-kx} (x/k + 1/k^2)) / x
    let zeta2 = std::f64::consts::PI * std::f64::consts::PI / 6.0;
    let mut tail = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = (-k * x).exp() * (x / k + 1.0 / (k * k));
        tail += term;
        if term < 1e-18 {
            break;
        }
    }
    (zeta2 - tail) / x
}
