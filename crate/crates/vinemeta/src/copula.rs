//! Bivariate pair copulas: h-functions, their inverses, Kendall-tau maps,
//! and the rotation algebra for the families used in the vine.
//!
//! Conventions: `hfunc(u, v)` is the conditional CDF h(v | u) = dC(u,v)/du,
//! and `hinv(u, p)` its inverse in v, so `hfunc(u, hinv(u, p)) == p`. Inputs
//! are clamped into [1e-12, 1 - 1e-12] before evaluation and parametric
//! outputs are clamped back into the same window, so chained calls stay
//! inside the open unit interval.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{debye::debye1, normal};

/// Half-width of the clamping window around 0 and 1.
pub const UNIT_EPS: f64 = 1e-12;

#[inline]
pub(crate) fn clamp_unit(x: f64) -> f64 {
    x.clamp(UNIT_EPS, 1.0 - UNIT_EPS)
}

/// ln(1 + e^x), stable across the whole real line.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 34.0 {
        x
    } else if x < -34.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// User-facing copula menu: three parametric families plus the Clayton
/// rotations that flip its tail asymmetry or dependence sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Bvn,
    Frank,
    Clayton,
    Clayton90,
    Clayton180,
    Clayton270,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 6] = [
        CopulaFamily::Bvn,
        CopulaFamily::Frank,
        CopulaFamily::Clayton,
        CopulaFamily::Clayton90,
        CopulaFamily::Clayton180,
        CopulaFamily::Clayton270,
    ];

    pub fn kind(self) -> FamilyKind {
        match self {
            CopulaFamily::Bvn => FamilyKind::Bvn,
            CopulaFamily::Frank => FamilyKind::Frank,
            _ => FamilyKind::Clayton,
        }
    }

    pub fn rotation(self) -> Rotation {
        match self {
            CopulaFamily::Clayton90 => Rotation::R90,
            CopulaFamily::Clayton180 => Rotation::R180,
            CopulaFamily::Clayton270 => Rotation::R270,
            _ => Rotation::R0,
        }
    }

    /// Open interval of Kendall taus this family can represent in the model.
    pub fn tau_range(self) -> (f64, f64) {
        match self {
            CopulaFamily::Bvn | CopulaFamily::Frank => (-0.95, 0.95),
            CopulaFamily::Clayton | CopulaFamily::Clayton180 => (0.001, 0.95),
            CopulaFamily::Clayton90 | CopulaFamily::Clayton270 => (-0.95, -0.001),
        }
    }

    /// Build the pair copula with the theta that yields Kendall tau `tau`.
    pub fn pair_from_tau(self, tau: f64) -> Result<CopulaPair> {
        let (lo, hi) = self.tau_range();
        if !(tau > lo && tau < hi) {
            return Err(Error::domain(format!(
                "tau {tau} outside the open range ({lo}, {hi}) of {self}"
            )));
        }
        let theta = match self.kind() {
            FamilyKind::Bvn => (std::f64::consts::FRAC_PI_2 * tau).sin(),
            FamilyKind::Frank => frank_theta_from_tau(tau)?,
            FamilyKind::Clayton => {
                let t = tau.abs();
                2.0 * t / (1.0 - t)
            }
            _ => unreachable!("menu families are parametric"),
        };
        CopulaPair::new(self.kind(), self.rotation(), theta)
    }
}

impl std::fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CopulaFamily::Bvn => "bvn",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Clayton90 => "clayton90",
            CopulaFamily::Clayton180 => "clayton180",
            CopulaFamily::Clayton270 => "clayton270",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bvn" => Ok(CopulaFamily::Bvn),
            "frank" => Ok(CopulaFamily::Frank),
            "clayton" => Ok(CopulaFamily::Clayton),
            "clayton90" => Ok(CopulaFamily::Clayton90),
            "clayton180" => Ok(CopulaFamily::Clayton180),
            "clayton270" => Ok(CopulaFamily::Clayton270),
            other => Err(Error::invalid_argument(format!(
                "unknown copula family '{other}'"
            ))),
        }
    }
}

/// Structural family of a pair copula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Bvn,
    Frank,
    Clayton,
    /// Product copula; tau = 0.
    Independence,
    /// Frechet upper bound M(u,v) = min(u,v); tau = 1.
    Comonotonic,
    /// Frechet lower bound W(u,v) = max(u+v-1, 0); tau = -1.
    Countermonotonic,
}

/// Quarter-turn rotations; only Clayton supports them (BVN and Frank are
/// radially symmetric, so their rotations add nothing).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

/// A validated pair copula, ready for h-function evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopulaPair {
    kind: FamilyKind,
    rotation: Rotation,
    theta: f64,
}

impl CopulaPair {
    pub fn new(kind: FamilyKind, rotation: Rotation, theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::domain(format!("non-finite copula parameter {theta}")));
        }
        match kind {
            FamilyKind::Bvn | FamilyKind::Frank if rotation != Rotation::R0 => {
                return Err(Error::domain(
                    "rotations are only defined for the Clayton family".to_string(),
                ));
            }
            FamilyKind::Bvn if theta.abs() >= 1.0 => {
                return Err(Error::domain(format!(
                    "BVN correlation must satisfy |theta| < 1, got {theta}"
                )));
            }
            FamilyKind::Frank if theta.abs() > 300.0 => {
                return Err(Error::domain(format!(
                    "Frank theta {theta} is outside the supported range [-300, 300]"
                )));
            }
            FamilyKind::Clayton if !(1e-6..=1e3).contains(&theta) => {
                return Err(Error::domain(format!(
                    "Clayton theta must lie in [1e-6, 1e3], got {theta}"
                )));
            }
            FamilyKind::Independence
            | FamilyKind::Comonotonic
            | FamilyKind::Countermonotonic
                if rotation != Rotation::R0 || theta != 0.0 =>
            {
                return Err(Error::domain(
                    "degenerate copulas take no rotation or parameter".to_string(),
                ));
            }
            _ => {}
        }
        Ok(CopulaPair {
            kind,
            rotation,
            theta,
        })
    }

    pub fn independence() -> Self {
        CopulaPair {
            kind: FamilyKind::Independence,
            rotation: Rotation::R0,
            theta: 0.0,
        }
    }

    pub fn comonotonic() -> Self {
        CopulaPair {
            kind: FamilyKind::Comonotonic,
            rotation: Rotation::R0,
            theta: 0.0,
        }
    }

    pub fn countermonotonic() -> Self {
        CopulaPair {
            kind: FamilyKind::Countermonotonic,
            rotation: Rotation::R0,
            theta: 0.0,
        }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn rotation(&self) -> Rotation {
        self.rotation
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Menu entry this pair realizes, if it is parametric.
    pub fn family(&self) -> Option<CopulaFamily> {
        match (self.kind, self.rotation) {
            (FamilyKind::Bvn, _) => Some(CopulaFamily::Bvn),
            (FamilyKind::Frank, _) => Some(CopulaFamily::Frank),
            (FamilyKind::Clayton, Rotation::R0) => Some(CopulaFamily::Clayton),
            (FamilyKind::Clayton, Rotation::R90) => Some(CopulaFamily::Clayton90),
            (FamilyKind::Clayton, Rotation::R180) => Some(CopulaFamily::Clayton180),
            (FamilyKind::Clayton, Rotation::R270) => Some(CopulaFamily::Clayton270),
            _ => None,
        }
    }

    /// Kendall's tau implied by the pair.
    pub fn tau(&self) -> f64 {
        match self.kind {
            FamilyKind::Bvn => std::f64::consts::FRAC_2_PI * self.theta.asin(),
            FamilyKind::Frank => frank_tau(self.theta),
            FamilyKind::Clayton => {
                let base = self.theta / (self.theta + 2.0);
                match self.rotation {
                    Rotation::R0 | Rotation::R180 => base,
                    Rotation::R90 | Rotation::R270 => -base,
                }
            }
            FamilyKind::Independence => 0.0,
            FamilyKind::Comonotonic => 1.0,
            FamilyKind::Countermonotonic => -1.0,
        }
    }

    /// Conditional CDF h(v | u).
    pub fn hfunc(&self, u: f64, v: f64) -> f64 {
        let u = clamp_unit(u);
        let v = clamp_unit(v);
        match self.kind {
            FamilyKind::Independence => v,
            FamilyKind::Comonotonic => {
                if v >= u {
                    1.0
                } else {
                    0.0
                }
            }
            FamilyKind::Countermonotonic => {
                if u + v >= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            FamilyKind::Bvn => {
                let h = bvn_hfunc(u, v, self.theta);
                let f = bvn_fault_scale();
                clamp_unit(h + f * h * (1.0 - h))
            }
            FamilyKind::Frank => clamp_unit(frank_hfunc(u, v, self.theta)),
            FamilyKind::Clayton => {
                let th = self.theta;
                let h = match self.rotation {
                    Rotation::R0 => clayton_hfunc(u, v, th),
                    Rotation::R90 => clayton_hfunc(1.0 - u, v, th),
                    Rotation::R180 => 1.0 - clayton_hfunc(1.0 - u, 1.0 - v, th),
                    Rotation::R270 => 1.0 - clayton_hfunc(u, 1.0 - v, th),
                };
                clamp_unit(h)
            }
        }
    }

    /// Inverse of `hfunc` in its second argument: v with h(v | u) = p.
    pub fn hinv(&self, u: f64, p: f64) -> f64 {
        let u = clamp_unit(u);
        let p = clamp_unit(p);
        match self.kind {
            FamilyKind::Independence => p,
            FamilyKind::Comonotonic => u,
            FamilyKind::Countermonotonic => 1.0 - u,
            FamilyKind::Bvn => {
                let x = normal::norm_quantile(u);
                let s = (1.0 - self.theta * self.theta).sqrt();
                clamp_unit(normal::norm_cdf(normal::norm_quantile(p) * s + self.theta * x))
            }
            FamilyKind::Frank => clamp_unit(frank_hinv(u, p, self.theta)),
            FamilyKind::Clayton => {
                let th = self.theta;
                let v = match self.rotation {
                    Rotation::R0 => clayton_hinv(u, p, th),
                    Rotation::R90 => clayton_hinv(1.0 - u, p, th),
                    Rotation::R180 => 1.0 - clayton_hinv(1.0 - u, 1.0 - p, th),
                    Rotation::R270 => 1.0 - clayton_hinv(u, 1.0 - p, th),
                };
                clamp_unit(v)
            }
        }
    }
}

/// Deliberate fault hook for the self-check harness: setting the
/// VINEMETA_FAULT_HFUNC environment variable perturbs the BVN h-function,
/// which the `verify` consistency checks must detect. Read once per process.
fn bvn_fault_scale() -> f64 {
    static SCALE: OnceLock<f64> = OnceLock::new();
    *SCALE.get_or_init(|| {
        if std::env::var_os("VINEMETA_FAULT_HFUNC").is_some() {
            1e-3
        } else {
            0.0
        }
    })
}

fn bvn_hfunc(u: f64, v: f64, theta: f64) -> f64 {
    let x = normal::norm_quantile(u);
    let y = normal::norm_quantile(v);
    let s = (1.0 - theta * theta).sqrt();
    normal::norm_cdf((y - theta * x) / s)
}

/// Frank h(v|u); reflection v -> 1-v maps theta < 0 onto the stable
/// theta > 0 evaluation (all exponentials bounded by 1).
fn frank_hfunc(u: f64, v: f64, theta: f64) -> f64 {
    if theta.abs() < 1e-5 {
        // expansion around independence; exact at theta = 0
        return v * (1.0 + theta * (1.0 - v) * (0.5 - u));
    }
    if theta < 0.0 {
        return 1.0 - frank_hfunc_pos(u, 1.0 - v, -theta);
    }
    frank_hfunc_pos(u, v, theta)
}

fn frank_hfunc_pos(u: f64, v: f64, theta: f64) -> f64 {
    debug_assert!(theta > 0.0);
    // h = e^{-theta u} (1 - e^{-theta v}) / P with
    // P = e^{-theta u} (1 - e^{-theta v}) + e^{-theta v} (1 - e^{-theta(1-v)}),
    // a sum of positive terms; the textbook denominator E + Eu*Ev cancels
    // catastrophically for large theta.
    let a = (-theta * u).exp();
    let nev = -(-theta * v).exp_m1();
    let num = a * nev;
    let p_den = num + (-theta * v).exp() * -(-theta * (1.0 - v)).exp_m1();
    num / p_den
}

fn frank_hinv(u: f64, p: f64, theta: f64) -> f64 {
    if theta.abs() < 1e-5 {
        return p * (1.0 + theta * (1.0 - p) * (u - 0.5));
    }
    if theta < 0.0 {
        return 1.0 - frank_hinv_pos(u, 1.0 - p, -theta);
    }
    frank_hinv_pos(u, p, theta)
}

fn frank_hinv_pos(u: f64, p: f64, theta: f64) -> f64 {
    debug_assert!(theta > 0.0);
    let a = (-theta * u).exp();
    let denom = a * (1.0 - p) + p;
    let x = p * (-theta).exp_m1() / denom;
    if x > -0.5 {
        -x.ln_1p() / theta
    } else {
        // 1 + x written without cancellation: (a(1-p) + p e^{-theta}) / denom
        let num = a * (1.0 - p) + p * (-theta).exp();
        -(num.ln() - denom.ln()) / theta
    }
}

/// ln(e^a + e^b - 1) for a, b >= 0 without overflow.
fn clayton_ln_s(a: f64, b: f64) -> f64 {
    if a.max(b) < 30.0 {
        (a.exp_m1() + b.exp_m1()).ln_1p()
    } else {
        let m = a.max(b);
        let n = a.min(b);
        m + ((n - m).exp() - (-m).exp()).ln_1p()
    }
}

fn clayton_hfunc(u: f64, v: f64, theta: f64) -> f64 {
    let a = -theta * u.ln();
    let b = -theta * v.ln();
    let ln_s = clayton_ln_s(a, b);
    ((1.0 + theta) / theta * (a - ln_s)).exp()
}

fn clayton_hinv(u: f64, p: f64, theta: f64) -> f64 {
    let c = theta / (1.0 + theta);
    // b = ln(1 + u^{-theta} (p^{-c} - 1)) via softplus, stable for large theta
    let t = (-c * p.ln()).exp_m1().ln();
    let b = softplus(t - theta * u.ln());
    (-b / theta).exp()
}

/// Kendall tau of the Frank copula via the Debye function; odd in theta.
pub fn frank_tau(theta: f64) -> f64 {
    if theta.abs() < 1e-5 {
        return theta / 9.0 * (1.0 - theta * theta / 100.0);
    }
    1.0 - 4.0 / theta * (1.0 - debye1(theta))
}

/// Inverse of `frank_tau` by bisection; |theta| capped at 300, which covers
/// taus well beyond the modeled range.
pub fn frank_theta_from_tau(tau: f64) -> Result<f64> {
    if !(tau > -1.0 && tau < 1.0) {
        return Err(Error::domain(format!("Frank tau must lie in (-1,1), got {tau}")));
    }
    if tau == 0.0 {
        return Ok(0.0);
    }
    let t = tau.abs();
    let mut hi = 50.0_f64;
    while frank_tau(hi) < t && hi < 300.0 {
        hi = (2.0 * hi).min(300.0);
    }
    if frank_tau(hi) < t {
        return Err(Error::domain(format!(
            "Frank tau {tau} is outside the invertible range at |theta| <= 300"
        )));
    }
    let mut lo = 0.0_f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frank_tau(mid) < t {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * (1.0 + hi) {
            break;
        }
    }
    Ok(tau.signum() * 0.5 * (lo + hi))
}
