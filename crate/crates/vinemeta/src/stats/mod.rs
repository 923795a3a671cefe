//! Statistical primitives shared by every layer: link functions, latent
//! margins (normal-on-link-scale and beta in mean-dispersion form),
//! Gauss-Legendre quadrature, special functions, and the study-size
//! distribution used by the simulator.

pub mod beta;
pub mod debye;
pub mod normal;
pub mod quad;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use quad::QuadratureRule;

/// Streaming log-sum-exp accumulator: `value()` returns
/// `ln(sum_i exp(x_i))` over everything pushed, without materialising the
/// terms. `-inf` inputs are exact zero contributions and are skipped.
#[derive(Debug, Clone)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    pub fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

/// Link functions mapping a proportion in (0,1) to the latent scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    Logit,
    Probit,
    Cloglog,
    Identity,
}

impl LinkFunction {
    /// l(p). Errors if p is outside (0,1).
    pub fn apply(self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!(
                "link argument must lie in (0,1), got {p}"
            )));
        }
        Ok(match self {
            LinkFunction::Logit => (p / (1.0 - p)).ln(),
            LinkFunction::Probit => normal::norm_quantile(p),
            LinkFunction::Cloglog => (-(-p).ln_1p()).ln(),
            LinkFunction::Identity => p,
        })
    }

    /// l^{-1}(x); total on the real line for the three latent links, clamping
    /// only the identity link back onto (0,1).
    pub fn inverse(self, x: f64) -> f64 {
        match self {
            LinkFunction::Logit => {
                // numerically symmetric sigmoid
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            LinkFunction::Probit => normal::norm_cdf(x),
            LinkFunction::Cloglog => -(-x.exp()).exp_m1(),
            LinkFunction::Identity => x.clamp(f64::MIN_POSITIVE, 1.0 - 1e-16),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LinkFunction::Logit => "logit",
            LinkFunction::Probit => "probit",
            LinkFunction::Cloglog => "cloglog",
            LinkFunction::Identity => "identity",
        }
    }
}

impl std::str::FromStr for LinkFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(LinkFunction::Logit),
            "probit" => Ok(LinkFunction::Probit),
            "cloglog" => Ok(LinkFunction::Cloglog),
            "identity" => Ok(LinkFunction::Identity),
            other => Err(Error::invalid_argument(format!("unknown link '{other}'"))),
        }
    }
}

/// Parametric family of the latent margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginFamily {
    /// Normal on the link scale: X ~ N(l(pi), delta), delta = sigma > 0.
    Normal,
    /// Beta(pi, gamma) on the proportion scale (identity link only);
    /// delta = gamma in (0,1), Var = pi(1-pi)gamma.
    Beta,
}

impl MarginFamily {
    pub fn name(self) -> &'static str {
        match self {
            MarginFamily::Normal => "normal",
            MarginFamily::Beta => "beta",
        }
    }
}

impl std::str::FromStr for MarginFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(MarginFamily::Normal),
            "beta" => Ok(MarginFamily::Beta),
            other => Err(Error::invalid_argument(format!("unknown margin '{other}'"))),
        }
    }
}

/// A margin plus its link: everything needed to turn a copula uniform into a
/// latent proportion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin {
    pub family: MarginFamily,
    pub link: LinkFunction,
}

impl Margin {
    /// Quantile of the latent variable (link scale for normal margins,
    /// proportion scale for beta margins).
    pub fn quantile(&self, pi: f64, delta: f64, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::domain(format!(
                "margin quantile level must lie in (0,1), got {u}"
            )));
        }
        match self.family {
            MarginFamily::Normal => {
                if delta.is_nan() || delta <= 0.0 {
                    return Err(Error::domain(format!(
                        "normal margin needs sigma > 0, got {delta}"
                    )));
                }
                Ok(self.link.apply(pi)? + delta * normal::norm_quantile(u))
            }
            MarginFamily::Beta => {
                let (a, b) = beta::beta_shapes(pi, delta)?;
                Ok(beta::beta_quantile(a, b, u))
            }
        }
    }

    /// CDF of the latent variable at x (x on the margin's natural scale).
    pub fn cdf(&self, pi: f64, delta: f64, x: f64) -> Result<f64> {
        match self.family {
            MarginFamily::Normal => {
                if delta.is_nan() || delta <= 0.0 {
                    return Err(Error::domain(format!(
                        "normal margin needs sigma > 0, got {delta}"
                    )));
                }
                Ok(normal::norm_cdf((x - self.link.apply(pi)?) / delta))
            }
            MarginFamily::Beta => {
                let (a, b) = beta::beta_shapes(pi, delta)?;
                Ok(beta::betainc_reg(a, b, x))
            }
        }
    }

    /// Latent proportion at copula level u: l^{-1}(F^{-1}(u)).
    ///
    /// Hot path of the likelihood; parameters are assumed pre-validated.
    pub fn proportion_at(&self, pi: f64, delta: f64, u: f64) -> f64 {
        match self.family {
            MarginFamily::Normal => {
                let x = self.link.apply(pi).expect("validated pi")
                    + delta * normal::norm_quantile(u);
                self.link.inverse(x)
            }
            MarginFamily::Beta => {
                let (a, b) = beta::beta_shapes(pi, delta).expect("validated (pi, gamma)");
                beta::beta_quantile(a, b, u)
            }
        }
    }
}

/// Study-size distribution: round(shift + Gamma(shape, rate)), floored at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    pub shape: f64,
    pub rate: f64,
    pub shift: f64,
}

impl Default for SizeDistribution {
    fn default() -> Self {
        SizeDistribution {
            shape: 1.2,
            rate: 0.01,
            shift: 30.0,
        }
    }
}

impl SizeDistribution {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.rate > 0.0 && self.shift >= 0.0) {
            return Err(Error::invalid_argument(format!(
                "size distribution needs shape > 0, rate > 0, shift >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Draw one study size.
    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        let gamma = Gamma::new(self.shape, 1.0 / self.rate).expect("validated parameters");
        let raw: f64 = gamma.sample(rng) + self.shift;
        (raw.round() as i64).max(1) as u64
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate + self.shift
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_sum_exp_streams_correctly() {
        let xs = [-700.0, -702.5, -699.1, -710.0];
        let mut lse = LogSumExp::new();
        for &x in &xs {
            lse.push(x);
        }
        // Reference: shift by the max and sum directly.
        let m = -699.1;
        let want = m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        assert!((lse.value() - want).abs() < 1e-12);

        let mut empty = LogSumExp::new();
        assert_eq!(empty.value(), f64::NEG_INFINITY);
        empty.push(f64::NEG_INFINITY);
        assert_eq!(empty.value(), f64::NEG_INFINITY);
        empty.push(0.0);
        assert!((empty.value() - 0.0).abs() < 1e-15);
    }

    #[test]
    fn link_values_match_reference() {
        // logit(0.8) = ln 4
        assert!((LinkFunction::Logit.apply(0.8).unwrap() - 4.0_f64.ln()).abs() < 1e-15);
        // probit(0.975)
        assert!(
            (LinkFunction::Probit.apply(0.975).unwrap() - 1.9599639845400542).abs() < 1e-13
        );
        // cloglog(0.3) = ln(-ln 0.7)
        let want = (-(0.7_f64).ln()).ln();
        assert!((LinkFunction::Cloglog.apply(0.3).unwrap() - want).abs() < 1e-15);
        assert_eq!(LinkFunction::Identity.apply(0.42).unwrap(), 0.42);
    }

    #[test]
    fn links_round_trip() {
        for link in [
            LinkFunction::Logit,
            LinkFunction::Probit,
            LinkFunction::Cloglog,
            LinkFunction::Identity,
        ] {
            for i in 1..50 {
                let p = i as f64 / 50.0;
                let back = link.inverse(link.apply(p).unwrap());
                assert!(
                    (back - p).abs() < 1e-12,
                    "{link:?} round trip at {p}: {back}"
                );
            }
        }
    }

    #[test]
    fn links_reject_boundary() {
        for link in [LinkFunction::Logit, LinkFunction::Probit, LinkFunction::Identity] {
            assert!(link.apply(0.0).is_err());
            assert!(link.apply(1.0).is_err());
            assert!(link.apply(-0.2).is_err());
        }
    }

    #[test]
    fn normal_margin_quantile_is_affine_in_probit() {
        let m = Margin {
            family: MarginFamily::Normal,
            link: LinkFunction::Logit,
        };
        let x = m.quantile(0.8, 0.3, 0.975).unwrap();
        let want = 4.0_f64.ln() + 0.3 * 1.9599639845400542;
        assert!((x - want).abs() < 1e-12);
        // CDF inverts it
        assert!((m.cdf(0.8, 0.3, x).unwrap() - 0.975).abs() < 1e-12);
    }

    #[test]
    fn beta_margin_quantile_matches_reference() {
        let m = Margin {
            family: MarginFamily::Beta,
            link: LinkFunction::Identity,
        };
        // median of Beta(7.6, 11.4) — mean-dispersion (0.4, 0.05)
        let x = m.quantile(0.4, 0.05, 0.5).unwrap();
        assert!((x - 0.396_420_771_722_098_8).abs() < 1e-10);
        assert!((m.cdf(0.4, 0.05, x).unwrap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn proportion_at_stays_in_unit_interval() {
        let margins = [
            Margin {
                family: MarginFamily::Normal,
                link: LinkFunction::Logit,
            },
            Margin {
                family: MarginFamily::Normal,
                link: LinkFunction::Probit,
            },
            Margin {
                family: MarginFamily::Normal,
                link: LinkFunction::Cloglog,
            },
            Margin {
                family: MarginFamily::Beta,
                link: LinkFunction::Identity,
            },
        ];
        for m in margins {
            for &u in &[1e-9, 0.02, 0.5, 0.98, 1.0 - 1e-9] {
                let p = m.proportion_at(0.7, 0.1, u);
                assert!(p > 0.0 && p < 1.0, "{m:?} at u={u}: {p}");
            }
        }
    }

    #[test]
    fn size_distribution_moments() {
        let d = SizeDistribution::default();
        assert_eq!(d.mean(), 150.0);
        assert!((d.variance() - 12000.0).abs() < 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut min = u64::MAX;
        for _ in 0..n {
            let s = d.sample(&mut rng);
            min = min.min(s);
            sum += s as f64;
            sum2 += (s * s) as f64;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!((mean - 150.0).abs() < 2.0, "mean={mean}");
        assert!((var - 12000.0).abs() < 0.05 * 12000.0, "var={var}");
        assert!(min >= 30, "shift puts every size at 30+ (got {min})");
    }

    #[test]
    fn exponential_special_case_ks() {
        // shape = 1, shift = 0: sizes are round(Exp(rate)); KS distance of the
        // underlying draws against Exp CDF must be small
        let d = SizeDistribution {
            shape: 1.0,
            rate: 0.02,
            shift: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 50_000usize;
        let mut counts = vec![0u32; 2000];
        for _ in 0..n {
            let s = d.sample(&mut rng) as usize;
            counts[s.min(1999)] += 1;
        }
        // the rounded variable has CDF F(x + 1/2) at each integer x; compare
        // the empirical CDF against that exactly
        let mut cum = 0.0;
        let mut ks: f64 = 0.0;
        for (x, &c) in counts.iter().enumerate() {
            cum += c as f64 / n as f64;
            let f = 1.0 - (-(x as f64 + 0.5) * 0.02).exp();
            ks = ks.max((f - cum).abs());
        }
        assert!(ks < 0.01, "KS distance {ks}");
    }
}
