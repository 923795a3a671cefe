//! Study data model, parameter sets, and within-study probability kernels.
//!
//! A meta-analysis dataset is a list of [`StudyRecord`]s. Each study either
//! reports every test result cross-classified against a gold standard
//! ([`StudyDesign::GoldPlusTests`]) or reports the 2x2 cross-table of two
//! tests with no gold standard ([`StudyDesign::NoGoldTwoTests`]).
//!
//! Conditional on a latent point (a realisation of study-level prevalence,
//! sensitivities, and specificities), subjects are independent, so the
//! within-study likelihood factors into the closed-form kernels
//! [`within_diseased_log`], [`within_nondiseased_log`], and
//! [`within_no_gold_log`]. Integrating those kernels over the vine copula
//! grid is the job of the [`likelihood`] submodule.

use crate::copula::{CopulaFamily, CopulaPair};
use crate::error::{Error, Result};
use crate::stats::{LinkFunction, Margin, MarginFamily};
use crate::vine::VineSpec;

mod likelihood;

pub use likelihood::{joint_loglik, study_loglik};

/// Cross-classification of one test against the gold standard within one
/// study. `test` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TestCounts {
    pub test: usize,
    /// Test positive among diseased.
    pub tp: u64,
    /// Test negative among diseased.
    pub fn_: u64,
    /// Test positive among non-diseased.
    pub fp: u64,
    /// Test negative among non-diseased.
    pub tn: u64,
}

/// The reporting design of a single study.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StudyDesign {
    /// Gold standard applied to everyone; any subset of the tests reported.
    GoldPlusTests {
        n_diseased: u64,
        n_nondiseased: u64,
        tests: Vec<TestCounts>,
    },
    /// Two tests cross-classified, disease status unobserved. `m11` counts
    /// subjects positive on both tests, `m10` positive on the first only,
    /// and so on.
    NoGoldTwoTests {
        tests: (usize, usize),
        m11: u64,
        m10: u64,
        m01: u64,
        m00: u64,
    },
}

/// One study in a meta-analysis dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StudyRecord {
    pub id: String,
    pub design: StudyDesign,
}

impl StudyRecord {
    /// Structural validation against a model with `k` tests.
    pub fn validate(&self, k: usize) -> Result<()> {
        match &self.design {
            StudyDesign::GoldPlusTests {
                n_diseased,
                n_nondiseased,
                tests,
            } => {
                if tests.is_empty() {
                    return Err(Error::invalid_data(format!(
                        "study {}: gold-standard design reports no tests",
                        self.id
                    )));
                }
                let mut seen = vec![false; k];
                for tc in tests {
                    if tc.test == 0 || tc.test > k {
                        return Err(Error::invalid_data(format!(
                            "study {}: test index {} outside 1..={k}",
                            self.id, tc.test
                        )));
                    }
                    if std::mem::replace(&mut seen[tc.test - 1], true) {
                        return Err(Error::invalid_data(format!(
                            "study {}: test {} reported twice",
                            self.id, tc.test
                        )));
                    }
                    if tc.tp + tc.fn_ != *n_diseased {
                        return Err(Error::invalid_data(format!(
                            "study {}: test {}: tp + fn = {} but n_diseased = {}",
                            self.id,
                            tc.test,
                            tc.tp + tc.fn_,
                            n_diseased
                        )));
                    }
                    if tc.fp + tc.tn != *n_nondiseased {
                        return Err(Error::invalid_data(format!(
                            "study {}: test {}: fp + tn = {} but n_nondiseased = {}",
                            self.id,
                            tc.test,
                            tc.fp + tc.tn,
                            n_nondiseased
                        )));
                    }
                }
                Ok(())
            }
            StudyDesign::NoGoldTwoTests { tests: (a, b), .. } => {
                if *a == 0 || *a > k || *b == 0 || *b > k {
                    return Err(Error::invalid_data(format!(
                        "study {}: test pair ({a}, {b}) outside 1..={k}",
                        self.id
                    )));
                }
                if a == b {
                    return Err(Error::invalid_data(format!(
                        "study {}: no-gold design needs two distinct tests, got ({a}, {b})",
                        self.id
                    )));
                }
                Ok(())
            }
        }
    }

    /// Total number of subjects in the study.
    pub fn size(&self) -> u64 {
        match &self.design {
            StudyDesign::GoldPlusTests {
                n_diseased,
                n_nondiseased,
                ..
            } => n_diseased + n_nondiseased,
            StudyDesign::NoGoldTwoTests {
                m11, m10, m01, m00, ..
            } => m11 + m10 + m01 + m00,
        }
    }

    pub fn is_no_gold(&self) -> bool {
        matches!(self.design, StudyDesign::NoGoldTwoTests { .. })
    }
}

/// Whether a dependence parameter sits at a Fréchet boundary.
///
/// `Upper` replaces the pair copula by the comonotonic bound, `Lower` by the
/// countermonotonic bound; the associated `tau` entry is then reported as
/// +/-0.95 by convention and is not a free parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryFlag {
    Free,
    Upper,
    Lower,
}

impl BoundaryFlag {
    pub fn is_free(self) -> bool {
        matches!(self, BoundaryFlag::Free)
    }
}

/// Full parameter vector of the model for `k` tests.
///
/// Canonical ordering, used everywhere a flat layout is needed (optimizer
/// coordinates, standard-error reporting): prevalence, sensitivities
/// `1..=k`, specificities `1..=k`, prevalence dispersion, sensitivity
/// dispersions, specificity dispersions, sensitivity taus, specificity taus.
///
/// Vine pair order is sensitivities first, then specificities, each `1..=k`,
/// matching the tau ordering here.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    /// Overall prevalence (median on the link scale).
    pub prevalence: f64,
    /// Overall sensitivity per test.
    pub sens: Vec<f64>,
    /// Overall specificity per test.
    pub spec: Vec<f64>,
    /// Dispersion of the prevalence margin.
    pub delta_prev: f64,
    /// Dispersion of each sensitivity margin.
    pub delta_sens: Vec<f64>,
    /// Dispersion of each specificity margin.
    pub delta_spec: Vec<f64>,
    /// Kendall's tau between prevalence and each sensitivity.
    pub tau_sens: Vec<f64>,
    /// Kendall's tau between prevalence and each specificity.
    pub tau_spec: Vec<f64>,
    /// Boundary status of each dependence parameter, vine pair order
    /// (length `2k`).
    pub boundary: Vec<BoundaryFlag>,
}

impl ParameterSet {
    /// Number of scalar parameters for a `k`-test model: `2 + 6k`.
    pub const fn n_params(k: usize) -> usize {
        2 + 6 * k
    }

    /// A parameter set with every boundary flag set to `Free`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        prevalence: f64,
        sens: Vec<f64>,
        spec: Vec<f64>,
        delta_prev: f64,
        delta_sens: Vec<f64>,
        delta_spec: Vec<f64>,
        tau_sens: Vec<f64>,
        tau_spec: Vec<f64>,
    ) -> Self {
        let k2 = 2 * sens.len();
        ParameterSet {
            prevalence,
            sens,
            spec,
            delta_prev,
            delta_sens,
            delta_spec,
            tau_sens,
            tau_spec,
            boundary: vec![BoundaryFlag::Free; k2],
        }
    }

    pub fn k(&self) -> usize {
        self.sens.len()
    }

    /// Tau for vine pair `idx` (sensitivities `0..k`, specificities `k..2k`).
    pub fn tau_at(&self, idx: usize) -> f64 {
        let k = self.k();
        if idx < k {
            self.tau_sens[idx]
        } else {
            self.tau_spec[idx - k]
        }
    }

    /// Validate ranges and shapes against a model specification.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let k = spec.k;
        if self.sens.len() != k
            || self.spec.len() != k
            || self.delta_sens.len() != k
            || self.delta_spec.len() != k
            || self.tau_sens.len() != k
            || self.tau_spec.len() != k
            || self.boundary.len() != 2 * k
        {
            return Err(Error::invalid_argument(format!(
                "parameter set shaped for {} tests, model has {k}",
                self.k()
            )));
        }
        let open_unit = |name: &str, x: f64| -> Result<()> {
            if x > 0.0 && x < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid_argument(format!(
                    "{name} = {x} outside (0, 1)"
                )))
            }
        };
        open_unit("prevalence", self.prevalence)?;
        for (i, &s) in self.sens.iter().enumerate() {
            open_unit(&format!("sens[{}]", i + 1), s)?;
        }
        for (i, &s) in self.spec.iter().enumerate() {
            open_unit(&format!("spec[{}]", i + 1), s)?;
        }
        let disp_ok = |name: &str, d: f64| -> Result<()> {
            let ok = match spec.margin.family {
                MarginFamily::Normal => d > 0.0 && d.is_finite(),
                MarginFamily::Beta => d > 0.0 && d < 1.0,
            };
            if ok {
                Ok(())
            } else {
                Err(Error::invalid_argument(format!(
                    "dispersion {name} = {d} invalid for {} margin",
                    spec.margin.family.name()
                )))
            }
        };
        disp_ok("delta_prev", self.delta_prev)?;
        for (i, &d) in self.delta_sens.iter().enumerate() {
            disp_ok(&format!("delta_sens[{}]", i + 1), d)?;
        }
        for (i, &d) in self.delta_spec.iter().enumerate() {
            disp_ok(&format!("delta_spec[{}]", i + 1), d)?;
        }
        let (lo, hi) = spec.family.tau_range();
        for idx in 0..2 * k {
            if self.boundary[idx].is_free() {
                let t = self.tau_at(idx);
                if !(t > lo && t < hi) {
                    return Err(Error::invalid_argument(format!(
                        "tau[{idx}] = {t} outside ({lo}, {hi}) for family {}",
                        spec.family
                    )));
                }
            }
        }
        Ok(())
    }

    /// Build the vine specification implied by the taus and boundary flags
    /// under `family`.
    pub fn vine_spec(&self, family: CopulaFamily) -> Result<VineSpec> {
        let mut pairs = Vec::with_capacity(2 * self.k());
        for idx in 0..2 * self.k() {
            let pair = match self.boundary[idx] {
                BoundaryFlag::Free => family.pair_from_tau(self.tau_at(idx))?,
                BoundaryFlag::Upper => CopulaPair::comonotonic(),
                BoundaryFlag::Lower => CopulaPair::countermonotonic(),
            };
            pairs.push(pair);
        }
        VineSpec::new(pairs)
    }
}

/// Model configuration: number of tests, copula family shared by all vine
/// pairs, margin family with its link, and quadrature size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub k: usize,
    pub family: CopulaFamily,
    pub margin: Margin,
    pub nq: usize,
}

/// Default number of Gauss-Legendre nodes per latent dimension.
pub const DEFAULT_NQ: usize = 15;

impl ModelSpec {
    pub fn new(
        k: usize,
        family: CopulaFamily,
        margin_family: MarginFamily,
        link: LinkFunction,
        nq: usize,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid_argument("model needs at least one test"));
        }
        if !(1..=60).contains(&nq) {
            return Err(Error::invalid_argument(format!(
                "quadrature size {nq} outside 1..=60"
            )));
        }
        // Beta margins parameterise the proportion scale directly; link
        // functions only make sense for normal margins, and normal margins
        // need one to stay inside (0, 1).
        match (margin_family, link) {
            (MarginFamily::Beta, LinkFunction::Identity) => {}
            (MarginFamily::Beta, l) => {
                return Err(Error::invalid_argument(format!(
                    "beta margins require the identity link, got {}",
                    l.name()
                )));
            }
            (MarginFamily::Normal, LinkFunction::Identity) => {
                return Err(Error::invalid_argument(
                    "normal margins require a logit, probit, or cloglog link",
                ));
            }
            (MarginFamily::Normal, _) => {}
        }
        Ok(ModelSpec {
            k,
            family,
            margin: Margin {
                family: margin_family,
                link,
            },
            nq,
        })
    }
}

/// A realisation of the latent study-level accuracy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPoint {
    pub prev: f64,
    /// Sensitivity per test, `1..=k`.
    pub se: Vec<f64>,
    /// Specificity per test, `1..=k`.
    pub sp: Vec<f64>,
}

impl LatentPoint {
    pub fn new(prev: f64, se: Vec<f64>, sp: Vec<f64>) -> Result<Self> {
        let ok = |x: f64| x > 0.0 && x < 1.0;
        if !ok(prev) || !se.iter().all(|&x| ok(x)) || !sp.iter().all(|&x| ok(x)) {
            return Err(Error::invalid_argument(
                "latent proportions must lie in (0, 1)",
            ));
        }
        if se.len() != sp.len() {
            return Err(Error::invalid_argument(
                "latent point needs one sensitivity and one specificity per test",
            ));
        }
        Ok(LatentPoint { prev, se, sp })
    }
}

/// `count * log` with the convention `0 * log = 0` even when the log is
/// `-inf` (a zero count must never poison a likelihood with NaN).
#[inline]
fn count_mul(count: u64, log: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        count as f64 * log
    }
}

/// Log-probability of the diseased stratum of a gold-standard study given a
/// latent point: `n1 * ln(prev) + sum_k [tp ln(se_k) + fn ln(1 - se_k)]`.
pub fn within_diseased_log(n_diseased: u64, tests: &[TestCounts], point: &LatentPoint) -> f64 {
    let mut lp = count_mul(n_diseased, point.prev.ln());
    for tc in tests {
        let se = point.se[tc.test - 1];
        lp += count_mul(tc.tp, se.ln());
        lp += count_mul(tc.fn_, (1.0 - se).ln());
    }
    lp
}

/// Log-probability of the non-diseased stratum of a gold-standard study:
/// `n0 * ln(1 - prev) + sum_k [tn ln(sp_k) + fp ln(1 - sp_k)]`.
pub fn within_nondiseased_log(n_nondiseased: u64, tests: &[TestCounts], point: &LatentPoint) -> f64 {
    let mut lp = count_mul(n_nondiseased, (1.0 - point.prev).ln());
    for tc in tests {
        let sp = point.sp[tc.test - 1];
        lp += count_mul(tc.tn, sp.ln());
        lp += count_mul(tc.fp, (1.0 - sp).ln());
    }
    lp
}

/// Joint result-pattern probabilities for two tests with unknown disease
/// status, in the order `(1,1), (1,0), (0,1), (0,0)` where the first index
/// is the result of test `k1`. Each cell mixes the diseased and
/// non-diseased pattern probabilities by prevalence; the four cells sum to
/// one.
pub fn cell_probs(point: &LatentPoint, k1: usize, k2: usize) -> [f64; 4] {
    let d = point.prev;
    let (se1, se2) = (point.se[k1 - 1], point.se[k2 - 1]);
    let (sp1, sp2) = (point.sp[k1 - 1], point.sp[k2 - 1]);
    [
        d * se1 * se2 + (1.0 - d) * (1.0 - sp1) * (1.0 - sp2),
        d * se1 * (1.0 - se2) + (1.0 - d) * (1.0 - sp1) * sp2,
        d * (1.0 - se1) * se2 + (1.0 - d) * sp1 * (1.0 - sp2),
        d * (1.0 - se1) * (1.0 - se2) + (1.0 - d) * sp1 * sp2,
    ]
}

/// Log-probability of an observed no-gold cross-table `[m11, m10, m01, m00]`
/// given a latent point.
pub fn within_no_gold_log(m: &[u64; 4], k1: usize, k2: usize, point: &LatentPoint) -> f64 {
    let p = cell_probs(point, k1, k2);
    let mut lp = 0.0;
    for (count, prob) in m.iter().zip(p) {
        lp += count_mul(*count, prob.ln());
    }
    lp
}
