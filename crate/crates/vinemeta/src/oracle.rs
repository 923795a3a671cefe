//! Brute-force likelihood validators.
//!
//! Two independent evaluators cross-check the production quadrature path:
//! [`mc_study_likelihood`] integrates the study integrand by plain Monte
//! Carlo over fresh vine samples, and [`naive_grid_likelihood`] evaluates
//! the full (2K+1)-dimensional tensor-product quadrature sum with no
//! factorisation, batching, or dimension reduction.
//!
//! Both deliberately reimplement the integrand arithmetic from the model
//! definition rather than calling the production evaluator's internals;
//! shared code is limited to statistical primitives (margins, quadrature
//! rules, log-sum-exp) and the pair-copula h-function inverses. They live
//! in the library, not in test files, so the command-line `verify` mode can
//! run them against the fast path on demand.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParameterSet, StudyDesign, StudyRecord};
use crate::stats::{LogSumExp, QuadratureRule};

/// Outcome of one oracle-versus-production comparison.
#[derive(Debug, Clone, Copy)]
pub struct OracleReport {
    /// Value from the brute-force oracle.
    pub oracle: f64,
    /// Value from the production path under test.
    pub main: f64,
    /// Monte Carlo standard error of `oracle`, when it is an MC estimate.
    pub mc_se: Option<f64>,
    /// Deterministic tolerance on `|main - oracle|`.
    pub tolerance: f64,
    /// Whether the comparison passed.
    pub pass: bool,
}

impl OracleReport {
    /// Pass iff `|main - oracle| <= max(3 * mc_se, tolerance)`.
    pub fn compare(oracle: f64, main: f64, mc_se: Option<f64>, tolerance: f64) -> Self {
        let slack = match mc_se {
            Some(se) => (3.0 * se).max(tolerance),
            None => tolerance,
        };
        OracleReport {
            oracle,
            main,
            mc_se,
            tolerance,
            pass: (main - oracle).abs() <= slack,
        }
    }

    /// Absolute discrepancy between the two values.
    pub fn abs_error(&self) -> f64 {
        (self.main - self.oracle).abs()
    }
}

/// Log of the study integrand at one latent point, written straight from
/// the model definition (aggregate products of subject-level
/// probabilities; no binomial coefficients).
fn log_integrand(study: &StudyRecord, prev: f64, se: &[f64], sp: &[f64]) -> f64 {
    // 0 * ln(0) is an empty product, not NaN.
    fn pow_log(count: u64, p: f64) -> f64 {
        if count == 0 {
            0.0
        } else {
            count as f64 * p.ln()
        }
    }
    match &study.design {
        StudyDesign::GoldPlusTests {
            n_diseased,
            n_nondiseased,
            tests,
        } => {
            let mut lp = pow_log(*n_diseased, prev) + pow_log(*n_nondiseased, 1.0 - prev);
            for tc in tests {
                let (s, c) = (se[tc.test - 1], sp[tc.test - 1]);
                lp += pow_log(tc.tp, s) + pow_log(tc.fn_, 1.0 - s);
                lp += pow_log(tc.tn, c) + pow_log(tc.fp, 1.0 - c);
            }
            lp
        }
        StudyDesign::NoGoldTwoTests {
            tests: (t1, t2),
            m11,
            m10,
            m01,
            m00,
        } => {
            let (s1, s2) = (se[t1 - 1], se[t2 - 1]);
            let (c1, c2) = (sp[t1 - 1], sp[t2 - 1]);
            let d = prev;
            let nd = 1.0 - prev;
            pow_log(*m11, d * s1 * s2 + nd * (1.0 - c1) * (1.0 - c2))
                + pow_log(*m10, d * s1 * (1.0 - s2) + nd * (1.0 - c1) * c2)
                + pow_log(*m01, d * (1.0 - s1) * s2 + nd * c1 * (1.0 - c2))
                + pow_log(*m00, d * (1.0 - s1) * (1.0 - s2) + nd * c1 * c2)
        }
    }
}

/// Monte Carlo estimate of the study likelihood (linear scale): the mean of
/// the integrand over `n_draws` fresh samples of the latent vector, with
/// its standard error. Sampling walks the vine directly: a uniform root,
/// then one h-function inversion per pair.
pub fn mc_study_likelihood<R: Rng + ?Sized>(
    study: &StudyRecord,
    params: &ParameterSet,
    spec: &ModelSpec,
    n_draws: u64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if n_draws < 1_000 {
        return Err(Error::invalid_argument(format!(
            "Monte Carlo oracle needs at least 1000 draws, got {n_draws}"
        )));
    }
    study.validate(spec.k)?;
    params.validate(spec)?;
    let vine = params.vine_spec(spec.family)?;
    let pairs = vine.pairs();
    let k = spec.k;
    let margin = spec.margin;

    let mut mean = 0.0_f64;
    let mut m2 = 0.0_f64;
    let mut se = vec![0.0_f64; k];
    let mut sp = vec![0.0_f64; k];
    for i in 0..n_draws {
        let u: f64 = rng.gen();
        let prev = margin.proportion_at(params.prevalence, params.delta_prev, u);
        for (idx, pair) in pairs.iter().enumerate() {
            let p: f64 = rng.gen();
            let v = pair.hinv(u, p);
            if idx < k {
                se[idx] = margin.proportion_at(params.sens[idx], params.delta_sens[idx], v);
            } else {
                sp[idx - k] =
                    margin.proportion_at(params.spec[idx - k], params.delta_spec[idx - k], v);
            }
        }
        let f = log_integrand(study, prev, &se, &sp).exp();
        // Welford update.
        let delta = f - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (f - mean);
    }
    let var = m2 / (n_draws - 1) as f64;
    Ok((mean, (var / n_draws as f64).sqrt()))
}

/// The unoptimised reference quadrature evaluation: a full tensor sum over
/// all 2K+1 latent dimensions, whether or not the study reports every test,
/// returned as a log-likelihood.
///
/// Cost grows as `nq^(2K+1)`, so models with more than two tests are
/// refused.
pub fn naive_grid_likelihood(
    study: &StudyRecord,
    params: &ParameterSet,
    spec: &ModelSpec,
    rule: &QuadratureRule,
) -> Result<f64> {
    if spec.k > 2 {
        return Err(Error::invalid_argument(format!(
            "naive grid oracle is limited to K <= 2 tests (cost nq^(2K+1)), got K = {}",
            spec.k
        )));
    }
    study.validate(spec.k)?;
    params.validate(spec)?;
    let vine = params.vine_spec(spec.family)?;
    let pairs = vine.pairs();
    let k = spec.k;
    let nq = rule.len();
    let nodes = &rule.nodes;
    let weights = &rule.weights;
    let margin = spec.margin;

    // Margin-transformed dependent nodes, built here from first principles:
    // node (q, j) of pair idx is hinv(root_q, u_j) pushed through the margin.
    let mut prop = vec![vec![0.0_f64; nq * nq]; 2 * k];
    for (idx, pair) in pairs.iter().enumerate() {
        let (pi, delta) = if idx < k {
            (params.sens[idx], params.delta_sens[idx])
        } else {
            (params.spec[idx - k], params.delta_spec[idx - k])
        };
        for q in 0..nq {
            for j in 0..nq {
                let v = pair.hinv(nodes[q], nodes[j]);
                prop[idx][q * nq + j] = margin.proportion_at(pi, delta, v);
            }
        }
    }
    let prev_t: Vec<f64> = nodes
        .iter()
        .map(|&u| margin.proportion_at(params.prevalence, params.delta_prev, u))
        .collect();
    let ln_w: Vec<f64> = weights.iter().map(|&w| w.ln()).collect();

    let mut lse = LogSumExp::new();
    let mut se = vec![0.0_f64; k];
    let mut sp = vec![0.0_f64; k];
    let mut idx = vec![0_usize; 2 * k];
    for q in 0..nq {
        idx.fill(0);
        'cells: loop {
            let mut lnw = ln_w[q];
            for d in 0..2 * k {
                lnw += ln_w[idx[d]];
                let v = prop[d][q * nq + idx[d]];
                if d < k {
                    se[d] = v;
                } else {
                    sp[d - k] = v;
                }
            }
            lse.push(lnw + log_integrand(study, prev_t[q], &se, &sp));
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] < nq {
                    break;
                }
                idx[d] = 0;
                d += 1;
                if d == 2 * k {
                    break 'cells;
                }
            }
        }
    }
    Ok(lse.value())
}
