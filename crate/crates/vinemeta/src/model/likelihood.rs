//! Study likelihood evaluation over the dependent quadrature grid.
//!
//! The joint density of the latent vector factors, conditional on the root
//! node, into independent one-dimensional conditionals (trees above the
//! first are independence copulas). Evaluation exploits that:
//!
//! * Gold-standard studies factor across tests given the root, so a study
//!   reporting `m` tests costs `O(m * nq^2)` instead of `O(nq^(2k+1))`.
//! * No-gold studies couple five latent dimensions (prevalence plus two
//!   sensitivities and two specificities) through the cell probabilities,
//!   so the full `O(nq^5)` tensor sum is required. The kernel below keeps
//!   that sum in linear scale with per-study Gibbs rescaling so the inner
//!   loop is pure multiply-add, and falls back to an exact streaming
//!   log-sum-exp when counts are large enough to underflow even the
//!   rescaled accumulator.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::stats::{LogSumExp, QuadratureRule};
use crate::vine::{build_grid, DependentGrid, PairGrid};

use super::{count_mul, ModelSpec, ParameterSet, StudyDesign, StudyRecord, TestCounts};

/// Below this value a rescaled linear accumulator is considered underflowed
/// and the study is re-evaluated in log space.
const UNDERFLOW_FLOOR: f64 = 1e-250;

/// Proportion tables over the dependent grid, shared by every study at one
/// parameter vector: the margin quantile transform applied to every grid
/// node, in linear and log scale.
pub(crate) struct LatentTables {
    nq: usize,
    k: usize,
    /// Quadrature weights of the underlying rule; root and conditional
    /// dimensions share the same rule.
    w: Vec<f64>,
    ln_w: Vec<f64>,
    prev: Vec<f64>,
    ln_prev: Vec<f64>,
    ln_1m_prev: Vec<f64>,
    /// One table per vine pair, sensitivities `1..=k` then specificities.
    pairs: Vec<PairTable>,
}

enum PairTable {
    /// Dependent dimension: `nq * nq` proportions, row-major by root index.
    Full {
        p: Vec<f64>,
        ln_p: Vec<f64>,
        ln_1m_p: Vec<f64>,
    },
    /// Degenerate (Fréchet-bound) dimension: one node per root index.
    Collapsed {
        p: Vec<f64>,
        ln_p: Vec<f64>,
        ln_1m_p: Vec<f64>,
    },
}

fn log_tables(p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ln_p = p.iter().map(|&x| x.ln()).collect();
    let ln_1m_p = p.iter().map(|&x| (1.0 - x).ln()).collect();
    (ln_p, ln_1m_p)
}

static UNIT_WEIGHT: [f64; 1] = [1.0];

impl LatentTables {
    pub(crate) fn build(
        params: &ParameterSet,
        spec: &ModelSpec,
        grid: &DependentGrid,
    ) -> Result<Self> {
        params.validate(spec)?;
        if grid.nq() != spec.nq || grid.pair_grids().len() != 2 * spec.k {
            return Err(Error::invalid_state(format!(
                "grid shape ({} nodes, {} pairs) does not match the model ({}, {})",
                grid.nq(),
                grid.pair_grids().len(),
                spec.nq,
                2 * spec.k
            )));
        }
        let margin = spec.margin;
        let w = grid.weights().to_vec();
        let ln_w = w.iter().map(|&x| x.ln()).collect();
        let prev: Vec<f64> = grid
            .root()
            .iter()
            .map(|&u| margin.proportion_at(params.prevalence, params.delta_prev, u))
            .collect();
        let (ln_prev, ln_1m_prev) = log_tables(&prev);
        let mut pairs = Vec::with_capacity(2 * spec.k);
        for idx in 0..2 * spec.k {
            let (pi, delta) = if idx < spec.k {
                (params.sens[idx], params.delta_sens[idx])
            } else {
                (params.spec[idx - spec.k], params.delta_spec[idx - spec.k])
            };
            let map = |us: &[f64]| -> Vec<f64> {
                us.iter()
                    .map(|&u| margin.proportion_at(pi, delta, u))
                    .collect()
            };
            pairs.push(match grid.pair_grid(idx) {
                PairGrid::Full(nodes) => {
                    let p = map(nodes);
                    let (ln_p, ln_1m_p) = log_tables(&p);
                    PairTable::Full { p, ln_p, ln_1m_p }
                }
                PairGrid::Collapsed(col) => {
                    let p = map(col);
                    let (ln_p, ln_1m_p) = log_tables(&p);
                    PairTable::Collapsed { p, ln_p, ln_1m_p }
                }
            });
        }
        Ok(LatentTables {
            nq: spec.nq,
            k: spec.k,
            w,
            ln_w,
            prev,
            ln_prev,
            ln_1m_prev,
            pairs,
        })
    }

    /// Linear-scale node values and weights of pair `idx` conditional on
    /// root node `q`. Collapsed dimensions carry a single node of weight 1.
    fn dim_nodes(&self, idx: usize, q: usize) -> (&[f64], &[f64]) {
        match &self.pairs[idx] {
            PairTable::Full { p, .. } => (&p[q * self.nq..(q + 1) * self.nq], &self.w),
            PairTable::Collapsed { p, .. } => (&p[q..=q], &UNIT_WEIGHT),
        }
    }

    /// `ln E[p^c_pos (1 - p)^c_neg | root q]` for pair `idx`, the
    /// expectation taken over the pair's conditional quadrature nodes.
    fn inner_log(&self, idx: usize, q: usize, c_pos: u64, c_neg: u64) -> f64 {
        match &self.pairs[idx] {
            PairTable::Collapsed { ln_p, ln_1m_p, .. } => {
                count_mul(c_pos, ln_p[q]) + count_mul(c_neg, ln_1m_p[q])
            }
            PairTable::Full { ln_p, ln_1m_p, .. } => {
                let row = q * self.nq..(q + 1) * self.nq;
                let (lp, l1p) = (&ln_p[row.clone()], &ln_1m_p[row]);
                // Two passes (max, then sum of exponentials); the terms are
                // cheap enough that recomputing beats allocating.
                let mut m = f64::NEG_INFINITY;
                for j in 0..self.nq {
                    let t = self.ln_w[j] + count_mul(c_pos, lp[j]) + count_mul(c_neg, l1p[j]);
                    if t > m {
                        m = t;
                    }
                }
                if m == f64::NEG_INFINITY {
                    return m;
                }
                let mut s = 0.0;
                for j in 0..self.nq {
                    let t = self.ln_w[j] + count_mul(c_pos, lp[j]) + count_mul(c_neg, l1p[j]);
                    s += (t - m).exp();
                }
                m + s.ln()
            }
        }
    }
}

/// Gold-standard study: the integrand factors across tests given the root,
/// so each reported test contributes an independent inner expectation.
fn gold_loglik(
    tables: &LatentTables,
    n_diseased: u64,
    n_nondiseased: u64,
    tests: &[TestCounts],
) -> f64 {
    let mut lse = LogSumExp::new();
    for q in 0..tables.nq {
        let mut lp = count_mul(n_diseased, tables.ln_prev[q])
            + count_mul(n_nondiseased, tables.ln_1m_prev[q]);
        for tc in tests {
            lp += tables.inner_log(tc.test - 1, q, tc.tp, tc.fn_);
            lp += tables.inner_log(tables.k + tc.test - 1, q, tc.tn, tc.fp);
        }
        lse.push(tables.ln_w[q] + lp);
    }
    lse.value()
}

/// Precomputed per-study quantities for the no-gold kernel.
struct NoGoldPrep {
    /// Index of the study in the caller's output vector.
    slot: usize,
    m: [u64; 4],
    /// `total / m_ab` for observed cells; rescaling each cell probability by
    /// this keeps the product `prod_ab (p_ab * inv_r_ab)^m_ab <= 1` (Gibbs'
    /// inequality, since the cells of a cross-table sum to one), so the
    /// linear accumulator cannot overflow.
    inv_r: [f64; 4],
    /// `sum_ab m_ab ln(m_ab / total)`, added back on the log scale.
    ln_r_weight: f64,
    max_bits: u32,
}

impl NoGoldPrep {
    /// `None` when the cross-table is empty (the study contributes zero
    /// log-likelihood).
    fn new(slot: usize, m: [u64; 4]) -> Option<Self> {
        let total: u64 = m.iter().sum();
        if total == 0 {
            return None;
        }
        let tf = total as f64;
        let mut inv_r = [1.0_f64; 4];
        let mut h = 0.0;
        for ab in 0..4 {
            if m[ab] > 0 {
                inv_r[ab] = tf / m[ab] as f64;
                h += m[ab] as f64 * (m[ab] as f64 / tf).ln();
            }
        }
        let max_m = *m.iter().max().expect("four cells");
        Some(NoGoldPrep {
            slot,
            m,
            inv_r,
            ln_r_weight: h,
            max_bits: 64 - max_m.leading_zeros(),
        })
    }
}

/// `out[c] = prod_ab bases[ab][c]^exps[ab]`, by simultaneous binary
/// exponentiation: one shared squaring pass per bit level, one multiply
/// pass per set bit. Reference implementation for `fused_product_powers`,
/// kept for the bit-identity test.
#[cfg(test)]
fn product_powers(out: &mut [f64], bases: [&[f64]; 4], exps: [u64; 4], max_bits: u32) {
    for x in out.iter_mut() {
        *x = 1.0;
    }
    let mut level = max_bits;
    while level > 0 {
        level -= 1;
        if level != max_bits - 1 {
            for x in out.iter_mut() {
                *x *= *x;
            }
        }
        for (ab, base) in bases.iter().enumerate() {
            if (exps[ab] >> level) & 1 == 1 {
                for (x, &b) in out.iter_mut().zip(*base) {
                    *x *= b;
                }
            }
        }
    }
}

/// `product_powers` for bases of the form `sa[c] + te`: the addition is
/// folded into the multiply passes instead of materialising the summed
/// vectors, and the first factor initialises the output directly. Squaring
/// the implicit leading `1.0` is exact, so the result is bit-identical to
/// summing first and calling `product_powers`.
fn fused_product_powers(
    out: &mut [f64],
    sa: &[Vec<f64>; 4],
    te: [f64; 4],
    exps: [u64; 4],
    max_bits: u32,
) {
    let mut started = false;
    let mut level = max_bits;
    while level > 0 {
        level -= 1;
        if started {
            for x in out.iter_mut() {
                *x *= *x;
            }
        }
        for ab in 0..4 {
            if (exps[ab] >> level) & 1 == 1 {
                let add = te[ab];
                if started {
                    for (x, &b) in out.iter_mut().zip(&sa[ab]) {
                        *x *= b + add;
                    }
                } else {
                    for (x, &b) in out.iter_mut().zip(&sa[ab]) {
                        *x = b + add;
                    }
                    started = true;
                }
            }
        }
    }
    if !started {
        out.fill(1.0);
    }
}

/// Weighted dot product accumulated in four fixed-order lanes so the sum
/// pipelines instead of serialising on floating-point add latency. The
/// lane split is independent of the data, so results stay deterministic.
fn weighted_dot(w: &[f64], v: &[f64]) -> f64 {
    let n = w.len().min(v.len());
    let mut lanes = [0.0_f64; 4];
    let mut i = 0;
    while i + 4 <= n {
        lanes[0] += w[i] * v[i];
        lanes[1] += w[i + 1] * v[i + 1];
        lanes[2] += w[i + 2] * v[i + 2];
        lanes[3] += w[i + 3] * v[i + 3];
        i += 4;
    }
    let mut total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    while i < n {
        total += w[i] * v[i];
        i += 1;
    }
    total
}

/// Evaluate a batch of no-gold studies sharing the same test pair.
///
/// Per root node the diseased pattern contributions depend only on the two
/// sensitivity nodes and the non-diseased contributions only on the two
/// specificity nodes, so both are tabulated once and every cell probability
/// in the `O(nq^4)` inner tensor is a single addition. Per-study
/// accumulators are advanced in the same `(root, cell)` order regardless of
/// batch composition, so a batch of one is bit-identical to the study's
/// contribution inside any larger batch.
fn no_gold_batch(
    tables: &LatentTables,
    k1: usize,
    k2: usize,
    studies: &[NoGoldPrep],
    out: &mut [f64],
) {
    debug_assert_eq!(studies.len(), out.len());
    let nq = tables.nq;
    let cap = nq * nq;
    let dims = [
        k1 - 1,
        k2 - 1,
        tables.k + k1 - 1,
        tables.k + k2 - 1,
    ];

    let mut acc = vec![0.0_f64; studies.len()];
    let mut a: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; cap]);
    let mut t: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; cap]);
    let mut sa: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; cap]);
    let mut st: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; cap]);
    let mut ws = vec![0.0_f64; cap];
    let mut wt = vec![0.0_f64; cap];
    let mut prod = vec![0.0_f64; cap];

    for q in 0..nq {
        let wq = tables.w[q];
        let prev = tables.prev[q];
        let omp = 1.0 - prev;
        let (v1, w1) = tables.dim_nodes(dims[0], q);
        let (v2, w2) = tables.dim_nodes(dims[1], q);
        let (v3, w3) = tables.dim_nodes(dims[2], q);
        let (v4, w4) = tables.dim_nodes(dims[3], q);
        let ls = v1.len() * v2.len();
        let lt = v3.len() * v4.len();

        // Diseased pattern probabilities over the sensitivity cells,
        // pattern order (1,1), (1,0), (0,1), (0,0).
        let mut c = 0;
        for (j1, &s1) in v1.iter().enumerate() {
            for (j2, &s2) in v2.iter().enumerate() {
                a[0][c] = prev * s1 * s2;
                a[1][c] = prev * s1 * (1.0 - s2);
                a[2][c] = prev * (1.0 - s1) * s2;
                a[3][c] = prev * (1.0 - s1) * (1.0 - s2);
                ws[c] = w1[j1] * w2[j2];
                c += 1;
            }
        }
        // Non-diseased pattern probabilities over the specificity cells.
        let mut e = 0;
        for (j3, &p1) in v3.iter().enumerate() {
            for (j4, &p2) in v4.iter().enumerate() {
                t[0][e] = omp * (1.0 - p1) * (1.0 - p2);
                t[1][e] = omp * (1.0 - p1) * p2;
                t[2][e] = omp * p1 * (1.0 - p2);
                t[3][e] = omp * p1 * p2;
                wt[e] = w3[j3] * w4[j4];
                e += 1;
            }
        }

        for (s, prep) in studies.iter().enumerate() {
            // Rescaling distributes over the mixture: (a + t) * r = a*r + t*r.
            for ab in 0..4 {
                if prep.m[ab] > 0 {
                    let r = prep.inv_r[ab];
                    for c in 0..ls {
                        sa[ab][c] = a[ab][c] * r;
                    }
                    for e in 0..lt {
                        st[ab][e] = t[ab][e] * r;
                    }
                }
            }
            let mut acc_s = 0.0;
            for e in 0..lt {
                let te = [st[0][e], st[1][e], st[2][e], st[3][e]];
                fused_product_powers(&mut prod[..ls], &sa, te, prep.m, prep.max_bits);
                acc_s += wt[e] * weighted_dot(&ws[..ls], &prod[..ls]);
            }
            acc[s] += wq * acc_s;
        }
    }

    for (s, prep) in studies.iter().enumerate() {
        out[s] = if acc[s].is_finite() && acc[s] > UNDERFLOW_FLOOR {
            acc[s].ln() + prep.ln_r_weight
        } else {
            no_gold_exact_log(tables, dims, &prep.m)
        };
    }
}

/// Exact log-space evaluation of one no-gold study: the full five-deep
/// tensor sum with a streaming log-sum-exp. Used when the rescaled linear
/// accumulator underflows (very large counts or extreme parameters).
fn no_gold_exact_log(tables: &LatentTables, dims: [usize; 4], m: &[u64; 4]) -> f64 {
    let mut lse = LogSumExp::new();
    for q in 0..tables.nq {
        let lnwq = tables.ln_w[q];
        let prev = tables.prev[q];
        let omp = 1.0 - prev;
        let (v1, w1) = tables.dim_nodes(dims[0], q);
        let (v2, w2) = tables.dim_nodes(dims[1], q);
        let (v3, w3) = tables.dim_nodes(dims[2], q);
        let (v4, w4) = tables.dim_nodes(dims[3], q);
        for (j1, &s1) in v1.iter().enumerate() {
            let lw1 = lnwq + w1[j1].ln();
            for (j2, &s2) in v2.iter().enumerate() {
                let lw2 = lw1 + w2[j2].ln();
                let d11 = prev * s1 * s2;
                let d10 = prev * s1 * (1.0 - s2);
                let d01 = prev * (1.0 - s1) * s2;
                let d00 = prev * (1.0 - s1) * (1.0 - s2);
                for (j3, &p1) in v3.iter().enumerate() {
                    let lw3 = lw2 + w3[j3].ln();
                    for (j4, &p2) in v4.iter().enumerate() {
                        let lw = lw3 + w4[j4].ln();
                        let lp = count_mul(m[0], (d11 + omp * (1.0 - p1) * (1.0 - p2)).ln())
                            + count_mul(m[1], (d10 + omp * (1.0 - p1) * p2).ln())
                            + count_mul(m[2], (d01 + omp * p1 * (1.0 - p2)).ln())
                            + count_mul(m[3], (d00 + omp * p1 * p2).ln());
                        lse.push(lw + lp);
                    }
                }
            }
        }
    }
    lse.value()
}

fn eval_study(study: &StudyRecord, tables: &LatentTables) -> f64 {
    match &study.design {
        StudyDesign::GoldPlusTests {
            n_diseased,
            n_nondiseased,
            tests,
        } => gold_loglik(tables, *n_diseased, *n_nondiseased, tests),
        StudyDesign::NoGoldTwoTests {
            tests: (k1, k2),
            m11,
            m10,
            m01,
            m00,
        } => match NoGoldPrep::new(0, [*m11, *m10, *m01, *m00]) {
            None => 0.0,
            Some(prep) => {
                let mut out = [0.0];
                no_gold_batch(tables, *k1, *k2, std::slice::from_ref(&prep), &mut out);
                out[0]
            }
        },
    }
}

/// Log-likelihood of one study on a caller-supplied grid.
///
/// The grid must have been built from the dependence structure implied by
/// `params` under `spec.family`. Shape mismatches (quadrature size, number
/// of pairs) are rejected as [`Error::InvalidState`]; semantic mismatches
/// cannot be detected and are the caller's responsibility.
pub fn study_loglik(
    study: &StudyRecord,
    params: &ParameterSet,
    spec: &ModelSpec,
    grid: &DependentGrid,
) -> Result<f64> {
    study.validate(spec.k)?;
    let tables = LatentTables::build(params, spec, grid)?;
    Ok(eval_study(study, &tables))
}

/// Joint log-likelihood of a dataset: the sum of study log-likelihoods,
/// evaluated on a single grid shared across studies. No-gold studies with
/// the same test pair are evaluated in one batch; each study's value is
/// identical to what a standalone evaluation would produce, and the final
/// sum runs in input order.
pub fn joint_loglik(
    studies: &[StudyRecord],
    params: &ParameterSet,
    spec: &ModelSpec,
) -> Result<f64> {
    if studies.is_empty() {
        return Err(Error::invalid_argument(
            "joint likelihood of an empty study list",
        ));
    }
    for s in studies {
        s.validate(spec.k)?;
    }
    let vine = params.vine_spec(spec.family)?;
    let rule = QuadratureRule::gauss_legendre(spec.nq)?;
    let grid = build_grid(&vine, &rule);
    let tables = LatentTables::build(params, spec, &grid)?;

    let mut lls = vec![0.0_f64; studies.len()];
    let mut batches: BTreeMap<(usize, usize), Vec<NoGoldPrep>> = BTreeMap::new();
    for (i, study) in studies.iter().enumerate() {
        match &study.design {
            StudyDesign::GoldPlusTests {
                n_diseased,
                n_nondiseased,
                tests,
            } => {
                lls[i] = gold_loglik(&tables, *n_diseased, *n_nondiseased, tests);
            }
            StudyDesign::NoGoldTwoTests {
                tests,
                m11,
                m10,
                m01,
                m00,
            } => {
                if let Some(prep) = NoGoldPrep::new(i, [*m11, *m10, *m01, *m00]) {
                    batches.entry(*tests).or_default().push(prep);
                }
            }
        }
    }
    for ((k1, k2), preps) in &batches {
        let mut out = vec![0.0; preps.len()];
        no_gold_batch(&tables, *k1, *k2, preps, &mut out);
        for (prep, ll) in preps.iter().zip(out) {
            lls[prep.slot] = ll;
        }
    }
    Ok(lls.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::super::{
        within_diseased_log, within_no_gold_log, within_nondiseased_log, BoundaryFlag,
        LatentPoint,
    };
    use super::*;
    use crate::copula::CopulaFamily;
    use crate::stats::{LinkFunction, MarginFamily};

    fn model(family: CopulaFamily, margin: MarginFamily, nq: usize) -> ModelSpec {
        let link = match margin {
            MarginFamily::Normal => LinkFunction::Logit,
            MarginFamily::Beta => LinkFunction::Identity,
        };
        ModelSpec::new(2, family, margin, link, nq).unwrap()
    }

    fn params_k2() -> ParameterSet {
        ParameterSet::new(
            0.35,
            vec![0.82, 0.64],
            vec![0.88, 0.72],
            0.4,
            vec![0.35, 0.45],
            vec![0.30, 0.50],
            vec![0.25, 0.35],
            vec![0.30, 0.20],
        )
    }

    fn params_k2_beta() -> ParameterSet {
        let mut p = params_k2();
        p.delta_prev = 0.06;
        p.delta_sens = vec![0.05, 0.08];
        p.delta_spec = vec![0.04, 0.07];
        p
    }

    fn gold_study(id: &str, tests: Vec<TestCounts>, n1: u64, n0: u64) -> StudyRecord {
        StudyRecord {
            id: id.into(),
            design: StudyDesign::GoldPlusTests {
                n_diseased: n1,
                n_nondiseased: n0,
                tests,
            },
        }
    }

    fn no_gold_study(id: &str, pair: (usize, usize), m: [u64; 4]) -> StudyRecord {
        StudyRecord {
            id: id.into(),
            design: StudyDesign::NoGoldTwoTests {
                tests: pair,
                m11: m[0],
                m10: m[1],
                m01: m[2],
                m00: m[3],
            },
        }
    }

    fn both_tests(tp1: u64, n1: u64, fp1: u64, n0: u64, tp2: u64, fp2: u64) -> Vec<TestCounts> {
        vec![
            TestCounts {
                test: 1,
                tp: tp1,
                fn_: n1 - tp1,
                fp: fp1,
                tn: n0 - fp1,
            },
            TestCounts {
                test: 2,
                tp: tp2,
                fn_: n1 - tp2,
                fp: fp2,
                tn: n0 - fp2,
            },
        ]
    }

    /// Full tensor-product evaluation with no factorisation, batching, or
    /// shared tables: an odometer over all 2k+1 dimensions, margins applied
    /// per cell, within-study kernels evaluated on explicit latent points.
    fn naive_loglik(study: &StudyRecord, params: &ParameterSet, spec: &ModelSpec) -> f64 {
        let vine = params.vine_spec(spec.family).unwrap();
        let rule = QuadratureRule::gauss_legendre(spec.nq).unwrap();
        let grid = build_grid(&vine, &rule);
        let k = spec.k;
        let nq = spec.nq;
        let w = grid.weights();
        let mut lse = LogSumExp::new();
        for q in 0..nq {
            let prev = spec
                .margin
                .proportion_at(params.prevalence, params.delta_prev, grid.root()[q]);
            let mut idx = vec![0_usize; 2 * k];
            'cells: loop {
                let mut lnw = w[q].ln();
                let mut se = vec![0.0; k];
                let mut sp = vec![0.0; k];
                for d in 0..2 * k {
                    lnw += w[idx[d]].ln();
                    let u = grid.node(d, q, idx[d]);
                    if d < k {
                        se[d] = spec
                            .margin
                            .proportion_at(params.sens[d], params.delta_sens[d], u);
                    } else {
                        sp[d - k] =
                            spec.margin
                                .proportion_at(params.spec[d - k], params.delta_spec[d - k], u);
                    }
                }
                let point = LatentPoint {
                    prev,
                    se,
                    sp,
                };
                let lp = match &study.design {
                    StudyDesign::GoldPlusTests {
                        n_diseased,
                        n_nondiseased,
                        tests,
                    } => {
                        within_diseased_log(*n_diseased, tests, &point)
                            + within_nondiseased_log(*n_nondiseased, tests, &point)
                    }
                    StudyDesign::NoGoldTwoTests {
                        tests: (k1, k2),
                        m11,
                        m10,
                        m01,
                        m00,
                    } => within_no_gold_log(&[*m11, *m10, *m01, *m00], *k1, *k2, &point),
                };
                lse.push(lnw + lp);
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
        lse.value()
    }

    fn fitted_ll(study: &StudyRecord, params: &ParameterSet, spec: &ModelSpec) -> f64 {
        let vine = params.vine_spec(spec.family).unwrap();
        let rule = QuadratureRule::gauss_legendre(spec.nq).unwrap();
        let grid = build_grid(&vine, &rule);
        study_loglik(study, params, spec, &grid).unwrap()
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!(
            (a - b).abs() <= tol * a.abs().max(1.0),
            "{a} vs {b} (tol {tol})"
        );
    }

    #[test]
    fn gold_factorised_matches_naive() {
        let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, 4);
        let params = params_k2();
        let study = gold_study("g", both_tests(41, 50, 9, 80, 33, 21), 50, 80);
        assert_close(
            fitted_ll(&study, &params, &spec),
            naive_loglik(&study, &params, &spec),
            1e-10,
        );
    }

    #[test]
    fn gold_single_test_subset_matches_naive() {
        // Only test 2 reported: the other latent dimensions integrate out.
        let spec = model(CopulaFamily::Bvn, MarginFamily::Normal, 4);
        let params = params_k2();
        let study = gold_study(
            "g2",
            vec![TestCounts {
                test: 2,
                tp: 18,
                fn_: 9,
                fp: 6,
                tn: 37,
            }],
            27,
            43,
        );
        assert_close(
            fitted_ll(&study, &params, &spec),
            naive_loglik(&study, &params, &spec),
            1e-10,
        );
    }

    #[test]
    fn no_gold_matches_naive() {
        let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, 4);
        let params = params_k2();
        for pair in [(1, 2), (2, 1)] {
            let study = no_gold_study("n", pair, [12, 5, 7, 20]);
            assert_close(
                fitted_ll(&study, &params, &spec),
                naive_loglik(&study, &params, &spec),
                1e-10,
            );
        }
    }

    #[test]
    fn no_gold_beta_margins_match_naive() {
        let spec = model(CopulaFamily::Frank, MarginFamily::Beta, 3);
        let params = params_k2_beta();
        let study = no_gold_study("nb", (1, 2), [9, 4, 11, 26]);
        assert_close(
            fitted_ll(&study, &params, &spec),
            naive_loglik(&study, &params, &spec),
            1e-10,
        );
    }

    #[test]
    fn boundary_collapse_matches_naive() {
        // A comonotonic sensitivity pair collapses one dimension; the naive
        // sum keeps all five dimensions (whose nodes coincide) and must
        // agree.
        let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, 4);
        let mut params = params_k2();
        params.boundary[0] = BoundaryFlag::Upper;
        params.tau_sens[0] = 0.95;
        params.boundary[3] = BoundaryFlag::Lower;
        params.tau_spec[1] = -0.95;
        let ng = no_gold_study("n", (1, 2), [12, 5, 7, 20]);
        assert_close(
            fitted_ll(&ng, &params, &spec),
            naive_loglik(&ng, &params, &spec),
            1e-10,
        );
        let g = gold_study("g", both_tests(41, 50, 9, 80, 33, 21), 50, 80);
        assert_close(
            fitted_ll(&g, &params, &spec),
            naive_loglik(&g, &params, &spec),
            1e-10,
        );
    }

    #[test]
    fn large_counts_use_exact_fallback() {
        // Counts this large underflow the rescaled linear accumulator; the
        // study must still evaluate, and must agree with the naive
        // log-space sum.
        let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, 3);
        let params = params_k2();
        let study = no_gold_study("big", (1, 2), [40_000, 25_000, 15_000, 20_000]);
        let ll = fitted_ll(&study, &params, &spec);
        assert!(ll.is_finite());
        assert_close(ll, naive_loglik(&study, &params, &spec), 1e-10);

        let huge = no_gold_study("huge", (1, 2), [40_000_000, 25_000_000, 15_000_000, 20_000_000]);
        assert!(fitted_ll(&huge, &params, &spec).is_finite());
    }

    #[test]
    fn gold_large_counts_stay_finite() {
        let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, 15);
        let params = params_k2();
        let study = gold_study(
            "gbig",
            both_tests(80_000, 100_000, 9_000, 100_000, 66_000, 21_000),
            100_000,
            100_000,
        );
        let ll = fitted_ll(&study, &params, &spec);
        assert!(ll.is_finite());
    }

    fn small_dataset() -> Vec<StudyRecord> {
        vec![
            gold_study("g1", both_tests(41, 50, 9, 80, 33, 21), 50, 80),
            no_gold_study("n1", (1, 2), [12, 5, 7, 20]),
            gold_study(
                "g2",
                vec![TestCounts {
                    test: 1,
                    tp: 25,
                    fn_: 8,
                    fp: 4,
                    tn: 51,
                }],
                33,
                55,
            ),
            no_gold_study("n2", (1, 2), [31, 11, 6, 52]),
        ]
    }

    #[test]
    fn joint_is_sum_of_solo_evaluations() {
        let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, 8);
        let params = params_k2();
        let studies = small_dataset();
        let joint = joint_loglik(&studies, &params, &spec).unwrap();
        let solo: f64 = studies
            .iter()
            .map(|s| fitted_ll(s, &params, &spec))
            .sum();
        assert!((joint - solo).abs() <= 1e-12 * joint.abs());
    }

    #[test]
    fn duplicate_study_doubles_the_loglik() {
        let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, 8);
        let params = params_k2();
        let one = vec![no_gold_study("n", (1, 2), [12, 5, 7, 20])];
        let two = vec![
            no_gold_study("n", (1, 2), [12, 5, 7, 20]),
            no_gold_study("n-copy", (1, 2), [12, 5, 7, 20]),
        ];
        let ll1 = joint_loglik(&one, &params, &spec).unwrap();
        let ll2 = joint_loglik(&two, &params, &spec).unwrap();
        assert_eq!(ll2, 2.0 * ll1);
    }

    #[test]
    fn permutation_invariance() {
        let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, 8);
        let params = params_k2();
        let studies = small_dataset();
        let ll = joint_loglik(&studies, &params, &spec).unwrap();
        let mut rev = studies.clone();
        rev.reverse();
        let ll_rev = joint_loglik(&rev, &params, &spec).unwrap();
        assert!((ll - ll_rev).abs() <= 1e-12 * ll.abs());
    }

    #[test]
    fn zero_count_studies_are_no_ops() {
        let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, 8);
        let params = params_k2();
        let mut studies = small_dataset();
        let base = joint_loglik(&studies, &params, &spec).unwrap();
        studies.push(no_gold_study("z1", (1, 2), [0, 0, 0, 0]));
        studies.push(gold_study(
            "z2",
            vec![TestCounts {
                test: 1,
                tp: 0,
                fn_: 0,
                fp: 0,
                tn: 0,
            }],
            0,
            0,
        ));
        let padded = joint_loglik(&studies, &params, &spec).unwrap();
        assert!((padded - base).abs() <= 1e-12 * base.abs());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, 8);
        let params = params_k2();
        assert!(matches!(
            joint_loglik(&[], &params, &spec),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn grid_shape_mismatch_is_invalid_state() {
        let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, 15);
        let params = params_k2();
        let vine = params.vine_spec(spec.family).unwrap();
        let study = no_gold_study("n", (1, 2), [12, 5, 7, 20]);

        let wrong_nq = build_grid(&vine, &QuadratureRule::gauss_legendre(10).unwrap());
        assert!(matches!(
            study_loglik(&study, &params, &spec, &wrong_nq),
            Err(Error::InvalidState(_))
        ));

        let k1 = ParameterSet::new(
            0.4,
            vec![0.8],
            vec![0.9],
            0.3,
            vec![0.3],
            vec![0.3],
            vec![0.3],
            vec![0.3],
        );
        let wrong_k = build_grid(
            &k1.vine_spec(spec.family).unwrap(),
            &QuadratureRule::gauss_legendre(15).unwrap(),
        );
        assert!(matches!(
            study_loglik(&study, &params, &spec, &wrong_k),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn near_degenerate_heterogeneity_approaches_fixed_effects() {
        // Independence copulas and tiny dispersion: the mixed model collapses
        // to a fixed-effects binomial likelihood.
        let spec = ModelSpec::new(
            1,
            CopulaFamily::Bvn,
            MarginFamily::Normal,
            LinkFunction::Logit,
            15,
        )
        .unwrap();
        let params = ParameterSet::new(
            0.4,
            vec![0.8],
            vec![0.9],
            0.01,
            vec![0.01],
            vec![0.01],
            vec![0.0],
            vec![0.0],
        );
        let study = gold_study(
            "fe",
            vec![TestCounts {
                test: 1,
                tp: 16,
                fn_: 4,
                fp: 3,
                tn: 27,
            }],
            20,
            30,
        );
        let ll = joint_loglik(std::slice::from_ref(&study), &params, &spec).unwrap();
        let fixed = 20.0 * 0.4_f64.ln()
            + 30.0 * 0.6_f64.ln()
            + 16.0 * 0.8_f64.ln()
            + 4.0 * 0.2_f64.ln()
            + 27.0 * 0.9_f64.ln()
            + 3.0 * 0.1_f64.ln();
        assert!((ll - fixed).abs() < 0.05, "{ll} vs {fixed}");
    }

    #[test]
    fn quadrature_refinement_differences_shrink() {
        let params = params_k2();
        let studies = small_dataset();
        let ll = |nq: usize| {
            let spec = model(CopulaFamily::Clayton180, MarginFamily::Normal, nq);
            joint_loglik(&studies, &params, &spec).unwrap()
        };
        let (l7, l15, l25) = (ll(7), ll(15), ll(25));
        assert!(
            (l25 - l15).abs() < (l15 - l7).abs(),
            "refinement not contracting: {l7} {l15} {l25}"
        );
    }

    #[test]
    fn fused_powers_bit_identical_to_materialised() {
        let n = 23;
        let mut state = 0x2545f4914f6cdd1d_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let sa: [Vec<f64>; 4] =
            std::array::from_fn(|_| (0..n).map(|_| 0.2 + 0.6 * next()).collect());
        for (exps, te) in [
            ([13_u64, 0, 7, 129], [0.11, 0.0, 0.31, 0.05]),
            ([1, 1, 1, 1], [0.4, 0.3, 0.2, 0.1]),
            ([0, 0, 0, 0], [0.0; 4]),
            ([200, 3, 0, 64], [0.02, 0.5, 0.0, 0.17]),
        ] {
            let max_bits = 64 - exps.iter().copied().max().unwrap().leading_zeros();
            let summed: [Vec<f64>; 4] =
                std::array::from_fn(|ab| sa[ab].iter().map(|&s| s + te[ab]).collect());
            let mut plain = vec![0.0; n];
            product_powers(
                &mut plain,
                [&summed[0], &summed[1], &summed[2], &summed[3]],
                exps,
                max_bits,
            );
            let mut fused = vec![0.0; n];
            fused_product_powers(&mut fused, &sa, te, exps, max_bits);
            assert_eq!(plain, fused, "exps {exps:?}");
        }
    }
}
