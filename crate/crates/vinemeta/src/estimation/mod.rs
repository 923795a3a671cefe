//! Maximum-likelihood estimation: transformed-scale BFGS, observed-
//! information standard errors, the tau boundary rule, and model ranking.
//!
//! All optimization happens on the unconstrained scale defined by
//! [`TransformMap`], so every iterate corresponds to an admissible
//! parameter set. Standard errors come from the finite-difference Hessian
//! of the negative log-likelihood on that scale, inverted through its
//! Cholesky factor and mapped back to the natural scale by the delta
//! method. Dependence parameters estimated against a Frechet bound are
//! frozen there (comonotonic or countermonotonic pair) and the remaining
//! parameters refitted.

mod bfgs;
mod linalg;
mod transform;

pub use transform::{Slot, Transform, TransformMap};

use crate::error::{Error, Result};
use crate::model::{
    joint_loglik, BoundaryFlag, ModelSpec, ParameterSet, StudyDesign, StudyRecord,
};
use crate::stats::MarginFamily;

/// Taus are frozen once they come within `boundary_margin` of this bound.
const TAU_BOUND: f64 = 0.95;
/// Relative step for the finite-difference Hessian.
const HESSIAN_STEP: f64 = 1e-4;
/// Transformed-scale perturbation used by the polish probes. Sized to hop
/// out of the shallow saddle basins that coarse quadrature or weak
/// identification produce, while staying well inside the attraction region
/// of a decent optimum.
const POLISH_STEP: f64 = 0.25;
/// A probe must beat the incumbent by this much to be adopted.
const POLISH_IMPROVEMENT: f64 = 1e-7;

/// Tuning knobs for [`fit`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// BFGS iteration cap per round.
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the transformed-scale
    /// gradient.
    pub gradient_tolerance: f64,
    /// A tau estimate within this distance of +/-0.95 triggers the
    /// boundary rule.
    pub boundary_margin: f64,
    /// After convergence, restart from this many small deterministic
    /// perturbations of the solution, keeping a probe only when it strictly
    /// improves the likelihood. Escapes the occasional saddle stall on
    /// rough likelihood surfaces; `0` disables.
    pub polish_probes: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            gradient_tolerance: 1e-5,
            boundary_margin: 0.005,
            polish_probes: 2,
        }
    }
}

/// Standard errors shaped like a [`ParameterSet`]; `None` marks entries
/// without a standard error (boundary-frozen taus, or everything when the
/// observed information is not positive definite).
#[derive(Debug, Clone, PartialEq)]
pub struct SeSet {
    pub prevalence: Option<f64>,
    pub sens: Vec<Option<f64>>,
    pub spec: Vec<Option<f64>>,
    pub delta_prev: Option<f64>,
    pub delta_sens: Vec<Option<f64>>,
    pub delta_spec: Vec<Option<f64>>,
    pub tau_sens: Vec<Option<f64>>,
    pub tau_spec: Vec<Option<f64>>,
}

impl SeSet {
    /// All entries absent.
    pub fn absent(k: usize) -> Self {
        SeSet {
            prevalence: None,
            sens: vec![None; k],
            spec: vec![None; k],
            delta_prev: None,
            delta_sens: vec![None; k],
            delta_spec: vec![None; k],
            tau_sens: vec![None; k],
            tau_spec: vec![None; k],
        }
    }

    fn set(&mut self, slot: Slot, value: f64) {
        let v = Some(value);
        match slot {
            Slot::Prevalence => self.prevalence = v,
            Slot::Sens(i) => self.sens[i] = v,
            Slot::Spec(i) => self.spec[i] = v,
            Slot::DeltaPrev => self.delta_prev = v,
            Slot::DeltaSens(i) => self.delta_sens[i] = v,
            Slot::DeltaSpec(i) => self.delta_spec[i] = v,
            Slot::TauSens(i) => self.tau_sens[i] = v,
            Slot::TauSpec(i) => self.tau_spec[i] = v,
        }
    }

    /// Entry for `slot`, if present.
    pub fn get(&self, slot: Slot) -> Option<f64> {
        match slot {
            Slot::Prevalence => self.prevalence,
            Slot::Sens(i) => self.sens[i],
            Slot::Spec(i) => self.spec[i],
            Slot::DeltaPrev => self.delta_prev,
            Slot::DeltaSens(i) => self.delta_sens[i],
            Slot::DeltaSpec(i) => self.delta_spec[i],
            Slot::TauSens(i) => self.tau_sens[i],
            Slot::TauSpec(i) => self.tau_spec[i],
        }
    }

    /// Iterate over all `2 + 6k` slots with their entries.
    pub fn iter(&self) -> impl Iterator<Item = (Slot, Option<f64>)> + '_ {
        let k = self.sens.len();
        let mut slots = Vec::with_capacity(ParameterSet::n_params(k));
        slots.push(Slot::Prevalence);
        slots.extend((0..k).map(Slot::Sens));
        slots.extend((0..k).map(Slot::Spec));
        slots.push(Slot::DeltaPrev);
        slots.extend((0..k).map(Slot::DeltaSens));
        slots.extend((0..k).map(Slot::DeltaSpec));
        slots.extend((0..k).map(Slot::TauSens));
        slots.extend((0..k).map(Slot::TauSpec));
        slots.into_iter().map(move |s| (s, self.get(s)))
    }
}

/// Outcome of a maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameter estimates; boundary-frozen taus are reported at +/-0.95
    /// with their flag set in `estimates.boundary`.
    pub estimates: ParameterSet,
    /// Delta-method standard errors; absent for frozen taus, or entirely
    /// when the observed information is not positive definite.
    pub standard_errors: SeSet,
    /// Why standard errors are absent, when they are.
    pub se_warning: Option<String>,
    /// Log-likelihood at the estimates.
    pub max_loglik: f64,
    /// Total joint log-likelihood evaluations (line searches, gradients,
    /// Hessian included).
    pub n_evaluations: u64,
    /// Whether the gradient tolerance was met within the iteration cap.
    pub converged: bool,
    /// Max-norm of the transformed-scale gradient at the estimates.
    pub gradient_norm: f64,
    /// Vine pair indices frozen at a Frechet bound (sensitivities `0..k`,
    /// specificities `k..2k`).
    pub boundary_pairs: Vec<usize>,
    /// Digest of the fitted dataset, used to guard model comparisons.
    pub data_digest: u64,
    /// Number of free parameters in the final round (frozen taus excluded).
    pub n_params: usize,
}

/// One row of a model-comparison ranking.
#[derive(Debug, Clone)]
pub struct ModelRank {
    /// Position of this fit in the input slice.
    pub index: usize,
    /// `family+margin`, e.g. `clayton180+beta`.
    pub label: String,
    pub max_loglik: f64,
    pub n_params: usize,
    /// Akaike information criterion, `2p - 2 loglik`.
    pub aic: f64,
    pub converged: bool,
}

/// Order-sensitive digest of a dataset; recorded on every [`FitResult`] so
/// comparisons can refuse to rank fits of different data.
pub fn dataset_digest(studies: &[StudyRecord]) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    studies.hash(&mut hasher);
    hasher.finish()
}

/// Starting values when the caller supplies none: pooled continuity-
/// corrected proportions from the gold-standard studies, mid-range
/// dispersions, and a mild tau of the sign the family supports.
fn default_init(studies: &[StudyRecord], spec: &ModelSpec) -> ParameterSet {
    let k = spec.k;
    let mut n1_total = 0u64;
    let mut n_total = 0u64;
    let mut tp = vec![0u64; k];
    let mut n1k = vec![0u64; k];
    let mut tn = vec![0u64; k];
    let mut n0k = vec![0u64; k];
    for s in studies {
        if let StudyDesign::GoldPlusTests { n_diseased, n_nondiseased, tests } = &s.design {
            n1_total += n_diseased;
            n_total += n_diseased + n_nondiseased;
            for tc in tests {
                let i = tc.test - 1;
                tp[i] += tc.tp;
                n1k[i] += n_diseased;
                tn[i] += tc.tn;
                n0k[i] += n_nondiseased;
            }
        }
    }
    let pooled = |x: u64, n: u64, fallback: f64| {
        if n > 0 {
            (x as f64 + 0.5) / (n as f64 + 1.0)
        } else {
            fallback
        }
    };
    let dispersion = match spec.margin.family {
        MarginFamily::Normal => 0.3,
        MarginFamily::Beta => 0.05,
    };
    let (_, hi) = spec.family.tau_range();
    let tau0 = if hi > 0.0 { 0.2 } else { -0.2 };
    ParameterSet::new(
        pooled(n1_total, n_total, 0.3),
        (0..k).map(|i| pooled(tp[i], n1k[i], 0.7)).collect(),
        (0..k).map(|i| pooled(tn[i], n0k[i], 0.7)).collect(),
        dispersion,
        vec![dispersion; k],
        vec![dispersion; k],
        vec![tau0; k],
        vec![tau0; k],
    )
}

/// Free taus within `margin` of a Frechet bound the family can reach.
fn boundary_triggers(
    est: &ParameterSet,
    spec: &ModelSpec,
    margin: f64,
) -> Vec<(usize, BoundaryFlag)> {
    let (lo, hi) = spec.family.tau_range();
    let mut out = Vec::new();
    for idx in 0..2 * spec.k {
        if !est.boundary[idx].is_free() {
            continue;
        }
        let t = est.tau_at(idx);
        if hi >= TAU_BOUND - 1e-12 && t >= TAU_BOUND - margin {
            out.push((idx, BoundaryFlag::Upper));
        } else if lo <= -TAU_BOUND + 1e-12 && t <= -(TAU_BOUND - margin) {
            out.push((idx, BoundaryFlag::Lower));
        }
    }
    out
}

fn freeze_pair(params: &mut ParameterSet, k: usize, idx: usize, flag: BoundaryFlag) {
    params.boundary[idx] = flag;
    let v = match flag {
        BoundaryFlag::Upper => TAU_BOUND,
        BoundaryFlag::Lower => -TAU_BOUND,
        BoundaryFlag::Free => unreachable!("freeze_pair called with Free"),
    };
    if idx < k {
        params.tau_sens[idx] = v;
    } else {
        params.tau_spec[idx - k] = v;
    }
}

fn standard_errors_impl(
    at: &ParameterSet,
    studies: &[StudyRecord],
    spec: &ModelSpec,
) -> (SeSet, Option<String>, u64) {
    let map = TransformMap::for_model(spec, at);
    let x = map.pack(at);
    let n = map.len();
    let mut evals: u64 = 0;
    let mut h = {
        let mut obj = |xv: &[f64]| -> f64 {
            evals += 1;
            let p = map.unpack(xv, at);
            match joint_loglik(studies, &p, spec) {
                Ok(ll) if ll.is_finite() => -ll,
                _ => f64::INFINITY,
            }
        };
        linalg::fd_hessian(&mut obj, &x, HESSIAN_STEP)
    };
    if h.iter().any(|v| !v.is_finite()) {
        return (
            SeSet::absent(spec.k),
            Some("observed information has non-finite entries; standard errors unavailable".into()),
            evals,
        );
    }
    if !linalg::cholesky_in_place(&mut h, n) {
        return (
            SeSet::absent(spec.k),
            Some("observed information is not positive definite; standard errors unavailable".into()),
            evals,
        );
    }
    let diag = linalg::spd_inverse_diag(&h, n);
    let mut se = SeSet::absent(spec.k);
    for ((&(slot, t), &xi), &v) in map.entries().iter().zip(&x).zip(&diag) {
        se.set(slot, v.sqrt() * t.dnatural_dx(xi).abs());
    }
    (se, None, evals)
}

/// Delta-method standard errors of the free parameters at `at`.
///
/// The second element explains why entries are absent when the observed
/// information is not positive definite; that situation is a warning, not
/// an error.
pub fn standard_errors(
    at: &ParameterSet,
    studies: &[StudyRecord],
    spec: &ModelSpec,
) -> Result<(SeSet, Option<String>)> {
    if studies.is_empty() {
        return Err(Error::invalid_argument(
            "standard errors need at least one study",
        ));
    }
    for s in studies {
        s.validate(spec.k)?;
    }
    at.validate(spec)?;
    let (se, warning, _) = standard_errors_impl(at, studies, spec);
    Ok((se, warning))
}

/// Maximum-likelihood fit of the model to `studies`.
///
/// Runs BFGS on the transformed scale from `init` (or pooled-proportion
/// defaults), applies the boundary rule — any free tau estimated within
/// `options.boundary_margin` of +/-0.95 is frozen at the corresponding
/// Frechet bound and the remaining parameters refitted — and finishes with
/// observed-information standard errors.
///
/// Failure to converge within the iteration cap is reported through
/// `converged = false`, not an error; a non-finite log-likelihood at the
/// starting point is [`Error::InitFailure`].
pub fn fit(
    studies: &[StudyRecord],
    spec: &ModelSpec,
    init: Option<ParameterSet>,
    options: &FitOptions,
) -> Result<FitResult> {
    if studies.is_empty() {
        return Err(Error::invalid_argument("fit needs at least one study"));
    }
    for s in studies {
        s.validate(spec.k)?;
    }
    let digest = dataset_digest(studies);
    let mut template = match init {
        Some(p) => {
            p.validate(spec)?;
            p
        }
        None => default_init(studies, spec),
    };

    let bfgs_opts = bfgs::MinimizeOptions {
        max_iterations: options.max_iterations,
        gradient_tolerance: options.gradient_tolerance,
    };
    // Each round freezes at least one of the 2k pairs, so k rounds of
    // refitting after the first is already generous; the cap only guards
    // against a pathological trigger loop.
    let max_rounds = 2 * spec.k + 1;
    let mut total_evals: u64 = 0;

    for round in 1..=max_rounds {
        let map = TransformMap::for_model(spec, &template);
        let x0 = map.pack(&template);
        let mut evals: u64 = 0;
        let minimum = {
            let mut obj = |x: &[f64]| -> f64 {
                evals += 1;
                let p = map.unpack(x, &template);
                match joint_loglik(studies, &p, spec) {
                    Ok(ll) if ll.is_finite() => -ll,
                    _ => f64::INFINITY,
                }
            };
            if !obj(&x0).is_finite() {
                return Err(Error::init_failure(format!(
                    "log-likelihood not finite at the starting point (round {round})"
                )));
            }
            let mut best = bfgs::minimize(&mut obj, x0, &bfgs_opts);
            // Polish: BFGS stops wherever the gradient vanishes, which on a
            // rough surface can be a saddle. Nudging the solution and
            // re-minimizing either rolls back to the same point (probe
            // discarded) or escapes to something strictly better.
            for probe in 0..options.polish_probes {
                let mut xp = best.x.clone();
                for (i, v) in xp.iter_mut().enumerate() {
                    let sign = if (i + probe) % 2 == 0 { 1.0 } else { -1.0 };
                    *v += sign * POLISH_STEP * (1.0 + v.abs());
                }
                let candidate = bfgs::minimize(&mut obj, xp, &bfgs_opts);
                if candidate.value < best.value - POLISH_IMPROVEMENT {
                    best = candidate;
                } else {
                    break;
                }
            }
            best
        };
        total_evals += evals;
        let estimates = map.unpack(&minimum.x, &template);

        let triggers = boundary_triggers(&estimates, spec, options.boundary_margin);
        if triggers.is_empty() || round == max_rounds {
            let (standard_errors, se_warning, se_evals) =
                standard_errors_impl(&estimates, studies, spec);
            total_evals += se_evals;
            let boundary_pairs = (0..2 * spec.k)
                .filter(|&i| !estimates.boundary[i].is_free())
                .collect();
            return Ok(FitResult {
                n_params: map.len(),
                estimates,
                standard_errors,
                se_warning,
                max_loglik: -minimum.value,
                n_evaluations: total_evals,
                converged: minimum.converged,
                gradient_norm: minimum.gradient_inf_norm,
                boundary_pairs,
                data_digest: digest,
            });
        }
        template = estimates;
        for (idx, flag) in triggers {
            freeze_pair(&mut template, spec.k, idx, flag);
        }
    }
    unreachable!("the final round returns unconditionally")
}

/// Apply the tau boundary rule to an existing fit: if any free tau lies
/// within `options.boundary_margin` of +/-0.95, freeze those pairs at the
/// Frechet bound and refit; otherwise return the fit unchanged.
pub fn apply_boundary_rule(
    result: &FitResult,
    studies: &[StudyRecord],
    spec: &ModelSpec,
    options: &FitOptions,
) -> Result<FitResult> {
    let triggers = boundary_triggers(&result.estimates, spec, options.boundary_margin);
    if triggers.is_empty() {
        return Ok(result.clone());
    }
    let mut template = result.estimates.clone();
    for (idx, flag) in triggers {
        freeze_pair(&mut template, spec.k, idx, flag);
    }
    fit(studies, spec, Some(template), options)
}

/// Rank fitted models by log-likelihood (ties: fewer parameters), with AIC
/// reported alongside. All fits must be of the same dataset, as recorded by
/// their digests; the sort is stable, so fully tied entries keep their
/// input order.
pub fn compare_models(fits: &[(ModelSpec, FitResult)]) -> Result<Vec<ModelRank>> {
    if fits.is_empty() {
        return Err(Error::invalid_argument("no fits to compare"));
    }
    let digest = fits[0].1.data_digest;
    if fits.iter().any(|(_, r)| r.data_digest != digest) {
        return Err(Error::invalid_argument(
            "model comparison requires fits of the same dataset",
        ));
    }
    let mut ranks: Vec<ModelRank> = fits
        .iter()
        .enumerate()
        .map(|(index, (spec, r))| ModelRank {
            index,
            label: format!("{}+{}", spec.family, spec.margin.family.name()),
            max_loglik: r.max_loglik,
            n_params: r.n_params,
            aic: 2.0 * r.n_params as f64 - 2.0 * r.max_loglik,
            converged: r.converged,
        })
        .collect();
    ranks.sort_by(|a, b| {
        b.max_loglik
            .partial_cmp(&a.max_loglik)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.n_params.cmp(&b.n_params))
    });
    Ok(ranks)
}
