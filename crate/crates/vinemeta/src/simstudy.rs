//! Simulation-study harness: repeated generate-and-fit with bias, SD, ASE,
//! and RMSE summaries.
//!
//! A [`SimStudyConfig`] pairs a data-generating [`SimDesignPlan`] with a
//! grid of models to fit. [`run_simstudy`] generates `replications`
//! datasets (replicate `r` reseeds the plan with `base seed + r`), fits
//! every model to every dataset, and aggregates per-parameter metrics over
//! the converged replicates:
//!
//! - bias: mean estimate minus truth,
//! - SD: sample standard deviation of the estimates,
//! - ASE: average of the reported standard errors,
//! - RMSE: root mean squared deviation from truth,
//!
//! all scaled by `scale` (default 100) for reporting. When a fitted model's
//! margin family differs from the generating one, its dispersion parameters
//! have no true counterpart, so their bias and RMSE are absent while SD and
//! ASE are still reported. Replicates where a fit errors or fails to
//! converge are excluded from that model's metrics and counted.
//!
//! Replicates are independent and run in parallel; results are aggregated
//! in replicate order, so the table for a given config and seed is
//! identical regardless of thread count.

use rayon::prelude::*;

use crate::datagen::{generate, SimDesignPlan};
use crate::error::{Error, Result};
use crate::estimation::{fit, FitOptions, SeSet, Slot};
use crate::model::{ModelSpec, ParameterSet};
use crate::stats::MarginFamily;

/// Default reporting scale for metrics.
pub const DEFAULT_SCALE: f64 = 100.0;

/// One simulation-study scenario: a generating plan, the models to fit to
/// each replicate, and reporting options.
#[derive(Debug, Clone)]
pub struct SimStudyConfig {
    /// Number of replicate datasets.
    pub replications: usize,
    /// Data-generating design; its `seed` is the base seed.
    pub plan: SimDesignPlan,
    /// Models fitted to every replicate.
    pub fits: Vec<ModelSpec>,
    /// Reporting scale applied to every metric.
    pub scale: f64,
    /// Optimizer settings shared by all fits.
    pub fit_options: FitOptions,
}

impl SimStudyConfig {
    /// A scenario with default scale and fit options.
    ///
    /// Replicate fits start from the generating truth, so the polish
    /// restarts used to harden one-off fits are redundant here and are
    /// disabled by default; set `fit_options.polish_probes` to override.
    pub fn new(replications: usize, plan: SimDesignPlan, fits: Vec<ModelSpec>) -> Self {
        SimStudyConfig {
            replications,
            plan,
            fits,
            scale: DEFAULT_SCALE,
            fit_options: FitOptions {
                polish_probes: 0,
                ..FitOptions::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid_argument(
                "simulation study needs at least one replication",
            ));
        }
        if self.fits.is_empty() {
            return Err(Error::invalid_argument(
                "simulation study needs at least one model to fit",
            ));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid_argument(format!(
                "metric scale must be positive, got {}",
                self.scale
            )));
        }
        for fit_spec in &self.fits {
            if fit_spec.k != self.plan.spec.k {
                return Err(Error::invalid_argument(format!(
                    "fitted model has {} tests but the generating model has {}",
                    fit_spec.k, self.plan.spec.k
                )));
            }
        }
        self.plan.validate()
    }
}

/// Metrics for one parameter under one fitted model, on the reporting
/// scale. `bias` and `rmse` need a true value, `sd` at least two converged
/// replicates, and `ase` at least one replicate with a reported standard
/// error; each is absent otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCell {
    pub parameter: String,
    /// True value on the natural scale, when the parameter has one under
    /// this fit (dispersions of a mismatched margin family do not).
    pub truth: Option<f64>,
    pub bias: Option<f64>,
    pub sd: Option<f64>,
    pub ase: Option<f64>,
    pub rmse: Option<f64>,
    /// Replicates contributing a standard error to `ase`.
    pub n_se: usize,
}

/// One fitted model's row block: convergence accounting, per-parameter
/// metrics, and the raw per-replicate estimates for external plotting.
#[derive(Debug, Clone)]
pub struct FitSummary {
    /// "family+margin", matching the model-comparison labels.
    pub label: String,
    pub spec: ModelSpec,
    pub n_converged: usize,
    pub n_failed: usize,
    /// True when every replicate failed; the metric cells are then empty.
    pub failed: bool,
    pub cells: Vec<MetricCell>,
    /// Estimates per replicate in canonical parameter order; `None` for
    /// failed replicates. Indexed `[replicate][parameter]`.
    pub replicates: Vec<Option<Vec<f64>>>,
}

/// Aggregated simulation-study results for every fitted model.
#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub truth: ParameterSet,
    pub truth_margin: MarginFamily,
    pub replications: usize,
    pub scale: f64,
    /// Canonical parameter labels, shared by every fit's `cells`.
    pub parameters: Vec<String>,
    pub fits: Vec<FitSummary>,
}

impl MetricsTable {
    /// The summary for the fit labelled `label`, if present.
    pub fn fit(&self, label: &str) -> Option<&FitSummary> {
        self.fits.iter().find(|f| f.label == label)
    }
}

impl FitSummary {
    /// The metric cell for parameter `label`, if present.
    pub fn cell(&self, label: &str) -> Option<&MetricCell> {
        self.cells.iter().find(|c| c.parameter == label)
    }
}

/// Starting values for fitting `spec` in a study generated under `truth`.
///
/// Simulation studies conventionally start each replicate's optimizer at
/// the generating values; that is both the paper's practice and a large
/// saving in likelihood evaluations. Proportions and taus carry over
/// directly (Kendall's tau is family-free). Dispersions transfer only
/// within the same margin family; across families the start falls back to
/// a moderate default on the fitted family's own scale.
fn initial_for(spec: &ModelSpec, truth: &ParameterSet, truth_margin: MarginFamily) -> ParameterSet {
    let mut init = truth.clone();
    if spec.margin.family != truth_margin {
        let d = match spec.margin.family {
            MarginFamily::Normal => 0.3,
            MarginFamily::Beta => 0.05,
        };
        init.delta_prev = d;
        init.delta_sens = vec![d; truth.k()];
        init.delta_spec = vec![d; truth.k()];
    }
    // Clamp taus into the fitted family's open range: e.g. a negative true
    // tau is not expressible under a positive-only family.
    let (lo, hi) = spec.family.tau_range();
    let margin = 0.01 * (hi - lo);
    for t in init.tau_sens.iter_mut().chain(init.tau_spec.iter_mut()) {
        *t = t.clamp(lo + margin, hi - margin);
    }
    init
}

/// Run the scenario: generate every replicate, fit every model, aggregate.
pub fn run_simstudy(config: &SimStudyConfig) -> Result<MetricsTable> {
    config.validate()?;
    let truth = &config.plan.truth;
    let truth_margin = config.plan.spec.margin.family;
    let k = config.plan.spec.k;

    let inits: Vec<ParameterSet> = config
        .fits
        .iter()
        .map(|s| initial_for(s, truth, truth_margin))
        .collect();

    // One entry per replicate: per fitted model, the estimates and
    // standard errors, or None when the fit errored or did not converge.
    type ReplicateFits = Vec<Option<(ParameterSet, SeSet)>>;
    let replicate_results: Vec<ReplicateFits> = (1..=config.replications as u64)
        .into_par_iter()
        .map(|r| {
            let plan = SimDesignPlan {
                seed: config.plan.seed.wrapping_add(r),
                ..config.plan.clone()
            };
            let studies = match generate(&plan) {
                Ok(s) => s,
                // The plan was validated up front; a failure here would be
                // a bug, but marking the replicate failed keeps one bad
                // draw from sinking the whole run.
                Err(_) => return vec![None; config.fits.len()],
            };
            config
                .fits
                .iter()
                .zip(&inits)
                .map(|(fit_spec, init)| {
                    match fit(&studies, fit_spec, Some(init.clone()), &config.fit_options) {
                        Ok(result) if result.converged => {
                            Some((result.estimates, result.standard_errors))
                        }
                        _ => None,
                    }
                })
                .collect()
        })
        .collect();

    let slots = Slot::canonical(k);
    let parameters: Vec<String> = slots.iter().map(|s| s.label()).collect();

    let fits = config
        .fits
        .iter()
        .enumerate()
        .map(|(j, fit_spec)| {
            let per_replicate: Vec<Option<&(ParameterSet, SeSet)>> = replicate_results
                .iter()
                .map(|reps| reps[j].as_ref())
                .collect();
            summarize_fit(fit_spec, truth, truth_margin, &slots, &per_replicate, config.scale)
        })
        .collect();

    Ok(MetricsTable {
        truth: truth.clone(),
        truth_margin,
        replications: config.replications,
        scale: config.scale,
        parameters,
        fits,
    })
}

fn summarize_fit(
    spec: &ModelSpec,
    truth: &ParameterSet,
    truth_margin: MarginFamily,
    slots: &[Slot],
    per_replicate: &[Option<&(ParameterSet, SeSet)>],
    scale: f64,
) -> FitSummary {
    let n_converged = per_replicate.iter().flatten().count();
    let n_failed = per_replicate.len() - n_converged;
    let failed = n_converged == 0;
    let margins_match = spec.margin.family == truth_margin;

    let cells = slots
        .iter()
        .map(|&slot| {
            let is_dispersion = matches!(
                slot,
                Slot::DeltaPrev | Slot::DeltaSens(_) | Slot::DeltaSpec(_)
            );
            let truth_value = (margins_match || !is_dispersion).then(|| slot.get(truth));
            let estimates: Vec<f64> = per_replicate
                .iter()
                .flatten()
                .map(|(p, _)| slot.get(p))
                .collect();
            let ses: Vec<f64> = per_replicate
                .iter()
                .flatten()
                .filter_map(|(_, se)| se.get(slot))
                .collect();
            metric_cell(slot.label(), truth_value, &estimates, &ses, scale)
        })
        .collect();

    let replicates = per_replicate
        .iter()
        .map(|rep| rep.map(|(p, _)| slots.iter().map(|&s| s.get(p)).collect()))
        .collect();

    FitSummary {
        label: format!("{}+{}", spec.family, spec.margin.family.name()),
        spec: *spec,
        n_converged,
        n_failed,
        failed,
        cells,
        replicates,
    }
}

fn metric_cell(
    parameter: String,
    truth: Option<f64>,
    estimates: &[f64],
    ses: &[f64],
    scale: f64,
) -> MetricCell {
    let m = estimates.len();
    let mean = (m > 0).then(|| estimates.iter().sum::<f64>() / m as f64);

    let bias = match (truth, mean) {
        (Some(t), Some(mu)) => Some(scale * (mu - t)),
        _ => None,
    };
    let sd = (m > 1).then(|| {
        let mu = mean.unwrap();
        let ss: f64 = estimates.iter().map(|e| (e - mu) * (e - mu)).sum();
        scale * (ss / (m - 1) as f64).sqrt()
    });
    let rmse = match (truth, m > 0) {
        (Some(t), true) => {
            let ms: f64 = estimates.iter().map(|e| (e - t) * (e - t)).sum::<f64>() / m as f64;
            Some(scale * ms.sqrt())
        }
        _ => None,
    };
    let ase = (!ses.is_empty()).then(|| scale * ses.iter().sum::<f64>() / ses.len() as f64);

    MetricCell {
        parameter,
        truth,
        bias,
        sd,
        ase,
        rmse,
        n_se: ses.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaFamily;
    use crate::stats::{LinkFunction, SizeDistribution};

    fn paper_truth() -> ParameterSet {
        ParameterSet::new(
            0.4,
            vec![0.8, 0.6],
            vec![0.9, 0.7],
            0.3,
            vec![0.3, 0.3],
            vec![0.3, 0.3],
            vec![0.3, 0.3],
            vec![0.3, 0.3],
        )
    }

    fn spec(family: CopulaFamily, margin: MarginFamily) -> ModelSpec {
        let link = match margin {
            MarginFamily::Normal => LinkFunction::Logit,
            MarginFamily::Beta => LinkFunction::Identity,
        };
        ModelSpec::new(2, family, margin, link, 15).unwrap()
    }

    fn small_plan(seed: u64) -> SimDesignPlan {
        SimDesignPlan {
            n1: 3,
            n2: 3,
            n3: 3,
            n4: 3,
            sizes: SizeDistribution::default(),
            truth: paper_truth(),
            spec: spec(CopulaFamily::Clayton180, MarginFamily::Normal),
            seed,
        }
    }

    #[test]
    fn config_validation_catches_shape_errors() {
        let plan = small_plan(1);
        let good = SimStudyConfig::new(
            2,
            plan.clone(),
            vec![spec(CopulaFamily::Clayton180, MarginFamily::Normal)],
        );
        good.validate().unwrap();

        let zero_reps = SimStudyConfig {
            replications: 0,
            ..good.clone()
        };
        assert!(zero_reps.validate().is_err());

        let no_fits = SimStudyConfig {
            fits: vec![],
            ..good.clone()
        };
        assert!(no_fits.validate().is_err());

        let bad_scale = SimStudyConfig {
            scale: 0.0,
            ..good.clone()
        };
        assert!(bad_scale.validate().is_err());

        let mut wrong_k = good.clone();
        wrong_k.fits = vec![ModelSpec::new(
            1,
            CopulaFamily::Clayton180,
            MarginFamily::Normal,
            LinkFunction::Logit,
            15,
        )
        .unwrap()];
        assert!(wrong_k.validate().is_err());
    }

    #[test]
    fn initial_values_adapt_to_the_fitted_family() {
        let truth = paper_truth();
        let same = initial_for(
            &spec(CopulaFamily::Clayton180, MarginFamily::Normal),
            &truth,
            MarginFamily::Normal,
        );
        assert_eq!(same.delta_prev, 0.3);
        assert_eq!(same.tau_sens, vec![0.3, 0.3]);

        let cross = initial_for(
            &spec(CopulaFamily::Clayton180, MarginFamily::Beta),
            &truth,
            MarginFamily::Normal,
        );
        assert_eq!(cross.delta_prev, 0.05);
        assert_eq!(cross.sens, vec![0.8, 0.6]);

        // A positive-only family cannot start at a negative tau.
        let mut neg = truth.clone();
        neg.tau_sens[0] = -0.4;
        let clamped = initial_for(
            &spec(CopulaFamily::Clayton, MarginFamily::Normal),
            &neg,
            MarginFamily::Normal,
        );
        let (lo, hi) = CopulaFamily::Clayton.tau_range();
        assert!(clamped.tau_sens[0] > lo && clamped.tau_sens[0] < hi);
    }

    #[test]
    fn metric_cell_identity_and_edge_cases() {
        // RMSE^2 = bias^2 + SD^2 (m-1)/m on the unscaled values.
        let estimates = [0.42, 0.38, 0.45, 0.35, 0.41];
        let cell = metric_cell("p".into(), Some(0.4), &estimates, &[0.03, 0.04], 100.0);
        let (bias, sd, rmse) = (
            cell.bias.unwrap() / 100.0,
            cell.sd.unwrap() / 100.0,
            cell.rmse.unwrap() / 100.0,
        );
        let m = estimates.len() as f64;
        assert!((rmse * rmse - (bias * bias + sd * sd * (m - 1.0) / m)).abs() < 1e-12);
        assert!((cell.ase.unwrap() - 3.5).abs() < 1e-12);
        assert_eq!(cell.n_se, 2);

        // Single replicate: bias defined, SD absent.
        let single = metric_cell("p".into(), Some(0.4), &[0.43], &[], 100.0);
        assert!((single.bias.unwrap() - 3.0).abs() < 1e-9);
        assert!(single.sd.is_none());
        assert!(single.ase.is_none());
        assert!((single.rmse.unwrap() - 3.0).abs() < 1e-9);

        // No truth: only SD and ASE.
        let no_truth = metric_cell("g".into(), None, &estimates, &[0.1], 100.0);
        assert!(no_truth.bias.is_none());
        assert!(no_truth.rmse.is_none());
        assert!(no_truth.sd.is_some());
        assert!(no_truth.ase.is_some());

        // No estimates at all.
        let empty = metric_cell("p".into(), Some(0.4), &[], &[], 100.0);
        assert!(empty.bias.is_none() && empty.sd.is_none() && empty.rmse.is_none());
    }

    #[test]
    fn tiny_study_runs_and_is_deterministic() {
        let config = SimStudyConfig::new(
            2,
            small_plan(99),
            vec![spec(CopulaFamily::Clayton180, MarginFamily::Normal)],
        );
        let a = run_simstudy(&config).unwrap();
        let b = run_simstudy(&config).unwrap();
        assert_eq!(a.replications, 2);
        assert_eq!(a.parameters.len(), 14);
        let fa = &a.fits[0];
        let fb = &b.fits[0];
        assert_eq!(fa.label, "clayton180+normal");
        assert_eq!(fa.n_converged + fa.n_failed, 2);
        assert_eq!(fa.cells, fb.cells);
        assert_eq!(fa.replicates, fb.replicates);
        // Raw series: one entry per replicate, 14 values when converged.
        assert_eq!(fa.replicates.len(), 2);
        for rep in fa.replicates.iter().flatten() {
            assert_eq!(rep.len(), 14);
        }
    }

    #[test]
    fn cross_margin_fits_blank_dispersion_truth() {
        let config = SimStudyConfig::new(
            1,
            small_plan(5),
            vec![
                spec(CopulaFamily::Clayton180, MarginFamily::Normal),
                spec(CopulaFamily::Clayton180, MarginFamily::Beta),
            ],
        );
        let table = run_simstudy(&config).unwrap();
        let same = table.fit("clayton180+normal").unwrap();
        let cross = table.fit("clayton180+beta").unwrap();
        for label in ["delta_prev", "delta_sens[1]", "delta_spec[2]"] {
            assert!(same.cell(label).unwrap().truth.is_some());
            let cell = cross.cell(label).unwrap();
            assert!(cell.truth.is_none());
            assert!(cell.bias.is_none() && cell.rmse.is_none());
        }
        // Proportions and taus keep their truth under the cross fit.
        assert_eq!(cross.cell("prevalence").unwrap().truth, Some(0.4));
        assert_eq!(cross.cell("tau_spec[2]").unwrap().truth, Some(0.3));
    }
}
