//! Simulation of meta-analysis datasets.
//!
//! A [`SimDesignPlan`] describes a synthetic meta-analysis: four contiguous
//! design blocks (test 1 with gold standard, test 2 with gold standard, both
//! tests without a gold standard, and complete studies with every test plus
//! the gold standard), a shifted-gamma study-size distribution, and the true
//! model generating the latent accuracy parameters. [`generate_dataset`]
//! turns a plan into study records:
//!
//! 1. draw the latent uniforms for one study from the 1-truncated C-vine,
//! 2. map them through the margins to a prevalence, sensitivities, and
//!    specificities,
//! 3. draw the study size,
//! 4. draw the observed counts for whichever block the study belongs to —
//!    binomial disease/test layers when the gold standard is present, a
//!    four-cell multinomial over joint test results when it is not.
//!
//! Everything is driven by a single RNG stream, so a fixed seed reproduces
//! the identical dataset.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::model::{
    cell_probs, LatentPoint, ModelSpec, ParameterSet, StudyDesign, StudyRecord, TestCounts,
};
use crate::stats::{Margin, SizeDistribution};

/// Layout of a simulated meta-analysis.
///
/// Studies are generated in block order: `n1` studies reporting test 1
/// against the gold standard, `n2` reporting test 2 against the gold
/// standard, `n3` cross-classifying tests 1 and 2 without a gold standard,
/// and `n4` complete studies reporting every test against the gold
/// standard. Any block may be empty, but the plan must contain at least one
/// study. The `n2` block needs a model with at least two tests and the `n3`
/// block exactly two.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDesignPlan {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n4: usize,
    pub sizes: SizeDistribution,
    pub truth: ParameterSet,
    pub spec: ModelSpec,
    /// Base seed; [`generate`] derives its RNG stream from this.
    pub seed: u64,
}

enum Block {
    /// One test against the gold standard (1-based test index).
    SingleGold(usize),
    /// Tests 1 and 2 cross-classified, no gold standard.
    NoGoldPair,
    /// Every test against the gold standard.
    CompleteGold,
}

impl SimDesignPlan {
    /// Total number of studies across all four blocks.
    pub fn total(&self) -> usize {
        self.n1 + self.n2 + self.n3 + self.n4
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::invalid_argument(
                "simulation plan must contain at least one study",
            ));
        }
        if self.n2 > 0 && self.spec.k < 2 {
            return Err(Error::invalid_argument(
                "the test-2 block (n2) needs a model with at least two tests",
            ));
        }
        if self.n3 > 0 && self.spec.k != 2 {
            return Err(Error::invalid_argument(format!(
                "the no-gold block (n3) is defined for exactly two tests, model has {}",
                self.spec.k
            )));
        }
        self.sizes.validate()?;
        self.truth.validate(&self.spec)
    }

    fn block_of(&self, i: usize) -> Block {
        if i < self.n1 {
            Block::SingleGold(1)
        } else if i < self.n1 + self.n2 {
            Block::SingleGold(2)
        } else if i < self.n1 + self.n2 + self.n3 {
            Block::NoGoldPair
        } else {
            Block::CompleteGold
        }
    }
}

/// Generate one dataset from `plan` using the plan's own seed.
pub fn generate(plan: &SimDesignPlan) -> Result<Vec<StudyRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    generate_dataset(plan, &mut rng)
}

/// Generate one dataset from `plan`, drawing from `rng`.
///
/// Studies come out in block order with ids `s001, s002, ...` (zero-padded
/// to the dataset width). Every record satisfies [`StudyRecord::validate`]
/// by construction.
pub fn generate_dataset(plan: &SimDesignPlan, rng: &mut impl Rng) -> Result<Vec<StudyRecord>> {
    plan.validate()?;
    let vine = plan.truth.vine_spec(plan.spec.family)?;
    let margin = plan.spec.margin;
    let total = plan.total();
    let width = total.to_string().len().max(3);

    let mut out = Vec::with_capacity(total);
    for i in 0..total {
        let u = vine.sample_one(rng);
        let point = latent_point(&plan.truth, &margin, &u);
        let n = plan.sizes.sample(rng);
        let id = format!("s{:0width$}", i + 1);
        let design = match plan.block_of(i) {
            Block::SingleGold(test) => gold_design(n, &[test], &point, rng),
            Block::CompleteGold => {
                let tests: Vec<usize> = (1..=plan.spec.k).collect();
                gold_design(n, &tests, &point, rng)
            }
            Block::NoGoldPair => no_gold_design(n, &point, rng),
        };
        out.push(StudyRecord { id, design });
    }
    Ok(out)
}

/// Latent proportions for one study from its vine uniforms, ordered as the
/// vine emits them: root (prevalence), then sensitivities, then
/// specificities.
fn latent_point(truth: &ParameterSet, margin: &Margin, u: &[f64]) -> LatentPoint {
    let k = truth.k();
    let prev = margin.proportion_at(truth.prevalence, truth.delta_prev, u[0]);
    let se = (0..k)
        .map(|j| margin.proportion_at(truth.sens[j], truth.delta_sens[j], u[1 + j]))
        .collect();
    let sp = (0..k)
        .map(|j| margin.proportion_at(truth.spec[j], truth.delta_spec[j], u[1 + k + j]))
        .collect();
    LatentPoint { prev, se, sp }
}

fn binomial(n: u64, p: f64, rng: &mut impl Rng) -> u64 {
    if n == 0 {
        return 0;
    }
    Binomial::new(n, p.clamp(0.0, 1.0))
        .expect("probability in [0, 1]")
        .sample(rng)
}

/// Gold-standard study: disease status is binomial in the latent prevalence;
/// within each stratum every reported test contributes an independent
/// binomial layer (true positives among the diseased, true negatives among
/// the non-diseased).
fn gold_design(n: u64, tests: &[usize], point: &LatentPoint, rng: &mut impl Rng) -> StudyDesign {
    let n_diseased = binomial(n, point.prev, rng);
    let n_nondiseased = n - n_diseased;
    let counts = tests
        .iter()
        .map(|&test| {
            let tp = binomial(n_diseased, point.se[test - 1], rng);
            let tn = binomial(n_nondiseased, point.sp[test - 1], rng);
            TestCounts {
                test,
                tp,
                fn_: n_diseased - tp,
                fp: n_nondiseased - tn,
                tn,
            }
        })
        .collect();
    StudyDesign::GoldPlusTests {
        n_diseased,
        n_nondiseased,
        tests: counts,
    }
}

/// No-gold study: the four joint test results are one multinomial draw with
/// the mixed cell probabilities.
fn no_gold_design(n: u64, point: &LatentPoint, rng: &mut impl Rng) -> StudyDesign {
    let m = multinomial4(n, cell_probs(point, 1, 2), rng);
    StudyDesign::NoGoldTwoTests {
        tests: (1, 2),
        m11: m[0],
        m10: m[1],
        m01: m[2],
        m00: m[3],
    }
}

/// Exact multinomial draw by sequential conditional binomials: cell `c` is
/// binomial in the subjects and probability mass remaining after cells
/// `0..c`.
fn multinomial4(n: u64, p: [f64; 4], rng: &mut impl Rng) -> [u64; 4] {
    let mut out = [0u64; 4];
    let mut remaining = n;
    let mut mass = 1.0;
    for c in 0..3 {
        if remaining == 0 {
            break;
        }
        let cond = if mass > 0.0 { p[c] / mass } else { 1.0 };
        out[c] = binomial(remaining, cond, rng);
        remaining -= out[c];
        mass -= p[c];
    }
    out[3] = remaining;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaFamily;
    use crate::stats::{LinkFunction, MarginFamily};

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

    fn plan(n1: usize, n2: usize, n3: usize, n4: usize, seed: u64) -> SimDesignPlan {
        SimDesignPlan {
            n1,
            n2,
            n3,
            n4,
            sizes: SizeDistribution::default(),
            truth: paper_truth(),
            spec: ModelSpec::new(
                2,
                CopulaFamily::Clayton180,
                MarginFamily::Normal,
                LinkFunction::Logit,
                15,
            )
            .unwrap(),
            seed,
        }
    }

    #[test]
    fn blocks_have_the_prescribed_shapes() {
        let p = plan(3, 2, 4, 2, 7);
        let data = generate(&p).unwrap();
        assert_eq!(data.len(), 11);
        for (i, record) in data.iter().enumerate() {
            record.validate(2).unwrap();
            match &record.design {
                StudyDesign::GoldPlusTests { tests, .. } => {
                    let indices: Vec<usize> = tests.iter().map(|t| t.test).collect();
                    match i {
                        0..=2 => assert_eq!(indices, [1]),
                        3..=4 => assert_eq!(indices, [2]),
                        9..=10 => assert_eq!(indices, [1, 2]),
                        _ => panic!("study {i} should not have a gold standard"),
                    }
                }
                StudyDesign::NoGoldTwoTests { tests, .. } => {
                    assert!((5..=8).contains(&i), "study {i} should have a gold standard");
                    assert_eq!(*tests, (1, 2));
                }
            }
        }
        assert_eq!(data[0].id, "s001");
        assert_eq!(data[10].id, "s011");
    }

    #[test]
    fn fixed_seed_reproduces_the_dataset() {
        let p = plan(10, 10, 10, 10, 20260815);
        let a = generate(&p).unwrap();
        let b = generate(&p).unwrap();
        assert_eq!(a, b);
        let c = generate(&SimDesignPlan { seed: 1, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn study_sizes_follow_the_shifted_gamma() {
        let p = plan(0, 0, 0, 400, 3);
        let data = generate(&p).unwrap();
        let sizes: Vec<u64> = data.iter().map(|r| r.size()).collect();
        // Shift 30 and non-negative gamma put every size at 30 or above.
        assert!(sizes.iter().all(|&n| n >= 30));
        // Mean 30 + shape/rate = 150, sd ~110: 400 draws pin the sample
        // mean within ~3 standard errors of 5.5.
        let mean = sizes.iter().sum::<u64>() as f64 / sizes.len() as f64;
        assert!((mean - 150.0).abs() < 17.0, "sample mean {mean}");
    }

    #[test]
    fn pooled_sensitivity_matches_the_marginal_mean() {
        // All-complete design: the pooled empirical sensitivity of test 1
        // estimates E[x * x11] / E[x], which for moderate dependence sits
        // within a few thousandths of the marginal mean E[x11] of the
        // latent sensitivity. The marginal mean comes from an independent
        // high-resolution quadrature of the logit-normal margin; it is
        // visibly below the nominal 0.8 because the logit-normal mean is
        // not its median.
        let p = plan(0, 0, 0, 2000, 11);
        let data = generate(&p).unwrap();
        let (mut tp, mut n1) = (0u64, 0u64);
        for record in &data {
            if let StudyDesign::GoldPlusTests {
                n_diseased, tests, ..
            } = &record.design
            {
                tp += tests.iter().find(|t| t.test == 1).unwrap().tp;
                n1 += n_diseased;
            }
        }
        let pooled = tp as f64 / n1 as f64;

        // E[l^{-1}(mu + sigma Z)] over Z ~ N(0,1), integrated in z-space
        // where the integrand is entire (tails beyond |z| = 8.5 are < 1e-16).
        let rule = crate::stats::QuadratureRule::gauss_legendre(60).unwrap();
        let mu = LinkFunction::Logit.apply(0.8).unwrap();
        let marginal_mean = rule.integrate(|t| {
            let z = 17.0 * t - 8.5;
            let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            17.0 * phi * LinkFunction::Logit.inverse(mu + 0.3 * z)
        });
        assert!((marginal_mean - 0.8).abs() < 0.01);
        assert!(
            (pooled - marginal_mean).abs() < 0.01,
            "pooled {pooled} vs marginal mean {marginal_mean}"
        );
    }

    #[test]
    fn no_gold_cross_tables_are_consistent() {
        let p = plan(0, 0, 40, 0, 5);
        let data = generate(&p).unwrap();
        for record in &data {
            match &record.design {
                StudyDesign::NoGoldTwoTests {
                    m11, m10, m01, m00, ..
                } => {
                    assert_eq!(m11 + m10 + m01 + m00, record.size());
                }
                _ => panic!("expected a no-gold record"),
            }
        }
    }

    #[test]
    fn multinomial_draws_are_exact_in_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            multinomial4(50, [1.0, 0.0, 0.0, 0.0], &mut rng),
            [50, 0, 0, 0]
        );
        assert_eq!(
            multinomial4(50, [0.0, 0.0, 0.0, 1.0], &mut rng),
            [0, 0, 0, 50]
        );
        let m = multinomial4(0, [0.25, 0.25, 0.25, 0.25], &mut rng);
        assert_eq!(m, [0, 0, 0, 0]);
    }

    #[test]
    fn multinomial_cell_frequencies_match_their_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = [0.210, 0.290, 0.164, 0.336];
        let mut totals = [0u64; 4];
        let reps = 400u64;
        for _ in 0..reps {
            let m = multinomial4(100, p, &mut rng);
            assert_eq!(m.iter().sum::<u64>(), 100);
            for (t, &c) in totals.iter_mut().zip(&m) {
                *t += c;
            }
        }
        for (t, &prob) in totals.iter().zip(&p) {
            let freq = *t as f64 / (100 * reps) as f64;
            // se ~ sqrt(p q / 40000) < 0.0025; allow four of those.
            assert!(
                (freq - prob).abs() < 0.01,
                "cell frequency {freq} vs probability {prob}"
            );
        }
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let empty = plan(0, 0, 0, 0, 1);
        assert!(generate(&empty).is_err());

        let mut one_test = plan(5, 0, 0, 0, 1);
        one_test.spec = ModelSpec::new(
            1,
            CopulaFamily::Clayton180,
            MarginFamily::Normal,
            LinkFunction::Logit,
            15,
        )
        .unwrap();
        one_test.truth = ParameterSet::new(
            0.4,
            vec![0.8],
            vec![0.9],
            0.3,
            vec![0.3],
            vec![0.3],
            vec![0.3],
            vec![0.3],
        );
        assert!(generate(&one_test).is_ok());
        one_test.n2 = 1;
        assert!(generate(&one_test).is_err());
        one_test.n2 = 0;
        one_test.n3 = 1;
        assert!(generate(&one_test).is_err());

        let mut bad_truth = plan(5, 0, 0, 0, 1);
        bad_truth.truth.tau_sens[0] = 0.0; // outside clayton180's range
        assert!(generate(&bad_truth).is_err());
    }

    #[test]
    fn beta_margin_datasets_generate_and_validate() {
        let mut p = plan(2, 2, 2, 2, 17);
        p.spec = ModelSpec::new(
            2,
            CopulaFamily::Bvn,
            MarginFamily::Beta,
            LinkFunction::Identity,
            15,
        )
        .unwrap();
        p.truth.delta_prev = 0.05;
        p.truth.delta_sens = vec![0.05, 0.05];
        p.truth.delta_spec = vec![0.05, 0.05];
        let data = generate(&p).unwrap();
        assert_eq!(data.len(), 8);
        for record in &data {
            record.validate(2).unwrap();
        }
    }
}
