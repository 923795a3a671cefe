//! On-disk document formats and bundled resources.
//!
//! Every format is a small versioned JSON document carrying a `format`
//! marker so files identify themselves: study datasets ([`StudyFile`]),
//! true parameter values ([`TruthFile`]), fit results ([`ResultFile`]),
//! simulation-study configurations ([`SimStudyConfigFile`]), and metrics
//! outputs ([`MetricsFile`]). A flat CSV import covers the common
//! one-test-versus-gold-standard table shape.
//!
//! Loading is strict: unknown fields, duplicate study ids, inconsistent
//! counts, and shape mismatches are all rejected with messages naming the
//! offending study or field. Writes go through a temp-file rename so a
//! crash never leaves a half-written artifact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::copula::CopulaFamily;
use crate::datagen::SimDesignPlan;
use crate::error::{Error, Result};
use crate::estimation::{FitOptions, FitResult, ModelRank, SeSet};
use crate::model::{ModelSpec, ParameterSet, StudyDesign, StudyRecord, TestCounts, DEFAULT_NQ};
use crate::simstudy::{MetricCell, MetricsTable, SimStudyConfig};
use crate::stats::{LinkFunction, MarginFamily, SizeDistribution};

pub const STUDIES_FORMAT: &str = "vinemeta/studies";
pub const TRUTH_FORMAT: &str = "vinemeta/truth";
pub const RESULT_FORMAT: &str = "vinemeta/result";
pub const SIMSTUDY_CONFIG_FORMAT: &str = "vinemeta/simstudy-config";
pub const METRICS_FORMAT: &str = "vinemeta/metrics";
pub const FORMAT_VERSION: u32 = 1;

fn check_header(path: &str, format: &str, expect: &str, version: u32) -> Result<()> {
    if format != expect {
        return Err(Error::invalid_data(format!(
            "{path}: expected a '{expect}' document, found '{format}'"
        )));
    }
    if version != FORMAT_VERSION {
        return Err(Error::invalid_data(format!(
            "{path}: unsupported {expect} version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::invalid_data(format!("{path}: {e}")))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::invalid_data(format!("{}: {e}", path.display())))
}

/// Write `bytes` to `path` atomically: a unique temp file in the same
/// directory, then a rename over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let mut name = path
        .file_name()
        .ok_or_else(|| Error::invalid_argument(format!("{}: not a file path", path.display())))?
        .to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        e.into()
    })
}

fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Hex-encoded SHA-256 of a byte string; recorded in result files so a fit
/// can be traced back to the exact input file.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

// ---------------------------------------------------------------------------
// Study datasets
// ---------------------------------------------------------------------------

/// A meta-analysis dataset document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub format: String,
    pub version: u32,
    /// Number of candidate tests in the network.
    pub k: usize,
    pub studies: Vec<StudyEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignTag {
    GoldOneTest,
    GoldMultiTest,
    NoGoldPair,
}

impl DesignTag {
    fn name(self) -> &'static str {
        match self {
            DesignTag::GoldOneTest => "gold_one_test",
            DesignTag::GoldMultiTest => "gold_multi_test",
            DesignTag::NoGoldPair => "no_gold_pair",
        }
    }
}

/// Per-test counts inside a `gold_multi_test` entry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestCountsEntry {
    pub test: usize,
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

/// One study entry. The `design` tag decides which of the optional fields
/// must be present; the set is validated exactly, so an entry mixing fields
/// from two designs is rejected rather than silently reinterpreted.
///
/// * `gold_one_test`: `test`, `tp`, `fn`, `fp`, `tn` (diseased and
///   non-diseased totals follow from the margins).
/// * `gold_multi_test`: `n_diseased`, `n_nondiseased`, `tests`.
/// * `no_gold_pair`: `pair` (the two 1-based test indices), `m11`, `m10`,
///   `m01`, `m00` (joint test results, first index on the left).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyEntry {
    pub id: String,
    pub design: DesignTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tp: Option<u64>,
    #[serde(default, rename = "fn", skip_serializing_if = "Option::is_none")]
    pub fn_: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tn: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_diseased: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_nondiseased: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tests: Option<Vec<TestCountsEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m11: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m10: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m01: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m00: Option<u64>,
}

impl StudyEntry {
    fn empty(id: String, design: DesignTag) -> Self {
        StudyEntry {
            id,
            design,
            test: None,
            tp: None,
            fn_: None,
            fp: None,
            tn: None,
            n_diseased: None,
            n_nondiseased: None,
            tests: None,
            pair: None,
            m11: None,
            m10: None,
            m01: None,
            m00: None,
        }
    }

    /// Which optional fields are set, by name; used to reject entries whose
    /// field set does not match their design tag.
    fn present(&self) -> Vec<&'static str> {
        let mut p = Vec::new();
        let mut note = |on: bool, name: &'static str| {
            if on {
                p.push(name);
            }
        };
        note(self.test.is_some(), "test");
        note(self.tp.is_some(), "tp");
        note(self.fn_.is_some(), "fn");
        note(self.fp.is_some(), "fp");
        note(self.tn.is_some(), "tn");
        note(self.n_diseased.is_some(), "n_diseased");
        note(self.n_nondiseased.is_some(), "n_nondiseased");
        note(self.tests.is_some(), "tests");
        note(self.pair.is_some(), "pair");
        note(self.m11.is_some(), "m11");
        note(self.m10.is_some(), "m10");
        note(self.m01.is_some(), "m01");
        note(self.m00.is_some(), "m00");
        p
    }

    fn to_record(&self) -> Result<StudyRecord> {
        let expected: &[&str] = match self.design {
            DesignTag::GoldOneTest => &["test", "tp", "fn", "fp", "tn"],
            DesignTag::GoldMultiTest => &["n_diseased", "n_nondiseased", "tests"],
            DesignTag::NoGoldPair => &["pair", "m11", "m10", "m01", "m00"],
        };
        let present = self.present();
        if present != expected {
            return Err(Error::invalid_data(format!(
                "study {}: a {} entry needs exactly the fields {:?}, found {:?}",
                self.id,
                self.design.name(),
                expected,
                present
            )));
        }
        let design = match self.design {
            DesignTag::GoldOneTest => {
                let (tp, fn_) = (self.tp.unwrap(), self.fn_.unwrap());
                let (fp, tn) = (self.fp.unwrap(), self.tn.unwrap());
                StudyDesign::GoldPlusTests {
                    n_diseased: tp + fn_,
                    n_nondiseased: fp + tn,
                    tests: vec![TestCounts {
                        test: self.test.unwrap(),
                        tp,
                        fn_,
                        fp,
                        tn,
                    }],
                }
            }
            DesignTag::GoldMultiTest => StudyDesign::GoldPlusTests {
                n_diseased: self.n_diseased.unwrap(),
                n_nondiseased: self.n_nondiseased.unwrap(),
                tests: self
                    .tests
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|t| TestCounts {
                        test: t.test,
                        tp: t.tp,
                        fn_: t.fn_,
                        fp: t.fp,
                        tn: t.tn,
                    })
                    .collect(),
            },
            DesignTag::NoGoldPair => {
                let [a, b] = self.pair.unwrap();
                StudyDesign::NoGoldTwoTests {
                    tests: (a, b),
                    m11: self.m11.unwrap(),
                    m10: self.m10.unwrap(),
                    m01: self.m01.unwrap(),
                    m00: self.m00.unwrap(),
                }
            }
        };
        Ok(StudyRecord {
            id: self.id.clone(),
            design,
        })
    }

    fn from_record(record: &StudyRecord) -> Self {
        match &record.design {
            StudyDesign::GoldPlusTests {
                n_diseased,
                n_nondiseased,
                tests,
            } => {
                if let [tc] = tests.as_slice() {
                    let mut e = StudyEntry::empty(record.id.clone(), DesignTag::GoldOneTest);
                    e.test = Some(tc.test);
                    e.tp = Some(tc.tp);
                    e.fn_ = Some(tc.fn_);
                    e.fp = Some(tc.fp);
                    e.tn = Some(tc.tn);
                    e
                } else {
                    let mut e = StudyEntry::empty(record.id.clone(), DesignTag::GoldMultiTest);
                    e.n_diseased = Some(*n_diseased);
                    e.n_nondiseased = Some(*n_nondiseased);
                    e.tests = Some(
                        tests
                            .iter()
                            .map(|t| TestCountsEntry {
                                test: t.test,
                                tp: t.tp,
                                fn_: t.fn_,
                                fp: t.fp,
                                tn: t.tn,
                            })
                            .collect(),
                    );
                    e
                }
            }
            StudyDesign::NoGoldTwoTests {
                tests,
                m11,
                m10,
                m01,
                m00,
            } => {
                let mut e = StudyEntry::empty(record.id.clone(), DesignTag::NoGoldPair);
                e.pair = Some([tests.0, tests.1]);
                e.m11 = Some(*m11);
                e.m10 = Some(*m10);
                e.m01 = Some(*m01);
                e.m00 = Some(*m00);
                e
            }
        }
    }
}

/// A dataset as loaded from disk: test count, validated records, and the
/// SHA-256 of the exact file bytes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub k: usize,
    pub studies: Vec<StudyRecord>,
    pub sha256: String,
}

fn validate_records(path: &str, k: usize, studies: &[StudyRecord]) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid_data(format!(
            "{path}: a dataset needs at least one test (k >= 1)"
        )));
    }
    if studies.is_empty() {
        return Err(Error::invalid_data(format!("{path}: no studies")));
    }
    let mut seen = std::collections::HashSet::new();
    for s in studies {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::invalid_data(format!(
                "{path}: duplicate study id '{}'",
                s.id
            )));
        }
        s.validate(k)
            .map_err(|e| Error::invalid_data(format!("{path}: {e}")))?;
    }
    Ok(())
}

fn dataset_from_text(path: &str, text: &str) -> Result<Dataset> {
    let doc: StudyFile = parse_json(path, text)?;
    check_header(path, &doc.format, STUDIES_FORMAT, doc.version)?;
    let studies = doc
        .studies
        .iter()
        .map(|e| e.to_record())
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::invalid_data(format!("{path}: {e}")))?;
    validate_records(path, doc.k, &studies)?;
    Ok(Dataset {
        k: doc.k,
        studies,
        sha256: sha256_hex(text.as_bytes()),
    })
}

/// Flat CSV row for the one-test-versus-gold-standard convenience import.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CsvRow {
    id: String,
    test: usize,
    tp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    fp: u64,
    tn: u64,
}

fn dataset_from_csv(path: &str, text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut studies = Vec::new();
    let mut k = 0;
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| Error::invalid_data(format!("{path}: {e}")))?;
        k = k.max(row.test);
        studies.push(StudyRecord {
            id: row.id,
            design: StudyDesign::GoldPlusTests {
                n_diseased: row.tp + row.fn_,
                n_nondiseased: row.fp + row.tn,
                tests: vec![TestCounts {
                    test: row.test,
                    tp: row.tp,
                    fn_: row.fn_,
                    fp: row.fp,
                    tn: row.tn,
                }],
            },
        });
    }
    validate_records(path, k, &studies)?;
    Ok(Dataset {
        k,
        studies,
        sha256: sha256_hex(text.as_bytes()),
    })
}

/// Load a dataset. `.csv` files use the flat `id,test,tp,fn,fp,tn` import
/// (every row one gold-standard study of a single test, `k` inferred from
/// the largest test index); anything else is parsed as a [`StudyFile`]
/// JSON document.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = read_file(path)?;
    let name = path.display().to_string();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        dataset_from_csv(&name, &text)
    } else {
        dataset_from_text(&name, &text)
    }
}

/// Serialize a dataset to a [`StudyFile`] document and write it atomically.
pub fn save_dataset(path: &Path, k: usize, studies: &[StudyRecord]) -> Result<()> {
    validate_records(&path.display().to_string(), k, studies)?;
    let doc = StudyFile {
        format: STUDIES_FORMAT.to_string(),
        version: FORMAT_VERSION,
        k,
        studies: studies.iter().map(StudyEntry::from_record).collect(),
    };
    write_json(path, &doc)
}

// ---------------------------------------------------------------------------
// Parameter values and model specifications
// ---------------------------------------------------------------------------

/// Flat parameter values in the canonical layout; the serialized twin of
/// [`ParameterSet`] (which additionally tracks boundary flags).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterValues {
    pub prevalence: f64,
    pub sens: Vec<f64>,
    pub spec: Vec<f64>,
    pub delta_prev: f64,
    pub delta_sens: Vec<f64>,
    pub delta_spec: Vec<f64>,
    pub tau_sens: Vec<f64>,
    pub tau_spec: Vec<f64>,
}

impl ParameterValues {
    pub fn to_params(&self) -> ParameterSet {
        ParameterSet::new(
            self.prevalence,
            self.sens.clone(),
            self.spec.clone(),
            self.delta_prev,
            self.delta_sens.clone(),
            self.delta_spec.clone(),
            self.tau_sens.clone(),
            self.tau_spec.clone(),
        )
    }

    pub fn from_params(p: &ParameterSet) -> Self {
        ParameterValues {
            prevalence: p.prevalence,
            sens: p.sens.clone(),
            spec: p.spec.clone(),
            delta_prev: p.delta_prev,
            delta_sens: p.delta_sens.clone(),
            delta_spec: p.delta_spec.clone(),
            tau_sens: p.tau_sens.clone(),
            tau_spec: p.tau_spec.clone(),
        }
    }
}

/// True parameter values for simulation, stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub format: String,
    pub version: u32,
    pub k: usize,
    pub parameters: ParameterValues,
}

/// Load a truth document; `k` consistency is checked, value ranges are
/// checked later against the chosen model (dispersion ranges depend on the
/// margin family).
pub fn load_truth(path: &Path) -> Result<(usize, ParameterSet)> {
    let text = read_file(path)?;
    truth_from_text(&path.display().to_string(), &text)
}

fn truth_from_text(path: &str, text: &str) -> Result<(usize, ParameterSet)> {
    let doc: TruthFile = parse_json(path, text)?;
    check_header(path, &doc.format, TRUTH_FORMAT, doc.version)?;
    let params = doc.parameters.to_params();
    if params.k() != doc.k
        || params.spec.len() != doc.k
        || params.delta_sens.len() != doc.k
        || params.delta_spec.len() != doc.k
        || params.tau_sens.len() != doc.k
        || params.tau_spec.len() != doc.k
    {
        return Err(Error::invalid_data(format!(
            "{path}: parameter vectors are not all length k = {}",
            doc.k
        )));
    }
    Ok((doc.k, params))
}

pub fn save_truth(path: &Path, k: usize, params: &ParameterSet) -> Result<()> {
    let doc = TruthFile {
        format: TRUTH_FORMAT.to_string(),
        version: FORMAT_VERSION,
        k,
        parameters: ParameterValues::from_params(params),
    };
    write_json(path, &doc)
}

/// Serialized model description: copula family, margin family, link, and
/// quadrature size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpecDoc {
    pub k: usize,
    pub copula: CopulaFamily,
    pub margin: MarginFamily,
    pub link: LinkFunction,
    #[serde(default = "default_quad_points")]
    pub quad_points: usize,
}

fn default_quad_points() -> usize {
    DEFAULT_NQ
}

impl ModelSpecDoc {
    pub fn to_spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.k, self.copula, self.margin, self.link, self.quad_points)
    }

    pub fn from_spec(spec: &ModelSpec) -> Self {
        ModelSpecDoc {
            k: spec.k,
            copula: spec.family,
            margin: spec.margin.family,
            link: spec.margin.link,
            quad_points: spec.nq,
        }
    }
}

// ---------------------------------------------------------------------------
// Fit results
// ---------------------------------------------------------------------------

/// Standard errors in the canonical layout; `null` marks absent entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeValues {
    pub prevalence: Option<f64>,
    pub sens: Vec<Option<f64>>,
    pub spec: Vec<Option<f64>>,
    pub delta_prev: Option<f64>,
    pub delta_sens: Vec<Option<f64>>,
    pub delta_spec: Vec<Option<f64>>,
    pub tau_sens: Vec<Option<f64>>,
    pub tau_spec: Vec<Option<f64>>,
}

impl SeValues {
    pub fn from_ses(s: &SeSet) -> Self {
        SeValues {
            prevalence: s.prevalence,
            sens: s.sens.clone(),
            spec: s.spec.clone(),
            delta_prev: s.delta_prev,
            delta_sens: s.delta_sens.clone(),
            delta_spec: s.delta_spec.clone(),
            tau_sens: s.tau_sens.clone(),
            tau_spec: s.tau_spec.clone(),
        }
    }
}

/// Echo of the optimizer settings used for a fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptionsDoc {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub boundary_margin: f64,
    pub polish_probes: usize,
}

impl FitOptionsDoc {
    pub fn to_options(self) -> FitOptions {
        FitOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            boundary_margin: self.boundary_margin,
            polish_probes: self.polish_probes,
        }
    }

    pub fn from_options(o: &FitOptions) -> Self {
        FitOptionsDoc {
            max_iterations: o.max_iterations,
            gradient_tolerance: o.gradient_tolerance,
            boundary_margin: o.boundary_margin,
            polish_probes: o.polish_probes,
        }
    }
}

/// Where the fitted data came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataProvenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// SHA-256 of the input file bytes.
    pub sha256: String,
    pub n_studies: usize,
}

/// The numeric outcome of one fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDoc {
    pub converged: bool,
    pub max_loglik: f64,
    pub n_params: usize,
    pub n_evaluations: u64,
    pub gradient_norm: f64,
    /// Vine pair indices frozen at a Frechet bound (sensitivities `0..k`,
    /// specificities `k..2k`).
    pub boundary_pairs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_warning: Option<String>,
    pub estimates: ParameterValues,
    pub standard_errors: SeValues,
}

/// One row of the model-comparison block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonRowDoc {
    pub label: String,
    pub max_loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub converged: bool,
}

impl ComparisonRowDoc {
    pub fn from_rank(r: &ModelRank) -> Self {
        ComparisonRowDoc {
            label: r.label.clone(),
            max_loglik: r.max_loglik,
            n_params: r.n_params,
            aic: r.aic,
            converged: r.converged,
        }
    }
}

/// A fitted model written to disk: input echo, estimates, and (in grid
/// mode) the comparison against the other fitted models.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub model: ModelSpecDoc,
    pub options: FitOptionsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub data: DataProvenance,
    pub fit: FitDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Vec<ComparisonRowDoc>>,
}

impl ResultFile {
    pub fn new(
        spec: &ModelSpec,
        options: &FitOptions,
        data: DataProvenance,
        result: &FitResult,
    ) -> Self {
        ResultFile {
            format: RESULT_FORMAT.to_string(),
            version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            model: ModelSpecDoc::from_spec(spec),
            options: FitOptionsDoc::from_options(options),
            seed: None,
            data,
            fit: FitDoc {
                converged: result.converged,
                max_loglik: result.max_loglik,
                n_params: result.n_params,
                n_evaluations: result.n_evaluations,
                gradient_norm: result.gradient_norm,
                boundary_pairs: result.boundary_pairs.clone(),
                se_warning: result.se_warning.clone(),
                estimates: ParameterValues::from_params(&result.estimates),
                standard_errors: SeValues::from_ses(&result.standard_errors),
            },
            comparison: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn load_result(path: &Path) -> Result<ResultFile> {
    let name = path.display().to_string();
    let doc: ResultFile = parse_json(&name, &read_file(path)?)?;
    check_header(&name, &doc.format, RESULT_FORMAT, doc.version)?;
    Ok(doc)
}

// ---------------------------------------------------------------------------
// Simulation-study configuration
// ---------------------------------------------------------------------------

/// Serialized [`SimDesignPlan`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDoc {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n4: usize,
    pub seed: u64,
    #[serde(default = "SizeDistribution::default")]
    pub sizes: SizeDistribution,
    pub truth: ParameterValues,
    pub true_model: ModelSpecDoc,
}

impl PlanDoc {
    pub fn to_plan(&self) -> Result<SimDesignPlan> {
        let plan = SimDesignPlan {
            n1: self.n1,
            n2: self.n2,
            n3: self.n3,
            n4: self.n4,
            sizes: self.sizes,
            truth: self.truth.to_params(),
            spec: self.true_model.to_spec()?,
            seed: self.seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_plan(plan: &SimDesignPlan) -> Self {
        PlanDoc {
            n1: plan.n1,
            n2: plan.n2,
            n3: plan.n3,
            n4: plan.n4,
            seed: plan.seed,
            sizes: plan.sizes,
            truth: ParameterValues::from_params(&plan.truth),
            true_model: ModelSpecDoc::from_spec(&plan.spec),
        }
    }
}

/// A simulation-study scenario document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimStudyConfigFile {
    pub format: String,
    pub version: u32,
    pub replications: usize,
    pub plan: PlanDoc,
    /// Models fitted to every replicate; `k` and `quad_points` default to
    /// the generating model's values when omitted.
    pub fits: Vec<FitSpecDoc>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_options: Option<FitOptionsDoc>,
}

fn default_scale() -> f64 {
    crate::simstudy::DEFAULT_SCALE
}

/// A fitted-model entry in a simulation-study configuration; like
/// [`ModelSpecDoc`] but `k` and `quad_points` are optional, defaulting to
/// the generating model's values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpecDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub copula: CopulaFamily,
    pub margin: MarginFamily,
    pub link: LinkFunction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad_points: Option<usize>,
}

impl SimStudyConfigFile {
    pub fn to_config(&self) -> Result<SimStudyConfig> {
        let plan = self.plan.to_plan()?;
        let fits = self
            .fits
            .iter()
            .map(|f| {
                ModelSpec::new(
                    f.k.unwrap_or(plan.spec.k),
                    f.copula,
                    f.margin,
                    f.link,
                    f.quad_points.unwrap_or(plan.spec.nq),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut config = SimStudyConfig::new(self.replications, plan, fits);
        config.scale = self.scale;
        if let Some(opts) = self.fit_options {
            config.fit_options = opts.to_options();
        }
        config.validate()?;
        Ok(config)
    }
}

/// Parse a simulation-study configuration document.
pub fn config_from_text(name: &str, text: &str) -> Result<SimStudyConfigFile> {
    let doc: SimStudyConfigFile = parse_json(name, text)?;
    check_header(name, &doc.format, SIMSTUDY_CONFIG_FORMAT, doc.version)?;
    Ok(doc)
}

pub fn load_config(path: &Path) -> Result<SimStudyConfigFile> {
    config_from_text(&path.display().to_string(), &read_file(path)?)
}

// ---------------------------------------------------------------------------
// Bundled resources
// ---------------------------------------------------------------------------

/// Named resources compiled into the library: simulation-study scenarios
/// from the reference tables, matching truth files, and the deep-vein-
/// thrombosis dataset template (shape only; the source counts are not
/// public).
pub const BUNDLED: &[(&str, &str)] = &[
    (
        "table2_cln180_normal",
        include_str!("../data/table2_cln180_normal.json"),
    ),
    (
        "table2_cln180_beta",
        include_str!("../data/table2_cln180_beta.json"),
    ),
    (
        "cross_normal_beta",
        include_str!("../data/cross_normal_beta.json"),
    ),
    (
        "cross_beta_normal",
        include_str!("../data/cross_beta_normal.json"),
    ),
    (
        "truth_cln180_normal",
        include_str!("../data/truth_cln180_normal.json"),
    ),
    (
        "truth_cln180_beta",
        include_str!("../data/truth_cln180_beta.json"),
    ),
    ("dvt_template", include_str!("../data/dvt_template.json")),
];

/// The text of a bundled resource, by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

/// Resolve a CLI path-or-bundle argument: an existing file wins, otherwise
/// a bundled resource of that name, otherwise an error listing the bundle
/// names.
pub fn resolve_text(arg: &str) -> Result<(String, String)> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok((arg.to_string(), read_file(path)?));
    }
    if let Some(text) = bundled(arg) {
        return Ok((format!("bundled:{arg}"), text.to_string()));
    }
    let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
    Err(Error::invalid_data(format!(
        "{arg}: no such file or bundled resource (bundled: {})",
        names.join(", ")
    )))
}

/// Load a truth argument (file path or bundled name).
pub fn resolve_truth(arg: &str) -> Result<(usize, ParameterSet)> {
    let (name, text) = resolve_text(arg)?;
    truth_from_text(&name, &text)
}

/// Load a simulation-study configuration argument (file path or bundled
/// name).
pub fn resolve_config(arg: &str) -> Result<SimStudyConfigFile> {
    let (name, text) = resolve_text(arg)?;
    config_from_text(&name, &text)
}

/// Load a dataset argument (file path or bundled name).
pub fn resolve_dataset(arg: &str) -> Result<Dataset> {
    let path = Path::new(arg);
    if path.exists() {
        return load_dataset(path);
    }
    let (name, text) = resolve_text(arg)?;
    dataset_from_text(&name, &text)
}

// ---------------------------------------------------------------------------
// Metrics output
// ---------------------------------------------------------------------------

/// One metric cell in a serialized metrics table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricCellDoc {
    pub parameter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ase: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    pub n_se: usize,
}

impl MetricCellDoc {
    fn from_cell(c: &MetricCell) -> Self {
        MetricCellDoc {
            parameter: c.parameter.clone(),
            truth: c.truth,
            bias: c.bias,
            sd: c.sd,
            ase: c.ase,
            rmse: c.rmse,
            n_se: c.n_se,
        }
    }
}

/// One fitted model's block in a serialized metrics table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMetricsDoc {
    pub label: String,
    pub model: ModelSpecDoc,
    pub n_converged: usize,
    pub n_failed: usize,
    pub failed: bool,
    pub cells: Vec<MetricCellDoc>,
}

/// Serialized [`MetricsTable`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub replications: usize,
    pub scale: f64,
    pub truth: ParameterValues,
    pub parameters: Vec<String>,
    pub fits: Vec<FitMetricsDoc>,
}

impl MetricsFile {
    pub fn from_table(table: &MetricsTable) -> Self {
        MetricsFile {
            format: METRICS_FORMAT.to_string(),
            version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            replications: table.replications,
            scale: table.scale,
            truth: ParameterValues::from_params(&table.truth),
            parameters: table.parameters.clone(),
            fits: table
                .fits
                .iter()
                .map(|f| FitMetricsDoc {
                    label: f.label.clone(),
                    model: ModelSpecDoc::from_spec(&f.spec),
                    n_converged: f.n_converged,
                    n_failed: f.n_failed,
                    failed: f.failed,
                    cells: f.cells.iter().map(MetricCellDoc::from_cell).collect(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Write one fitted model's per-replicate estimates as CSV: a `replicate`
/// column, a `converged` flag, and one column per parameter in canonical
/// order — the plot-data series for external tooling.
pub fn save_replicates_csv(
    path: &Path,
    parameters: &[String],
    replicates: &[Option<Vec<f64>>],
) -> Result<()> {
    let mut out = String::new();
    out.push_str("replicate,converged");
    for p in parameters {
        out.push(',');
        out.push_str(p);
    }
    out.push('\n');
    for (r, est) in replicates.iter().enumerate() {
        match est {
            Some(values) => {
                out.push_str(&format!("{},true", r + 1));
                for v in values {
                    out.push_str(&format!(",{v}"));
                }
            }
            None => {
                out.push_str(&format!("{},false", r + 1));
                for _ in parameters {
                    out.push(',');
                }
            }
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
