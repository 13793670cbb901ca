//! Elliptical samplers, outlier injection and the replicated Monte-Carlo
//! experiment runner.
//!
//! Every replication draws from its own ChaCha stream derived from the master
//! seed and the replication index, and results are collected by index, so a
//! report does not depend on how many worker threads produced it.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::estimators::{EstimatorKind, EstimatorSpec};
use crate::gqda::{self, GqdaModel};
use crate::numerics::{Matrix, SpdMatrix, Vector};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("unsupported contamination design: {0}")]
    UnsupportedDesign(String),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("writing {path}: {message}")]
    Output { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, SimulateError>;

fn config_error(path: impl Into<String>, message: impl fmt::Display) -> SimulateError {
    SimulateError::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Normal,
    StudentT,
    Cauchy,
}

/// An elliptical distribution: Normal, Student t with `df` degrees of
/// freedom, or Cauchy (t with one degree of freedom).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionDoc", into = "DistributionDoc")]
pub struct DistributionSpec {
    family: Family,
    df: Option<f64>,
    location: Vector,
    scatter: SpdMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionDoc {
    family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    df: Option<f64>,
    location: Vec<f64>,
    /// Row-major.
    scatter: Vec<Vec<f64>>,
}

impl TryFrom<DistributionDoc> for DistributionSpec {
    type Error = String;

    fn try_from(doc: DistributionDoc) -> std::result::Result<Self, String> {
        let p = doc.location.len();
        if p == 0 {
            return Err("location must be non-empty".into());
        }
        if doc.scatter.len() != p || doc.scatter.iter().any(|r| r.len() != p) {
            return Err(format!("scatter must be {p}×{p}"));
        }
        let m = Matrix::from_fn(p, p, |i, j| doc.scatter[i][j]);
        let scatter = SpdMatrix::new(&m).map_err(|e| format!("scatter: {e}"))?;
        let location = Vector::from_vec(doc.location);
        match (doc.family, doc.df) {
            (Family::StudentT, Some(df)) => DistributionSpec::student_t(df, location, scatter),
            (Family::StudentT, None) => Err("student_t needs `df`".into()),
            (_, Some(_)) => Err("`df` only applies to student_t".into()),
            (Family::Normal, None) => Ok(DistributionSpec::normal(location, scatter)),
            (Family::Cauchy, None) => Ok(DistributionSpec::cauchy(location, scatter)),
        }
    }
}

impl From<DistributionSpec> for DistributionDoc {
    fn from(d: DistributionSpec) -> Self {
        let s = d.scatter.matrix();
        DistributionDoc {
            family: d.family,
            df: d.df,
            location: d.location.iter().copied().collect(),
            scatter: (0..s.nrows()).map(|i| s.row(i).iter().copied().collect()).collect(),
        }
    }
}

impl DistributionSpec {
    pub fn normal(location: Vector, scatter: SpdMatrix) -> Self {
        DistributionSpec {
            family: Family::Normal,
            df: None,
            location,
            scatter,
        }
    }

    pub fn student_t(df: f64, location: Vector, scatter: SpdMatrix) -> std::result::Result<Self, String> {
        if !(df > 0.0 && df.is_finite()) {
            return Err(format!("degrees of freedom must be positive, got {df}"));
        }
        Ok(DistributionSpec {
            family: Family::StudentT,
            df: Some(df),
            location,
            scatter,
        })
    }

    pub fn cauchy(location: Vector, scatter: SpdMatrix) -> Self {
        DistributionSpec {
            family: Family::Cauchy,
            df: None,
            location,
            scatter,
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Degrees of freedom of the t mixture; `None` for the Normal.
    pub fn degrees_of_freedom(&self) -> Option<f64> {
        match self.family {
            Family::Normal => None,
            Family::StudentT => self.df,
            Family::Cauchy => Some(1.0),
        }
    }

    pub fn location(&self) -> &Vector {
        &self.location
    }

    pub fn scatter(&self) -> &SpdMatrix {
        &self.scatter
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    /// Same family with another location and scatter.
    fn with_parameters(&self, location: Vector, scatter: SpdMatrix) -> Self {
        DistributionSpec {
            location,
            scatter,
            ..self.clone()
        }
    }
}

/// Draw `n` rows. All `n·p` standard Normals are drawn first, then (for t
/// and Cauchy) one χ² variate per row, so a t sample shares its Normal
/// component with the Normal sample from the same generator state.
pub fn sample<R: Rng + ?Sized>(dist: &DistributionSpec, n: usize, rng: &mut R) -> Matrix {
    let p = dist.dim();
    let z = Matrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = dist.scatter.chol() * z;
    if let Some(q) = dist.degrees_of_freedom() {
        let chi = ChiSquared::new(q).expect("positive degrees of freedom");
        for mut col in x.column_iter_mut() {
            let w: f64 = chi.sample(rng);
            col *= (q / w).sqrt();
        }
    }
    for mut col in x.column_iter_mut() {
        col += &dist.location;
    }
    x.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContaminationKind {
    /// Outlier mean along the class mean direction.
    Mild,
    /// Outlier mean opposite to the class mean direction.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    TrainOnly,
    TrainAndTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    TwoClass,
    FourClass,
}

/// Outlier distributions of the two published designs. Outlier means are
/// `±9·μᵢ` (sign + for mild, − for hard). Scatters are `4Σ₁` and `8Σ₂` in the
/// two-class design (4I and 16I for Σ₁ = I, Σ₂ = 2I) and `4Σᵢ` in the
/// four-class design. The family is that of the class.
pub fn make_contamination(
    classes: &[DistributionSpec],
    kind: ContaminationKind,
    design: Design,
) -> Result<Vec<DistributionSpec>> {
    let factors: Vec<f64> = match (design, classes.len()) {
        (Design::TwoClass, 2) => vec![4.0, 8.0],
        (Design::FourClass, 4) => vec![4.0; 4],
        (d, g) => return Err(SimulateError::UnsupportedDesign(format!("{d:?} with {g} classes"))),
    };
    let sign = match kind {
        ContaminationKind::Mild => 9.0,
        ContaminationKind::Hard => -9.0,
    };
    classes
        .iter()
        .zip(factors)
        .enumerate()
        .map(|(i, (c, f))| {
            if c.location.iter().all(|&v| v == 0.0) {
                return Err(SimulateError::UnsupportedDesign(format!(
                    "class {i} has a zero mean, so the outlier direction is undefined"
                )));
            }
            Ok(c.with_parameters(&c.location * sign, c.scatter.scaled(f)))
        })
        .collect()
}

/// Outlier injection settings with explicit per-class outlier laws.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationSpec {
    pub fraction: f64,
    pub kind: Option<ContaminationKind>,
    pub target: Target,
    pub outliers: Vec<DistributionSpec>,
}

/// Replace exactly `⌊fraction·nᵢ⌋` uniformly chosen rows of each class with
/// draws from that class's outlier law.
pub fn contaminate<R: Rng + ?Sized>(classes: &mut [Matrix], fraction: f64, outliers: &[DistributionSpec], rng: &mut R) {
    assert_eq!(classes.len(), outliers.len(), "one outlier law per class");
    for (m, law) in classes.iter_mut().zip(outliers) {
        let n = m.nrows();
        let k = (fraction * n as f64).floor() as usize;
        if k == 0 {
            continue;
        }
        let rows = rand::seq::index::sample(rng, n, k).into_vec();
        let draws = sample(law, k, rng);
        for (r, &i) in rows.iter().enumerate() {
            m.row_mut(i).copy_from(&draws.row(r));
        }
    }
}

/// An estimator given by name (`"mcd"`) or as a full specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EstimatorEntry {
    Name(String),
    Spec(EstimatorSpec),
}

impl EstimatorEntry {
    pub fn resolve(&self) -> std::result::Result<EstimatorSpec, String> {
        let spec = match self {
            EstimatorEntry::Name(n) => n.parse::<EstimatorSpec>().map_err(|e| e.to_string())?,
            EstimatorEntry::Spec(s) => s.clone(),
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationConfig {
    pub fraction: f64,
    #[serde(default)]
    pub kind: Option<ContaminationKind>,
    pub target: Target,
    /// Explicit outlier laws; derived from `kind` and the class count when absent.
    #[serde(default)]
    pub outliers: Option<Vec<DistributionSpec>>,
}

/// A simulation study, as read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub classes: Vec<DistributionSpec>,
    /// Class labels; defaults to "1", "2", ….
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub contamination: Option<ContaminationConfig>,
    pub estimators: Vec<EstimatorEntry>,
    pub replications: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Also select a threshold on the test set and report its error.
    #[serde(default)]
    pub table1: bool,
}

impl ExperimentConfig {
    /// Parse and validate; errors carry the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| config_error(e.path().to_string(), e.inner()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.classes.len();
        if g < 2 {
            return Err(config_error("classes", "need at least two classes"));
        }
        let p = self.classes[0].dim();
        for (i, c) in self.classes.iter().enumerate() {
            if c.dim() != p {
                return Err(config_error(
                    format!("classes[{i}]"),
                    format!("dimension {} differs from {p}", c.dim()),
                ));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != g {
                return Err(config_error(
                    "labels",
                    format!("{} labels for {g} classes", labels.len()),
                ));
            }
        }
        if self.n_train < p + 2 {
            return Err(config_error("n_train", format!("must be at least p + 2 = {}", p + 2)));
        }
        if self.n_test == 0 {
            return Err(config_error("n_test", "must be positive"));
        }
        if self.replications == 0 {
            return Err(config_error("replications", "must be at least 1"));
        }
        if self.estimators.is_empty() {
            return Err(config_error("estimators", "list is empty"));
        }
        for (i, e) in self.estimators.iter().enumerate() {
            e.resolve().map_err(|m| config_error(format!("estimators[{i}]"), m))?;
        }
        self.contamination_spec()?;
        Ok(())
    }

    pub fn estimator_specs(&self) -> Vec<EstimatorSpec> {
        self.estimators
            .iter()
            .map(|e| e.resolve().expect("validated"))
            .collect()
    }

    pub fn class_labels(&self) -> Vec<String> {
        self.labels
            .clone()
            .unwrap_or_else(|| (1..=self.classes.len()).map(|k| k.to_string()).collect())
    }

    /// Resolved contamination, or `None` for pure data.
    pub fn contamination_spec(&self) -> Result<Option<ContaminationSpec>> {
        let Some(c) = &self.contamination else {
            return Ok(None);
        };
        if !(0.0..0.5).contains(&c.fraction) {
            return Err(config_error("contamination.fraction", "must lie in [0, 0.5)"));
        }
        let outliers = match (&c.outliers, c.kind) {
            (Some(o), _) => {
                if o.len() != self.classes.len() {
                    return Err(config_error("contamination.outliers", "need one outlier law per class"));
                }
                if let Some(i) = o.iter().position(|d| d.dim() != self.classes[0].dim()) {
                    return Err(config_error(
                        format!("contamination.outliers[{i}]"),
                        "dimension mismatch",
                    ));
                }
                o.clone()
            }
            (None, Some(kind)) => {
                let design = match self.classes.len() {
                    2 => Design::TwoClass,
                    4 => Design::FourClass,
                    g => {
                        return Err(config_error(
                            "contamination",
                            format!("no built-in outlier recipe for {g} classes"),
                        ))
                    }
                };
                make_contamination(&self.classes, kind, design).map_err(|e| config_error("contamination", e))?
            }
            (None, None) => return Err(config_error("contamination", "give `kind` or explicit `outliers`")),
        };
        Ok(Some(ContaminationSpec {
            fraction: c.fraction,
            kind: c.kind,
            target: c.target,
            outliers,
        }))
    }
}

/// Generator for replication `replication` of a run with `seed`.
pub fn replication_rng(seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64);
    rng
}

/// Generator for one estimator within a replication. Keyed by estimator kind
/// so adding or reordering estimators leaves the others' draws unchanged.
pub fn estimator_rng(replication_seed: u64, kind: EstimatorKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(replication_seed);
    rng.set_stream(kind as u64);
    rng
}

/// Result of one estimator on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub estimator: String,
    pub replication: usize,
    pub me_percent: Option<f64>,
    pub c_star: Option<f64>,
    /// Threshold selected on the test set (diagnostic runs only).
    pub c_test: Option<f64>,
    /// Test error at `c_test`, in percent.
    pub me_test_percent: Option<f64>,
    pub error: Option<String>,
}

impl ReplicationRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    fn failure(estimator: &str, replication: usize, error: String) -> Self {
        ReplicationRecord {
            estimator: estimator.to_string(),
            replication,
            me_percent: None,
            c_star: None,
            c_test: None,
            me_test_percent: None,
            error: Some(error),
        }
    }
}

/// Aggregate over the successful replications of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub replications: usize,
    pub failures: usize,
    pub mean_me_percent: Option<f64>,
    /// Sample standard deviation (divisor R − 1).
    pub sd_me_percent: Option<f64>,
    pub median_me_percent: Option<f64>,
    pub mean_c_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_c_test: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_me_test_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    /// Estimator-major, replications ascending.
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<EstimatorSummary>,
}

pub const REPORT_HEADER: [&str; 5] = ["estimator", "replication", "me_percent", "c_star", "failed"];

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v)?;
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}

impl Report {
    /// Group records by estimator (first-appearance order) and summarize.
    pub fn from_records(name: String, records: Vec<ReplicationRecord>) -> Self {
        let mut order: Vec<String> = Vec::new();
        for r in &records {
            if !order.contains(&r.estimator) {
                order.push(r.estimator.clone());
            }
        }
        let summaries = order
            .iter()
            .map(|est| {
                let rows: Vec<&ReplicationRecord> = records.iter().filter(|r| &r.estimator == est).collect();
                let ok: Vec<&ReplicationRecord> = rows.iter().copied().filter(|r| !r.failed()).collect();
                let me: Vec<f64> = ok.iter().filter_map(|r| r.me_percent).collect();
                let c: Vec<f64> = ok.iter().filter_map(|r| r.c_star).collect();
                let c_test: Vec<f64> = ok.iter().filter_map(|r| r.c_test).collect();
                let me_test: Vec<f64> = ok.iter().filter_map(|r| r.me_test_percent).collect();
                EstimatorSummary {
                    estimator: est.clone(),
                    replications: rows.len(),
                    failures: rows.len() - ok.len(),
                    mean_me_percent: mean(&me),
                    sd_me_percent: sample_sd(&me),
                    median_me_percent: median(&me),
                    mean_c_star: mean(&c),
                    mean_c_test: mean(&c_test),
                    mean_me_test_percent: mean(&me_test),
                }
            })
            .collect();
        Report {
            name,
            records,
            summaries,
        }
    }

    pub fn summary(&self, estimator: &str) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }

    /// `estimator,replication,me_percent,c_star,failed`; failed rows leave the
    /// numeric fields empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_HEADER).expect("in-memory write");
        for r in &self.records {
            w.write_record([
                r.estimator.clone(),
                r.replication.to_string(),
                r.me_percent.map_or(String::new(), |v| v.to_string()),
                r.c_star.map_or(String::new(), |v| v.to_string()),
                r.failed().to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Parse a report CSV back into records. Failed rows carry the error
    /// text "failed" since the CSV does not store the message.
    pub fn from_csv(name: String, text: &str) -> Result<Self> {
        let bad = |row: usize, message: String| config_error(format!("row {row}"), message);
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| config_error("header", e))?.clone();
        if headers.iter().ne(REPORT_HEADER) {
            return Err(config_error("header", format!("expected {}", REPORT_HEADER.join(","))));
        }
        let mut records = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| bad(line, e.to_string()))?;
            let num = |k: usize| -> Result<Option<f64>> {
                match &row[k] {
                    "" => Ok(None),
                    v => v
                        .parse()
                        .map(Some)
                        .map_err(|_| bad(line, format!("cannot parse {v:?} as a number"))),
                }
            };
            let failed: bool = row[4]
                .parse()
                .map_err(|_| bad(line, format!("`failed` must be true or false, got {:?}", &row[4])))?;
            records.push(ReplicationRecord {
                estimator: row[0].to_string(),
                replication: row[1]
                    .parse()
                    .map_err(|_| bad(line, format!("bad replication {:?}", &row[1])))?,
                me_percent: num(2)?,
                c_star: num(3)?,
                c_test: None,
                me_test_percent: None,
                error: failed.then(|| "failed".to_string()),
            });
        }
        Ok(Report::from_records(name, records))
    }

    /// Per-replication diagnostic table including the test-selected threshold.
    pub fn diagnostics_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "estimator",
            "replication",
            "c_star",
            "me_percent",
            "c_test",
            "me_test_percent",
            "failed",
        ])
        .expect("in-memory write");
        let f = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.records {
            w.write_record([
                r.estimator.clone(),
                r.replication.to_string(),
                f(r.c_star),
                f(r.me_percent),
                f(r.c_test),
                f(r.me_test_percent),
                r.failed().to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            name: &'a str,
            estimators: &'a [EstimatorSummary],
            failures: Vec<Failure<'a>>,
        }
        #[derive(Serialize)]
        struct Failure<'a> {
            estimator: &'a str,
            replication: usize,
            error: &'a str,
        }
        let failures = self
            .records
            .iter()
            .filter_map(|r| {
                r.error.as_deref().map(|e| Failure {
                    estimator: &r.estimator,
                    replication: r.replication,
                    error: e,
                })
            })
            .collect();
        serde_json::to_string_pretty(&Doc {
            name: &self.name,
            estimators: &self.summaries,
            failures,
        })
        .expect("summary serializes")
    }

    /// Write `report.csv` and `summary.json` (plus `diagnostics.csv` when any
    /// record carries a test-selected threshold) into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let write = |name: &str, contents: &str| {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| SimulateError::Output {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        };
        std::fs::create_dir_all(dir).map_err(|e| SimulateError::Output {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        write("report.csv", &self.to_csv())?;
        write("summary.json", &self.summary_json())?;
        if self.records.iter().any(|r| r.c_test.is_some()) {
            write("diagnostics.csv", &self.diagnostics_csv())?;
        }
        Ok(())
    }
}

/// Fit every estimator on `train`, select the threshold, and score on `test`.
/// The fit generator for each estimator comes from `estimator_rng`.
pub fn evaluate_estimators(
    train: &LabeledDataset,
    test: &LabeledDataset,
    estimators: &[EstimatorSpec],
    replication: usize,
    replication_seed: u64,
    diagnostics: bool,
) -> Vec<ReplicationRecord> {
    estimators
        .iter()
        .map(|spec| {
            let label = spec.label();
            let mut rng = estimator_rng(replication_seed, spec.kind);
            let outcome = (|| -> gqda::Result<ReplicationRecord> {
                let (model, _) = GqdaModel::fit(train, spec, &mut rng)?;
                let me = 100.0 * model.misclassification_error(test)?;
                // The diagnostic rule is built from the test set alone: its own
                // fits and its own threshold, scored on itself.
                let (c_test, me_test) = if diagnostics {
                    let fits = gqda::fit_classes(test, spec, &mut rng)?;
                    let sel = gqda::select_c_on_test(test, &fits)?;
                    let m = GqdaModel::new(test.class_table.clone(), fits, sel.c_star, spec.clone())?;
                    (Some(sel.c_star), Some(100.0 * m.misclassification_error(test)?))
                } else {
                    (None, None)
                };
                Ok(ReplicationRecord {
                    estimator: label.to_string(),
                    replication,
                    me_percent: Some(me),
                    c_star: Some(model.c_star()),
                    c_test,
                    me_test_percent: me_test,
                    error: None,
                })
            })();
            outcome.unwrap_or_else(|e| ReplicationRecord::failure(label, replication, e.to_string()))
        })
        .collect()
}

/// Run `jobs` workers (0 = all cores) over independent replications.
pub fn run_replications<F>(replications: usize, jobs: usize, work: F) -> Result<Vec<Vec<ReplicationRecord>>>
where
    F: Fn(usize) -> Vec<ReplicationRecord> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SimulateError::Pool(e.to_string()))?;
    Ok(pool.install(|| (0..replications).into_par_iter().map(&work).collect()))
}

/// Reorder replication-major output into estimator-major records.
pub fn estimator_major(per_replication: Vec<Vec<ReplicationRecord>>, n_estimators: usize) -> Vec<ReplicationRecord> {
    let mut out = Vec::with_capacity(per_replication.len() * n_estimators);
    for k in 0..n_estimators {
        for rep in &per_replication {
            out.push(rep[k].clone());
        }
    }
    out
}

/// Draw one replication's train and test sets.
pub fn draw_replication(
    config: &ExperimentConfig,
    replication: usize,
    seed: u64,
) -> (LabeledDataset, LabeledDataset, u64) {
    let mut rng = replication_rng(seed, replication);
    let fit_seed: u64 = rng.random();
    let mut train: Vec<Matrix> = config
        .classes
        .iter()
        .map(|c| sample(c, config.n_train, &mut rng))
        .collect();
    let mut test: Vec<Matrix> = config
        .classes
        .iter()
        .map(|c| sample(c, config.n_test, &mut rng))
        .collect();
    if let Some(spec) = config.contamination_spec().expect("validated") {
        contaminate(&mut train, spec.fraction, &spec.outliers, &mut rng);
        if spec.target == Target::TrainAndTest {
            contaminate(&mut test, spec.fraction, &spec.outliers, &mut rng);
        }
    }
    let labels = config.class_labels();
    (
        LabeledDataset::from_classes(&train, labels.clone()).expect("consistent dimensions"),
        LabeledDataset::from_classes(&test, labels).expect("consistent dimensions"),
        fit_seed,
    )
}

/// Run the study. `seed` overrides the config's seed; one of them is required.
pub fn run_experiment(config: &ExperimentConfig, seed: Option<u64>, jobs: usize) -> Result<Report> {
    config.validate()?;
    let seed = seed
        .or(config.seed)
        .ok_or_else(|| config_error("seed", "a seed is required (config `seed` or --seed)"))?;
    let estimators = config.estimator_specs();
    let per_rep = run_replications(config.replications, jobs, |r| {
        let (train, test, fit_seed) = draw_replication(config, r, seed);
        evaluate_estimators(&train, &test, &estimators, r, fit_seed, config.table1)
    })?;
    Ok(Report::from_records(
        config.name.clone(),
        estimator_major(per_rep, estimators.len()),
    ))
}

/// Preset configurations shipped with the library.
pub const PRESETS: [(&str, &str); 9] = [
    (
        "two-class-normal-pure",
        include_str!("../presets/two-class-normal-pure.json"),
    ),
    ("two-class-t3-pure", include_str!("../presets/two-class-t3-pure.json")),
    (
        "two-class-cauchy-pure",
        include_str!("../presets/two-class-cauchy-pure.json"),
    ),
    (
        "two-class-normal-hard-10",
        include_str!("../presets/two-class-normal-hard-10.json"),
    ),
    (
        "two-class-normal-mild-5",
        include_str!("../presets/two-class-normal-mild-5.json"),
    ),
    (
        "four-class-normal-pure",
        include_str!("../presets/four-class-normal-pure.json"),
    ),
    (
        "four-class-normal-hard-10",
        include_str!("../presets/four-class-normal-hard-10.json"),
    ),
    (
        "two-class-t3-hard-10",
        include_str!("../presets/two-class-t3-hard-10.json"),
    ),
    (
        "two-class-cauchy-mild-10",
        include_str!("../presets/two-class-cauchy-mild-10.json"),
    ),
];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ExperimentConfig::from_json(text).expect("presets are valid"))
}

/// One row of the train-contamination diagnostic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1Scenario {
    pub name: String,
    pub target: Option<Target>,
    pub kind: Option<ContaminationKind>,
    pub fraction: f64,
}

/// Pure data, then mild and hard contamination at 5–20% of the training set
/// only, then of both sets.
pub fn table1_scenarios() -> Vec<Table1Scenario> {
    let mut out = vec![Table1Scenario {
        name: "nil".into(),
        target: None,
        kind: None,
        fraction: 0.0,
    }];
    for target in [Target::TrainOnly, Target::TrainAndTest] {
        for kind in [ContaminationKind::Mild, ContaminationKind::Hard] {
            for pct in [5, 10, 15, 20] {
                let t = match target {
                    Target::TrainOnly => "train",
                    Target::TrainAndTest => "train-test",
                };
                let k = match kind {
                    ContaminationKind::Mild => "mild",
                    ContaminationKind::Hard => "hard",
                };
                out.push(Table1Scenario {
                    name: format!("{t}-{k}-{pct}"),
                    target: Some(target),
                    kind: Some(kind),
                    fraction: pct as f64 / 100.0,
                });
            }
        }
    }
    out
}

/// The two-class Normal design with the given contamination, Classical
/// estimator only, test-set threshold diagnostics on.
pub fn table1_config(scenario: &Table1Scenario, replications: usize) -> ExperimentConfig {
    let mut config = preset("two-class-normal-pure").expect("preset exists");
    config.name = scenario.name.clone();
    config.replications = replications;
    config.estimators = vec![EstimatorEntry::Name("classical".into())];
    config.table1 = true;
    config.contamination = scenario.target.map(|target| ContaminationConfig {
        fraction: scenario.fraction,
        kind: scenario.kind,
        target,
        outliers: None,
    });
    config
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared as ChiSq, ContinuousCDF, Normal as StatNormal};

    fn spec(p: usize, family: Family) -> DistributionSpec {
        let loc = Vector::from_fn(p, |i, _| i as f64 - 1.0);
        let a = Matrix::from_fn(
            p,
            p,
            |i, j| if i >= j { 1.0 / (1.0 + i as f64 + j as f64) } else { 0.0 },
        );
        let s = SpdMatrix::new(&(&a * a.transpose() + Matrix::identity(p, p))).unwrap();
        match family {
            Family::Normal => DistributionSpec::normal(loc, s),
            Family::StudentT => DistributionSpec::student_t(5.0, loc, s).unwrap(),
            Family::Cauchy => DistributionSpec::cauchy(loc, s),
        }
    }

    /// Kolmogorov–Smirnov statistic of `x` against `cdf`.
    fn ks(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = cdf(v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    /// 1% critical value of the one-sample KS statistic (asymptotic).
    fn ks_crit(n: usize) -> f64 {
        1.628 / (n as f64).sqrt()
    }

    #[test]
    fn normal_sample_mean() {
        let d = DistributionSpec::normal(Vector::zeros(3), SpdMatrix::identity(3));
        let n = 100_000;
        let x = sample(&d, n, &mut ChaCha8Rng::seed_from_u64(1));
        for j in 0..3 {
            assert!(x.column(j).mean().abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn normal_distances_are_chi_square() {
        let d = spec(3, Family::Normal);
        let x = sample(&d, 5000, &mut ChaCha8Rng::seed_from_u64(2));
        let d2 = d.scatter.distances_sq(&x, d.location.as_slice());
        let chi = ChiSq::new(3.0).unwrap();
        assert!(ks(d2, |v| chi.cdf(v)) < ks_crit(5000));
    }

    #[test]
    fn t_marginal_matches_student_cdf() {
        use statrs::distribution::StudentsT;
        let d = DistributionSpec::student_t(3.0, Vector::zeros(2), SpdMatrix::identity(2)).unwrap();
        let x = sample(&d, 5000, &mut ChaCha8Rng::seed_from_u64(3));
        let t = StudentsT::new(0.0, 1.0, 3.0).unwrap();
        assert!(ks(x.column(0).iter().copied().collect(), |v| t.cdf(v)) < ks_crit(5000));
    }

    #[test]
    fn large_df_t_is_normal() {
        let loc = Vector::from_vec(vec![0.5, -1.0]);
        let s = SpdMatrix::identity(2);
        let normal = DistributionSpec::normal(loc.clone(), s.clone());
        let t = DistributionSpec::student_t(1e6, loc, s).unwrap();
        let a = sample(&normal, 5000, &mut ChaCha8Rng::seed_from_u64(4));
        let b = sample(&t, 5000, &mut ChaCha8Rng::seed_from_u64(4));
        // coupled draws: the same Normal component, rescaled by ≈ 1
        assert!((&a - &b).abs().max() < 0.05);
        let n01 = StatNormal::new(0.5, 1.0).unwrap();
        assert!(ks(b.column(0).iter().copied().collect(), |v| n01.cdf(v)) < ks_crit(5000));
    }

    #[test]
    fn cauchy_is_t_one() {
        let c = spec(2, Family::Cauchy);
        let t = DistributionSpec::student_t(1.0, c.location.clone(), c.scatter.clone()).unwrap();
        let a = sample(&c, 50, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample(&t, 50, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    fn two_class() -> Vec<DistributionSpec> {
        vec![
            DistributionSpec::normal(Vector::from_element(3, -1.0), SpdMatrix::identity(3)),
            DistributionSpec::normal(Vector::from_element(3, 1.0), SpdMatrix::identity(3).scaled(2.0)),
        ]
    }

    #[test]
    fn two_class_recipes() {
        let mild = make_contamination(&two_class(), ContaminationKind::Mild, Design::TwoClass).unwrap();
        assert_eq!(mild[0].location, Vector::from_element(3, -9.0));
        assert_eq!(mild[0].scatter.matrix(), &(Matrix::identity(3, 3) * 4.0));
        let hard = make_contamination(&two_class(), ContaminationKind::Hard, Design::TwoClass).unwrap();
        assert_eq!(hard[1].location, Vector::from_element(3, -9.0));
        assert_eq!(hard[1].scatter.matrix(), &(Matrix::identity(3, 3) * 16.0));
        assert!(make_contamination(&two_class(), ContaminationKind::Hard, Design::FourClass).is_err());
    }

    #[test]
    fn four_class_recipe() {
        let mu2 = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let classes: Vec<DistributionSpec> = (0..4)
            .map(|k| {
                DistributionSpec::normal(
                    Vector::from_fn(6, |i, _| if k == 1 { mu2[i] } else { 1.0 }),
                    SpdMatrix::identity(6),
                )
            })
            .collect();
        let mild = make_contamination(&classes, ContaminationKind::Mild, Design::FourClass).unwrap();
        assert_eq!(mild[1].location, Vector::from_column_slice(&mu2) * 9.0);
        assert_eq!(mild[1].scatter.matrix(), &(Matrix::identity(6, 6) * 4.0));
        let mut zero = classes.clone();
        zero[2] = DistributionSpec::normal(Vector::zeros(6), SpdMatrix::identity(6));
        assert!(matches!(
            make_contamination(&zero, ContaminationKind::Mild, Design::FourClass),
            Err(SimulateError::UnsupportedDesign(_))
        ));
    }

    #[test]
    fn contamination_replaces_exact_counts() {
        let specs = two_class();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let clean: Vec<Matrix> = specs.iter().map(|s| sample(s, 1000, &mut rng)).collect();
        let outliers = make_contamination(&specs, ContaminationKind::Hard, Design::TwoClass).unwrap();

        let mut same = clean.clone();
        contaminate(&mut same, 0.0, &outliers, &mut rng);
        assert_eq!(same, clean);

        let mut dirty = clean.clone();
        contaminate(&mut dirty, 0.1, &outliers, &mut rng);
        for (c, d) in clean.iter().zip(&dirty) {
            let changed = (0..1000).filter(|&i| c.row(i) != d.row(i)).count();
            assert_eq!(changed, 100);
        }
    }

    fn small_config() -> ExperimentConfig {
        let mut c = preset("two-class-normal-pure").unwrap();
        c.n_train = 60;
        c.n_test = 100;
        c.replications = 4;
        c.estimators = ["classical", "mcd", "sd"]
            .iter()
            .map(|s| EstimatorEntry::Name(s.to_string()))
            .collect();
        c
    }

    #[test]
    fn train_only_leaves_test_untouched() {
        let pure = small_config();
        let mut dirty = pure.clone();
        dirty.contamination = Some(ContaminationConfig {
            fraction: 0.2,
            kind: Some(ContaminationKind::Hard),
            target: Target::TrainOnly,
            outliers: None,
        });
        let (tr_a, te_a, _) = draw_replication(&pure, 1, 9);
        let (tr_b, te_b, _) = draw_replication(&dirty, 1, 9);
        assert_eq!(te_a, te_b);
        assert_ne!(tr_a, tr_b);
    }

    #[test]
    fn reports_are_reproducible_across_jobs() {
        let c = small_config();
        let a = run_experiment(&c, Some(3), 1).unwrap();
        let b = run_experiment(&c, Some(3), 3).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.records.len(), 12);
        assert_eq!(a.records[4].estimator, "MCD");
        assert_eq!(a.records[4].replication, 0);
        let unseeded = ExperimentConfig { seed: None, ..c };
        assert!(matches!(
            run_experiment(&unseeded, None, 1),
            Err(SimulateError::Config { .. })
        ));
    }

    #[test]
    fn summary_statistics() {
        let rec = |me: Option<f64>| ReplicationRecord {
            estimator: "GQDA".into(),
            replication: 0,
            me_percent: me,
            c_star: me.map(|_| 1.0),
            c_test: None,
            me_test_percent: None,
            error: me.is_none().then(|| "singular".to_string()),
        };
        let r = Report::from_records(
            "x".into(),
            vec![rec(Some(6.0)), rec(Some(7.0)), rec(None), rec(Some(8.0))],
        );
        let s = &r.summaries[0];
        assert_eq!((s.replications, s.failures), (4, 1));
        assert_eq!(s.mean_me_percent, Some(7.0));
        assert_eq!(s.sd_me_percent, Some(1.0));
        assert_eq!(s.median_me_percent, Some(7.0));
        let csv = r.to_csv();
        assert!(csv.starts_with("estimator,replication,me_percent,c_star,failed\n"));
        assert!(csv.contains("GQDA,0,,,true\n"));
    }

    #[test]
    fn config_errors_name_the_field() {
        let text = preset_text("two-class-normal-pure").replace("\"n_test\": 4000", "\"n_test\": \"many\"");
        match ExperimentConfig::from_json(&text) {
            Err(SimulateError::Config { path, .. }) => assert_eq!(path, "n_test"),
            other => panic!("{other:?}"),
        }
        let text = preset_text("two-class-normal-pure").replacen("\"normal\"", "\"gamma\"", 1);
        match ExperimentConfig::from_json(&text) {
            Err(SimulateError::Config { path, .. }) => assert!(path.starts_with("classes[0]"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    fn preset_text(name: &str) -> &'static str {
        PRESETS.iter().find(|(n, _)| *n == name).unwrap().1
    }

    #[test]
    fn report_csv_round_trip() {
        let rec = |est: &str, r: usize, me: Option<f64>| ReplicationRecord {
            estimator: est.into(),
            replication: r,
            me_percent: me,
            c_star: me.map(|m| m / 10.0),
            c_test: None,
            me_test_percent: None,
            error: me.is_none().then(|| "failed".to_string()),
        };
        let r = Report::from_records(
            "x".into(),
            vec![
                rec("GQDA", 0, Some(6.123456789012345)),
                rec("GQDA", 1, None),
                rec("MCD", 0, Some(0.1 + 0.2)),
            ],
        );
        let back = Report::from_csv("x".into(), &r.to_csv()).unwrap();
        assert_eq!(back, r);
        assert!(Report::from_csv("x".into(), "a,b\n1,2\n").is_err());
    }

    #[test]
    fn presets_parse_and_round_trip() {
        for (name, _) in PRESETS {
            let c = preset(name).unwrap();
            assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c, "{name}");
        }
        assert_eq!(table1_scenarios().len(), 17);
    }
}
