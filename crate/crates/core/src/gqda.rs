//! The generalized QDA rule and its threshold selection.
//!
//! For classes `i`, `j` let `Δ²ᵢⱼ(x) = dⱼ²(x) − dᵢ²(x)` (difference of squared
//! Mahalanobis distances) and `Σdᵢⱼ = log|Σ̂ᵢ| − log|Σ̂ⱼ|`. A point belongs to
//! class `i` when `Δ²ᵢⱼ ≥ c·Σdᵢⱼ` for every `j ≠ i`; `c = 0` gives the minimum
//! Mahalanobis distance rule and `c = 1` the Normal-theory QDA rule.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::estimators::{self, EstimateError, EstimatorKind, EstimatorSpec, LocationScatter};
use crate::numerics::{Matrix, NumericsError, SpdMatrix, Vector};

/// Pairs whose log-determinant difference is below this are degenerate.
pub const SIGMA_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GqdaError {
    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("class index {0} out of range")]
    ClassIndex(usize),
    #[error("dimension mismatch: model has {expected} features, data has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {0:?} has no training rows")]
    EmptyClass(String),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("fitting class {class:?}: {source}")]
    Fit {
        class: String,
        #[source]
        source: EstimateError,
    },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GqdaError>;

/// Log-determinant difference of a class pair, oriented so that `first` has
/// the larger determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStatistic {
    pub first: usize,
    pub second: usize,
    pub sigma_d: f64,
    pub degenerate: bool,
}

impl PairStatistic {
    fn from_log_dets(i: usize, j: usize, ld_i: f64, ld_j: f64) -> Self {
        let (first, second, sigma_d) = if ld_i >= ld_j {
            (i, j, ld_i - ld_j)
        } else {
            (j, i, ld_j - ld_i)
        };
        PairStatistic {
            first,
            second,
            sigma_d,
            degenerate: sigma_d < SIGMA_TOL,
        }
    }
}

/// A fitted classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct GqdaModel {
    classes: Vec<String>,
    fits: Vec<LocationScatter>,
    c_star: f64,
    estimator: EstimatorSpec,
    log_dets: Vec<f64>,
    pairs: Vec<PairStatistic>,
    feature_names: Vec<String>,
}

impl GqdaModel {
    pub fn new(
        classes: Vec<String>,
        fits: Vec<LocationScatter>,
        c_star: f64,
        estimator: EstimatorSpec,
    ) -> Result<Self> {
        let g = fits.len();
        if g < 2 {
            return Err(GqdaError::TooFewClasses(g));
        }
        if classes.len() != g {
            return Err(GqdaError::InvalidModel(format!(
                "{} labels for {g} class fits",
                classes.len()
            )));
        }
        let p = fits[0].dim();
        for f in &fits {
            if f.dim() != p || f.scatter.dim() != p {
                return Err(GqdaError::DimensionMismatch {
                    expected: p,
                    found: f.dim(),
                });
            }
        }
        if !(0.0..=1.0).contains(&c_star) {
            return Err(GqdaError::InvalidThreshold(c_star));
        }
        let log_dets: Vec<f64> = fits.iter().map(|f| f.scatter.log_det()).collect();
        let mut pairs = Vec::with_capacity(g * (g - 1) / 2);
        for i in 0..g {
            for j in (i + 1)..g {
                pairs.push(PairStatistic::from_log_dets(i, j, log_dets[i], log_dets[j]));
            }
        }
        Ok(GqdaModel {
            classes,
            fits,
            c_star,
            estimator,
            log_dets,
            pairs,
            feature_names: Vec::new(),
        })
    }

    /// Fit one location/scatter per class and select the threshold on the
    /// training data (two-class or multi-class procedure by class count).
    pub fn fit<R: Rng + ?Sized>(
        train: &LabeledDataset,
        spec: &EstimatorSpec,
        rng: &mut R,
    ) -> Result<(Self, Selection)> {
        let fits = fit_classes(train, spec, rng)?;
        let selection = select_c(train, &fits)?;
        let model = GqdaModel::new(train.class_table.clone(), fits, selection.c_star, spec.clone())?
            .with_feature_names(train.column_names.clone())?;
        Ok((model, selection))
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn fits(&self) -> &[LocationScatter] {
        &self.fits
    }

    pub fn c_star(&self) -> f64 {
        self.c_star
    }

    pub fn estimator(&self) -> &EstimatorSpec {
        &self.estimator
    }

    /// Names of the feature columns the model was fitted on; empty if unknown.
    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if !names.is_empty() && names.len() != self.dim() {
            return Err(GqdaError::DimensionMismatch {
                expected: self.dim(),
                found: names.len(),
            });
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn n_classes(&self) -> usize {
        self.fits.len()
    }

    pub fn dim(&self) -> usize {
        self.fits[0].dim()
    }

    /// Oriented statistics for every unordered pair `i < j`.
    pub fn pairs(&self) -> &[PairStatistic] {
        &self.pairs
    }

    /// Same model with a different threshold.
    pub fn with_c(&self, c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(GqdaError::InvalidThreshold(c));
        }
        Ok(GqdaModel {
            c_star: c,
            ..self.clone()
        })
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.n_classes() {
            Ok(())
        } else {
            Err(GqdaError::ClassIndex(i))
        }
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found == self.dim() {
            Ok(())
        } else {
            Err(GqdaError::DimensionMismatch {
                expected: self.dim(),
                found,
            })
        }
    }

    /// Squared Mahalanobis distance of `x` to every class.
    pub fn distances(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        self.fits
            .iter()
            .map(|f| crate::numerics::mahalanobis_sq(x, f.location.as_slice(), &f.scatter).map_err(Into::into))
            .collect()
    }

    /// `dⱼ²(x) − dᵢ²(x)`.
    pub fn delta_sq(&self, x: &[f64], i: usize, j: usize) -> Result<f64> {
        self.check_index(i)?;
        self.check_index(j)?;
        let d = self.distances(x)?;
        Ok(d[j] - d[i])
    }

    pub fn sigma_d(&self, i: usize, j: usize) -> Result<PairStatistic> {
        self.check_index(i)?;
        self.check_index(j)?;
        Ok(PairStatistic::from_log_dets(i, j, self.log_dets[i], self.log_dets[j]))
    }

    /// `mᵢ(x) = min over j ≠ i of [Δ²ᵢⱼ(x) − c·Σdᵢⱼ]`.
    pub fn margins(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.distances(x)?;
        Ok(margins_from(&d, &self.log_dets, self.c_star))
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        let d = self.distances(x)?;
        Ok(decide(&d, &self.log_dets, self.c_star))
    }

    /// Predicted class index for every row.
    pub fn classify_rows(&self, data: &Matrix) -> Result<Vec<usize>> {
        self.check_dim(data.ncols())?;
        let d = distance_table(data, &self.fits);
        Ok(d.iter().map(|row| decide(row, &self.log_dets, self.c_star)).collect())
    }

    /// Fraction of rows whose predicted label differs from the true label.
    /// Rows whose label the model has never seen count as errors.
    pub fn misclassification_error(&self, data: &LabeledDataset) -> Result<f64> {
        if data.n() == 0 {
            return Err(GqdaError::EmptyDataset);
        }
        let predicted = self.classify_rows(&data.features)?;
        let to_model: Vec<Option<usize>> = data
            .class_table
            .iter()
            .map(|l| self.classes.iter().position(|c| c == l))
            .collect();
        let wrong = predicted
            .iter()
            .zip(&data.labels)
            .filter(|&(&p, &l)| to_model[l] != Some(p))
            .count();
        Ok(wrong as f64 / data.n() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.into_model()
    }
}

fn margins_from(d: &[f64], log_dets: &[f64], c: f64) -> Vec<f64> {
    let g = d.len();
    (0..g)
        .map(|i| {
            (0..g)
                .filter(|&j| j != i)
                .map(|j| (d[j] - d[i]) - c * (log_dets[i] - log_dets[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Largest margin wins; ties go to the lowest class index.
fn decide(d: &[f64], log_dets: &[f64], c: f64) -> usize {
    let m = margins_from(d, log_dets, c);
    let mut best = 0;
    for i in 1..m.len() {
        if m[i] > m[best] {
            best = i;
        }
    }
    best
}

/// Row-major table of squared distances, one row per observation.
fn distance_table(data: &Matrix, fits: &[LocationScatter]) -> Vec<Vec<f64>> {
    let per_class: Vec<Vec<f64>> = fits
        .iter()
        .map(|f| f.scatter.distances_sq(data, f.location.as_slice()))
        .collect();
    (0..data.nrows())
        .map(|i| per_class.iter().map(|d| d[i]).collect())
        .collect()
}

/// Fit `spec` to each class of `train`, in class-table order.
pub fn fit_classes<R: Rng + ?Sized>(
    train: &LabeledDataset,
    spec: &EstimatorSpec,
    rng: &mut R,
) -> Result<Vec<LocationScatter>> {
    let g = train.n_classes();
    if g < 2 {
        return Err(GqdaError::TooFewClasses(g));
    }
    (0..g)
        .map(|k| {
            estimators::fit(&train.class_matrix(k), spec, rng).map_err(|source| GqdaError::Fit {
                class: train.class_table[k].clone(),
                source,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionOutcome {
    /// Two classes whose ratio sets do not overlap; the gap midpoint is used.
    Disjoint,
    /// Two classes with overlapping ratios; the best candidate is used.
    Overlap,
    /// Equal log-determinants: the rule is the Mahalanobis rule, c = 0.
    Degenerate,
    /// More than two classes, chosen over the candidate set.
    Multiclass,
    /// More than two classes and no candidate in [0, 1]: c = 1.
    NoCandidates,
}

/// Outcome of threshold selection. `errors[k]` is the number of training
/// points misclassified at `candidates[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub c_star: f64,
    pub outcome: SelectionOutcome,
    pub candidates: Vec<f64>,
    pub errors: Vec<usize>,
}

/// Two-class or multi-class selection by class count. `fits` are aligned
/// with `data.class_table`.
pub fn select_c(data: &LabeledDataset, fits: &[LocationScatter]) -> Result<Selection> {
    if fits.len() == 2 {
        select_c_two_class(data, fits)
    } else {
        select_c_multiclass(data, fits)
    }
}

/// The threshold the selection procedure would pick on held-out data; a
/// diagnostic of how far the training choice is from the best one.
pub fn select_c_on_test(test: &LabeledDataset, fits: &[LocationScatter]) -> Result<Selection> {
    select_c(test, fits)
}

fn check_selection_input(data: &LabeledDataset, fits: &[LocationScatter]) -> Result<()> {
    if fits.len() != data.n_classes() {
        return Err(GqdaError::InvalidModel(format!(
            "{} fits for {} classes",
            fits.len(),
            data.n_classes()
        )));
    }
    if data.n() == 0 {
        return Err(GqdaError::EmptyDataset);
    }
    for f in fits {
        if f.dim() != data.p() {
            return Err(GqdaError::DimensionMismatch {
                expected: f.dim(),
                found: data.p(),
            });
        }
    }
    Ok(())
}

/// Whether the two-class rule assigns a point to the larger-determinant class
/// `a` at threshold `c`, given `delta = d_b² − d_a²` and `sd = ld_a − ld_b`.
/// Mirrors [`GqdaModel::classify`] bit for bit, including its tie-break.
fn assigns_first(delta: f64, sd: f64, c: f64, a: usize) -> bool {
    let m = delta - c * sd;
    if a == 0 {
        m >= 0.0
    } else {
        m > 0.0
    }
}

fn nearest_one_argmin(candidates: &[f64], errors: &[usize]) -> usize {
    let mut best = 0;
    for k in 1..candidates.len() {
        let (e, eb) = (errors[k], errors[best]);
        let closer = (candidates[k] - 1.0).abs() < (candidates[best] - 1.0).abs();
        if e < eb || (e == eb && closer) {
            best = k;
        }
    }
    best
}

/// Threshold selection for two classes by minimum resubstitution error over
/// the ratios `Δ²/Σd` of the smaller-determinant class that exceed the
/// smallest ratio of the larger-determinant class.
pub fn select_c_two_class(train: &LabeledDataset, fits: &[LocationScatter]) -> Result<Selection> {
    if fits.len() != 2 {
        return Err(GqdaError::TooFewClasses(fits.len()));
    }
    check_selection_input(train, fits)?;
    let ld = [fits[0].scatter.log_det(), fits[1].scatter.log_det()];
    let pair = PairStatistic::from_log_dets(0, 1, ld[0], ld[1]);
    if pair.degenerate {
        return Ok(Selection {
            c_star: 0.0,
            outcome: SelectionOutcome::Degenerate,
            candidates: Vec::new(),
            errors: Vec::new(),
        });
    }
    let (a, b, sd) = (pair.first, pair.second, ld[pair.first] - ld[pair.second]);
    let d = distance_table(&train.features, fits);
    let delta: Vec<f64> = d.iter().map(|row| row[b] - row[a]).collect();
    let ratio = |i: usize| delta[i] / sd;

    let counts = train.class_counts();
    if counts[a] == 0 || counts[b] == 0 {
        let empty = if counts[a] == 0 { a } else { b };
        return Err(GqdaError::EmptyClass(train.class_table[empty].clone()));
    }
    let min_a = (0..train.n())
        .filter(|&i| train.labels[i] == a)
        .map(ratio)
        .fold(f64::INFINITY, f64::min);
    let max_b = (0..train.n())
        .filter(|&i| train.labels[i] == b)
        .map(ratio)
        .fold(f64::NEG_INFINITY, f64::max);

    let count_errors = |candidates: &[f64]| -> Vec<usize> {
        // Assignment to `a` is monotone non-increasing in c, so each point
        // is assigned to `a` for a prefix of the ascending candidates.
        let s = candidates.len();
        let mut diff = vec![0isize; s + 1];
        for i in 0..train.n() {
            let k = candidates.partition_point(|&c| assigns_first(delta[i], sd, c, a));
            if train.labels[i] == a {
                // wrong for candidates k..s
                diff[k] += 1;
                diff[s] -= 1;
            } else {
                // wrong for candidates 0..k
                diff[0] += 1;
                diff[k] -= 1;
            }
        }
        let mut acc = 0isize;
        diff[..s]
            .iter()
            .map(|v| {
                acc += v;
                acc as usize
            })
            .collect()
    };

    if max_b < min_a {
        let c = (0.5 * (max_b + min_a)).clamp(0.0, 1.0);
        let errors = count_errors(&[c]);
        return Ok(Selection {
            c_star: c,
            outcome: SelectionOutcome::Disjoint,
            candidates: vec![c],
            errors,
        });
    }

    let mut candidates: Vec<f64> = (0..train.n())
        .filter(|&i| train.labels[i] == b)
        .map(ratio)
        .filter(|&r| r >= min_a)
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let errors = count_errors(&candidates);
    let best = nearest_one_argmin(&candidates, &errors);
    Ok(Selection {
        c_star: candidates[best].clamp(0.0, 1.0),
        outcome: SelectionOutcome::Overlap,
        candidates,
        errors,
    })
}

/// Range of thresholds for which a point of class `i` satisfies every
/// pairwise comparison, as `(lo, hi)`; `None` when no threshold does.
fn correct_interval(d: &[f64], ld: &[f64], i: usize) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for j in 0..d.len() {
        if j == i {
            continue;
        }
        let delta = d[j] - d[i];
        let sd = ld[i] - ld[j];
        if sd.abs() < SIGMA_TOL {
            if delta < 0.0 {
                return None;
            }
        } else if sd > 0.0 {
            hi = hi.min(delta / sd);
        } else {
            lo = lo.max(delta / sd);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Number of misclassified points of `data` at threshold `c` under the
/// multi-class counting rule: a point of class `i` is correct when
/// `Δ²ᵢⱼ/Σdᵢⱼ ≥ c` for every `j` with `Σdᵢⱼ > 0`, `≤ c` when `Σdᵢⱼ < 0`, and
/// `Δ²ᵢⱼ ≥ 0` for degenerate pairs.
pub fn multiclass_errors(data: &LabeledDataset, fits: &[LocationScatter], c: f64) -> Result<usize> {
    check_selection_input(data, fits)?;
    let ld: Vec<f64> = fits.iter().map(|f| f.scatter.log_det()).collect();
    let d = distance_table(&data.features, fits);
    Ok(d.iter()
        .zip(&data.labels)
        .filter(|&(row, &i)| !correct_interval(row, &ld, i).is_some_and(|(lo, hi)| lo <= c && c <= hi))
        .count())
}

/// Threshold selection for any number of classes: candidates are the ratios
/// `Δ²ᵢⱼ(x)/Σdᵢⱼ` in [0, 1] over non-degenerate pairs and points of classes
/// `i` and `j`; the one with the fewest misclassified training points wins.
pub fn select_c_multiclass(train: &LabeledDataset, fits: &[LocationScatter]) -> Result<Selection> {
    check_selection_input(train, fits)?;
    let g = fits.len();
    if g < 2 {
        return Err(GqdaError::TooFewClasses(g));
    }
    let ld: Vec<f64> = fits.iter().map(|f| f.scatter.log_det()).collect();
    let d = distance_table(&train.features, fits);

    let mut candidates = Vec::new();
    for (row, &label) in d.iter().zip(&train.labels) {
        for j in 0..g {
            if j == label {
                continue;
            }
            // u_ij and u_ji coincide, so the pair (label, j) covers both orders.
            let sd = ld[label] - ld[j];
            if sd.abs() < SIGMA_TOL {
                continue;
            }
            let u = (row[j] - row[label]) / sd;
            if (0.0..=1.0).contains(&u) {
                candidates.push(u);
            }
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    if candidates.is_empty() {
        return Ok(Selection {
            c_star: 1.0,
            outcome: SelectionOutcome::NoCandidates,
            candidates,
            errors: Vec::new(),
        });
    }

    let s = candidates.len();
    let mut diff = vec![0isize; s + 1];
    for (row, &label) in d.iter().zip(&train.labels) {
        if let Some((lo, hi)) = correct_interval(row, &ld, label) {
            let start = candidates.partition_point(|&c| c < lo);
            let end = candidates.partition_point(|&c| c <= hi);
            if start < end {
                diff[start] += 1;
                diff[end] -= 1;
            }
        }
    }
    let mut acc = 0isize;
    let errors: Vec<usize> = diff[..s]
        .iter()
        .map(|v| {
            acc += v;
            train.n() - acc as usize
        })
        .collect();
    let best = nearest_one_argmin(&candidates, &errors);
    Ok(Selection {
        c_star: candidates[best],
        outcome: SelectionOutcome::Multiclass,
        candidates,
        errors,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassDocument {
    label: String,
    location: Vec<f64>,
    /// Row-major.
    scatter: Vec<Vec<f64>>,
    n_used: usize,
    converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u32,
    estimator: EstimatorSpec,
    c_star: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    features: Vec<String>,
    classes: Vec<ClassDocument>,
}

const MODEL_FORMAT: &str = "gqda-model";

impl From<&GqdaModel> for ModelDocument {
    fn from(m: &GqdaModel) -> Self {
        let classes = m
            .classes
            .iter()
            .zip(&m.fits)
            .map(|(label, f)| {
                let s = f.scatter.matrix();
                ClassDocument {
                    label: label.clone(),
                    location: f.location.iter().copied().collect(),
                    scatter: (0..s.nrows()).map(|r| s.row(r).iter().copied().collect()).collect(),
                    n_used: f.n_used,
                    converged: f.converged,
                    objective: f.objective,
                }
            })
            .collect();
        ModelDocument {
            format: MODEL_FORMAT.into(),
            version: 1,
            estimator: m.estimator.clone(),
            c_star: m.c_star,
            features: m.feature_names.clone(),
            classes,
        }
    }
}

impl ModelDocument {
    fn into_model(self) -> Result<GqdaModel> {
        if self.format != MODEL_FORMAT || self.version != 1 {
            return Err(GqdaError::InvalidModel(format!(
                "unsupported format {:?} version {}",
                self.format, self.version
            )));
        }
        let kind: EstimatorKind = self.estimator.kind;
        let mut labels = Vec::with_capacity(self.classes.len());
        let mut fits = Vec::with_capacity(self.classes.len());
        for c in self.classes {
            let p = c.location.len();
            if c.scatter.len() != p || c.scatter.iter().any(|r| r.len() != p) {
                return Err(GqdaError::InvalidModel(format!(
                    "class {:?}: scatter is not {p}×{p}",
                    c.label
                )));
            }
            let matrix = Matrix::from_fn(p, p, |r, k| c.scatter[r][k]);
            let mut fit = LocationScatter::new(Vector::from_vec(c.location), SpdMatrix::new(&matrix)?, c.n_used, kind);
            fit.converged = c.converged;
            fit.objective = c.objective;
            labels.push(c.label);
            fits.push(fit);
        }
        GqdaModel::new(labels, fits, self.c_star, self.estimator)?.with_feature_names(self.features)
    }
}
