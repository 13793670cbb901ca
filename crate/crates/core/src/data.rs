//! Labeled datasets: CSV ingestion, stratified splitting and label flipping.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::estimators::EstimatorSpec;
use crate::numerics::Matrix;
use crate::simulate::{self, ReplicationRecord, Report};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("dataset has no rows")]
    Empty,
    #[error("{0} labels for {1} feature rows")]
    LabelCount(usize, usize),
    #[error("label index {0} outside the class table")]
    UnknownLabel(usize),
    #[error("class {class:?} has {n} rows, needs at least {needed}")]
    ClassTooSmall { class: String, n: usize, needed: usize },
    #[error("fraction {0} outside its allowed range")]
    InvalidFraction(f64),
    #[error("feature column {0:?} is constant")]
    ConstantColumn(String),
    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("invalid column selection {0:?}")]
    InvalidSelection(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Feature matrix plus dense class indices into `class_table`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_table: Vec<String>,
    pub column_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_table: Vec<String>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(DataError::LabelCount(labels.len(), features.nrows()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_table.len()) {
            return Err(DataError::UnknownLabel(bad));
        }
        let column_names = if column_names.is_empty() {
            (1..=features.ncols()).map(|j| format!("x{j}")).collect()
        } else {
            column_names
        };
        if column_names.len() != features.ncols() {
            return Err(DataError::InvalidSelection(format!(
                "{} names for {} columns",
                column_names.len(),
                features.ncols()
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            class_table,
            column_names,
        })
    }

    /// Build from string labels; the class table follows first appearance.
    pub fn from_labels<S: AsRef<str>>(features: Matrix, labels: &[S], column_names: Vec<String>) -> Result<Self> {
        let mut table: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let dense = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                *index.entry(l.to_string()).or_insert_with(|| {
                    table.push(l.to_string());
                    table.len() - 1
                })
            })
            .collect();
        Self::new(features, dense, table, column_names)
    }

    /// Stack per-class matrices; class k gets label `class_table[k]`.
    pub fn from_classes(classes: &[Matrix], class_table: Vec<String>) -> Result<Self> {
        let p = classes.first().map_or(0, |m| m.ncols());
        let n: usize = classes.iter().map(|m| m.nrows()).sum();
        let mut features = Matrix::zeros(n, p);
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for (k, m) in classes.iter().enumerate() {
            if m.ncols() != p {
                return Err(DataError::InvalidSelection(format!(
                    "class {k} has {} columns, expected {p}",
                    m.ncols()
                )));
            }
            features.rows_mut(row, m.nrows()).copy_from(m);
            labels.extend(std::iter::repeat_n(k, m.nrows()));
            row += m.nrows();
        }
        Self::new(features, labels, class_table, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_table.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn rows_of(&self, class: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn class_matrix(&self, class: usize) -> Matrix {
        self.features.select_rows(&self.rows_of(class))
    }

    /// Rows `rows` in the given order, keeping the class table.
    pub fn subset(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            class_table: self.class_table.clone(),
            column_names: self.column_names.clone(),
        }
    }

    /// Indices of columns whose values are all identical.
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.p())
            .filter(|&j| {
                let col = self.features.column(j);
                col.iter().all(|&v| v == col[0])
            })
            .collect()
    }

    /// Fail with the first constant column's name, if any.
    pub fn check_constant_columns(&self) -> Result<()> {
        match self.constant_columns().first() {
            Some(&j) => Err(DataError::ConstantColumn(self.column_names[j].clone())),
            None => Ok(()),
        }
    }

    /// Drop every constant column; returns the dropped names.
    pub fn drop_constant_columns(&mut self) -> Vec<String> {
        let constant = self.constant_columns();
        if constant.is_empty() {
            return Vec::new();
        }
        let keep: Vec<usize> = (0..self.p()).filter(|j| !constant.contains(j)).collect();
        let dropped = constant.iter().map(|&j| self.column_names[j].clone()).collect();
        self.features = self.features.select_columns(&keep);
        self.column_names = keep.iter().map(|&j| self.column_names[j].clone()).collect();
        dropped
    }

    /// Write features and a trailing `label` column. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn write_csv(&self, path: &Path, label_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.column_names.clone();
        header.push(label_column.to_string());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.class_table[self.labels[i]].clone());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }
}

/// Resolve a column reference: a header name, or a 1-based index when no
/// header has that name.
fn resolve_column(headers: &[String], spec: &str) -> Result<usize> {
    let spec = spec.trim();
    if let Some(j) = headers.iter().position(|h| h == spec) {
        return Ok(j);
    }
    match spec.parse::<usize>() {
        Ok(k) if k >= 1 && k <= headers.len() => Ok(k - 1),
        _ => Err(DataError::MissingColumn(spec.to_string())),
    }
}

/// Parse a selection such as `"3-34"`, `"a,b,7"` or `"1-3,radius"` into
/// zero-based column indices. Ranges are inclusive and 1-based.
pub fn parse_column_selection(headers: &[String], selection: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in selection.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if headers.iter().any(|h| h == part) {
            out.push(resolve_column(headers, part)?);
            continue;
        }
        if let Some((a, b)) = part.split_once('-') {
            let (Ok(a), Ok(b)) = (a.trim().parse::<usize>(), b.trim().parse::<usize>()) else {
                return Err(DataError::InvalidSelection(part.to_string()));
            };
            if a == 0 || b < a || b > headers.len() {
                return Err(DataError::InvalidSelection(part.to_string()));
            }
            out.extend((a - 1)..b);
        } else {
            out.push(resolve_column(headers, part)?);
        }
    }
    if out.is_empty() {
        return Err(DataError::InvalidSelection(selection.to_string()));
    }
    Ok(out)
}

/// A headed CSV file held as strings, for column selection before parsing.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub records: Vec<csv::StringRecord>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader.headers()?.iter().map(str::to_string).collect();
        let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(CsvTable { headers, records })
    }

    /// Column by header name, or by 1-based index when no header matches.
    pub fn column(&self, spec: &str) -> Result<usize> {
        resolve_column(&self.headers, spec)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.headers.iter().any(|h| h == name)
    }

    pub fn selection(&self, selection: &str) -> Result<Vec<usize>> {
        parse_column_selection(&self.headers, selection)
    }

    fn field(&self, row: usize, col: usize) -> Result<&str> {
        self.records[row]
            .get(col)
            .ok_or_else(|| DataError::MissingColumn(self.headers[col].clone()))
    }

    pub fn strings(&self, col: usize) -> Result<Vec<String>> {
        (0..self.records.len())
            .map(|r| self.field(r, col).map(str::to_string))
            .collect()
    }

    /// Parse `cols` as finite numbers. Row numbers in errors count the header
    /// as line 1.
    pub fn numeric(&self, cols: &[usize]) -> Result<Matrix> {
        let mut values = Vec::with_capacity(self.records.len() * cols.len());
        for r in 0..self.records.len() {
            for &j in cols {
                let raw = self.field(r, j)?;
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => {
                        return Err(DataError::Parse {
                            row: r + 2,
                            column: self.headers[j].clone(),
                            value: raw.to_string(),
                        })
                    }
                }
            }
        }
        Ok(Matrix::from_row_slice(self.records.len(), cols.len(), &values))
    }

    pub fn names(&self, cols: &[usize]) -> Vec<String> {
        cols.iter().map(|&j| self.headers[j].clone()).collect()
    }
}

/// Load a headed CSV. `feature_columns` defaults to every column except the
/// label column.
pub fn load_csv(path: &Path, label_column: &str, feature_columns: Option<&str>) -> Result<LabeledDataset> {
    let table = CsvTable::read(path)?;
    let label_idx = table.column(label_column)?;
    let features_idx = match feature_columns {
        Some(sel) => table.selection(sel)?,
        None => (0..table.headers.len()).filter(|&j| j != label_idx).collect(),
    };
    if features_idx.contains(&label_idx) {
        return Err(DataError::InvalidSelection(format!(
            "label column {:?} cannot also be a feature",
            table.headers[label_idx]
        )));
    }
    let features = table.numeric(&features_idx)?;
    let labels = table.strings(label_idx)?;
    LabeledDataset::from_labels(features, &labels, table.names(&features_idx))
}

/// Per class, `max(⌊fraction·nᵢ⌋, p+2)` random rows go to train and the rest
/// to test. Both parts keep the original row order.
pub fn stratified_split<R: Rng + ?Sized>(
    data: &LabeledDataset,
    train_fraction: f64,
    rng: &mut R,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    let p = data.p();
    let mut in_train = vec![false; data.n()];
    for class in 0..data.n_classes() {
        let mut rows = data.rows_of(class);
        let n = rows.len();
        let take = ((train_fraction * n as f64).floor() as usize).max(p + 2);
        if take >= n {
            return Err(DataError::ClassTooSmall {
                class: data.class_table[class].clone(),
                n,
                needed: p + 3,
            });
        }
        rows.shuffle(rng);
        for &i in &rows[..take] {
            in_train[i] = true;
        }
    }
    let train: Vec<usize> = (0..data.n()).filter(|&i| in_train[i]).collect();
    let test: Vec<usize> = (0..data.n()).filter(|&i| !in_train[i]).collect();
    Ok((data.subset(&train), data.subset(&test)))
}

/// Relabel exactly `⌊fraction·n⌋` uniformly chosen rows with a label drawn
/// uniformly from the other classes.
pub fn flip_labels<R: Rng + ?Sized>(data: &LabeledDataset, fraction: f64, rng: &mut R) -> Result<LabeledDataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(DataError::InvalidFraction(fraction));
    }
    let g = data.n_classes();
    if g < 2 {
        return Err(DataError::TooFewClasses(g));
    }
    let m = (fraction * data.n() as f64).floor() as usize;
    let mut out = data.clone();
    for i in rand::seq::index::sample(rng, data.n(), m) {
        let old = out.labels[i];
        let k = rng.random_range(0..g - 1);
        out.labels[i] = if k >= old { k + 1 } else { k };
    }
    Ok(out)
}

/// Settings of the real-data benchmark: repeated stratified splits with a
/// fraction of training labels flipped.
#[derive(Debug, Clone, PartialEq)]
pub struct RealExperiment {
    pub name: String,
    pub estimators: Vec<EstimatorSpec>,
    pub replications: usize,
    pub train_fraction: f64,
    pub flip_fraction: f64,
    pub seed: u64,
}

impl RealExperiment {
    pub fn new(name: impl Into<String>, estimators: Vec<EstimatorSpec>, seed: u64) -> Self {
        RealExperiment {
            name: name.into(),
            estimators,
            replications: 50,
            train_fraction: 0.7,
            flip_fraction: 0.1,
            seed,
        }
    }
}

/// Split, flip training labels, fit every estimator and score on the test
/// part, once per replication. A replication whose split fails is recorded
/// as failed for every estimator.
pub fn run_real_experiment(data: &LabeledDataset, config: &RealExperiment, jobs: usize) -> simulate::Result<Report> {
    let per_rep = simulate::run_replications(config.replications, jobs, |r| {
        let mut rng = simulate::replication_rng(config.seed, r);
        let fit_seed: u64 = rng.random();
        let prepared = stratified_split(data, config.train_fraction, &mut rng)
            .and_then(|(train, test)| Ok((flip_labels(&train, config.flip_fraction, &mut rng)?, test)));
        match prepared {
            Ok((train, test)) => simulate::evaluate_estimators(&train, &test, &config.estimators, r, fit_seed, false),
            Err(e) => config
                .estimators
                .iter()
                .map(|s| ReplicationRecord {
                    estimator: s.label().to_string(),
                    replication: r,
                    me_percent: None,
                    c_star: None,
                    c_test: None,
                    me_test_percent: None,
                    error: Some(e.to_string()),
                })
                .collect(),
        }
    })?;
    Ok(Report::from_records(
        config.name.clone(),
        simulate::estimator_major(per_rep, config.estimators.len()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn toy(n_per: &[usize], p: usize) -> LabeledDataset {
        let classes: Vec<Matrix> = n_per
            .iter()
            .enumerate()
            .map(|(k, &n)| Matrix::from_fn(n, p, |i, j| (k * 1000 + i * 7 + j) as f64))
            .collect();
        let names = (0..n_per.len()).map(|k| format!("c{k}")).collect();
        LabeledDataset::from_classes(&classes, names).unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_toy_csv() {
        let f = write_tmp("a,b,label\n1,2,x\n3.5,4,y\n\"5\",6e-1,x\n");
        let d = load_csv(f.path(), "label", None).unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.class_table, vec!["x", "y"]);
        assert_eq!(d.labels, vec![0, 1, 0]);
        assert_eq!(d.features[(2, 1)], 0.6);
        assert_eq!(d.column_names, vec!["a", "b"]);
    }

    #[test]
    fn label_by_index_and_ranges() {
        let f = write_tmp("id,k,a,b,c\n1,p,1,2,3\n2,q,4,5,7\n");
        let d = load_csv(f.path(), "2", Some("3-4")).unwrap();
        assert_eq!(d.column_names, vec!["a", "b"]);
        assert_eq!(d.class_table, vec!["p", "q"]);
        let d = load_csv(f.path(), "k", Some("c,1")).unwrap();
        assert_eq!(d.column_names, vec!["c", "id"]);
    }

    #[test]
    fn parse_error_names_row_and_column() {
        let f = write_tmp("a,b,label\n1,2,x\n3,oops,y\n");
        match load_csv(f.path(), "label", None) {
            Err(DataError::Parse { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (3, "b", "oops"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_csv(f.path(), "nope", None),
            Err(DataError::MissingColumn(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let features = Matrix::from_fn(20, 3, |_, _| rng.random::<f64>() * 1e3 - 17.0);
        let labels: Vec<String> = (0..20).map(|i| format!("k{}", i % 3)).collect();
        let d = LabeledDataset::from_labels(features, &labels, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        d.write_csv(f.path(), "class").unwrap();
        let back = load_csv(f.path(), "class", None).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn constant_columns() {
        let features = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 2.0, 0.0, 2.0, 3.0, 0.0, 2.0]);
        let mut d =
            LabeledDataset::from_labels(features, &["a", "b", "a"], vec!["u".into(), "v".into(), "w".into()]).unwrap();
        assert!(matches!(d.check_constant_columns(), Err(DataError::ConstantColumn(c)) if c == "v"));
        assert_eq!(d.drop_constant_columns(), vec!["v", "w"]);
        assert_eq!(d.column_names, vec!["u"]);
        assert!(d.check_constant_columns().is_ok());
    }

    #[test]
    fn split_is_a_stratified_partition() {
        let d = toy(&[30, 17], 2);
        let (train, test) = stratified_split(&d, 0.7, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(train.class_counts(), vec![21, 11]);
        assert_eq!(test.class_counts(), vec![9, 6]);
        let mut rows: Vec<Vec<u64>> = train
            .features
            .row_iter()
            .chain(test.features.row_iter())
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), 47);
        let (again, _) = stratified_split(&d, 0.7, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(again, train);
    }

    #[test]
    fn split_keeps_enough_training_rows() {
        // ⌊0.1·10⌋ = 1 < p + 2 = 4, so 4 rows are kept for training.
        let d = toy(&[10, 10], 2);
        let (train, test) = stratified_split(&d, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(train.class_counts(), vec![4, 4]);
        assert_eq!(test.class_counts(), vec![6, 6]);
        let tiny = toy(&[4, 10], 2);
        assert!(matches!(
            stratified_split(&tiny, 0.5, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(DataError::ClassTooSmall { .. })
        ));
        assert!(stratified_split(&d, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn flips_exact_count() {
        let d = toy(&[120, 120], 2);
        let flipped = flip_labels(&d, 0.1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let changed: Vec<usize> = (0..d.n()).filter(|&i| d.labels[i] != flipped.labels[i]).collect();
        assert_eq!(changed.len(), 24);
        for &i in &changed {
            assert_eq!(flipped.labels[i], 1 - d.labels[i]);
        }
        assert_eq!(flipped.features, d.features);
        assert_eq!(flip_labels(&d, 0.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap(), d);
    }

    #[test]
    fn flips_among_several_classes() {
        let d = toy(&[50, 50, 50], 2);
        let flipped = flip_labels(&d, 0.2, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let changed = (0..d.n()).filter(|&i| d.labels[i] != flipped.labels[i]).count();
        assert_eq!(changed, 30);
        assert!(flipped.labels.iter().all(|&l| l < 3));
    }

    #[test]
    fn real_experiment_on_separable_data() {
        // Two well separated Gaussian blobs: every method classifies the
        // test part perfectly when no labels are flipped.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let features = Matrix::from_fn(120, 2, |i, _| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            z + if i < 60 { -20.0 } else { 20.0 }
        });
        let labels: Vec<&str> = (0..120).map(|i| if i < 60 { "left" } else { "right" }).collect();
        let d = LabeledDataset::from_labels(features, &labels, Vec::new()).unwrap();
        let estimators: Vec<EstimatorSpec> = crate::estimators::EstimatorKind::ALL
            .iter()
            .map(|&k| EstimatorSpec {
                n_subsamples: 50,
                n_directions: Some(100),
                ..EstimatorSpec::new(k)
            })
            .collect();
        let mut cfg = RealExperiment::new("blobs", estimators, 4);
        cfg.replications = 3;
        cfg.flip_fraction = 0.0;
        let report = run_real_experiment(&d, &cfg, 2).unwrap();
        assert_eq!(report.records.len(), 21);
        for r in &report.records {
            assert_eq!(r.me_percent, Some(0.0), "{r:?}");
        }
        let again = run_real_experiment(&d, &cfg, 1).unwrap();
        assert_eq!(again.to_csv(), report.to_csv());
    }
}
