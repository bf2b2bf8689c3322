//! Dataset ingestion and preparation: CSV loading, one-hot encoding,
//! normalization, train/test folds, bootstrap draws and stream plans.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, tag, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Labels attached to a dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Class indices into `classes`, which is ordered by first appearance.
    Classes { labels: Vec<usize>, classes: Vec<String> },
    Values(Vec<f64>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Classes { labels, .. } => labels.len(),
            Target::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major numeric feature matrix with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    target: Target,
    feature_names: Vec<String>,
    /// Category names for columns that were parsed as categorical codes.
    levels: Vec<Option<Vec<String>>>,
}

impl Dataset {
    pub fn new(
        rows: Vec<Vec<f64>>,
        target: Target,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("dataset has no rows".into()));
        }
        let n_cols = rows[0].len();
        let mut x = Vec::with_capacity(rows.len() * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Shape {
                    expected: n_cols,
                    found: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: i,
                    column: format!("#{j}"),
                    message: "non-finite value".into(),
                });
            }
            x.extend_from_slice(row);
        }
        Self::from_parts(x, rows.len(), n_cols, target, feature_names, None)
    }

    pub fn classification(
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        classes: Vec<String>,
    ) -> Result<Self> {
        Self::new(rows, Target::Classes { labels, classes }, None)
    }

    pub fn regression(rows: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        Self::new(rows, Target::Values(values), None)
    }

    fn from_parts(
        x: Vec<f64>,
        n_rows: usize,
        n_cols: usize,
        target: Target,
        feature_names: Option<Vec<String>>,
        levels: Option<Vec<Option<Vec<String>>>>,
    ) -> Result<Self> {
        if n_rows == 0 {
            return Err(Error::EmptyInput("dataset has no rows".into()));
        }
        if n_cols == 0 {
            return Err(Error::Schema("dataset has no feature columns".into()));
        }
        if target.len() != n_rows {
            return Err(Error::Shape {
                expected: n_rows,
                found: target.len(),
            });
        }
        match &target {
            Target::Classes { labels, classes } => {
                if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
                    return Err(Error::ClassCatalog {
                        index: bad,
                        n_classes: classes.len(),
                    });
                }
            }
            Target::Values(v) => {
                if v.iter().any(|y| !y.is_finite()) {
                    return Err(Error::Schema("non-finite regression label".into()));
                }
            }
        }
        let feature_names =
            feature_names.unwrap_or_else(|| (0..n_cols).map(|j| format!("x{j}")).collect());
        if feature_names.len() != n_cols {
            return Err(Error::Shape {
                expected: n_cols,
                found: feature_names.len(),
            });
        }
        let levels = levels.unwrap_or_else(|| vec![None; n_cols]);
        Ok(Dataset {
            x,
            n_rows,
            n_cols,
            target,
            feature_names,
            levels,
        })
    }

    /// Zero-row dataset with the same schema, used for empty retraining batches.
    pub fn empty_like(&self) -> Dataset {
        let target = match &self.target {
            Target::Classes { classes, .. } => Target::Classes {
                labels: Vec::new(),
                classes: classes.clone(),
            },
            Target::Values(_) => Target::Values(Vec::new()),
        };
        Dataset {
            x: Vec::new(),
            n_rows: 0,
            n_cols: self.n_cols,
            target,
            feature_names: self.feature_names.clone(),
            levels: self.levels.clone(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.n_cols.max(1)).take(self.n_rows)
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn task(&self) -> Task {
        match self.target {
            Target::Classes { .. } => Task::Classification,
            Target::Values(_) => Task::Regression,
        }
    }

    pub fn classes(&self) -> &[String] {
        match &self.target {
            Target::Classes { classes, .. } => classes,
            Target::Values(_) => &[],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes().len()
    }

    /// Class index of row `i`; panics on regression data.
    #[inline]
    pub fn class_of(&self, i: usize) -> usize {
        match &self.target {
            Target::Classes { labels, .. } => labels[i],
            Target::Values(_) => panic!("class_of called on a regression dataset"),
        }
    }

    /// Label as a real number (class index for classification).
    #[inline]
    pub fn label_value(&self, i: usize) -> f64 {
        match &self.target {
            Target::Classes { labels, .. } => labels[i] as f64,
            Target::Values(v) => v[i],
        }
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Rows at `indices` (repeats allowed), in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        let target = match &self.target {
            Target::Classes { labels, classes } => Target::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: classes.clone(),
            },
            Target::Values(v) => Target::Values(indices.iter().map(|&i| v[i]).collect()),
        };
        Dataset {
            x,
            n_rows: indices.len(),
            n_cols: self.n_cols,
            target,
            feature_names: self.feature_names.clone(),
            levels: self.levels.clone(),
        }
    }

    /// Append `other` below `self`. Row `i` of `other` becomes row `self.n_rows() + i`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        self.check_schema(other)?;
        let mut x = self.x.clone();
        x.extend_from_slice(&other.x);
        let target = match (&self.target, &other.target) {
            (Target::Classes { labels: a, classes }, Target::Classes { labels: b, .. }) => {
                Target::Classes {
                    labels: a.iter().chain(b).copied().collect(),
                    classes: classes.clone(),
                }
            }
            (Target::Values(a), Target::Values(b)) => {
                Target::Values(a.iter().chain(b).copied().collect())
            }
            _ => unreachable!("schema checked"),
        };
        Ok(Dataset {
            x,
            n_rows: self.n_rows + other.n_rows,
            n_cols: self.n_cols,
            target,
            feature_names: self.feature_names.clone(),
            levels: self.levels.clone(),
        })
    }

    /// Same feature count, task and class catalog.
    pub fn check_schema(&self, other: &Dataset) -> Result<()> {
        if self.n_cols != other.n_cols {
            return Err(Error::Shape {
                expected: self.n_cols,
                found: other.n_cols,
            });
        }
        if self.task() != other.task() {
            return Err(Error::Schema("task mismatch between datasets".into()));
        }
        if self.classes() != other.classes() {
            return Err(Error::Schema("class catalogs differ".into()));
        }
        Ok(())
    }

    /// Re-express class labels against `catalog`, which must contain every class of `self`.
    pub fn with_class_catalog(&self, catalog: &[String]) -> Result<Dataset> {
        let Target::Classes { labels, classes } = &self.target else {
            return Err(Error::Schema("regression data has no class catalog".into()));
        };
        let lookup: HashMap<&str, usize> = catalog
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let mut remap = Vec::with_capacity(classes.len());
        for c in classes {
            match lookup.get(c.as_str()) {
                Some(&i) => remap.push(i),
                None => return Err(Error::Schema(format!("class `{c}` not in catalog"))),
            }
        }
        let mut out = self.clone();
        out.target = Target::Classes {
            labels: labels.iter().map(|&l| remap[l]).collect(),
            classes: catalog.to_vec(),
        };
        Ok(out)
    }
}

/// Options for [`load_csv_with`].
#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub label_column: String,
    pub task: Task,
    /// Columns holding category names rather than numbers. They are loaded as
    /// integer codes in first-appearance order; expand them with [`one_hot_encode`].
    pub categorical: Vec<String>,
}

pub fn load_csv(path: impl AsRef<Path>, label_column: &str, task: Task) -> Result<Dataset> {
    load_csv_with(
        path,
        &CsvOptions {
            label_column: label_column.to_string(),
            task,
            categorical: Vec::new(),
        },
    )
}

pub fn load_csv_with(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, opts)
}

pub fn parse_csv(text: &str, opts: &CsvOptions) -> Result<Dataset> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("csv file is empty".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = header
        .iter()
        .position(|h| *h == opts.label_column)
        .ok_or_else(|| Error::Schema(format!("label column `{}` not found", opts.label_column)))?;
    for c in &opts.categorical {
        if !header.contains(c) || *c == opts.label_column {
            return Err(Error::Schema(format!("categorical column `{c}` not found")));
        }
    }
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&j| j != label_idx).collect();
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns besides the label".into()));
    }
    let is_cat: Vec<bool> = feature_cols
        .iter()
        .map(|&j| opts.categorical.contains(&header[j]))
        .collect();
    let mut codes: Vec<HashMap<String, usize>> = vec![HashMap::new(); feature_cols.len()];
    let mut levels: Vec<Vec<String>> = vec![Vec::new(); feature_cols.len()];

    let mut x = Vec::new();
    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut classes = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut n_rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: i + 1,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        for (c, &j) in feature_cols.iter().enumerate() {
            let cell = &rec[j];
            if cell.is_empty() {
                return Err(Error::Parse {
                    row: i + 1,
                    column: header[j].clone(),
                    message: "missing value".into(),
                });
            }
            if is_cat[c] {
                let next = levels[c].len();
                let code = *codes[c].entry(cell.to_string()).or_insert_with(|| {
                    levels[c].push(cell.to_string());
                    next
                });
                x.push(code as f64);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row: i + 1,
                    column: header[j].clone(),
                    message: format!("`{cell}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: i + 1,
                        column: header[j].clone(),
                        message: "non-finite value".into(),
                    });
                }
                x.push(v);
            }
        }
        let cell = &rec[label_idx];
        match opts.task {
            Task::Classification => {
                let next = classes.len();
                let id = *class_ids.entry(cell.to_string()).or_insert_with(|| {
                    classes.push(cell.to_string());
                    next
                });
                labels.push(id);
            }
            Task::Regression => {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row: i + 1,
                    column: header[label_idx].clone(),
                    message: format!("`{cell}` is not a number"),
                })?;
                values.push(v);
            }
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::EmptyInput("csv file has a header but no rows".into()));
    }
    let target = match opts.task {
        Task::Classification => Target::Classes { labels, classes },
        Task::Regression => Target::Values(values),
    };
    let names = feature_cols.iter().map(|&j| header[j].clone()).collect();
    let levels = is_cat
        .iter()
        .zip(levels)
        .map(|(&cat, l)| cat.then_some(l))
        .collect();
    Dataset::from_parts(
        x,
        n_rows,
        feature_cols.len(),
        target,
        Some(names),
        Some(levels),
    )
}

/// Read the named numeric columns of a CSV, in the given order, ignoring
/// any other columns.
pub fn load_feature_rows(path: impl AsRef<Path>, names: &[String]) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("csv file is empty".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    let cols = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Schema(format!("feature column `{n}` not found")))
        })
        .collect::<Result<Vec<usize>>>()?;
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| Error::Parse {
                row: i + 1,
                column: String::new(),
                message: e.to_string(),
            })?;
            cols.iter()
                .map(|&j| {
                    let cell = rec.get(j).unwrap_or("");
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse {
                            row: i + 1,
                            column: header[j].to_string(),
                            message: format!("`{cell}` is not a finite number"),
                        })
                })
                .collect()
        })
        .collect()
}

/// Write a dataset as CSV with the label in the last column.
pub fn write_csv(ds: &Dataset, label_column: &str, mut out: impl std::io::Write) -> Result<()> {
    let io = |source| Error::Io {
        path: "<csv output>".into(),
        source,
    };
    let mut header = ds.feature_names.join(",");
    header.push(',');
    header.push_str(label_column);
    writeln!(out, "{header}").map_err(io)?;
    for i in 0..ds.n_rows {
        let mut line = ds
            .row(i)
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(",");
        line.push(',');
        match &ds.target {
            Target::Classes { labels, classes } => line.push_str(&classes[labels[i]]),
            Target::Values(v) => line.push_str(&format!("{:?}", v[i])),
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}

/// Replace each named column by one binary indicator per category, in
/// first-appearance order. Indicator columns are inserted where the
/// original column was.
pub fn one_hot_encode(ds: &Dataset, categorical: &[&str]) -> Result<Dataset> {
    let mut targets = Vec::with_capacity(categorical.len());
    for name in categorical {
        let j = ds
            .feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("unknown column `{name}`")))?;
        targets.push(j);
    }
    if targets.is_empty() {
        return Ok(ds.clone());
    }

    enum Plan {
        Keep(usize),
        Expand { col: usize, values: Vec<f64> },
    }
    let mut plan = Vec::new();
    let mut names = Vec::new();
    let mut levels = Vec::new();
    for j in 0..ds.n_cols {
        if targets.contains(&j) {
            let mut values: Vec<f64> = Vec::new();
            for r in ds.rows() {
                if !values.iter().any(|v| v.to_bits() == r[j].to_bits()) {
                    values.push(r[j]);
                }
            }
            for v in &values {
                let label = match &ds.levels[j] {
                    Some(l) if v.fract() == 0.0 && (*v as usize) < l.len() => l[*v as usize].clone(),
                    _ => format!("{v}"),
                };
                names.push(format!("{}={label}", ds.feature_names[j]));
                levels.push(None);
            }
            plan.push(Plan::Expand { col: j, values });
        } else {
            names.push(ds.feature_names[j].clone());
            levels.push(ds.levels[j].clone());
            plan.push(Plan::Keep(j));
        }
    }
    let n_cols = names.len();
    let mut x = Vec::with_capacity(ds.n_rows * n_cols);
    for r in ds.rows() {
        for p in &plan {
            match p {
                Plan::Keep(j) => x.push(r[*j]),
                Plan::Expand { col, values } => {
                    for v in values {
                        x.push(if v.to_bits() == r[*col].to_bits() { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }
    Dataset::from_parts(
        x,
        ds.n_rows,
        n_cols,
        ds.target.clone(),
        Some(names),
        Some(levels),
    )
}

/// Per-feature standardization parameters (population standard deviation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    #[serde(with = "crate::persist::f17_vec")]
    pub mean: Vec<f64>,
    /// Standard deviation, recorded as 1 for zero-variance features.
    #[serde(with = "crate::persist::f17_vec")]
    pub std: Vec<f64>,
    pub zero_variance: Vec<bool>,
}

impl NormParams {
    pub fn fit(ds: &Dataset) -> NormParams {
        let n = ds.n_rows as f64;
        let d = ds.n_cols;
        let mut mean = vec![0.0; d];
        for r in ds.rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut ss = vec![0.0; d];
        for r in ds.rows() {
            for j in 0..d {
                let dv = r[j] - mean[j];
                ss[j] += dv * dv;
            }
        }
        let mut std = Vec::with_capacity(d);
        let mut zero_variance = Vec::with_capacity(d);
        for j in 0..d {
            let s = (ss[j] / n).sqrt();
            if s <= 1e-12 * mean[j].abs().max(1.0) {
                std.push(1.0);
                zero_variance.push(true);
            } else {
                std.push(s);
                zero_variance.push(false);
            }
        }
        NormParams {
            mean,
            std,
            zero_variance,
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.n_cols != self.mean.len() {
            return Err(Error::Shape {
                expected: self.mean.len(),
                found: ds.n_cols,
            });
        }
        let mut out = ds.clone();
        let d = ds.n_cols;
        for (k, v) in out.x.iter_mut().enumerate() {
            let j = k % d;
            *v = if self.zero_variance[j] {
                0.0
            } else {
                (*v - self.mean[j]) / self.std[j]
            };
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| {
                if self.zero_variance[j] {
                    0.0
                } else {
                    (v - self.mean[j]) / self.std[j]
                }
            })
            .collect()
    }
}

pub fn normalize(ds: &Dataset) -> (Dataset, NormParams) {
    let params = NormParams::fit(ds);
    let out = params.apply(ds).expect("params fitted on the same dataset");
    (out, params)
}

/// One train/test split with train-fitted normalization applied to both sides.
#[derive(Clone, Debug)]
pub struct Fold {
    pub train: Dataset,
    pub test: Dataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub norm: NormParams,
}

pub fn split_sizes(n: usize, test_ratio: f64) -> Result<(usize, usize)> {
    if !(test_ratio > 0.0 && test_ratio < 1.0) {
        return Err(Error::Split(format!(
            "test ratio {test_ratio} must lie strictly between 0 and 1"
        )));
    }
    let n_test = (n as f64 * test_ratio).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Split(format!(
            "ratio {test_ratio} on {n} rows leaves an empty train or test set"
        )));
    }
    Ok((n - n_test, n_test))
}

/// Independent seeded random train/test splits.
pub fn make_folds(ds: &Dataset, test_ratio: f64, n_folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if n_folds == 0 {
        return Err(Error::Split("at least one fold is required".into()));
    }
    let (_, n_test) = split_sizes(ds.n_rows, test_ratio)?;
    (0..n_folds)
        .map(|f| {
            let mut rng = rng_from_seed(derive_seed(seed, tag::FOLD, f as u64));
            let mut perm: Vec<usize> = (0..ds.n_rows).collect();
            perm.shuffle(&mut rng);
            let mut test_indices = perm[..n_test].to_vec();
            let mut train_indices = perm[n_test..].to_vec();
            test_indices.sort_unstable();
            train_indices.sort_unstable();
            let (train, norm) = normalize(&ds.select(&train_indices));
            let test = norm.apply(&ds.select(&test_indices))?;
            Ok(Fold {
                train,
                test,
                train_indices,
                test_indices,
                norm,
            })
        })
        .collect()
}

/// Bootstrap draw: a multiset of row indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    pub indices: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub(crate) fn draw_with_replacement(n: usize, draw_size: usize, rng: &mut Rng) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    (0..draw_size).map(|_| rng.gen_range(0..n)).collect()
}

pub fn bootstrap_sample(ds: &Dataset, draw_size: usize, seed: u64) -> SampleSet {
    let mut rng = rng_from_seed(seed);
    SampleSet {
        indices: draw_with_replacement(ds.n_rows, draw_size, &mut rng),
    }
}

/// Disjoint assignment of rows to an initial training set and ordered batches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamPlan {
    pub initial: Vec<usize>,
    pub batches: Vec<Vec<usize>>,
}

impl StreamPlan {
    pub fn batch_sizes(&self) -> Vec<usize> {
        self.batches.iter().map(Vec::len).collect()
    }
}

pub fn stream_split(
    ds: &Dataset,
    initial: usize,
    batch_sizes: &[usize],
    seed: u64,
) -> Result<StreamPlan> {
    let total = initial + batch_sizes.iter().sum::<usize>();
    if total > ds.n_rows {
        return Err(Error::Split(format!(
            "plan needs {total} rows but the dataset has {}",
            ds.n_rows
        )));
    }
    let mut rng = rng_from_seed(derive_seed(seed, tag::STREAM, 0));
    let mut perm: Vec<usize> = (0..ds.n_rows).collect();
    perm.shuffle(&mut rng);
    let mut at = initial;
    let batches = batch_sizes
        .iter()
        .map(|&b| {
            let part = perm[at..at + b].to_vec();
            at += b;
            part
        })
        .collect();
    Ok(StreamPlan {
        initial: perm[..initial].to_vec(),
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn opts(label: &str, task: Task) -> CsvOptions {
        CsvOptions {
            label_column: label.into(),
            task,
            categorical: vec![],
        }
    }

    #[test]
    fn parses_small_csv() {
        let text = "a,b,label\n1,2,yes\n3,4,no\n5,6,yes\n7,8,no\n";
        let ds = parse_csv(text, &opts("label", Task::Classification)).unwrap();
        assert_eq!(ds.n_rows(), 4);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.classes(), ["yes", "no"]);
        assert_eq!(ds.row(1), [3.0, 4.0]);
        assert_eq!(ds.class_of(1), 1);
    }

    #[test]
    fn missing_label_column_is_schema_error() {
        let text = "a,b\n1,2\n";
        let err = parse_csv(text, &opts("label", Task::Classification)).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let text = "a,b,y\n1,2,0.5\n3,oops,1\n";
        match parse_csv(text, &opts("y", Task::Regression)).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_file_is_empty_input() {
        assert!(matches!(
            parse_csv("", &opts("y", Task::Regression)),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            parse_csv("a,y\n", &opts("y", Task::Regression)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn one_hot_identity_pattern() {
        let text = "color,y\nr,0\ng,1\nb,0\n";
        let o = CsvOptions {
            categorical: vec!["color".into()],
            ..opts("y", Task::Regression)
        };
        let ds = parse_csv(text, &o).unwrap();
        let enc = one_hot_encode(&ds, &["color"]).unwrap();
        assert_eq!(enc.n_features(), 3);
        assert_eq!(enc.feature_names(), ["color=r", "color=g", "color=b"]);
        for i in 0..3 {
            let expect: Vec<f64> = (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect();
            assert_eq!(enc.row(i), expect.as_slice());
        }
        assert_eq!(enc.target(), ds.target());
    }

    #[test]
    fn one_hot_with_no_columns_is_identity() {
        let ds = Dataset::regression(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.0, 1.0]).unwrap();
        assert_eq!(one_hot_encode(&ds, &[]).unwrap(), ds);
        assert!(matches!(
            one_hot_encode(&ds, &["nope"]),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn normalize_uses_population_stdev() {
        let ds = Dataset::regression(
            vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]],
            vec![0.0; 3],
        )
        .unwrap();
        let (out, params) = normalize(&ds);
        let s = (2.0f64 / 3.0).sqrt();
        let expect = [-1.0 / s, 0.0, 1.0 / s];
        for i in 0..3 {
            assert!((out.row(i)[0] - expect[i]).abs() < 1e-12);
            assert_eq!(out.row(i)[1], 0.0);
        }
        assert!((expect[2] - 1.224744871391589).abs() < 1e-12);
        assert_eq!(params.zero_variance, [false, true]);
        assert_eq!(params.std[1], 1.0);
    }

    #[test]
    fn single_row_is_all_zero_variance() {
        let ds = Dataset::regression(vec![vec![3.0, -1.0]], vec![0.0]).unwrap();
        let (out, params) = normalize(&ds);
        assert_eq!(params.zero_variance, [true, true]);
        assert_eq!(out.row(0), [0.0, 0.0]);
    }

    #[test]
    fn folds_are_sized_disjoint_and_seeded() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ds = Dataset::regression(rows, (0..10).map(f64::from).collect()).unwrap();
        let folds = make_folds(&ds, 0.3, 1, 9).unwrap();
        assert_eq!(folds[0].test_indices.len(), 3);
        assert_eq!(folds[0].train_indices.len(), 7);
        let a: HashSet<_> = folds[0].train_indices.iter().collect();
        assert!(folds[0].test_indices.iter().all(|i| !a.contains(i)));
        let again = make_folds(&ds, 0.3, 1, 9).unwrap();
        assert_eq!(folds[0].test_indices, again[0].test_indices);
    }

    #[test]
    fn degenerate_ratio_is_split_error() {
        let ds = Dataset::regression(vec![vec![0.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        assert!(matches!(make_folds(&ds, 0.1, 1, 0), Err(Error::Split(_))));
        assert!(matches!(make_folds(&ds, 1.0, 1, 0), Err(Error::Split(_))));
    }

    #[test]
    fn bootstrap_of_single_row() {
        let ds = Dataset::regression(vec![vec![1.0]], vec![0.0]).unwrap();
        assert_eq!(bootstrap_sample(&ds, 5, 3).indices, vec![0; 5]);
    }

    #[test]
    fn stream_split_sizes() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let ds = Dataset::regression(rows, vec![0.0; 100]).unwrap();
        let plan = stream_split(&ds, 50, &[10, 10], 1).unwrap();
        assert_eq!(plan.initial.len(), 50);
        assert_eq!(plan.batch_sizes(), vec![10, 10]);
        let all: HashSet<_> = plan
            .initial
            .iter()
            .chain(plan.batches.iter().flatten())
            .collect();
        assert_eq!(all.len(), 70);
        let only = stream_split(&ds, 50, &[], 1).unwrap();
        assert!(only.batches.is_empty());
        assert!(matches!(
            stream_split(&ds, 90, &[20], 1),
            Err(Error::Split(_))
        ));
    }
}
