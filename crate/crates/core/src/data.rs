//! Datasets: synthetic generation, tabular ingestion, preprocessing and splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming the directory that relative dataset paths resolve against.
pub const DATA_DIR_ENV: &str = "ROBUSTMSD_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    /// Indicator for `category` of the categorical source column `source`.
    OneHot { source: String, category: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: ColumnKind,
}

impl FeatureColumn {
    pub fn numeric(name: impl Into<String>) -> Self {
        FeatureColumn {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, ColumnKind::Numeric)
    }
}

/// A dense labelled sample with per-row split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Original label spelling for each class index.
    pub label_names: Vec<String>,
    pub split: Vec<Split>,
    pub columns: Vec<FeatureColumn>,
    pub source: String,
}

impl Dataset {
    /// Builds a dataset with every row tagged as training data and numeric columns.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        source: impl Into<String>,
    ) -> Result<Self> {
        let columns = (0..features.ncols())
            .map(|j| FeatureColumn::numeric(format!("x{}", j + 1)))
            .collect();
        let n = features.nrows();
        let ds = Dataset {
            features,
            labels,
            n_classes,
            label_names: (0..n_classes).map(|k| k.to_string()).collect(),
            split: vec![Split::Train; n],
            columns,
            source: source.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.labels.len(),
            });
        }
        if self.split.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.split.len(),
            });
        }
        if self.columns.len() != self.features.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.features.ncols(),
                got: self.columns.len(),
            });
        }
        if self.n_classes == 0 {
            return Err(Error::InvalidParameter("n_classes must be positive".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::InvalidLabel(format!(
                "label {bad} not below n_classes = {}",
                self.n_classes
            )));
        }
        if let Some(v) = self.features.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature",
                value: *v,
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Row indices tagged with `split`, in ascending order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == split).then_some(i))
            .collect()
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.split.iter().filter(|&&t| t == s).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    /// Splits present in the dataset, in train/val/test order.
    pub fn present_splits(&self) -> Vec<Split> {
        Split::ALL
            .into_iter()
            .filter(|s| self.split.contains(s))
            .collect()
    }
}

/// Two spherical Gaussian classes on the plane with one perturbed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub class_means: [[f64; 2]; 2],
    pub covariance_scale: f64,
    pub outlier_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 100,
            class_means: [[-2.0, -2.0], [2.0, 2.0]],
            covariance_scale: 1.0,
            outlier_scale: -10.0,
            seed: 0,
        }
    }
}

/// Draws `n / 2` points per class and multiplies one uniformly chosen row by
/// `outlier_scale`. Rows are ordered class 0 first, then class 1.
pub fn generate_2d_outlier(config: &SynthConfig) -> Result<Dataset> {
    if config.n == 0 || config.n % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "n must be a positive even number, got {}",
            config.n
        )));
    }
    if !(config.covariance_scale > 0.0) {
        return Err(Error::InvalidParameter(
            "covariance_scale must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sd = config.covariance_scale.sqrt();
    let half = config.n / 2;
    let mut features = Array2::zeros((config.n, 2));
    let mut labels = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let class = usize::from(i >= half);
        for j in 0..2 {
            let z: f64 = rng.sample(StandardNormal);
            features[[i, j]] = config.class_means[class][j] + sd * z;
        }
        labels.push(class);
    }
    let victim = rng.random_range(0..config.n);
    features
        .row_mut(victim)
        .mapv_inplace(|v| v * config.outlier_scale);
    Dataset::new(
        features,
        labels,
        2,
        format!("synthetic:2d-outlier(n={},seed={})", config.n, config.seed),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TabularFormat {
    Csv,
    Svmlight,
}

impl std::str::FromStr for TabularFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TabularFormat::Csv),
            "svmlight" | "libsvm" => Ok(TabularFormat::Svmlight),
            other => Err(Error::InvalidParameter(format!("unknown format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabularOptions {
    /// CSV label column; the last column when unset.
    pub label_column: Option<String>,
    /// Columns forced to be categorical regardless of their contents.
    pub categorical: Vec<String>,
    /// Allowed label values in class-index order. Derived from the file when unset.
    pub label_values: Option<Vec<String>>,
    /// svmlight feature count; the largest index seen when unset.
    pub n_features: Option<usize>,
}

/// Resolves a relative path against `ROBUSTMSD_DATA_DIR` when that variable is set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

pub fn load_tabular(path: &Path, format: TabularFormat, options: &TabularOptions) -> Result<Dataset> {
    let path = resolve_data_path(path);
    match format {
        TabularFormat::Csv => load_csv(&path, options),
        TabularFormat::Svmlight => load_svmlight(&path, options),
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Maps raw label strings to class indices, numerically sorted when every label parses.
fn index_labels(raw: &[(usize, String)], options: &TabularOptions, source: &str) -> Result<(Vec<usize>, Vec<String>)> {
    let names: Vec<String> = match &options.label_values {
        Some(v) => v.clone(),
        None => {
            let distinct: BTreeSet<&str> = raw.iter().map(|(_, s)| s.as_str()).collect();
            let mut names: Vec<String> = distinct.into_iter().map(str::to_owned).collect();
            if names.iter().all(|s| parse_number(s).is_some()) {
                names.sort_by(|x, y| parse_number(x).unwrap().total_cmp(&parse_number(y).unwrap()));
            }
            names
        }
    };
    let lookup: BTreeMap<&str, usize> = names.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let mut labels = Vec::with_capacity(raw.len());
    for (line, s) in raw {
        match lookup.get(s.as_str()) {
            Some(&k) => labels.push(k),
            None => {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: *line,
                    message: format!("unknown label value '{s}'"),
                })
            }
        }
    }
    Ok((labels, names))
}

fn load_csv(path: &Path, options: &TabularOptions) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    parse_csv(file, &source, options)
}

/// Parses CSV text with a header row. Categorical columns (no value parses as a
/// number, or listed in `options.categorical`) are one-hot expanded with
/// categories in sorted order.
pub fn parse_csv<R: std::io::Read>(reader: R, source: &str, options: &TabularOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.is_empty() {
        return Err(Error::Parse {
            path: source.into(),
            line: 1,
            message: "missing header".into(),
        });
    }
    let label_idx = match &options.label_column {
        Some(name) => header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: source.into(),
            line: 1,
            message: format!("label column '{name}' not in header"),
        })?,
        None => header.len() - 1,
    };

    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: source.into(),
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
    }
    if rows.is_empty() {
        return Err(Error::Empty("csv has no data rows"));
    }

    let mut columns = Vec::new();
    // (source column, None for numeric or Some(categories))
    let mut plan: Vec<(usize, Option<Vec<String>>)> = Vec::new();
    for (j, name) in header.iter().enumerate() {
        if j == label_idx {
            continue;
        }
        let numeric_count = rows.iter().filter(|(_, r)| parse_number(&r[j]).is_some()).count();
        let forced = options.categorical.iter().any(|c| c == name);
        if forced || numeric_count == 0 {
            let cats: BTreeSet<&str> = rows.iter().map(|(_, r)| r[j].as_str()).collect();
            let cats: Vec<String> = cats.into_iter().map(str::to_owned).collect();
            for c in &cats {
                columns.push(FeatureColumn {
                    name: format!("{name}={c}"),
                    kind: ColumnKind::OneHot {
                        source: name.clone(),
                        category: c.clone(),
                    },
                });
            }
            plan.push((j, Some(cats)));
        } else {
            if numeric_count < rows.len() {
                let (line, r) = rows.iter().find(|(_, r)| parse_number(&r[j]).is_none()).unwrap();
                return Err(Error::Parse {
                    path: source.into(),
                    line: *line,
                    message: format!("non-numeric value '{}' in numeric column '{name}'", r[j]),
                });
            }
            columns.push(FeatureColumn::numeric(name.clone()));
            plan.push((j, None));
        }
    }

    let mut features = Array2::zeros((rows.len(), columns.len()));
    for (i, (_, r)) in rows.iter().enumerate() {
        let mut k = 0;
        for (j, cats) in &plan {
            match cats {
                None => {
                    features[[i, k]] = parse_number(&r[*j]).unwrap();
                    k += 1;
                }
                Some(cats) => {
                    let hit = cats.iter().position(|c| *c == r[*j]).unwrap();
                    features[[i, k + hit]] = 1.0;
                    k += cats.len();
                }
            }
        }
    }

    let raw_labels: Vec<(usize, String)> = rows.iter().map(|(l, r)| (*l, r[label_idx].clone())).collect();
    let (labels, label_names) = index_labels(&raw_labels, options, source)?;
    let n = labels.len();
    let ds = Dataset {
        features,
        labels,
        n_classes: label_names.len(),
        label_names,
        split: vec![Split::Train; n],
        columns,
        source: source.to_string(),
    };
    ds.validate()?;
    Ok(ds)
}

fn load_svmlight(path: &Path, options: &TabularOptions) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_svmlight(BufReader::new(file), &path.display().to_string(), options)
}

/// Parses `label index:value ...` lines with 1-based indices into a dense matrix.
pub fn parse_svmlight<R: BufRead>(reader: R, source: &str, options: &TabularOptions) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.into(),
            line: lineno,
            message,
        };
        let mut tokens = content.split_whitespace();
        let label = tokens.next().unwrap().to_string();
        let mut row = Vec::new();
        for tok in tokens {
            if tok.starts_with("qid:") {
                continue;
            }
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(format!("malformed entry '{tok}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(format!("bad feature index '{idx}'")))?;
            if idx == 0 {
                return Err(parse_err("feature indices are 1-based".into()));
            }
            let val = parse_number(val).ok_or_else(|| parse_err(format!("bad feature value '{val}'")))?;
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        raw_labels.push((lineno, label));
        entries.push(row);
    }
    if entries.is_empty() {
        return Err(Error::Empty("svmlight file has no rows"));
    }
    let dim = match options.n_features {
        Some(d) if d < max_index => {
            return Err(Error::Parse {
                path: source.into(),
                line: 0,
                message: format!("feature index {max_index} exceeds declared feature count {d}"),
            })
        }
        Some(d) => d,
        None => max_index,
    };
    let mut features = Array2::zeros((entries.len(), dim));
    for (i, row) in entries.iter().enumerate() {
        for &(j, v) in row {
            features[[i, j]] = v;
        }
    }
    let (labels, label_names) = index_labels(&raw_labels, options, source)?;
    let n = labels.len();
    let ds = Dataset {
        features,
        labels,
        n_classes: label_names.len(),
        label_names,
        split: vec![Split::Train; n],
        columns: (0..dim).map(|j| FeatureColumn::numeric(format!("f{}", j + 1))).collect(),
        source: source.to_string(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Train-split statistics used to rescale features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    /// Per output column: `Some((min, max))` for numeric columns, `None` for indicators.
    pub ranges: Vec<Option<(f64, f64)>>,
    /// Source column indices kept in the output.
    pub kept: Vec<usize>,
}

impl Preprocessor {
    /// Fits min/max on training rows; drops indicator columns whose category is absent from training.
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        let train = dataset.indices(Split::Train);
        if train.is_empty() {
            return Err(Error::Empty("train split"));
        }
        let mut ranges = Vec::new();
        let mut kept = Vec::new();
        for (j, col) in dataset.columns.iter().enumerate() {
            let values = train.iter().map(|&i| dataset.features[[i, j]]);
            match col.kind {
                ColumnKind::Numeric => {
                    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                    ranges.push(Some((lo, hi)));
                    kept.push(j);
                }
                ColumnKind::OneHot { .. } => {
                    if values.into_iter().any(|v| v != 0.0) {
                        ranges.push(None);
                        kept.push(j);
                    }
                }
            }
        }
        Ok(Preprocessor { ranges, kept })
    }

    /// Applies the affine map to every split. Out-of-range values are not clamped;
    /// constant training columns map to zero.
    pub fn apply(&self, dataset: &Dataset) -> Dataset {
        let mut features = Array2::zeros((dataset.n(), self.kept.len()));
        for (k, (&j, range)) in self.kept.iter().zip(&self.ranges).enumerate() {
            let src = dataset.features.column(j);
            let mut dst = features.column_mut(k);
            match *range {
                Some((lo, hi)) if hi > lo => {
                    let w = hi - lo;
                    dst.zip_mut_with(&src, |d, &s| *d = (s - lo) / w);
                }
                Some(_) => {}
                None => dst.assign(&src),
            }
        }
        Dataset {
            features,
            columns: self.kept.iter().map(|&j| dataset.columns[j].clone()).collect(),
            ..dataset.clone()
        }
    }
}

/// Min-max scales numeric features to `[0, 1]` with train-only statistics.
pub fn preprocess(dataset: &Dataset) -> Result<Dataset> {
    Ok(Preprocessor::fit(dataset)?.apply(dataset))
}

/// Seeded permutation followed by an 80/10/10 assignment (floor counts, remainder to train).
pub fn shuffle_split(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let n = dataset.n();
    if n < 10 {
        return Err(Error::InvalidParameter(format!(
            "need at least 10 rows to split, got {n}"
        )));
    }
    let n_val = n / 10;
    let n_test = n / 10;
    let n_train = n - n_val - n_test;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Train; n];
    for (pos, &i) in order.iter().enumerate() {
        split[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(Dataset {
        split,
        ..dataset.clone()
    })
}

/// Euclidean norms of each feature row.
pub fn row_norms(dataset: &Dataset) -> Array1<f64> {
    dataset
        .features
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .collect()
}
