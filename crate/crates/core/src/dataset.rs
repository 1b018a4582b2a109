//! Labeled observations, min-max normalization and stratified fold plans.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based class identifier.
pub type ClassId = usize;

/// Which CSV column carries the labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LabelColumn {
    #[default]
    Last,
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// Digits select a 0-based index, anything else a header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Unlabeled rows read for prediction, with the label strings when a
/// label column was requested.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: Vec<Vec<f64>>,
    pub labels: Option<Vec<String>>,
}

impl FeatureTable {
    /// Reads the columns named in `features`, in that order, from a CSV with
    /// a header row. Other columns are ignored apart from `label`.
    pub fn read_csv<R: std::io::Read>(reader: R, features: &[String], label: Option<&LabelColumn>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let cols = features
            .iter()
            .map(|f| {
                headers
                    .iter()
                    .position(|h| h == f)
                    .ok_or_else(|| Error::Data(format!("no column named {f:?}")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let label_idx = match label {
            None => None,
            Some(LabelColumn::Last) => Some(headers.len() - 1),
            Some(LabelColumn::Index(i)) if *i < headers.len() => Some(*i),
            Some(LabelColumn::Index(i)) => {
                return Err(Error::Data(format!("label column index {i} out of range ({} columns)", headers.len())))
            }
            Some(LabelColumn::Name(name)) => Some(
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Data(format!("no column named {name:?}")))?,
            ),
        };
        let mut rows = Vec::new();
        let mut labels = label_idx.map(|_| Vec::new());
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let row = cols
                .iter()
                .map(|&j| {
                    let cell = record.get(j).unwrap_or("").trim();
                    cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::BadCell {
                        row: r + 1,
                        column: headers[j].clone(),
                        value: cell.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
            if let (Some(j), Some(out)) = (label_idx, labels.as_mut()) {
                out.push(record.get(j).unwrap_or("").trim().to_string());
            }
        }
        Ok(FeatureTable { rows, labels })
    }

    pub fn load_csv(path: impl AsRef<Path>, features: &[String], label: Option<&LabelColumn>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, features, label)
    }
}

/// Per-feature `(min, max)` pairs of the data a normalization was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub ranges: Vec<(f64, f64)>,
}

impl Normalization {
    pub fn fit(x: &[f64], p: usize) -> Self {
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); p];
        for row in x.chunks_exact(p.max(1)) {
            for (r, &v) in ranges.iter_mut().zip(row) {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
        Self { ranges }
    }

    /// Maps one raw value of feature `j` into `[0, 1]`; constant features map to 0.
    pub fn scale(&self, j: usize, v: f64) -> f64 {
        let (lo, hi) = self.ranges[j];
        let width = hi - lo;
        if !(width > 0.0) {
            return 0.0;
        }
        ((v - lo) / width).clamp(0.0, 1.0)
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().enumerate().map(|(j, &v)| self.scale(j, v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Row-major `n x p` feature matrix.
    x: Vec<f64>,
    y: Vec<ClassId>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
    normalization: Option<Normalization>,
}

impl Dataset {
    /// Builds a dataset from rows and 1-based labels. Every class in
    /// `1..=class_names.len()` must occur.
    pub fn new(
        rows: Vec<Vec<f64>>,
        y: Vec<ClassId>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let d = Self::from_rows_unchecked(rows, y, feature_names, class_names)?;
        let k = d.num_classes();
        let counts = d.class_counts();
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!(
                "class {} of {k} has no observations",
                missing + 1
            )));
        }
        Ok(d)
    }

    fn from_rows_unchecked(
        rows: Vec<Vec<f64>>,
        y: Vec<ClassId>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let p = feature_names.len();
        if rows.len() != y.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                rows.len(),
                y.len()
            )));
        }
        if rows.is_empty() {
            return Err(Error::Data("dataset has no observations".into()));
        }
        let k = class_names.len();
        if let Some(&bad) = y.iter().find(|&&c| c == 0 || c > k) {
            return Err(Error::Data(format!("label {bad} outside 1..={k}")));
        }
        let mut x = Vec::with_capacity(rows.len() * p);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != p {
                return Err(Error::Data(format!(
                    "row {i} has {} features, expected {p}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Data(format!("row {i} contains non-finite value {v}")));
            }
            x.extend(row);
        }
        Ok(Self {
            x,
            y,
            feature_names,
            class_names,
            normalization: None,
        })
    }

    /// Convenience constructor with generated feature and class names.
    pub fn from_rows(rows: Vec<Vec<f64>>, y: Vec<ClassId>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let k = y.iter().copied().max().unwrap_or(0);
        Self::new(
            rows,
            y,
            (0..p).map(|j| format!("x{j}")).collect(),
            (1..=k).map(|c| format!("class{c}")).collect(),
        )
    }

    pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, label)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, label: &LabelColumn) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if headers.len() < 2 {
            return Err(Error::Data(
                "need at least one feature column and one label column".into(),
            ));
        }
        let label_idx = match label {
            LabelColumn::Last => headers.len() - 1,
            LabelColumn::Index(i) if *i < headers.len() => *i,
            LabelColumn::Index(i) => {
                return Err(Error::Data(format!(
                    "label column index {i} out of range ({} columns)",
                    headers.len()
                )))
            }
            LabelColumn::Name(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("no column named {name:?}")))?,
        };
        let feature_names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label_idx)
            .map(|(_, h)| h.clone())
            .collect();

        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut class_names: Vec<String> = Vec::new();
        let mut class_index: HashMap<String, ClassId> = HashMap::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(feature_names.len());
            for (j, cell) in record.iter().enumerate() {
                let cell = cell.trim();
                if j == label_idx {
                    let next = class_names.len() + 1;
                    let id = *class_index.entry(cell.to_string()).or_insert_with(|| {
                        class_names.push(cell.to_string());
                        next
                    });
                    y.push(id);
                } else {
                    match cell.parse::<f64>() {
                        Ok(v) if v.is_finite() => row.push(v),
                        _ => {
                            return Err(Error::BadCell {
                                row: r + 1,
                                column: headers[j].clone(),
                                value: cell.to_string(),
                            })
                        }
                    }
                }
            }
            rows.push(row);
        }
        if class_names.len() < 2 {
            return Err(Error::Data(format!(
                "classification needs at least 2 classes, found {}",
                class_names.len()
            )));
        }
        Self::new(rows, y, feature_names, class_names)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.num_features();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn label(&self, i: usize) -> ClassId {
        self.y[i]
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_name(&self, c: ClassId) -> &str {
        &self.class_names[c - 1]
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// `Y[i][k-1] == 1` exactly when `y_i == k`.
    pub fn one_hot(&self) -> Vec<Vec<u8>> {
        let k = self.num_classes();
        self.y
            .iter()
            .map(|&c| (1..=k).map(|kk| u8::from(kk == c)).collect())
            .collect()
    }

    /// Observations per class, indexed by `class - 1`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &c in &self.y {
            counts[c - 1] += 1;
        }
        counts
    }

    /// Size of the most represented class.
    pub fn largest_class_count(&self) -> usize {
        self.class_counts().into_iter().max().unwrap_or(0)
    }

    /// Whether all features lie in the unit box.
    pub fn is_unit_scaled(&self) -> bool {
        self.x.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Min-max scales every feature into `[0, 1]` and records the ranges.
    /// Already-normalized datasets are returned unchanged.
    pub fn normalize(&self) -> Dataset {
        if self.normalization.is_some() {
            return self.clone();
        }
        let norm = Normalization::fit(&self.x, self.num_features());
        let mut out = self.normalize_with(&norm);
        out.normalization = Some(norm);
        out
    }

    /// Applies another split's ranges, clamping into `[0, 1]`.
    pub fn normalize_with(&self, norm: &Normalization) -> Dataset {
        let p = self.num_features();
        let mut x = self.x.clone();
        for row in x.chunks_exact_mut(p.max(1)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = norm.scale(j, *v);
            }
        }
        Dataset {
            x,
            y: self.y.clone(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            normalization: Some(norm.clone()),
        }
    }

    /// Observations at `indices`, keeping the class encoding. A subset may
    /// miss some classes.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let p = self.num_features();
        let mut x = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Draws `per_class` observations of every class, preserving original order.
    pub fn stratified_sample(&self, per_class: usize, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = Vec::new();
        for c in 1..=self.num_classes() {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.y[i] == c).collect();
            if members.len() < per_class {
                return Err(Error::Data(format!(
                    "class {c} has {} observations, cannot draw {per_class}",
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            keep.extend_from_slice(&members[..per_class]);
        }
        keep.sort_unstable();
        Ok(self.subset(&keep))
    }
}

/// Fold assignments for repeated stratified k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    /// `assignments[r][i]` is the 1-based fold of observation `i` in repeat `r`.
    pub assignments: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn stratified(d: &Dataset, k: usize, repeats: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
        }
        if k > d.len() {
            return Err(Error::InvalidArgument(format!(
                "{k} folds requested for {} observations",
                d.len()
            )));
        }
        if repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assignments = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            // Deal the class-grouped, shuffled observations round-robin: each
            // class occupies a contiguous run, so per-class and total fold
            // counts both differ by at most one.
            let mut order = Vec::with_capacity(d.len());
            for c in 1..=d.num_classes() {
                let mut members: Vec<usize> = (0..d.len()).filter(|&i| d.label(i) == c).collect();
                members.shuffle(&mut rng);
                order.extend(members);
            }
            let mut folds = vec![0; d.len()];
            for (pos, &i) in order.iter().enumerate() {
                folds[i] = pos % k + 1;
            }
            assignments.push(folds);
        }
        Ok(Self {
            k,
            repeats,
            seed,
            assignments,
        })
    }

    /// `(train, test)` indices for one repeat (0-based) and fold (1-based).
    pub fn split(&self, repeat: usize, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.assignments[repeat].iter().enumerate() {
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Convenience wrapper over [`FoldPlan::stratified`].
pub fn stratified_folds(d: &Dataset, k: usize, repeats: usize, seed: u64) -> Result<FoldPlan> {
    FoldPlan::stratified(d, k, repeats, seed)
}
