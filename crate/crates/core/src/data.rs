//! Shared containers: feature matrices, labels, sample weights and the
//! stable/unstable column split. Everything here is immutable once built.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Binary,
}

/// An n x p real design matrix with named, typed columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: DMatrix<f64>,
    column_names: Vec<String>,
    column_kinds: Vec<ColumnKind>,
}

impl FeatureMatrix {
    pub fn new(
        values: DMatrix<f64>,
        column_names: Vec<String>,
        column_kinds: Vec<ColumnKind>,
    ) -> Result<Self> {
        let (n, p) = values.shape();
        if n == 0 || p == 0 {
            return Err(Error::InvalidData(format!(
                "feature matrix must be non-empty, got {n}x{p}"
            )));
        }
        if column_names.len() != p {
            return Err(Error::DimensionMismatch {
                context: "column names".into(),
                expected: p,
                found: column_names.len(),
            });
        }
        if column_kinds.len() != p {
            return Err(Error::DimensionMismatch {
                context: "column kinds".into(),
                expected: p,
                found: column_kinds.len(),
            });
        }
        let mut seen = HashSet::with_capacity(p);
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidData(format!("duplicate column name `{name}`")));
            }
        }
        for j in 0..p {
            for i in 0..n {
                if !values[(i, j)].is_finite() {
                    return Err(Error::InvalidValue { row: i, col: j });
                }
            }
        }
        Ok(Self {
            values,
            column_names,
            column_kinds,
        })
    }

    /// All-continuous matrix with generated names `x0, x1, ...`.
    pub fn continuous(values: DMatrix<f64>) -> Result<Self> {
        let p = values.ncols();
        let names = (0..p).map(|j| format!("x{j}")).collect();
        Self::new(values, names, vec![ColumnKind::Continuous; p])
    }

    /// Build from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>], names: Vec<String>, kinds: Vec<ColumnKind>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::DimensionMismatch {
                context: format!("row {i}"),
                expected: p,
                found: r.len(),
            });
        }
        let values = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Self::new(values, names, kinds)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_kinds(&self) -> &[ColumnKind] {
        &self.column_kinds
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let p = self.ncols();
        let values = DMatrix::from_fn(rows.len(), p, |i, j| self.values[(rows[i], j)]);
        Self {
            values,
            column_names: self.column_names.clone(),
            column_kinds: self.column_kinds.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let n = self.nrows();
        let values = DMatrix::from_fn(n, cols.len(), |i, j| self.values[(i, cols[j])]);
        Self::new(
            values,
            cols.iter().map(|&j| self.column_names[j].clone()).collect(),
            cols.iter().map(|&j| self.column_kinds[j]).collect(),
        )
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Labels in {-1, +1}.
    Binary,
    Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    values: Vec<f64>,
    task: Task,
}

impl LabelVector {
    pub fn binary(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| v != 1.0 && v != -1.0)
        {
            return Err(Error::InvalidLabel { index, value });
        }
        Ok(Self {
            values,
            task: Task::Binary,
        })
    }

    pub fn real(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue { row: i, col: 0 });
        }
        Ok(Self {
            values,
            task: Task::Real,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            values: rows.iter().map(|&i| self.values[i]).collect(),
            task: self.task,
        }
    }
}

/// Nonnegative per-sample weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    w: Vec<f64>,
}

/// Default tolerance on `|sum(w) - 1|` for learned weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 0.05;

impl SampleWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidData(format!(
                "sample weight {i} is {}, must be finite and nonnegative",
                w[i]
            )));
        }
        Ok(Self { w })
    }

    /// Uniform weights `1/n`.
    pub fn uniform(n: usize) -> Self {
        Self {
            w: vec![1.0 / n as f64; n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self { w: vec![0.0; n] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }

    pub fn sum_within(&self, delta: f64) -> bool {
        (self.sum() - 1.0).abs() <= delta
    }

    /// Rescaled so the mean weight is 1 (sum equals n). All-zero weights stay zero.
    pub fn scaled_to_mean_one(&self) -> Self {
        let s = self.sum();
        if s <= 0.0 {
            return self.clone();
        }
        let k = self.w.len() as f64 / s;
        Self {
            w: self.w.iter().map(|v| v * k).collect(),
        }
    }

    /// Kish effective sample size `(sum w)^2 / sum w^2`.
    pub fn effective_size(&self) -> f64 {
        let s = self.sum();
        let q: f64 = self.w.iter().map(|v| v * v).sum();
        if q > 0.0 {
            s * s / q
        } else {
            0.0
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            w: rows.iter().map(|&i| self.w[i]).collect(),
        }
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.w
    }
}

/// Partition of the p columns into stable (causal) and unstable sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub stable_idx: Vec<usize>,
    pub unstable_idx: Vec<usize>,
}

impl SplitSpec {
    pub fn new(p: usize, stable_idx: Vec<usize>, unstable_idx: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; p];
        for &j in stable_idx.iter().chain(&unstable_idx) {
            if j >= p || seen[j] {
                return Err(Error::InvalidData(format!(
                    "split index {j} is out of range or repeated for p = {p}"
                )));
            }
            seen[j] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidData("split does not cover every column".into()));
        }
        Ok(Self {
            stable_idx,
            unstable_idx,
        })
    }

    /// First `p_s` columns stable, the remaining `p_v` unstable.
    pub fn leading(p_s: usize, p_v: usize) -> Self {
        Self {
            stable_idx: (0..p_s).collect(),
            unstable_idx: (p_s..p_s + p_v).collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.stable_idx.len() + self.unstable_idx.len()
    }
}

/// A feature matrix and label vector whose invariants have been checked together.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedDataset {
    features: FeatureMatrix,
    labels: LabelVector,
}

impl ValidatedDataset {
    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn nrows(&self) -> usize {
        self.features.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.features.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: self.labels.select(rows),
        }
    }

    pub fn into_parts(self) -> (FeatureMatrix, LabelVector) {
        (self.features, self.labels)
    }
}

pub fn validate_dataset(features: FeatureMatrix, labels: LabelVector) -> Result<ValidatedDataset> {
    if labels.len() != features.nrows() {
        return Err(Error::DimensionMismatch {
            context: "labels vs feature rows".into(),
            expected: features.nrows(),
            found: labels.len(),
        });
    }
    // FeatureMatrix and LabelVector constructors already reject non-finite
    // entries and off-domain binary labels; re-check labels here because
    // binary vectors can be assembled from arbitrary reals upstream.
    if labels.task() == Task::Binary {
        LabelVector::binary(labels.values().to_vec())?;
    }
    Ok(ValidatedDataset { features, labels })
}

/// Deterministic child seed from a base seed and a path of indices
/// (SplitMix64 finaliser applied per component).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &p| {
        mix(acc ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    })
}

/// Shuffled `(train, test)` index sets; test gets `ceil(n * test_fraction)` rows.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidFraction(test_fraction));
    }
    let n_test = (n as f64 * test_fraction).ceil() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::EmptyPartition {
            n,
            fraction: test_fraction,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx[..n_test].to_vec();
    let train = idx[n_test..].to_vec();
    Ok((train, test))
}

/// Shuffled fold assignment: `folds` disjoint index sets covering `0..n`,
/// sizes differing by at most one.
pub fn kfold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::InvalidData(format!("cannot split {n} rows into {folds} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (k, i) in idx.into_iter().enumerate() {
        out[k % folds].push(i);
    }
    Ok(out)
}

pub fn split_train_test(
    ds: &ValidatedDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(ValidatedDataset, ValidatedDataset)> {
    let (train, test) = split_indices(ds.nrows(), test_fraction, seed)?;
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}

/// Per-column statistics from [`standardize`]; only continuous, non-constant
/// columns are transformed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub transformed: Vec<bool>,
    pub constant: Vec<bool>,
}

impl Standardization {
    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.map(x, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.map(x, |v, m, s| v * s + m)
    }

    fn map(&self, x: &FeatureMatrix, f: impl Fn(f64, f64, f64) -> f64) -> Result<FeatureMatrix> {
        if x.ncols() != self.means.len() {
            return Err(Error::DimensionMismatch {
                context: "standardization width".into(),
                expected: self.means.len(),
                found: x.ncols(),
            });
        }
        let mut values = x.values().clone();
        for j in 0..x.ncols() {
            if self.transformed[j] {
                for v in values.column_mut(j).iter_mut() {
                    *v = f(*v, self.means[j], self.stds[j]);
                }
            }
        }
        FeatureMatrix::new(values, x.column_names().to_vec(), x.column_kinds().to_vec())
    }
}

/// Z-score continuous columns with the population (1/n) standard deviation.
/// Constant continuous columns pass through unchanged and are flagged.
pub fn standardize(x: &FeatureMatrix) -> (FeatureMatrix, Standardization) {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let mut stats = Standardization {
        means: vec![0.0; p],
        stds: vec![1.0; p],
        transformed: vec![false; p],
        constant: vec![false; p],
    };
    for j in 0..p {
        if x.column_kinds()[j] != ColumnKind::Continuous {
            continue;
        }
        let col = x.values().column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        stats.means[j] = mean;
        if std <= 1e-12 * mean.abs().max(1.0) {
            stats.constant[j] = true;
            log::warn!("column `{}` is constant; left unstandardized", x.column_names()[j]);
        } else {
            stats.stds[j] = std;
            stats.transformed[j] = true;
        }
    }
    let z = stats.apply(x).expect("statistics match the input width");
    (z, stats)
}
