//! Tabular CSV ingestion: typed loading, binning, one-hot encoding,
//! single imputation, oversampling and recursive feature elimination.
//!
//! Every fitted statistic comes from the table passed to `fit`; applying a
//! [`FittedPipeline`] replays it exactly on other splits.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_indices, standardize, ColumnKind, FeatureMatrix, LabelVector, SampleWeights, ValidatedDataset};
use crate::error::{Error, Result};
use crate::models::{fit_weighted_svm, SvmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeclaredKind {
    Continuous,
    Categorical,
    Binary,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum BinningRule {
    EqualWidth { k: usize },
    Quantile { k: usize },
}

impl Default for BinningRule {
    fn default() -> Self {
        BinningRule::Quantile { k: 4 }
    }
}

impl BinningRule {
    fn k(self) -> usize {
        match self {
            BinningRule::EqualWidth { k } | BinningRule::Quantile { k } => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: DeclaredKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binning: Option<BinningRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub columns: Vec<ColumnSpec>,
}

impl ColumnSchema {
    pub fn validate(&self) -> Result<()> {
        let labels = self.columns.iter().filter(|c| c.kind == DeclaredKind::Label).count();
        if labels != 1 {
            return Err(Error::SchemaMismatch(format!("schema needs exactly one label column, found {labels}")));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::SchemaMismatch(format!("column `{}` declared twice", c.name)));
            }
            if let Some(b) = c.binning {
                if c.kind != DeclaredKind::Continuous {
                    return Err(Error::SchemaMismatch(format!("binning given for non-continuous column `{}`", c.name)));
                }
                if b.k() < 2 {
                    return Err(Error::SchemaMismatch(format!("column `{}` needs at least 2 bins", c.name)));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> &ColumnSpec {
        self.columns.iter().find(|c| c.kind == DeclaredKind::Label).expect("validated schema")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: ColumnSchema = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One typed column. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Text(v) => Column::Text(rows.iter().map(|&i| v[i].clone()).collect()),
        }
    }

    fn text_at(&self, i: usize) -> Option<String> {
        match self {
            Column::Numeric(v) => v[i].map(|x| x.to_string()),
            Column::Text(v) => v[i].clone(),
        }
    }
}

/// A loaded table. Continuous and binary columns are numeric; categorical,
/// binned and label columns hold text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub names: Vec<String>,
    pub kinds: Vec<DeclaredKind>,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("no column named `{name}`")))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
        }
    }

    pub fn label_index(&self) -> Result<usize> {
        self.kinds
            .iter()
            .position(|&k| k == DeclaredKind::Label)
            .ok_or_else(|| Error::SchemaMismatch("table has no label column".into()))
    }

    pub fn missing_count(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                Column::Numeric(v) => v.iter().filter(|x| x.is_none()).count(),
                Column::Text(v) => v.iter().filter(|x| x.is_none()).count(),
            })
            .sum()
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "N/A" | "NaN" | "nan" | "?" | "null")
}

fn parse_binary(cell: &str) -> Option<f64> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "0" | "0.0" | "false" | "no" => Some(0.0),
        "1" | "1.0" | "true" | "yes" => Some(1.0),
        _ => None,
    }
}

/// Read a CSV with a header row. Data rows are numbered from 1 in errors,
/// columns from 0.
pub fn load_csv_reader<R: Read>(input: R, schema: &ColumnSchema) -> Result<Table> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for spec in &schema.columns {
        if !header.contains(&spec.name) {
            return Err(Error::SchemaMismatch(format!("header is missing column `{}`", spec.name)));
        }
    }
    if let Some(extra) = header.iter().find(|h| !schema.columns.iter().any(|c| &c.name == *h)) {
        return Err(Error::SchemaMismatch(format!("column `{extra}` is not in the schema")));
    }
    let positions: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| header.iter().position(|h| h == &c.name).unwrap())
        .collect();
    let mut columns: Vec<Column> = schema
        .columns
        .iter()
        .map(|c| match c.kind {
            DeclaredKind::Continuous | DeclaredKind::Binary => Column::Numeric(Vec::new()),
            _ => Column::Text(Vec::new()),
        })
        .collect();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        for (k, spec) in schema.columns.iter().enumerate() {
            let pos = positions[k];
            let cell = record.get(pos).unwrap_or("");
            let parse_err = || Error::ParseError {
                row: r + 1,
                col: pos,
                value: cell.to_string(),
            };
            match &mut columns[k] {
                Column::Numeric(v) => {
                    if is_missing(cell) {
                        v.push(None);
                    } else if spec.kind == DeclaredKind::Binary {
                        v.push(Some(parse_binary(cell).ok_or_else(parse_err)?));
                    } else {
                        let x: f64 = cell.trim().parse().map_err(|_| parse_err())?;
                        if !x.is_finite() {
                            return Err(parse_err());
                        }
                        v.push(Some(x));
                    }
                }
                Column::Text(v) => v.push((!is_missing(cell)).then(|| cell.trim().to_string())),
            }
        }
    }
    let table = Table {
        names: schema.columns.iter().map(|c| c.name.clone()).collect(),
        kinds: schema.columns.iter().map(|c| c.kind).collect(),
        columns,
    };
    if table.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(table)
}

pub fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<Table> {
    load_csv_reader(std::fs::File::open(path)?, schema)
}

/// Interior bin edges of one continuous column, fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    pub column: String,
    pub rule: BinningRule,
    pub min: f64,
    pub max: f64,
    /// Strictly increasing interior edges; bin `b` is `[edge[b-1], edge[b])`.
    pub edges: Vec<f64>,
}

impl BinEdges {
    pub fn fit(column: &str, values: &[f64], rule: BinningRule) -> Result<Self> {
        let k = rule.k();
        if k < 2 {
            return Err(Error::Config(format!("column `{column}` needs at least 2 bins")));
        }
        if values.is_empty() {
            return Err(Error::AllMissingColumn(column.to_string()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
        if min == max {
            return Err(Error::DegenerateColumn(column.to_string()));
        }
        let mut edges: Vec<f64> = match rule {
            BinningRule::EqualWidth { k } => (1..k).map(|i| min + (max - min) * i as f64 / k as f64).collect(),
            BinningRule::Quantile { k } => (1..k).map(|i| quantile_sorted(&sorted, i as f64 / k as f64)).collect(),
        };
        edges.dedup();
        edges.retain(|&e| e > min && e <= max);
        Ok(Self {
            column: column.to_string(),
            rule,
            min,
            max,
            edges,
        })
    }

    pub fn bins(&self) -> usize {
        self.edges.len() + 1
    }

    /// Bin index and whether the value lay outside the fitted range.
    pub fn assign(&self, x: f64) -> (usize, bool) {
        let bin = self.edges.partition_point(|&e| e <= x);
        (bin, x < self.min || x > self.max)
    }

    pub fn label(&self, bin: usize) -> String {
        format!("b{bin}")
    }
}

/// Linearly interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Rows whose value fell outside the fitted range and were clamped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApplyFlags {
    pub clamped: Vec<(String, usize)>,
    pub unseen: Vec<(String, usize)>,
}

fn apply_bins(table: &mut Table, j: usize, edges: &BinEdges, flags: &mut ApplyFlags) -> Result<()> {
    let Column::Numeric(v) = &table.columns[j] else {
        return Err(Error::SchemaMismatch(format!("column `{}` is not continuous", table.names[j])));
    };
    let mut out = Vec::with_capacity(v.len());
    for (i, x) in v.iter().enumerate() {
        out.push(x.map(|x| {
            let (b, clamped) = edges.assign(x);
            if clamped {
                flags.clamped.push((table.names[j].clone(), i));
            }
            edges.label(b)
        }));
    }
    table.columns[j] = Column::Text(out);
    table.kinds[j] = DeclaredKind::Categorical;
    Ok(())
}

/// Replace a continuous column by bin labels `b0, b1, ...`. Edges are fitted
/// on this table; reuse them on other splits through [`FittedPipeline`].
pub fn discretize(table: &Table, column: &str, rule: BinningRule) -> Result<(Table, BinEdges)> {
    let j = table.index(column)?;
    let Column::Numeric(v) = &table.columns[j] else {
        return Err(Error::SchemaMismatch(format!("column `{column}` is not continuous")));
    };
    if table.kinds[j] != DeclaredKind::Continuous {
        return Err(Error::SchemaMismatch(format!("column `{column}` is not continuous")));
    }
    let observed: Vec<f64> = v.iter().flatten().copied().collect();
    let edges = BinEdges::fit(column, &observed, rule)?;
    let mut out = table.clone();
    apply_bins(&mut out, j, &edges, &mut ApplyFlags::default())?;
    Ok((out, edges))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fill {
    Median(f64),
    Mode(String),
}

/// Per-column fill values from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub fills: Vec<(String, Fill)>,
}

impl Imputer {
    /// Median for numeric feature columns, mode (smallest on ties) for text.
    /// Label cells are never imputed.
    pub fn fit(table: &Table) -> Result<Self> {
        let mut fills = Vec::new();
        for (j, col) in table.columns.iter().enumerate() {
            if table.kinds[j] == DeclaredKind::Label {
                continue;
            }
            let name = table.names[j].clone();
            let fill = match col {
                Column::Numeric(v) if table.kinds[j] == DeclaredKind::Continuous => {
                    let mut obs: Vec<f64> = v.iter().flatten().copied().collect();
                    if obs.is_empty() {
                        return Err(Error::AllMissingColumn(name));
                    }
                    obs.sort_by(f64::total_cmp);
                    Fill::Median(quantile_sorted(&obs, 0.5))
                }
                Column::Numeric(v) => {
                    let ones = v.iter().flatten().filter(|&&x| x == 1.0).count();
                    let zeros = v.iter().flatten().filter(|&&x| x == 0.0).count();
                    if ones + zeros == 0 {
                        return Err(Error::AllMissingColumn(name));
                    }
                    Fill::Median(if ones > zeros { 1.0 } else { 0.0 })
                }
                Column::Text(v) => {
                    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                    for s in v.iter().flatten() {
                        *counts.entry(s.as_str()).or_default() += 1;
                    }
                    let best = counts.values().copied().max().ok_or_else(|| Error::AllMissingColumn(name.clone()))?;
                    let mode = counts.iter().find(|(_, &c)| c == best).unwrap().0;
                    Fill::Mode(mode.to_string())
                }
            };
            fills.push((name, fill));
        }
        Ok(Self { fills })
    }

    pub fn apply(&self, table: &Table) -> Result<Table> {
        let mut out = table.clone();
        for (name, fill) in &self.fills {
            let j = out.index(name)?;
            match (&mut out.columns[j], fill) {
                (Column::Numeric(v), Fill::Median(m)) => v.iter_mut().for_each(|x| {
                    x.get_or_insert(*m);
                }),
                (Column::Text(v), Fill::Mode(m)) => v.iter_mut().for_each(|x| {
                    if x.is_none() {
                        *x = Some(m.clone());
                    }
                }),
                _ => return Err(Error::SchemaMismatch(format!("column `{name}` changed type since fitting"))),
            }
        }
        Ok(out)
    }
}

/// Randomly oversample every minority class, with replacement, up to the
/// majority count. Rows with a missing label are dropped. Original rows keep
/// their order; duplicates are appended.
pub fn balance_classes(table: &Table, seed: u64) -> Result<Table> {
    let l = table.label_index()?;
    let labels: Vec<Option<String>> = (0..table.nrows()).map(|i| table.columns[l].text_at(i)).collect();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, y) in labels.iter().enumerate() {
        if let Some(y) = y {
            groups.entry(y.clone()).or_default().push(i);
        }
    }
    if groups.is_empty() {
        return Err(Error::AllMissingColumn(table.names[l].clone()));
    }
    let target = groups.values().map(Vec::len).max().unwrap();
    let mut rows: Vec<usize> = (0..table.nrows()).filter(|&i| labels[i].is_some()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in groups.values() {
        for _ in members.len()..target {
            rows.push(members[rng.random_range(0..members.len())]);
        }
    }
    Ok(table.select_rows(&rows))
}

/// Single imputation followed by oversampling to class parity.
pub fn impute_and_balance(table: &Table, seed: u64) -> Result<Table> {
    let imputer = Imputer::fit(table)?;
    balance_classes(&imputer.apply(table)?, seed)
}

/// Category vocabulary of one encoded column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotGroup {
    pub column: String,
    /// `None` for binary pass-through columns.
    pub categories: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotEncoder {
    pub groups: Vec<OneHotGroup>,
}

impl OneHotEncoder {
    /// Vocabularies of every non-label column. Continuous columns must be
    /// discretized first.
    pub fn fit(table: &Table) -> Result<Self> {
        let mut groups = Vec::new();
        for (j, col) in table.columns.iter().enumerate() {
            let name = table.names[j].clone();
            match (table.kinds[j], col) {
                (DeclaredKind::Label, _) => {}
                (DeclaredKind::Binary, _) => groups.push(OneHotGroup {
                    column: name,
                    categories: None,
                }),
                (DeclaredKind::Categorical, Column::Text(v)) => {
                    let cats: BTreeSet<String> = v.iter().flatten().cloned().collect();
                    groups.push(OneHotGroup {
                        column: name,
                        categories: Some(cats.into_iter().collect()),
                    });
                }
                _ => {
                    return Err(Error::SchemaMismatch(format!(
                        "column `{name}` must be discretized before one-hot encoding"
                    )))
                }
            }
        }
        if groups.is_empty() {
            return Err(Error::SchemaMismatch("no feature columns to encode".into()));
        }
        Ok(Self { groups })
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.groups
            .iter()
            .flat_map(|g| match &g.categories {
                None => vec![g.column.clone()],
                Some(c) => c.iter().map(|v| format!("{}={}", g.column, v)).collect(),
            })
            .collect()
    }

    /// Binary matrix. Unseen or missing categories leave their group all
    /// zero and are reported in `flags.unseen`.
    pub fn encode(&self, table: &Table, flags: &mut ApplyFlags) -> Result<FeatureMatrix> {
        let n = table.nrows();
        let names = self.feature_names();
        let mut values = DMatrix::zeros(n, names.len());
        let mut offset = 0;
        for g in &self.groups {
            let j = table.index(&g.column)?;
            match (&g.categories, &table.columns[j]) {
                (None, Column::Numeric(v)) => {
                    for (i, x) in v.iter().enumerate() {
                        match x {
                            Some(x) => values[(i, offset)] = *x,
                            None => flags.unseen.push((g.column.clone(), i)),
                        }
                    }
                    offset += 1;
                }
                (Some(cats), Column::Text(v)) => {
                    for (i, x) in v.iter().enumerate() {
                        match x.as_ref().and_then(|s| cats.binary_search(s).ok()) {
                            Some(c) => values[(i, offset + c)] = 1.0,
                            None => flags.unseen.push((g.column.clone(), i)),
                        }
                    }
                    offset += cats.len();
                }
                _ => return Err(Error::SchemaMismatch(format!("column `{}` changed type since fitting", g.column))),
            }
        }
        FeatureMatrix::new(values, names.clone(), vec![ColumnKind::Binary; names.len()])
    }
}

/// Fit an encoder on `table` and encode it.
pub fn one_hot(table: &Table) -> Result<(FeatureMatrix, OneHotEncoder)> {
    let enc = OneHotEncoder::fit(table)?;
    let x = enc.encode(table, &mut ApplyFlags::default())?;
    Ok((x, enc))
}

/// Maps two label strings to -1 and +1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCoding {
    pub column: String,
    pub negative: String,
    pub positive: String,
}

impl LabelCoding {
    /// The larger value (numerically when both parse) is the positive class.
    pub fn fit(table: &Table) -> Result<Self> {
        let l = table.label_index()?;
        let classes: BTreeSet<String> = (0..table.nrows()).filter_map(|i| table.columns[l].text_at(i)).collect();
        if classes.len() != 2 {
            return Err(Error::InvalidData(format!(
                "label column `{}` must have exactly two classes, found {}",
                table.names[l],
                classes.len()
            )));
        }
        let mut c: Vec<String> = classes.into_iter().collect();
        if let (Ok(a), Ok(b)) = (c[0].parse::<f64>(), c[1].parse::<f64>()) {
            if a > b {
                c.swap(0, 1);
            }
        }
        Ok(Self {
            column: table.names[l].clone(),
            negative: c[0].clone(),
            positive: c[1].clone(),
        })
    }

    pub fn encode(&self, table: &Table) -> Result<LabelVector> {
        let l = table.index(&self.column)?;
        let y = (0..table.nrows())
            .map(|i| match table.columns[l].text_at(i) {
                Some(s) if s == self.positive => Ok(1.0),
                Some(s) if s == self.negative => Ok(-1.0),
                other => Err(Error::InvalidData(format!(
                    "row {i}: label `{}` is not one of the fitted classes",
                    other.unwrap_or_default()
                ))),
            })
            .collect::<Result<Vec<f64>>>()?;
        LabelVector::binary(y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Binning for continuous columns without their own rule.
    pub default_binning: BinningRule,
    pub balance: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            default_binning: BinningRule::default(),
            balance: true,
            seed: 1,
        }
    }
}

/// Every statistic needed to replay preprocessing on another split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub schema: ColumnSchema,
    pub config: PipelineConfig,
    pub imputer: Imputer,
    pub bins: Vec<BinEdges>,
    pub encoder: OneHotEncoder,
    pub labels: LabelCoding,
}

/// Output of applying a pipeline to one table.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub flags: ApplyFlags,
}

impl FittedPipeline {
    pub fn fit(train: &Table, schema: &ColumnSchema, config: PipelineConfig) -> Result<Self> {
        schema.validate()?;
        let imputer = Imputer::fit(train)?;
        let mut table = imputer.apply(train)?;
        let mut bins = Vec::new();
        for spec in schema.columns.iter().filter(|c| c.kind == DeclaredKind::Continuous) {
            let (t, e) = discretize(&table, &spec.name, spec.binning.unwrap_or(config.default_binning))?;
            table = t;
            bins.push(e);
        }
        let encoder = OneHotEncoder::fit(&table)?;
        let labels = LabelCoding::fit(&table)?;
        Ok(Self {
            schema: schema.clone(),
            config,
            imputer,
            bins,
            encoder,
            labels,
        })
    }

    /// Impute, bin and encode without resampling.
    pub fn transform(&self, table: &Table) -> Result<Prepared> {
        let mut t = self.imputer.apply(table)?;
        let mut flags = ApplyFlags::default();
        for e in &self.bins {
            let j = t.index(&e.column)?;
            apply_bins(&mut t, j, e, &mut flags)?;
        }
        let features = self.encoder.encode(&t, &mut flags)?;
        let labels = self.labels.encode(&t)?;
        Ok(Prepared { features, labels, flags })
    }

    /// Transform the training split, oversampling it when configured.
    pub fn transform_train(&self, table: &Table) -> Result<Prepared> {
        if self.config.balance {
            let balanced = balance_classes(&self.imputer.apply(table)?, self.config.seed)?;
            self.transform(&balanced)
        } else {
            self.transform(table)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Features ordered best first, with mean CV accuracy per subset size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub ranking: Vec<String>,
    /// `(size, mean accuracy)` for each candidate size, ascending.
    pub scores: Vec<(usize, f64)>,
    pub best_size: usize,
    pub selected: Vec<String>,
}

fn hinge_cfg() -> SvmConfig {
    SvmConfig {
        c: 1.0,
        ..SvmConfig::default()
    }
}

/// Recursive elimination: refit a hinge-loss linear model on standardized
/// columns and drop the one with the smallest squared coefficient.
fn elimination_order(x: &FeatureMatrix, y: &LabelVector) -> Result<Vec<usize>> {
    let (z, _) = standardize(x);
    let mut alive: Vec<usize> = (0..x.ncols()).collect();
    let mut removed = Vec::new();
    let zero = SampleWeights::zeros(x.nrows());
    while alive.len() > 1 {
        let sub = z.select_columns(&alive)?;
        let model = fit_weighted_svm(&sub, y, &zero, &hinge_cfg())?;
        // Ties drop the later column.
        let (k, _) = model
            .beta
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bk, bv), (k, b)| if b * b <= bv { (k, b * b) } else { (bk, bv) });
        removed.push(alive.remove(k));
    }
    removed.push(alive[0]);
    removed.reverse();
    Ok(removed)
}

fn cv_accuracy_on(x: &FeatureMatrix, y: &LabelVector, cols: &[usize], folds: &[Vec<usize>]) -> Result<f64> {
    let n = x.nrows();
    let sub = x.select_columns(cols)?;
    let accs = folds
        .par_iter()
        .map(|test| -> Result<f64> {
            let mut in_test = vec![false; n];
            test.iter().for_each(|&i| in_test[i] = true);
            let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
            let (xtr, st) = standardize(&sub.select_rows(&train));
            let xte = st.apply(&sub.select_rows(test))?;
            let ytr = y.select(&train);
            let model = fit_weighted_svm(&xtr, &ytr, &SampleWeights::zeros(train.len()), &hinge_cfg())?;
            let pred = model.predict_class(&xte)?;
            let yte = y.select(test);
            let hits = pred.iter().zip(yte.values()).filter(|(p, t)| p == t).count();
            Ok(hits as f64 / test.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Rank features by recursive elimination and score each candidate subset
/// size by mean `folds`-fold accuracy. The best size is the smallest one
/// reaching the top score. Sizes larger than the feature count are skipped.
pub fn feature_select(ds: &ValidatedDataset, sizes: &[usize], folds: usize, seed: u64) -> Result<FeatureRanking> {
    if folds < 2 {
        return Err(Error::Config("feature selection needs at least 2 folds".into()));
    }
    let (x, y) = (ds.features(), ds.labels());
    let order = elimination_order(x, y)?;
    let fold_idx = kfold_indices(x.nrows(), folds, seed)?;
    let mut cand: Vec<usize> = sizes.iter().copied().filter(|&s| s >= 1 && s <= x.ncols()).collect();
    if cand.is_empty() {
        cand = (1..=x.ncols()).collect();
    }
    cand.sort_unstable();
    cand.dedup();
    let mut scores = Vec::new();
    for &s in &cand {
        scores.push((s, cv_accuracy_on(x, y, &order[..s], &fold_idx)?));
    }
    let top = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let best_size = scores.iter().find(|s| s.1 == top).unwrap().0;
    let names = x.column_names();
    let ranking: Vec<String> = order.iter().map(|&j| names[j].clone()).collect();
    Ok(FeatureRanking {
        selected: ranking[..best_size].to_vec(),
        ranking,
        scores,
        best_size,
    })
}
