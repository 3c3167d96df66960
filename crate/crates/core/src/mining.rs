//! Apriori frequent-itemset mining and class association rules.
//!
//! Items are plain strings, normally the column names of a one-hot encoded
//! feature matrix (`age=q2`, `sex=male`, ...). Class membership enters the
//! transactions as one of two reserved items so that rules `A => class` fall
//! out of ordinary itemset mining.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, LabelVector, Task};
use crate::error::{Error, Result};

pub const CLASS_POSITIVE: &str = "class=+1";
pub const CLASS_NEGATIVE: &str = "class=-1";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transaction {
    items: BTreeSet<String>,
}

impl Transaction {
    pub fn new<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            items: items.into_iter().map(Into::into).collect(),
        }
    }

    pub fn items(&self) -> &BTreeSet<String> {
        &self.items
    }

    pub fn contains_all(&self, itemset: &[String]) -> bool {
        itemset.iter().all(|i| self.items.contains(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequentItemset {
    /// Sorted, duplicate-free.
    pub items: Vec<String>,
    pub support: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassTag {
    Positive,
    Negative,
}

impl ClassTag {
    pub fn item(self) -> &'static str {
        match self {
            ClassTag::Positive => CLASS_POSITIVE,
            ClassTag::Negative => CLASS_NEGATIVE,
        }
    }

    pub fn from_item(item: &str) -> Option<Self> {
        match item {
            CLASS_POSITIVE => Some(ClassTag::Positive),
            CLASS_NEGATIVE => Some(ClassTag::Negative),
            _ => None,
        }
    }

    pub fn label(self) -> f64 {
        match self {
            ClassTag::Positive => 1.0,
            ClassTag::Negative => -1.0,
        }
    }
}

/// `antecedent => consequent` with its support, confidence and lift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub antecedent: Vec<String>,
    pub consequent: String,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
}

impl Rule {
    pub fn class_tag(&self) -> Option<ClassTag> {
        ClassTag::from_item(&self.consequent)
    }

    /// Activation scale used by rule scoring: the confidence for positive
    /// rules and its inverse for negative rules. Derived rules always have
    /// confidence > 0, so the inverse is finite.
    pub fn score(&self) -> f64 {
        match self.class_tag() {
            Some(ClassTag::Negative) => 1.0 / self.confidence,
            _ => self.confidence,
        }
    }

    pub fn display_antecedent(&self) -> String {
        self.antecedent.join(",")
    }
}

/// Ordering used wherever rules need a canonical rank: higher score first,
/// then shorter antecedent, then lexicographic antecedent.
pub fn rule_rank_cmp(a: &Rule, b: &Rule) -> std::cmp::Ordering {
    b.score()
        .partial_cmp(&a.score())
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.antecedent.len().cmp(&b.antecedent.len()))
        .then_with(|| a.antecedent.cmp(&b.antecedent))
        .then_with(|| a.consequent.cmp(&b.consequent))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub min_support: f64,
    pub min_confidence: f64,
    pub max_antecedent_len: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            min_support: 0.05,
            min_confidence: 0.6,
            max_antecedent_len: 4,
        }
    }
}

/// Level-wise Apriori. Returns every itemset (up to `max_len` items, if
/// given) whose support is at least `min_support`, ordered by size and then
/// lexicographically.
pub fn mine_frequent_itemsets(
    transactions: &[Transaction],
    min_support: f64,
    max_len: Option<usize>,
) -> Result<Vec<FrequentItemset>> {
    if transactions.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if !(min_support > 0.0 && min_support <= 1.0) {
        return Err(Error::Config(format!(
            "min_support must lie in (0, 1], got {min_support}"
        )));
    }
    let n = transactions.len();
    let max_len = max_len.unwrap_or(usize::MAX);
    let min_count = min_count(min_support, n);

    let vocab: Vec<&String> = transactions
        .iter()
        .flat_map(|t| t.items.iter())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let id_of: HashMap<&String, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, i as u32))
        .collect();
    let words = vocab.len().div_ceil(64).max(1);
    let bitsets: Vec<Vec<u64>> = transactions
        .iter()
        .map(|t| {
            let mut b = vec![0u64; words];
            for item in &t.items {
                let id = id_of[item] as usize;
                b[id / 64] |= 1 << (id % 64);
            }
            b
        })
        .collect();

    let count_of = |set: &[u32]| -> usize {
        let mut mask = vec![0u64; words];
        for &id in set {
            mask[id as usize / 64] |= 1 << (id % 64);
        }
        bitsets
            .iter()
            .filter(|b| b.iter().zip(&mask).all(|(x, m)| x & m == *m))
            .count()
    };

    let mut out = Vec::new();
    let mut level: Vec<(Vec<u32>, usize)> = (0..vocab.len() as u32)
        .map(|id| (vec![id], count_of(&[id])))
        .filter(|(_, c)| *c >= min_count)
        .collect();

    let mut size = 1;
    while !level.is_empty() && size <= max_len {
        out.extend(level.iter().cloned());
        if size == max_len {
            break;
        }
        let frequent: HashSet<&[u32]> = level.iter().map(|(s, _)| s.as_slice()).collect();
        let mut next = Vec::new();
        for a in 0..level.len() {
            for b in (a + 1)..level.len() {
                let (x, y) = (&level[a].0, &level[b].0);
                if x[..size - 1] != y[..size - 1] {
                    // Level is sorted, so once the prefix differs no later
                    // partner shares it either.
                    break;
                }
                let mut cand = x.clone();
                cand.push(y[size - 1]);
                let all_subsets_frequent = (0..cand.len()).all(|skip| {
                    let sub: Vec<u32> = cand
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != skip)
                        .map(|(_, v)| *v)
                        .collect();
                    frequent.contains(sub.as_slice())
                });
                if all_subsets_frequent {
                    let c = count_of(&cand);
                    if c >= min_count {
                        next.push((cand, c));
                    }
                }
            }
        }
        next.sort();
        level = next;
        size += 1;
    }

    Ok(out
        .into_iter()
        .map(|(ids, count)| FrequentItemset {
            items: ids.iter().map(|&i| vocab[i as usize].clone()).collect(),
            support: count as f64 / n as f64,
            count,
        })
        .collect())
}

/// Smallest count whose support reaches `min_support` (with a little slack
/// for values like 0.3 * 10 that are not exact in binary).
fn min_count(min_support: f64, n: usize) -> usize {
    let raw = min_support * n as f64;
    let c = raw.ceil();
    if c - raw > 1.0 - 1e-9 {
        (c - 1.0) as usize
    } else {
        c as usize
    }
}

/// All rules `A => consequent` with `A ∪ {consequent}` frequent and confidence
/// at least `min_confidence`. Output follows [`rule_rank_cmp`].
pub fn derive_rules(
    itemsets: &[FrequentItemset],
    min_confidence: f64,
    consequent: &str,
    n: usize,
) -> Result<Vec<Rule>> {
    if n == 0 {
        return Err(Error::EmptyDatabase);
    }
    let support: HashMap<&[String], f64> = itemsets
        .iter()
        .map(|s| (s.items.as_slice(), s.support))
        .collect();
    let lookup = |items: &[String]| -> Result<f64> {
        support
            .get(items)
            .copied()
            .ok_or_else(|| Error::MissingSupportEntry(items.join(",")))
    };

    let mut rules = Vec::new();
    for set in itemsets {
        if set.items.len() < 2 || !set.items.iter().any(|i| i == consequent) {
            continue;
        }
        let antecedent: Vec<String> = set
            .items
            .iter()
            .filter(|i| *i != consequent)
            .cloned()
            .collect();
        let s_a = lookup(&antecedent)?;
        let s_c = lookup(&[consequent.to_string()])?;
        let confidence = set.support / s_a;
        if confidence + 1e-12 >= min_confidence {
            rules.push(Rule {
                antecedent,
                consequent: consequent.to_string(),
                support: set.support,
                confidence,
                lift: confidence / s_c,
            });
        }
    }
    rules.sort_by(rule_rank_cmp);
    Ok(rules)
}

/// Transactions from a one-hot matrix: every column with value 1 becomes an
/// item. With binary labels the class item is appended.
pub fn transactions_from_matrix(x: &FeatureMatrix, labels: Option<&LabelVector>) -> Vec<Transaction> {
    (0..x.nrows())
        .map(|i| {
            let mut items: BTreeSet<String> = (0..x.ncols())
                .filter(|&j| x.values()[(i, j)] > 0.5)
                .map(|j| x.column_names()[j].clone())
                .collect();
            if let Some(y) = labels.filter(|y| y.task() == Task::Binary) {
                let tag = if y.values()[i] > 0.0 {
                    ClassTag::Positive
                } else {
                    ClassTag::Negative
                };
                items.insert(tag.item().to_string());
            }
            Transaction { items }
        })
        .collect()
}

/// Mine positive- and negative-class rules from a one-hot dataset.
pub fn mine_class_rules(
    x: &FeatureMatrix,
    labels: &LabelVector,
    cfg: &MiningConfig,
) -> Result<(Vec<Rule>, Vec<Rule>)> {
    let tx = transactions_from_matrix(x, Some(labels));
    let sets = mine_frequent_itemsets(&tx, cfg.min_support, Some(cfg.max_antecedent_len + 1))?;
    let pos = derive_rules(&sets, cfg.min_confidence, CLASS_POSITIVE, tx.len())?;
    let neg = derive_rules(&sets, cfg.min_confidence, CLASS_NEGATIVE, tx.len())?;
    Ok((pos, neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleSetTag {
    Positive,
    Negative,
    Mixed,
}

impl From<ClassTag> for RuleSetTag {
    fn from(t: ClassTag) -> Self {
        match t {
            ClassTag::Positive => RuleSetTag::Positive,
            ClassTag::Negative => RuleSetTag::Negative,
        }
    }
}

/// Binary sample-by-rule activation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleMatrix {
    pub values: DMatrix<f64>,
    pub rules: Vec<Rule>,
    pub class_tag: RuleSetTag,
}

impl RuleMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.rules.len()
    }

    /// Activations multiplied column-wise by each rule's score.
    pub fn scaled(&self) -> DMatrix<f64> {
        let mut m = self.values.clone();
        for (j, r) in self.rules.iter().enumerate() {
            let s = r.score();
            m.column_mut(j).iter_mut().for_each(|v| *v *= s);
        }
        m
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let values = DMatrix::from_fn(self.nrows(), cols.len(), |i, j| self.values[(i, cols[j])]);
        Self {
            values,
            rules: cols.iter().map(|&j| self.rules[j].clone()).collect(),
            class_tag: self.class_tag,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let values = DMatrix::from_fn(rows.len(), self.width(), |i, j| self.values[(rows[i], j)]);
        Self {
            values,
            rules: self.rules.clone(),
            class_tag: self.class_tag,
        }
    }

    /// Side-by-side concatenation, e.g. positive and negative rule matrices.
    pub fn concat(&self, other: &RuleMatrix) -> Result<Self> {
        if self.nrows() != other.nrows() {
            return Err(Error::DimensionMismatch {
                context: "rule matrix rows".into(),
                expected: self.nrows(),
                found: other.nrows(),
            });
        }
        let w = self.width();
        let values = DMatrix::from_fn(self.nrows(), w + other.width(), |i, j| {
            if j < w {
                self.values[(i, j)]
            } else {
                other.values[(i, j - w)]
            }
        });
        let class_tag = if self.class_tag == other.class_tag {
            self.class_tag
        } else {
            RuleSetTag::Mixed
        };
        Ok(Self {
            values,
            rules: self.rules.iter().chain(&other.rules).cloned().collect(),
            class_tag,
        })
    }
}

/// Entry (i, j) is 1 iff sample i has every antecedent item of rule j.
pub fn build_rule_matrix(x: &FeatureMatrix, rules: &[Rule], class_tag: RuleSetTag) -> Result<RuleMatrix> {
    let mut cols = Vec::with_capacity(rules.len());
    for r in rules {
        let idx = r
            .antecedent
            .iter()
            .map(|item| x.column_index(item).ok_or_else(|| Error::UnknownItem(item.clone())))
            .collect::<Result<Vec<_>>>()?;
        cols.push(idx);
    }
    let values = DMatrix::from_fn(x.nrows(), rules.len(), |i, j| {
        let hit = cols[j].iter().all(|&c| x.values()[(i, c)] > 0.5);
        if hit {
            1.0
        } else {
            0.0
        }
    });
    Ok(RuleMatrix {
        values,
        rules: rules.to_vec(),
        class_tag,
    })
}

/// Writes rules as tab-separated lines:
/// `antecedent<TAB>consequent<TAB>support<TAB>confidence<TAB>lift`, with the
/// antecedent items joined by commas.
pub fn write_rules_text<W: Write>(mut out: W, rules: &[Rule]) -> Result<()> {
    writeln!(out, "# antecedent\tconsequent\tsupport\tconfidence\tlift")?;
    for r in rules {
        if let Some(bad) = r
            .antecedent
            .iter()
            .chain(std::iter::once(&r.consequent))
            .find(|s| s.contains(['\t', ',', '\n']) || s.is_empty())
        {
            return Err(Error::InvalidData(format!(
                "item `{bad}` cannot be written in the rule text format"
            )));
        }
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.antecedent.join(","),
            r.consequent,
            r.support,
            r.confidence,
            r.lift
        )?;
    }
    Ok(())
}

pub fn rules_to_string(rules: &[Rule]) -> Result<String> {
    let mut buf = Vec::new();
    write_rules_text(&mut buf, rules)?;
    Ok(String::from_utf8(buf).expect("rule text is UTF-8"))
}

pub fn read_rules_text<R: BufRead>(input: R) -> Result<Vec<Rule>> {
    let mut rules = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        let bad = |reason: String| Error::RuleFormat {
            line: lineno + 1,
            reason,
        };
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, got {}", fields.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("{what} `{s}` is not a number")))
        };
        let mut antecedent: Vec<String> = fields[0].split(',').map(str::to_string).collect();
        antecedent.sort();
        if antecedent.iter().any(String::is_empty) {
            return Err(bad("empty antecedent item".into()));
        }
        rules.push(Rule {
            antecedent,
            consequent: fields[1].to_string(),
            support: num(fields[2], "support")?,
            confidence: num(fields[3], "confidence")?,
            lift: num(fields[4], "lift")?,
        });
    }
    Ok(rules)
}

/// Short human-readable summary, one rule per line.
pub fn describe_rules(rules: &[Rule]) -> String {
    let mut s = String::new();
    for r in rules {
        let _ = writeln!(
            s,
            "{{{}}} => {}  supp={:.3} conf={:.3} lift={:.3}",
            r.antecedent.join(", "),
            r.consequent,
            r.support,
            r.confidence,
            r.lift
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(items: &[&str]) -> Transaction {
        Transaction::new(items.iter().copied())
    }

    fn toy() -> Vec<Transaction> {
        vec![tx(&["A", "B"]), tx(&["A", "B"]), tx(&["A", "C"]), tx(&["B"])]
    }

    fn as_map(sets: &[FrequentItemset]) -> HashMap<String, f64> {
        sets.iter().map(|s| (s.items.join(""), s.support)).collect()
    }

    #[test]
    fn toy_database_frequent_sets() {
        let sets = mine_frequent_itemsets(&toy(), 0.5, None).unwrap();
        let m = as_map(&sets);
        assert_eq!(m.len(), 3);
        assert_eq!(m["A"], 0.75);
        assert_eq!(m["B"], 0.75);
        assert_eq!(m["AB"], 0.5);
    }

    #[test]
    fn threshold_near_one_without_universal_item() {
        let sets = mine_frequent_itemsets(&toy(), 1.0 - 1e-9, None).unwrap();
        assert!(sets.is_empty());
    }

    #[test]
    fn singleton_database() {
        let sets = mine_frequent_itemsets(&[tx(&["A"])], 1.0, None).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].items, vec!["A".to_string()]);
        assert_eq!(sets[0].support, 1.0);
    }

    #[test]
    fn empty_database_is_an_error() {
        assert!(matches!(mine_frequent_itemsets(&[], 0.5, None), Err(Error::EmptyDatabase)));
    }

    #[test]
    fn max_len_bounds_the_lattice() {
        let t = vec![tx(&["A", "B", "C"]); 3];
        let sets = mine_frequent_itemsets(&t, 0.5, Some(2)).unwrap();
        assert!(sets.iter().all(|s| s.items.len() <= 2));
        assert_eq!(sets.len(), 6);
    }

    #[test]
    fn independence_gives_unit_lift() {
        let sets = vec![
            FrequentItemset { items: vec!["A".into()], support: 0.6, count: 6 },
            FrequentItemset { items: vec![CLASS_POSITIVE.into()], support: 0.5, count: 5 },
            FrequentItemset {
                items: vec!["A".into(), CLASS_POSITIVE.into()],
                support: 0.3,
                count: 3,
            },
        ];
        let rules = derive_rules(&sets, 0.1, CLASS_POSITIVE, 10).unwrap();
        assert_eq!(rules.len(), 1);
        assert!((rules[0].confidence - 0.5).abs() < 1e-12);
        assert!((rules[0].lift - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_denominator_is_reported() {
        let sets = vec![FrequentItemset {
            items: vec!["A".into(), "Z".into()],
            support: 0.3,
            count: 3,
        }];
        assert!(matches!(
            derive_rules(&sets, 0.1, "Z", 10),
            Err(Error::MissingSupportEntry(_))
        ));
    }

    #[test]
    fn full_confidence_keeps_exact_implications_only() {
        let t = vec![
            tx(&["A", "B", "+"]),
            tx(&["A", "+"]),
            tx(&["B"]),
            tx(&["B", "+"]),
        ];
        let sets = mine_frequent_itemsets(&t, 0.25, None).unwrap();
        let rules = derive_rules(&sets, 1.0, "+", t.len()).unwrap();
        let ants: Vec<String> = rules.iter().map(|r| r.antecedent.join("")).collect();
        assert!(ants.contains(&"A".to_string()));
        assert!(ants.contains(&"AB".to_string()));
        assert!(!ants.contains(&"B".to_string()));
    }

    #[test]
    fn rule_matrix_subset_test() {
        let x = FeatureMatrix::from_rows(
            &[vec![1.0, 1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]],
            vec!["A".into(), "B".into(), "C".into(), "D".into()],
            vec![crate::data::ColumnKind::Binary; 4],
        )
        .unwrap();
        let mk = |a: &[&str]| Rule {
            antecedent: a.iter().map(|s| s.to_string()).collect(),
            consequent: CLASS_POSITIVE.into(),
            support: 0.5,
            confidence: 0.8,
            lift: 1.2,
        };
        let rm = build_rule_matrix(&x, &[mk(&["A", "B"]), mk(&["D"])], RuleSetTag::Positive).unwrap();
        assert_eq!(rm.values[(0, 0)], 1.0);
        assert_eq!(rm.values[(1, 0)], 0.0);
        assert_eq!(rm.values[(0, 1)], 0.0);
        let err = build_rule_matrix(&x, &[mk(&["E"])], RuleSetTag::Positive);
        assert!(matches!(err, Err(Error::UnknownItem(i)) if i == "E"));
    }

    #[test]
    fn negative_rule_score_is_inverse_confidence() {
        let r = Rule {
            antecedent: vec!["A".into()],
            consequent: CLASS_NEGATIVE.into(),
            support: 0.2,
            confidence: 0.8,
            lift: 1.0,
        };
        assert!((r.score() - 1.25).abs() < 1e-12);
        assert!(r.score().is_finite());
    }

    #[test]
    fn text_format_round_trip() {
        let rules = vec![Rule {
            antecedent: vec!["age=q1".into(), "sex=f".into()],
            consequent: CLASS_POSITIVE.into(),
            support: 0.125,
            confidence: 2.0 / 3.0,
            lift: 1.3333333333333333,
        }];
        let text = rules_to_string(&rules).unwrap();
        assert!(text.lines().nth(1).unwrap().split('\t').count() == 5);
        let back = read_rules_text(text.as_bytes()).unwrap();
        assert_eq!(back, rules);
    }

    #[test]
    fn malformed_rule_line() {
        let err = read_rules_text("A\t+\t0.1\n".as_bytes());
        assert!(matches!(err, Err(Error::RuleFormat { line: 1, .. })));
    }
}
