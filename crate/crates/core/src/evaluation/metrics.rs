use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{SampleWeights, SplitSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaErrors {
    pub beta_s_err: f64,
    pub beta_v_err: f64,
    pub beta_err: f64,
}

impl BetaErrors {
    pub fn from_parts(beta_s_err: f64, beta_v_err: f64) -> Self {
        Self {
            beta_s_err,
            beta_v_err,
            beta_err: (beta_s_err + beta_v_err) / 2.0,
        }
    }
}

fn mean_abs_err(est: &[f64], truth: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter().map(|&j| (est[j] - truth[j]).abs()).sum::<f64>() / idx.len() as f64
}

/// Mean absolute coefficient error over the stable and unstable index sets,
/// and their average. An empty index set contributes 0.
pub fn beta_errors(est: &[f64], beta_true: &[f64], split: &SplitSpec) -> Result<BetaErrors> {
    if est.len() != beta_true.len() || est.len() != split.total() {
        return Err(Error::DimensionMismatch {
            context: "coefficient vectors".into(),
            expected: beta_true.len(),
            found: est.len(),
        });
    }
    Ok(BetaErrors::from_parts(
        mean_abs_err(est, beta_true, &split.stable_idx),
        mean_abs_err(est, beta_true, &split.unstable_idx),
    ))
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "metric inputs".into(),
            expected: b.len(),
            found: a.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(pred, y)?;
    let sse: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

/// Confusion-matrix metrics with +1 as the positive class.
pub fn classification_metrics(pred: &[f64], y: &[f64]) -> Result<ClassificationMetrics> {
    check_pair(pred, y)?;
    let (mut tp, mut fp, mut fneg, mut correct) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(y) {
        let (pp, tp_) = (p > 0.0, t > 0.0);
        if pp == tp_ {
            correct += 1.0;
        }
        match (pp, tp_) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            _ => {}
        }
    }
    let (precision, pu) = ratio(tp, tp + fp);
    let (recall, ru) = ratio(tp, tp + fneg);
    let (f1, fu) = ratio(2.0 * precision * recall, precision + recall);
    Ok(ClassificationMetrics {
        accuracy: correct / y.len() as f64,
        precision,
        recall,
        f1,
        precision_undefined: pu,
        recall_undefined: ru,
        f1_undefined: fu || pu || ru,
    })
}

/// Pearson correlation of `a` and `b` under the probability weights
/// `w / sum(w)`. Returns `None` if either side has zero weighted variance.
pub fn weighted_pearson(a: &[f64], b: &[f64], w: &[f64]) -> Option<f64> {
    let s: f64 = w.iter().sum();
    if !(s > 0.0) {
        return None;
    }
    let ma = a.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() / s;
    let mb = b.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() / s;
    let (mut cab, mut caa, mut cbb) = (0.0, 0.0, 0.0);
    for ((x, y), wi) in a.iter().zip(b).zip(w) {
        let (dx, dy) = (x - ma, y - mb);
        cab += wi * dx * dy;
        caa += wi * dx * dx;
        cbb += wi * dy * dy;
    }
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tiny = 1e-24 * scale * scale * s;
    if caa <= tiny || cbb <= tiny {
        return None;
    }
    Some((cab / (caa * cbb).sqrt()).clamp(-1.0, 1.0))
}

/// Correlations of one ordered column pair `(i, j)`: column `i` against
/// column `j` and its square, cube and exponential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub i: usize,
    pub j: usize,
    pub linear: f64,
    pub square: f64,
    pub cubic: f64,
    pub exp: f64,
    /// Set when some entry was undefined (constant under the weights) and reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Panel {
    Linear,
    Square,
    Cubic,
    Exp,
}

impl Panel {
    pub const ALL: [Panel; 4] = [Panel::Linear, Panel::Square, Panel::Cubic, Panel::Exp];

    pub fn name(self) -> &'static str {
        match self {
            Panel::Linear => "linear",
            Panel::Square => "square",
            Panel::Cubic => "cubic",
            Panel::Exp => "exp",
        }
    }
}

impl PairCorrelation {
    pub fn get(&self, panel: Panel) -> f64 {
        match panel {
            Panel::Linear => self.linear,
            Panel::Square => self.square,
            Panel::Cubic => self.cubic,
            Panel::Exp => self.exp,
        }
    }
}

/// Mean absolute correlation per panel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelMeans {
    pub linear: f64,
    pub square: f64,
    pub cubic: f64,
    pub exp: f64,
}

impl PanelMeans {
    pub fn get(&self, panel: Panel) -> f64 {
        match panel {
            Panel::Linear => self.linear,
            Panel::Square => self.square,
            Panel::Cubic => self.cubic,
            Panel::Exp => self.exp,
        }
    }

    pub fn average(items: &[PanelMeans]) -> PanelMeans {
        let k = items.len().max(1) as f64;
        PanelMeans {
            linear: items.iter().map(|m| m.linear).sum::<f64>() / k,
            square: items.iter().map(|m| m.square).sum::<f64>() / k,
            cubic: items.iter().map(|m| m.cubic).sum::<f64>() / k,
            exp: items.iter().map(|m| m.exp).sum::<f64>() / k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub pairs: Vec<PairCorrelation>,
}

impl CorrelationProfile {
    pub fn mean_abs(&self) -> PanelMeans {
        let k = self.pairs.len().max(1) as f64;
        let m = |panel: Panel| self.pairs.iter().map(|p| p.get(panel).abs()).sum::<f64>() / k;
        PanelMeans {
            linear: m(Panel::Linear),
            square: m(Panel::Square),
            cubic: m(Panel::Cubic),
            exp: m(Panel::Exp),
        }
    }
}

/// Weighted Pearson correlations between every column and the identity,
/// square, cube and exponential of every other column, measured under the
/// sample weights. Uniform weights give ordinary Pearson correlations.
pub fn correlation_profile(v: &DMatrix<f64>, w: &SampleWeights) -> Result<CorrelationProfile> {
    let (n, p) = v.shape();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            context: "profile weights".into(),
            expected: n,
            found: w.len(),
        });
    }
    let w = w.scaled_to_mean_one();
    let ws = w.as_slice();
    let cols: Vec<&[f64]> = v.as_slice().chunks(n).collect();
    let transforms: Vec<[Vec<f64>; 3]> = cols
        .iter()
        .map(|c| {
            [
                c.iter().map(|x| x * x).collect(),
                c.iter().map(|x| x * x * x).collect(),
                c.iter().map(|x| x.exp()).collect(),
            ]
        })
        .collect();
    let mut pairs = Vec::with_capacity(p * p.saturating_sub(1));
    for i in 0..p {
        for j in (0..p).filter(|&j| j != i) {
            let mut degenerate = false;
            let mut c = |b: &[f64]| {
                weighted_pearson(cols[i], b, ws).unwrap_or_else(|| {
                    degenerate = true;
                    0.0
                })
            };
            let linear = c(cols[j]);
            let square = c(&transforms[j][0]);
            let cubic = c(&transforms[j][1]);
            let exp = c(&transforms[j][2]);
            pairs.push(PairCorrelation {
                i,
                j,
                linear,
                square,
                cubic,
                exp,
                degenerate,
            });
        }
    }
    Ok(CorrelationProfile { pairs })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. A vector with no
/// rank variation gives 0.
pub fn spearman_consistency(model_scores: &[f64], expert_scores: &[f64]) -> Result<f64> {
    if model_scores.len() != expert_scores.len() {
        return Err(Error::DimensionMismatch {
            context: "score vectors".into(),
            expected: expert_scores.len(),
            found: model_scores.len(),
        });
    }
    if model_scores.len() < 2 {
        return Err(Error::TooFewItems(model_scores.len()));
    }
    let ra = average_ranks(model_scores);
    let rb = average_ranks(expert_scores);
    Ok(weighted_pearson(&ra, &rb, &vec![1.0; ra.len()]).unwrap_or(0.0))
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_error_arithmetic() {
        let split = SplitSpec::leading(2, 2);
        let e = beta_errors(&[0.0, 0.0, 0.5, -0.5], &[1.0, 1.0, 0.5, -0.5], &split).unwrap();
        assert_eq!(e, BetaErrors { beta_s_err: 1.0, beta_v_err: 0.0, beta_err: 0.5 });
        let z = beta_errors(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], &split).unwrap();
        assert_eq!(z.beta_err, 0.0);
        assert!(beta_errors(&[1.0], &[1.0, 2.0], &split).is_err());
    }

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, -4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn confusion_counts() {
        let pred = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0];
        let y = [1.0, 1.0, -1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0];
        let m = classification_metrics(&pred, &y).unwrap();
        assert!((m.accuracy - 0.8).abs() < 1e-15);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        let perfect = classification_metrics(&y, &y).unwrap();
        assert_eq!((perfect.accuracy, perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0, 1.0));
        let none = classification_metrics(&[-1.0, -1.0], &[-1.0, -1.0]).unwrap();
        assert!(none.precision_undefined && none.recall_undefined && none.f1 == 0.0);
    }

    #[test]
    fn profile_basics() {
        let x = vec![-1.0, 1.0, -1.0, 1.0, -2.0, 2.0];
        let v = DMatrix::from_fn(6, 2, |i, _| x[i]);
        let prof = correlation_profile(&v, &SampleWeights::uniform(6)).unwrap();
        let p = prof.pairs[0];
        assert!((p.linear - 1.0).abs() < 1e-12);
        assert!(p.square.abs() < 1e-12);
        assert!(matches!(
            correlation_profile(&DMatrix::zeros(2, 2), &SampleWeights::uniform(2)),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman_consistency(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_consistency(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman_consistency(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(spearman_consistency(&[1.0], &[1.0]), Err(Error::TooFewItems(1))));
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
