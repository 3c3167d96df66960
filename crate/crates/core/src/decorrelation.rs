//! Sample weights that remove polynomial dependence between features.
//!
//! For every ordered pair of columns (source, target) the target is regressed
//! on a degree-k polynomial of the source under the sample weights. When the
//! two columns are independent under the weighted measure every non-constant
//! coefficient vanishes, so the sum of squared non-constant coefficients over
//! all pairs is the balance penalty minimised by [`learn_weights`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, SampleWeights};
use crate::error::{Error, Result};
use crate::optim::{minimize_weights, PgdSettings, WeightFit};

/// Diagonal jitter added to every weighted normal-equation matrix.
pub const RIDGE_JITTER: f64 = 1e-10;
/// Fits whose normal matrix (before jitter) is worse conditioned than this
/// are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Weighted least-squares polynomial `target ~ sum_d coeffs[d] * source^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub coeffs: Vec<f64>,
    pub source: usize,
    pub target: usize,
    pub degree: usize,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Sum of squared coefficients of degree one and above.
    pub fn nonconstant_norm_sq(&self) -> f64 {
        self.coeffs[1..].iter().map(|c| c * c).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecorConfig {
    pub degree: usize,
    /// Multiplier on the balance penalty.
    pub gamma: f64,
    /// Multiplier on `|W|^2`.
    pub lambda_w: f64,
    /// Multiplier on `(sum W - 1)^2`.
    pub lambda_sum: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub tolerance: f64,
}

impl Default for DecorConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            gamma: 600.0,
            lambda_w: 5e-4,
            lambda_sum: 5e-4,
            max_iters: 2000,
            step_size: 1e-2,
            tolerance: 1e-8,
        }
    }
}

impl DecorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(Error::Config("degree must be at least 1".into()));
        }
        if self.gamma < 0.0 || self.lambda_w < 0.0 || self.lambda_sum < 0.0 {
            return Err(Error::Config("gamma and lambda multipliers must be nonnegative".into()));
        }
        if self.max_iters == 0 || self.step_size <= 0.0 {
            return Err(Error::Config("max_iters and step_size must be positive".into()));
        }
        Ok(())
    }

    pub fn pgd(&self) -> PgdSettings {
        PgdSettings {
            max_iters: self.max_iters,
            step_size: self.step_size,
            tolerance: self.tolerance,
            ..PgdSettings::default()
        }
    }
}

/// Cholesky-factored weighted moment matrix of one source column.
struct SourceSystem {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SourceSystem {
    fn new(powers: &[Vec<f64>], w: &[f64]) -> Result<Self> {
        let m = powers.len();
        let mut a = DMatrix::<f64>::zeros(m, m);
        for d in 0..m {
            for e in d..m {
                let v: f64 = powers[d]
                    .iter()
                    .zip(&powers[e])
                    .zip(w)
                    .map(|((x, y), wi)| wi * x * y)
                    .sum();
                a[(d, e)] = v;
                a[(e, d)] = v;
            }
        }
        let eig = a.clone().symmetric_eigenvalues();
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::RankDeficient { condition });
        }
        for d in 0..m {
            a[(d, d)] += RIDGE_JITTER;
        }
        let chol = a.cholesky().ok_or(Error::RankDeficient {
            condition: f64::INFINITY,
        })?;
        Ok(Self { chol })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(rhs);
        self.chol.solve(&b).iter().copied().collect()
    }
}

fn powers_of(x: &[f64], degree: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![1.0; x.len()]];
    for d in 1..=degree {
        let next = out[d - 1].iter().zip(x).map(|(p, v)| p * v).collect();
        out.push(next);
    }
    out
}

fn check_inputs(n_src: usize, n_tgt: usize, n_w: usize, degree: usize) -> Result<()> {
    if n_tgt != n_src || n_w != n_src {
        return Err(Error::DimensionMismatch {
            context: "polynomial fit inputs".into(),
            expected: n_src,
            found: if n_tgt != n_src { n_tgt } else { n_w },
        });
    }
    if degree < 1 {
        return Err(Error::Config("degree must be at least 1".into()));
    }
    if n_src < degree + 1 {
        return Err(Error::TooFewSamples {
            needed: degree + 1,
            got: n_src,
        });
    }
    Ok(())
}

/// Weighted polynomial regression of `x_tgt` on `x_src` via the normal
/// equations with a small diagonal jitter.
pub fn weighted_poly_fit(x_src: &[f64], x_tgt: &[f64], w: &SampleWeights, degree: usize) -> Result<PolyFit> {
    check_inputs(x_src.len(), x_tgt.len(), w.len(), degree)?;
    let powers = powers_of(x_src, degree);
    let sys = SourceSystem::new(&powers, w.as_slice())?;
    let rhs = weighted_rhs(&powers, x_tgt, w.as_slice());
    Ok(PolyFit {
        coeffs: sys.solve(&rhs),
        source: 0,
        target: 1,
        degree,
    })
}

fn weighted_rhs(powers: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    powers
        .iter()
        .map(|p| p.iter().zip(y).zip(w).map(|((a, b), wi)| wi * a * b).sum())
        .collect()
}

/// Every ordered-pair fit `column source -> column target`.
pub fn pairwise_fits(x: &DMatrix<f64>, w: &SampleWeights, degree: usize) -> Result<Vec<PolyFit>> {
    let (n, p) = x.shape();
    check_inputs(n, n, w.len(), degree)?;
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).iter().copied().collect()).collect();
    let mut fits = Vec::with_capacity(p * p.saturating_sub(1));
    for s in 0..p {
        let powers = powers_of(&cols[s], degree);
        let sys = SourceSystem::new(&powers, w.as_slice())?;
        for t in (0..p).filter(|&t| t != s) {
            let rhs = weighted_rhs(&powers, &cols[t], w.as_slice());
            fits.push(PolyFit {
                coeffs: sys.solve(&rhs),
                source: s,
                target: t,
                degree,
            });
        }
    }
    Ok(fits)
}

/// Sum over ordered column pairs of the squared non-constant coefficients of
/// the weighted polynomial fit.
pub fn decor_penalty(x: &FeatureMatrix, w: &SampleWeights, degree: usize) -> Result<f64> {
    Ok(penalty_and_gradient(x.values(), w.as_slice(), degree)?.0)
}

/// [`decor_penalty`] with its analytic gradient with respect to the weights.
///
/// For one pair with design rows `a_i`, normal matrix `M` and coefficients
/// `c`, `dc/dw_i = M^{-1} a_i r_i` where `r_i` is the residual, so the pair
/// contributes `2 r_i a_i^T M^{-1} P c` with `P` zeroing the constant term.
pub fn penalty_and_gradient(x: &DMatrix<f64>, w: &[f64], degree: usize) -> Result<(f64, Vec<f64>)> {
    let (n, p) = x.shape();
    check_inputs(n, n, w.len(), degree)?;
    if p < 2 {
        return Err(Error::InvalidData("decorrelation needs at least 2 columns".into()));
    }
    let m = degree + 1;
    // Column-major storage: each column is a contiguous slice.
    let cols: Vec<&[f64]> = x.as_slice().chunks(n).collect();

    let mut penalty = 0.0;
    let mut grad = vec![0.0; n];
    let mut proj = vec![0.0; m];
    for s in 0..p {
        let powers = powers_of(cols[s], degree);
        let sys = SourceSystem::new(&powers, w)?;
        for t in (0..p).filter(|&t| t != s) {
            let y = cols[t];
            let c = sys.solve(&weighted_rhs(&powers, y, w));
            proj[0] = 0.0;
            proj[1..].copy_from_slice(&c[1..]);
            penalty += proj.iter().map(|v| v * v).sum::<f64>();
            let g = sys.solve(&proj);
            let src = cols[s];
            for i in 0..n {
                let xi = src[i];
                let mut fit = 0.0;
                let mut dir = 0.0;
                for d in (0..m).rev() {
                    fit = fit * xi + c[d];
                    dir = dir * xi + g[d];
                }
                grad[i] += 2.0 * (y[i] - fit) * dir;
            }
        }
    }
    Ok((penalty, grad))
}

/// Learn nonnegative sample weights minimising
/// `gamma * decor_penalty + lambda_w |W|^2 + lambda_sum (sum W - 1)^2`.
///
/// The penalty is computed on `x` as given; standardize continuous columns
/// first so the polynomial moments are well conditioned. Hitting the
/// iteration cap is not an error: the last (best) iterate is returned with
/// `converged == false`.
pub fn learn_weights(x: &FeatureMatrix, cfg: &DecorConfig) -> Result<WeightFit> {
    cfg.validate()?;
    let (n, p) = (x.nrows(), x.ncols());
    if p < 2 {
        return Err(Error::InvalidData("decorrelation needs at least 2 columns".into()));
    }
    if n <= cfg.degree + 1 {
        return Err(Error::TooFewSamples {
            needed: cfg.degree + 2,
            got: n,
        });
    }
    let values = x.values();
    minimize_weights(n, cfg.gamma, cfg.lambda_w, cfg.lambda_sum, &cfg.pgd(), |w| {
        penalty_and_gradient(values, w, cfg.degree)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(cols: &[Vec<f64>]) -> FeatureMatrix {
        let n = cols[0].len();
        FeatureMatrix::continuous(DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])).unwrap()
    }

    #[test]
    fn exact_linear_data_recovered() {
        let w = SampleWeights::uniform(4);
        let fit = weighted_poly_fit(&[0.0, 1.0, 2.0, 3.0], &[0.0, 2.0, 4.0, 6.0], &w, 2).unwrap();
        for (c, e) in fit.coeffs.iter().zip([0.0, 2.0, 0.0]) {
            assert!((c - e).abs() < 1e-8, "{:?}", fit.coeffs);
        }
    }

    #[test]
    fn constant_target() {
        let x = [0.3, -1.2, 2.5, 0.7, 1.1, -0.4];
        let w = SampleWeights::uniform(6);
        let fit = weighted_poly_fit(&x, &[5.0; 6], &w, 3).unwrap();
        for (c, e) in fit.coeffs.iter().zip([5.0, 0.0, 0.0, 0.0]) {
            assert!((c - e).abs() < 1e-7, "{:?}", fit.coeffs);
        }
    }

    #[test]
    fn too_few_points() {
        let w = SampleWeights::uniform(2);
        assert!(matches!(
            weighted_poly_fit(&[0.0, 1.0], &[0.0, 1.0], &w, 2),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn degenerate_source_is_rank_deficient() {
        let w = SampleWeights::uniform(5);
        assert!(matches!(
            weighted_poly_fit(&[1.0; 5], &[0.0, 1.0, 2.0, 3.0, 4.0], &w, 2),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn doubled_column_penalty() {
        let a: Vec<f64> = vec![-1.5, -0.5, 0.0, 0.5, 1.0, 2.0];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let w = SampleWeights::uniform(6);
        let pen = decor_penalty(&fm(&[a, b]), &w, 2).unwrap();
        assert!((pen - 4.25).abs() < 1e-7, "{pen}");
    }

    #[test]
    fn constant_target_direction_contributes_nothing() {
        let a: Vec<f64> = vec![-1.0, 0.0, 1.0, 2.0, 3.0];
        let c = vec![4.0; 5];
        let w = SampleWeights::uniform(5);
        let fits = pairwise_fits(fm(&[a, c]).values(), &w, 2);
        // Constant column cannot act as a source, so only check the fit
        // toward it directly.
        assert!(fits.is_err());
        let fit = weighted_poly_fit(&[-1.0, 0.0, 1.0, 2.0, 3.0], &[4.0; 5], &w, 2).unwrap();
        assert!(fit.nonconstant_norm_sq() < 1e-14);
    }

    #[test]
    fn polyfit_eval_horner() {
        let f = PolyFit {
            coeffs: vec![1.0, -2.0, 0.5],
            source: 0,
            target: 1,
            degree: 2,
        };
        assert!((f.eval(2.0) - (1.0 - 4.0 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_gamma_learns_uniform_closed_form() {
        let x = fm(&[vec![0.1, 0.5, -0.3, 1.2, 0.9], vec![1.0, -0.2, 0.4, 0.3, -1.1]]);
        let cfg = DecorConfig {
            gamma: 0.0,
            lambda_w: 0.01,
            lambda_sum: 0.02,
            ..DecorConfig::default()
        };
        let fit = learn_weights(&x, &cfg).unwrap();
        let expected = 0.02 / (0.01 + 5.0 * 0.02);
        for &w in fit.weights.as_slice() {
            assert!((w - expected).abs() < 1e-6);
        }
    }
}
