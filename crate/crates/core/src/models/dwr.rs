//! Decorrelated weighting regression: sample weights that remove pairwise
//! weighted covariances, followed by weighted least squares.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::linear::fit_weighted_least_squares;
use super::{LinearModel, ModelKind, TrainingMeta};
use crate::data::{standardize, FeatureMatrix, LabelVector, SampleWeights};
use crate::error::{Error, Result};
use crate::optim::{minimize_weights, PgdSettings, WeightFit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwrConfig {
    /// Multiplier on the covariance penalty.
    pub lambda2: f64,
    pub lambda_w: f64,
    pub lambda_sum: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub tolerance: f64,
}

impl Default for DwrConfig {
    fn default() -> Self {
        Self {
            lambda2: 600.0,
            lambda_w: 5e-4,
            lambda_sum: 5e-4,
            max_iters: 2000,
            step_size: 1e-2,
            tolerance: 1e-8,
        }
    }
}

impl DwrConfig {
    fn pgd(&self) -> PgdSettings {
        PgdSettings {
            max_iters: self.max_iters,
            step_size: self.step_size,
            tolerance: self.tolerance,
            ..PgdSettings::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct DwrFit {
    pub model: LinearModel,
    pub weights: SampleWeights,
    pub weight_fit: WeightFit,
}

/// `sum_{j != l} cov_w(x_j, x_l)^2` under the normalised weights `w / sum(w)`,
/// and its gradient with respect to `w`.
pub fn covariance_penalty_and_gradient(x: &DMatrix<f64>, w: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (n, p) = x.shape();
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            context: "covariance penalty weights".into(),
            expected: n,
            found: w.len(),
        });
    }
    let s: f64 = w.iter().sum();
    if !(s > 0.0) {
        return Err(Error::InvalidData("covariance penalty weights sum to zero".into()));
    }
    let means: Vec<f64> = (0..p)
        .map(|j| x.column(j).iter().zip(w).map(|(a, wi)| a * wi).sum::<f64>() / s)
        .collect();
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let wi = w[i] / s;
        if wi == 0.0 {
            continue;
        }
        for j in 0..p {
            for l in j..p {
                cov[(j, l)] += wi * xc[(i, j)] * xc[(i, l)];
            }
        }
    }
    for j in 0..p {
        cov[(j, j)] = 0.0;
        for l in 0..j {
            cov[(j, l)] = cov[(l, j)];
        }
    }
    let penalty = cov.iter().map(|v| v * v).sum();
    // d cov_jl / d w_i = (xc_ij xc_il - cov_jl) / s.
    let gt: Vec<f64> = (0..n)
        .map(|i| {
            let row = xc.row(i);
            2.0 * (row * &cov).dot(&row)
        })
        .collect();
    let centre: f64 = gt.iter().zip(w).map(|(g, wi)| g * wi / s).sum();
    Ok((penalty, gt.iter().map(|g| (g - centre) / s).collect()))
}

/// Learn covariance-balancing weights on standardized features, then fit
/// weighted least squares on the raw features.
///
/// The weight subproblem does not involve the coefficients, so alternating
/// between the two blocks reaches its fixpoint after a single round.
pub fn fit_dwr(x: &FeatureMatrix, y: &LabelVector, cfg: &DwrConfig) -> Result<DwrFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if p < 2 {
        return Err(Error::InvalidData("DWR needs at least 2 columns".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "labels".into(),
            expected: n,
            found: y.len(),
        });
    }
    if cfg.lambda2 < 0.0 || cfg.lambda_w < 0.0 || cfg.lambda_sum < 0.0 {
        return Err(Error::Config("DWR multipliers must be nonnegative".into()));
    }
    let (z, _) = standardize(x);
    let zv = z.values();
    let weight_fit = minimize_weights(n, cfg.lambda2, cfg.lambda_w, cfg.lambda_sum, &cfg.pgd(), |w| {
        covariance_penalty_and_gradient(zv, w)
    })?;
    let weights = weight_fit.weights.clone();
    let (beta, b) = fit_weighted_least_squares(x.values(), y.values(), weights.as_slice(), 0.0)?;
    let model = LinearModel {
        kind: ModelKind::Dwr,
        beta,
        b,
        config: serde_json::to_value(cfg)?,
        training_meta: TrainingMeta {
            n_train: n,
            iterations: weight_fit.iterations,
            converged: weight_fit.converged,
            objective: Some(weight_fit.objective),
            objective_trace: weight_fit.objective_trace.clone(),
        },
    };
    Ok(DwrFit {
        model,
        weights,
        weight_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_linear_baseline, LinearMethod};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn zero_penalty_is_ols() {
        let x = gaussian(60, 3, 5);
        let y: Vec<f64> = (0..60).map(|i| x[(i, 0)] - 2.0 * x[(i, 2)] + 0.1 * (i % 3) as f64).collect();
        let x = FeatureMatrix::continuous(x).unwrap();
        let y = LabelVector::real(y).unwrap();
        let cfg = DwrConfig { lambda2: 0.0, ..DwrConfig::default() };
        let dwr = fit_dwr(&x, &y, &cfg).unwrap();
        let ols = fit_linear_baseline(&x, &y, LinearMethod::Ols).unwrap();
        for (a, b) in dwr.model.beta.iter().zip(&ols.beta) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((dwr.model.b - ols.b).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = gaussian(30, 3, 9);
        let w: Vec<f64> = (0..30).map(|i| 0.5 + (i % 7) as f64 / 7.0).collect();
        let (_, g) = covariance_penalty_and_gradient(&x, &w).unwrap();
        for i in [0, 11, 29] {
            let h = 1e-6;
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let fd = (covariance_penalty_and_gradient(&x, &wp).unwrap().0 - covariance_penalty_and_gradient(&x, &wm).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-3), "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn penalty_is_scale_invariant() {
        let x = gaussian(20, 2, 1);
        let w: Vec<f64> = (0..20).map(|i| 1.0 + i as f64).collect();
        let w2: Vec<f64> = w.iter().map(|v| v * 3.5).collect();
        let a = covariance_penalty_and_gradient(&x, &w).unwrap().0;
        let b = covariance_penalty_and_gradient(&x, &w2).unwrap().0;
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }
}
