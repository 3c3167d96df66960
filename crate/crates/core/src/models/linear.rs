use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LinearModel, ModelKind, TrainingMeta};
use crate::data::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};

/// Normal-equation systems with a worse condition number are treated as singular.
const MAX_CONDITION: f64 = 1e12;
const LASSO_TOLERANCE: f64 = 1e-7;
const LASSO_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum LinearMethod {
    Ols,
    /// Minimises `|y - X beta - b|^2 + lambda |beta|^2`.
    Ridge { lambda: f64 },
    /// Minimises `0.5 |y - X beta - b|^2 + lambda |beta|_1`.
    Lasso { lambda: f64 },
}

impl LinearMethod {
    fn kind(self) -> ModelKind {
        match self {
            LinearMethod::Ols => ModelKind::Ols,
            LinearMethod::Ridge { .. } => ModelKind::Ridge,
            LinearMethod::Lasso { .. } => ModelKind::Lasso,
        }
    }
}

/// Weighted means of the columns of `x` and of `y`.
fn weighted_centers(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> (Vec<f64>, f64) {
    let s: f64 = w.iter().sum();
    let xm = (0..x.ncols())
        .map(|j| x.column(j).iter().zip(w).map(|(a, wi)| a * wi).sum::<f64>() / s)
        .collect();
    let ym = y.iter().zip(w).map(|(a, wi)| a * wi).sum::<f64>() / s;
    (xm, ym)
}

/// Minimise `sum_i w_i (y_i - x_i . beta - b)^2 + ridge |beta|^2` with an
/// unpenalised intercept. Returns `(beta, b)`.
pub fn fit_weighted_least_squares(x: &DMatrix<f64>, y: &[f64], w: &[f64], ridge: f64) -> Result<(Vec<f64>, f64)> {
    let (n, p) = x.shape();
    if y.len() != n || w.len() != n {
        return Err(Error::DimensionMismatch {
            context: "least squares inputs".into(),
            expected: n,
            found: if y.len() != n { y.len() } else { w.len() },
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let s: f64 = w.iter().sum();
    if !(s > 0.0) {
        return Err(Error::InvalidData("least squares weights sum to zero".into()));
    }
    let (xm, ym) = weighted_centers(x, y, w);
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        for j in 0..p {
            row[j] = x[(i, j)] - xm[j];
        }
        let yc = y[i] - ym;
        for j in 0..p {
            let wj = w[i] * row[j];
            rhs[j] += wj * yc;
            for k in j..p {
                a[(j, k)] += wj * row[k];
            }
        }
    }
    for j in 0..p {
        a[(j, j)] += ridge;
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
    }
    let eig = a.clone().symmetric_eigenvalues();
    let hi = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lo = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::Singular(format!(
            "normal equations (condition number {:.3e})",
            if lo > 0.0 { hi / lo } else { f64::INFINITY }
        )));
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular("normal equations".into()))?;
    let beta = chol.solve(&rhs);
    let b = ym - beta.iter().zip(&xm).map(|(c, m)| c * m).sum::<f64>();
    Ok((beta.iter().copied().collect(), b))
}

fn lasso(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> (Vec<f64>, f64, TrainingMeta) {
    let (n, p) = x.shape();
    let w = vec![1.0; n];
    let (xm, ym) = weighted_centers(x, y, &w);
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - xm[j]);
    let norms: Vec<f64> = (0..p).map(|j| xc.column(j).norm_squared()).collect();
    let mut resid: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let mut beta = vec![0.0; p];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let col = xc.column(j);
            let rho: f64 = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() + norms[j] * beta[j];
            let next = soft_threshold(rho, lambda) / norms[j];
            let delta = next - beta[j];
            if delta != 0.0 {
                for (r, a) in resid.iter_mut().zip(col.iter()) {
                    *r -= delta * a;
                }
                beta[j] = next;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < LASSO_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("lasso coordinate descent hit {LASSO_MAX_SWEEPS} sweeps");
    }
    let objective = 0.5 * resid.iter().map(|r| r * r).sum::<f64>() + lambda * beta.iter().map(|v| v.abs()).sum::<f64>();
    let b = ym - beta.iter().zip(&xm).map(|(c, m)| c * m).sum::<f64>();
    let meta = TrainingMeta {
        n_train: n,
        iterations: sweeps,
        converged,
        objective: Some(objective),
        objective_trace: Vec::new(),
    };
    (beta, b, meta)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// OLS and ridge through centred normal equations, lasso through cyclic
/// coordinate descent.
pub fn fit_linear_baseline(x: &FeatureMatrix, y: &LabelVector, method: LinearMethod) -> Result<LinearModel> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "labels".into(),
            expected: n,
            found: y.len(),
        });
    }
    let (beta, b, meta) = match method {
        LinearMethod::Ols | LinearMethod::Ridge { .. } => {
            let lambda = match method {
                LinearMethod::Ridge { lambda } => lambda,
                _ => 0.0,
            };
            if lambda < 0.0 {
                return Err(Error::Config("ridge lambda must be nonnegative".into()));
            }
            let (beta, b) = fit_weighted_least_squares(x.values(), y.values(), &vec![1.0; n], lambda)?;
            let meta = TrainingMeta {
                n_train: n,
                converged: true,
                ..TrainingMeta::default()
            };
            (beta, b, meta)
        }
        LinearMethod::Lasso { lambda } => {
            if lambda < 0.0 {
                return Err(Error::Config("lasso lambda must be nonnegative".into()));
            }
            lasso(x.values(), y.values(), lambda)
        }
    };
    Ok(LinearModel {
        kind: method.kind(),
        beta,
        b,
        config: serde_json::to_value(method)?,
        training_meta: meta,
    })
}
