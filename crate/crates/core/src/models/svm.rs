//! Linear weighted SVM and SVR through a sequential minimal optimisation
//! solver on the dual, with per-sample box constraints `0 <= alpha_i <= W_i + C`.

use std::borrow::Cow;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{LinearModel, ModelKind, TrainingMeta};
use crate::data::{FeatureMatrix, LabelVector, SampleWeights, Task};
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
/// Above this many samples kernel columns are computed on demand.
const GRAM_LIMIT: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Uniform part of the per-sample cost `W_i + C`.
    pub c: f64,
    /// Half-width of the SVR insensitive tube.
    pub epsilon: f64,
    /// Cap on solver iterations (two-variable updates).
    pub max_iters: usize,
    /// Stop once the maximal KKT violation falls below this.
    pub tolerance: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            max_iters: 10_000_000,
            tolerance: 1e-5,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0) || !(self.epsilon >= 0.0) || !self.c.is_finite() || !self.epsilon.is_finite() {
            return Err(Error::Config("svm C and epsilon must be finite and nonnegative".into()));
        }
        if !(self.tolerance > 0.0) || self.max_iters == 0 {
            return Err(Error::Config("svm tolerance and max_iters must be positive".into()));
        }
        Ok(())
    }
}

enum Kernel<'a> {
    Gram(DMatrix<f64>),
    OnDemand(&'a DMatrix<f64>),
}

impl Kernel<'_> {
    fn new(x: &DMatrix<f64>) -> Kernel<'_> {
        if x.nrows() <= GRAM_LIMIT {
            Kernel::Gram(x * x.transpose())
        } else {
            Kernel::OnDemand(x)
        }
    }

    fn column(&self, i: usize) -> Cow<'_, [f64]> {
        match self {
            Kernel::Gram(g) => {
                let n = g.nrows();
                Cow::Borrowed(&g.as_slice()[i * n..(i + 1) * n])
            }
            Kernel::OnDemand(x) => {
                let xi = x.row(i);
                Cow::Owned((0..x.nrows()).map(|t| x.row(t).dot(&xi)).collect())
            }
        }
    }

    fn diag(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| x.row(i).norm_squared()).collect()
    }
}

/// `min 0.5 a'Qa + p'a  s.t.  y'a = 0, 0 <= a_t <= cap_t` with
/// `Q_tu = y_t y_u K(sample_t, sample_u)`.
struct Dual<'a> {
    x: &'a DMatrix<f64>,
    sample: Vec<usize>,
    y: Vec<f64>,
    p: Vec<f64>,
    cap: Vec<f64>,
}

struct DualSolution {
    alpha: Vec<f64>,
    rho: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

impl Dual<'_> {
    fn solve(&self, max_iters: usize, tol: f64) -> DualSolution {
        let m = self.y.len();
        let kernel = Kernel::new(self.x);
        let kd = kernel.diag(self.x);
        let mut alpha = vec![0.0; m];
        let mut grad = self.p.clone();
        let objective = |alpha: &[f64], grad: &[f64]| -> f64 {
            0.5 * alpha.iter().zip(grad).zip(&self.p).map(|((a, g), p)| a * (g + p)).sum::<f64>()
        };
        let mut trace = vec![0.0];
        let mut iterations = 0;
        let mut converged = false;
        let up = |t: usize, alpha: &[f64]| {
            if self.y[t] > 0.0 {
                alpha[t] < self.cap[t]
            } else {
                alpha[t] > 0.0
            }
        };
        let low = |t: usize, alpha: &[f64]| {
            if self.y[t] > 0.0 {
                alpha[t] > 0.0
            } else {
                alpha[t] < self.cap[t]
            }
        };

        while iterations < max_iters {
            // First index: maximal violator in the "up" set.
            let mut gmax = f64::NEG_INFINITY;
            let mut i = usize::MAX;
            for t in 0..m {
                if up(t, &alpha) {
                    let v = -self.y[t] * grad[t];
                    if v >= gmax {
                        gmax = v;
                        i = t;
                    }
                }
            }
            if i == usize::MAX {
                converged = true;
                break;
            }
            let si = self.sample[i];
            let ki = kernel.column(si);
            // Second index: largest guaranteed decrease (second-order rule).
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j = usize::MAX;
            let mut best = f64::INFINITY;
            for t in 0..m {
                if !low(t, &alpha) {
                    continue;
                }
                let v = self.y[t] * grad[t];
                gmax2 = gmax2.max(v);
                let diff = gmax + v;
                if diff > 0.0 {
                    let st = self.sample[t];
                    let mut quad = kd[si] + kd[st] - 2.0 * ki[st];
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let dec = -diff * diff / quad;
                    if dec <= best {
                        best = dec;
                        j = t;
                    }
                }
            }
            if gmax + gmax2 < tol || j == usize::MAX {
                converged = true;
                break;
            }
            iterations += 1;

            let sj = self.sample[j];
            let kj = kernel.column(sj);
            let (yi, yj) = (self.y[i], self.y[j]);
            let (ci, cj) = (self.cap[i], self.cap[j]);
            let (old_i, old_j) = (alpha[i], alpha[j]);
            let (mut ai, mut aj) = (old_i, old_j);
            let qij = yi * yj * ki[sj];
            if yi != yj {
                let mut quad = kd[si] + kd[sj] + 2.0 * qij;
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = ai - aj;
                ai += delta;
                aj += delta;
                if diff > 0.0 {
                    if aj < 0.0 {
                        aj = 0.0;
                        ai = diff;
                    }
                } else if ai < 0.0 {
                    ai = 0.0;
                    aj = -diff;
                }
                if diff > ci - cj {
                    if ai > ci {
                        ai = ci;
                        aj = ci - diff;
                    }
                } else if aj > cj {
                    aj = cj;
                    ai = cj + diff;
                }
            } else {
                let mut quad = kd[si] + kd[sj] - 2.0 * qij;
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (grad[i] - grad[j]) / quad;
                let sum = ai + aj;
                ai -= delta;
                aj += delta;
                if sum > ci {
                    if ai > ci {
                        ai = ci;
                        aj = sum - ci;
                    }
                } else if aj < 0.0 {
                    aj = 0.0;
                    ai = sum;
                }
                if sum > cj {
                    if aj > cj {
                        aj = cj;
                        ai = sum - cj;
                    }
                } else if ai < 0.0 {
                    ai = 0.0;
                    aj = sum;
                }
            }
            alpha[i] = ai;
            alpha[j] = aj;
            let (di, dj) = ((ai - old_i) * yi, (aj - old_j) * yj);
            for t in 0..m {
                let st = self.sample[t];
                grad[t] += self.y[t] * (ki[st] * di + kj[st] * dj);
            }
            if iterations % m == 0 {
                trace.push(objective(&alpha, &grad));
            }
        }
        let last = objective(&alpha, &grad);
        if trace.last() != Some(&last) {
            trace.push(last);
        }
        DualSolution {
            rho: self.rho(&alpha, &grad),
            alpha,
            iterations,
            converged,
            trace,
        }
    }

    fn rho(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum) = (0usize, 0.0);
        for t in 0..alpha.len() {
            if self.cap[t] <= 0.0 {
                continue;
            }
            let yg = self.y[t] * grad[t];
            if alpha[t] >= self.cap[t] {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        if free > 0 {
            sum / free as f64
        } else if ub.is_finite() && lb.is_finite() {
            0.5 * (ub + lb)
        } else if ub.is_finite() {
            ub
        } else if lb.is_finite() {
            lb
        } else {
            0.0
        }
    }

    fn beta(&self, alpha: &[f64]) -> Vec<f64> {
        let p = self.x.ncols();
        let mut beta = vec![0.0; p];
        for (t, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                let row = self.x.row(self.sample[t]);
                for j in 0..p {
                    beta[j] += self.y[t] * a * row[j];
                }
            }
        }
        beta
    }
}

fn costs(n: usize, w: &SampleWeights, c: f64) -> Result<Vec<f64>> {
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            context: "sample weights".into(),
            expected: n,
            found: w.len(),
        });
    }
    Ok(w.as_slice().iter().map(|wi| wi + c).collect())
}

fn check_labels(x: &FeatureMatrix, y: &LabelVector) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "labels".into(),
            expected: x.nrows(),
            found: y.len(),
        });
    }
    Ok(())
}

fn finish(kind: ModelKind, cfg: &SvmConfig, dual: &Dual<'_>, sol: DualSolution, primal: impl Fn(&[f64], f64) -> f64) -> Result<LinearModel> {
    if !sol.converged {
        log::warn!("{kind:?} solver stopped at the {}-iteration cap", cfg.max_iters);
    }
    let beta = dual.beta(&sol.alpha);
    let b = -sol.rho;
    let objective = primal(&beta, b);
    Ok(LinearModel {
        kind,
        beta,
        b,
        config: serde_json::to_value(cfg)?,
        training_meta: TrainingMeta {
            n_train: dual.x.nrows(),
            iterations: sol.iterations,
            converged: sol.converged,
            objective: Some(objective),
            objective_trace: sol.trace,
        },
    })
}

/// Primal objective `0.5 |beta|^2 + sum_i cost_i * loss_i`.
fn primal_value(x: &DMatrix<f64>, beta: &[f64], b: f64, cost: &[f64], loss: impl Fn(usize, f64) -> f64) -> f64 {
    let reg = 0.5 * beta.iter().map(|v| v * v).sum::<f64>();
    reg + (0..x.nrows())
        .map(|i| {
            let f = x.row(i).iter().zip(beta).map(|(a, c)| a * c).sum::<f64>() + b;
            cost[i] * loss(i, f)
        })
        .sum::<f64>()
}

/// Minimise `0.5 |beta|^2 + sum_i (W_i + C) max(0, 1 - y_i (beta . x_i + b))`.
///
/// The recorded objective trace is the dual objective once per pass over the
/// samples; it is non-increasing and its negation bounds the primal from below.
pub fn fit_weighted_svm(x: &FeatureMatrix, y: &LabelVector, w: &SampleWeights, cfg: &SvmConfig) -> Result<LinearModel> {
    cfg.validate()?;
    check_labels(x, y)?;
    if y.task() != Task::Binary {
        return Err(Error::InvalidData("weighted SVM needs binary labels".into()));
    }
    let n = x.nrows();
    let cap = costs(n, w, cfg.c)?;
    let dual = Dual {
        x: x.values(),
        sample: (0..n).collect(),
        y: y.values().to_vec(),
        p: vec![-1.0; n],
        cap: cap.clone(),
    };
    let sol = dual.solve(cfg.max_iters, cfg.tolerance);
    let kind = if w.as_slice().iter().all(|&v| v == 0.0) { ModelKind::Svm } else { ModelKind::Wsvm };
    let yv = y.values();
    finish(kind, cfg, &dual, sol, |beta, b| {
        primal_value(x.values(), beta, b, &cap, |i, f| (1.0 - yv[i] * f).max(0.0))
    })
}

/// Minimise `0.5 |beta|^2 + sum_i (C + W_i) max(0, |y_i - beta . x_i - b| - eps)`.
pub fn fit_weighted_svr(x: &FeatureMatrix, y: &LabelVector, w: &SampleWeights, cfg: &SvmConfig) -> Result<LinearModel> {
    cfg.validate()?;
    check_labels(x, y)?;
    let n = x.nrows();
    let cap = costs(n, w, cfg.c)?;
    let yv = y.values();
    let mut sign = vec![1.0; n];
    sign.extend(std::iter::repeat_n(-1.0, n));
    let p = yv.iter().map(|v| cfg.epsilon - v).chain(yv.iter().map(|v| cfg.epsilon + v)).collect();
    let dual = Dual {
        x: x.values(),
        sample: (0..n).chain(0..n).collect(),
        y: sign,
        p,
        cap: cap.iter().chain(cap.iter()).copied().collect(),
    };
    let sol = dual.solve(cfg.max_iters, cfg.tolerance);
    let kind = if w.as_slice().iter().all(|&v| v == 0.0) { ModelKind::Svr } else { ModelKind::Wsvr };
    finish(kind, cfg, &dual, sol, |beta, b| {
        primal_value(x.values(), beta, b, &cap, |i, f| ((yv[i] - f).abs() - cfg.epsilon).max(0.0))
    })
}
