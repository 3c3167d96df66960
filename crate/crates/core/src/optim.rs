//! Projected gradient descent over sample weights.
//!
//! Both reweighting schemes in this crate minimise
//!
//! ```text
//! L(w) = gamma * P(w) + lambda_w * |w|^2 + lambda_sum * (sum(w) - 1)^2,   w >= 0
//! ```
//!
//! where the balance penalty `P` is invariant to rescaling `w`. Each step
//! clips a gradient step at zero and then moves along the ray through the
//! clipped point to the exact minimiser of the two quadratic terms. Since
//! `P` is constant along that ray the rescale never increases `L`, and it
//! keeps `sum(w)` close to one however large `gamma` is. Step lengths come
//! from Armijo backtracking, warm-started at twice the last accepted step.

use serde::{Deserialize, Serialize};

use crate::data::SampleWeights;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdSettings {
    pub max_iters: usize,
    /// Largest trial step.
    pub step_size: f64,
    /// Stop once the relative objective change falls below this.
    pub tolerance: f64,
    pub backtrack: f64,
    pub armijo: f64,
}

impl Default for PgdSettings {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step_size: 1e-2,
            tolerance: 1e-8,
            backtrack: 0.5,
            armijo: 1e-4,
        }
    }
}

/// Result of a weight optimisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFit {
    pub weights: SampleWeights,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub penalty: f64,
    /// Objective after every accepted step, starting with the initial value.
    pub objective_trace: Vec<f64>,
    pub projected_gradient_norm: f64,
}

struct Eval {
    objective: f64,
    penalty: f64,
    grad: Vec<f64>,
}

/// Minimise `gamma * P(w) + lambda_w |w|^2 + lambda_sum (sum w - 1)^2` from
/// uniform weights. `penalty` returns `P(w)` and its gradient.
pub fn minimize_weights<F>(
    n: usize,
    gamma: f64,
    lambda_w: f64,
    lambda_sum: f64,
    settings: &PgdSettings,
    mut penalty: F,
) -> Result<WeightFit>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut evaluate = |w: &[f64]| -> Result<Eval> {
        let (pen, pg) = if gamma != 0.0 {
            penalty(w)?
        } else {
            (0.0, vec![0.0; w.len()])
        };
        let s: f64 = w.iter().sum();
        let q: f64 = w.iter().map(|v| v * v).sum();
        let objective = gamma * pen + lambda_w * q + lambda_sum * (s - 1.0) * (s - 1.0);
        let grad = w
            .iter()
            .zip(&pg)
            .map(|(wi, gi)| gamma * gi + 2.0 * lambda_w * wi + 2.0 * lambda_sum * (s - 1.0))
            .collect();
        Ok(Eval {
            objective,
            penalty: pen,
            grad,
        })
    };

    let mut w = vec![1.0 / n as f64; n];
    let mut cur = evaluate(&w)?;
    let mut trace = vec![cur.objective];
    let mut step = settings.step_size;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iters {
        iterations += 1;
        let mut t = step;
        let mut accepted = None;
        while t >= 1e-30 {
            let mut cand: Vec<f64> = w
                .iter()
                .zip(&cur.grad)
                .map(|(wi, gi)| (wi - t * gi).max(0.0))
                .collect();
            rescale_along_ray(&mut cand, lambda_w, lambda_sum);
            let decrease: f64 = cur
                .grad
                .iter()
                .zip(cand.iter().zip(&w))
                .map(|(g, (c, o))| g * (c - o))
                .sum();
            // A trial point can make a polynomial fit singular; treat that
            // like any other rejected step.
            if let Ok(e) = evaluate(&cand) {
                if e.objective <= cur.objective + settings.armijo * decrease
                    && e.objective <= cur.objective
                {
                    accepted = Some((cand, e));
                    break;
                }
            }
            t *= settings.backtrack;
        }
        let Some((next_w, next)) = accepted else {
            // No descent along the projected direction: stationary.
            converged = true;
            break;
        };
        let rel = (cur.objective - next.objective).abs() / cur.objective.abs().max(f64::MIN_POSITIVE);
        w = next_w;
        cur = next;
        trace.push(cur.objective);
        step = (2.0 * t).min(settings.step_size);
        if rel < settings.tolerance {
            converged = true;
            break;
        }
    }

    let pg_norm = w
        .iter()
        .zip(&cur.grad)
        .map(|(wi, gi)| {
            let d = wi - (wi - gi).max(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt();
    if !converged {
        log::warn!(
            "weight optimisation hit the {}-iteration cap (projected gradient norm {pg_norm:.3e})",
            settings.max_iters
        );
    }
    Ok(WeightFit {
        weights: SampleWeights::new(w)?,
        iterations,
        converged,
        objective: cur.objective,
        penalty: cur.penalty,
        objective_trace: trace,
        projected_gradient_norm: pg_norm,
    })
}

/// Scale `w` by the `a > 0` minimising `lambda_w a^2 |w|^2 + lambda_sum (a sum(w) - 1)^2`.
fn rescale_along_ray(w: &mut [f64], lambda_w: f64, lambda_sum: f64) {
    let s: f64 = w.iter().sum();
    let q: f64 = w.iter().map(|v| v * v).sum();
    let denom = lambda_w * q + lambda_sum * s * s;
    if s <= 0.0 || denom <= 0.0 {
        return;
    }
    let a = lambda_sum * s / denom;
    w.iter_mut().for_each(|v| *v *= a);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gamma_gives_closed_form_uniform() {
        let n = 50;
        let (l5, l6) = (0.3, 0.7);
        let fit = minimize_weights(n, 0.0, l5, l6, &PgdSettings::default(), |_| unreachable!()).unwrap();
        let expected = l6 / (l5 + n as f64 * l6);
        for &w in fit.weights.as_slice() {
            assert!((w - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_is_monotone() {
        // Scale-invariant toy penalty: squared deviation of the normalised
        // weight of sample 0 from 0.5.
        let pen = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
            let s: f64 = w.iter().sum();
            let f = w[0] / s - 0.5;
            let mut g: Vec<f64> = w.iter().map(|_| -2.0 * f * w[0] / (s * s)).collect();
            g[0] += 2.0 * f / s;
            Ok((f * f, g))
        };
        let fit = minimize_weights(10, 100.0, 1e-3, 1e-3, &PgdSettings::default(), pen).unwrap();
        assert!(fit.objective_trace.windows(2).all(|p| p[1] <= p[0]));
        let w = fit.weights.as_slice();
        let s: f64 = w.iter().sum();
        assert!((w[0] / s - 0.5).abs() < 1e-3);
        // The sum sits at the exact minimiser along the ray through w.
        let q: f64 = w.iter().map(|v| v * v).sum();
        assert!((s - 1.0 / (1.0 + q / (s * s))).abs() < 1e-12);
    }
}
