//! Solvers checked against slow, independent reference implementations.
//! Each check panics on the first mismatch.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stablerules_core::data::{FeatureMatrix, LabelVector, SampleWeights};
use stablerules_core::decorrelation::{penalty_and_gradient, weighted_poly_fit};
use stablerules_core::mining::{mine_frequent_itemsets, Transaction};
use stablerules_core::models::{fit_weighted_svm, fit_weighted_svr, SvmConfig};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn apriori_matches_exhaustive_enumeration() {
    let mut r = rng(11);
    for case in 0..100 {
        let n_items = r.random_range(1..=12);
        let n_tx = r.random_range(1..=40);
        let density: f64 = r.random_range(0.1..0.8);
        let items: Vec<String> = (0..n_items).map(|i| format!("i{i:02}")).collect();
        let masks: Vec<u32> = (0..n_tx)
            .map(|_| (0..n_items).filter(|_| r.random::<f64>() < density).fold(0u32, |m, k| m | (1 << k)))
            .collect();
        let tx: Vec<Transaction> = masks
            .iter()
            .map(|&m| Transaction::new((0..n_items).filter(|k| m >> k & 1 == 1).map(|k| items[k].clone())))
            .collect();
        let min_support: f64 = r.random_range(0.05..0.6);

        let mut expected = BTreeMap::new();
        for set in 1u32..(1 << n_items) {
            let count = masks.iter().filter(|&&m| m & set == set).count();
            if count as f64 / n_tx as f64 >= min_support {
                let names: Vec<String> = (0..n_items).filter(|k| set >> k & 1 == 1).map(|k| items[k].clone()).collect();
                expected.insert(names, count);
            }
        }
        let got: BTreeMap<Vec<String>, usize> = mine_frequent_itemsets(&tx, min_support, None)
            .unwrap()
            .into_iter()
            .map(|f| (f.items, f.count))
            .collect();
        assert_eq!(got, expected, "case {case}");
    }
}

pub fn poly_fit_matches_dense_solve() {
    let mut r = rng(12);
    for case in 0..200 {
        let n = r.random_range(8..60);
        let degree = r.random_range(1..=3);
        let xs: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let xt: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let wv: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
        let w = SampleWeights::new(wv.clone()).unwrap();

        // Weighted least squares through a QR factorisation of sqrt(W) V.
        let v = DMatrix::from_fn(n, degree + 1, |i, k| wv[i].sqrt() * xs[i].powi(k as i32));
        let rhs = DVector::from_fn(n, |i, _| wv[i].sqrt() * xt[i]);
        let qr = v.qr();
        let qtb = qr.q().transpose() * rhs;
        let reference = qr.r().solve_upper_triangular(&qtb).unwrap();

        let fit = weighted_poly_fit(&xs, &xt, &w, degree).unwrap();
        for k in 0..=degree {
            let scale = 1.0 + reference[k].abs();
            assert!(
                (fit.coeffs[k] - reference[k]).abs() <= 1e-8 * scale,
                "case {case} coefficient {k}: {} vs {}",
                fit.coeffs[k],
                reference[k]
            );
        }
    }
}

/// One smoothed hinge term `c * max(0, a . theta + d)`.
struct Term {
    a: Vec<f64>,
    d: f64,
    c: f64,
}

fn softplus(z: f64, tau: f64) -> (f64, f64, f64) {
    let s = 1.0 / (1.0 + (-z / tau).exp());
    let v = z.max(0.0) + tau * (-(z.abs()) / tau).exp().ln_1p();
    (v, s, s * (1.0 - s) / tau)
}

/// Minimise `0.5 |beta|^2 + sum c max(0, a . theta + d)` over `theta = (beta, b)`
/// by Newton's method on a softplus smoothing, tightened in stages.
fn smoothed_newton(p: usize, terms: &[Term]) -> Vec<f64> {
    let dim = p + 1;
    let value = |theta: &[f64], tau: f64| -> f64 {
        let reg = 0.5 * theta[..p].iter().map(|v| v * v).sum::<f64>();
        reg + terms
            .iter()
            .map(|t| t.c * softplus(t.a.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + t.d, tau).0)
            .sum::<f64>()
    };
    let mut theta = vec![0.0; dim];
    let mut tau = 1.0;
    while tau >= 1e-9 {
        for _ in 0..200 {
            let mut g = DVector::zeros(dim);
            let mut h = DMatrix::identity(dim, dim);
            h[(p, p)] = 1e-12;
            for k in 0..p {
                g[k] = theta[k];
            }
            for t in terms {
                let z = t.a.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() + t.d;
                let (_, d1, d2) = softplus(z, tau);
                for i in 0..dim {
                    g[i] += t.c * d1 * t.a[i];
                    for j in 0..dim {
                        h[(i, j)] += t.c * d2 * t.a[i] * t.a[j];
                    }
                }
            }
            if g.norm() < 1e-11 {
                break;
            }
            let step = h.lu().solve(&(-&g)).unwrap();
            let f0 = value(&theta, tau);
            let slope = g.dot(&step);
            let mut s = 1.0;
            loop {
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t + s * d).collect();
                if value(&cand, tau) <= f0 + 1e-4 * s * slope || s < 1e-12 {
                    theta = cand;
                    break;
                }
                s *= 0.5;
            }
        }
        tau *= 0.1;
    }
    theta
}

fn exact_objective(p: usize, terms: &[Term], theta: &[f64]) -> f64 {
    0.5 * theta[..p].iter().map(|v| v * v).sum::<f64>()
        + terms
            .iter()
            .map(|t| t.c * (t.a.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + t.d).max(0.0))
            .sum::<f64>()
}

pub fn weighted_svm_and_svr_match_convex_oracle() {
    let mut r = rng(13);
    for case in 0..50 {
        let n = r.random_range(5..25);
        let p = r.random_range(1..=4);
        let x = DMatrix::from_fn(n, p, |_, _| r.random_range(-2.0..2.0));
        let wv: Vec<f64> = (0..n).map(|_| r.random_range(0.0..2.0)).collect();
        let c: f64 = r.random_range(0.0..1.0);
        let cfg = SvmConfig {
            c,
            epsilon: r.random_range(0.0..0.5),
            ..SvmConfig::default()
        };
        let costs: Vec<f64> = wv.iter().map(|w| w + c).collect();
        let fm = FeatureMatrix::continuous(x.clone()).unwrap();
        let w = SampleWeights::new(wv).unwrap();
        let row = |i: usize| -> Vec<f64> { (0..p).map(|j| x[(i, j)]).chain([1.0]).collect() };

        let y: Vec<f64> = (0..n).map(|i| if x[(i, 0)] + r.random_range(-1.0..1.0) > 0.0 { 1.0 } else { -1.0 }).collect();
        let terms: Vec<Term> = (0..n)
            .map(|i| Term {
                a: row(i).iter().map(|v| -y[i] * v).collect(),
                d: 1.0,
                c: costs[i],
            })
            .collect();
        let oracle = exact_objective(p, &terms, &smoothed_newton(p, &terms));
        let model = fit_weighted_svm(&fm, &LabelVector::binary(y).unwrap(), &w, &cfg).unwrap();
        let mut theta = model.beta.clone();
        theta.push(model.b);
        let ours = exact_objective(p, &terms, &theta);
        assert!((ours - oracle).abs() < 1e-3, "svm case {case}: {ours} vs {oracle}");

        let yr: Vec<f64> = (0..n).map(|i| x[(i, 0)] - 0.5 * x[(i, p - 1)] + r.random_range(-1.0..1.0)).collect();
        let mut terms = Vec::new();
        for i in 0..n {
            let a = row(i);
            terms.push(Term {
                a: a.iter().map(|v| -v).collect(),
                d: yr[i] - cfg.epsilon,
                c: costs[i],
            });
            terms.push(Term {
                a,
                d: -yr[i] - cfg.epsilon,
                c: costs[i],
            });
        }
        let oracle = exact_objective(p, &terms, &smoothed_newton(p, &terms));
        let model = fit_weighted_svr(&fm, &LabelVector::real(yr).unwrap(), &w, &cfg).unwrap();
        let mut theta = model.beta.clone();
        theta.push(model.b);
        let ours = exact_objective(p, &terms, &theta);
        assert!((ours - oracle).abs() < 1e-3, "svr case {case}: {ours} vs {oracle}");
        assert!((model.training_meta.objective.unwrap() - ours).abs() < 1e-9);
    }
}

pub fn decor_gradient_matches_central_differences() {
    let mut r = rng(14);
    for case in 0..20 {
        let n = r.random_range(20..=100);
        let p = r.random_range(2..=4);
        let degree = r.random_range(1..=3);
        let x = DMatrix::from_fn(n, p, |_, _| r.random_range(-1.5..1.5));
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.2..1.0) / n as f64).collect();
        let (_, grad) = penalty_and_gradient(&x, &w, degree).unwrap();
        let fd: Vec<f64> = (0..n)
            .map(|i| {
                let h = 1e-6 * w[i];
                let mut up = w.clone();
                let mut dn = w.clone();
                up[i] += h;
                dn[i] -= h;
                let fu = penalty_and_gradient(&x, &up, degree).unwrap().0;
                let fdn = penalty_and_gradient(&x, &dn, degree).unwrap().0;
                (fu - fdn) / (2.0 * h)
            })
            .collect();
        let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff / norm.max(1e-12) < 1e-4, "case {case}: relative error {}", diff / norm);
    }
}
