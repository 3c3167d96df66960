//! Linear predictors: least-squares baselines, DWR, and weighted SVM/SVR.

mod dwr;
mod linear;
mod svm;

pub use dwr::{covariance_penalty_and_gradient, fit_dwr, DwrConfig, DwrFit};
pub use linear::{fit_linear_baseline, fit_weighted_least_squares, LinearMethod};
pub use svm::{fit_weighted_svm, fit_weighted_svr, SvmConfig};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ols,
    Ridge,
    Lasso,
    Dwr,
    Svm,
    Wsvm,
    Svr,
    Wsvr,
}

impl ModelKind {
    pub fn is_classifier(self) -> bool {
        matches!(self, ModelKind::Svm | ModelKind::Wsvm)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_train: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Final objective of the iterative solver, if any.
    pub objective: Option<f64>,
    /// Objective per epoch for iterative solvers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

/// A fitted linear model `f(x) = beta . x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: ModelKind,
    pub beta: Vec<f64>,
    pub b: f64,
    pub config: serde_json::Value,
    pub training_meta: TrainingMeta,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.beta.len()
    }

    fn check_width(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.beta.len() {
            return Err(Error::DimensionMismatch {
                context: "model feature width".into(),
                expected: self.beta.len(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Real-valued scores `beta . x + b` for raw matrix rows.
    pub fn decision_values(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_width(x)?;
        Ok((0..x.nrows())
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(&self.beta)
                    .map(|(a, c)| a * c)
                    .sum::<f64>()
                    + self.b
            })
            .collect())
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.decision_values(x.values())
    }

    /// Sign of the decision value, with 0 mapped to +1.
    pub fn predict_class(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self
            .predict(x)?
            .into_iter()
            .map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(beta: Vec<f64>, b: f64) -> LinearModel {
        LinearModel {
            kind: ModelKind::Ols,
            beta,
            b,
            config: serde_json::Value::Null,
            training_meta: TrainingMeta::default(),
        }
    }

    #[test]
    fn constant_model() {
        let m = model(vec![0.0, 0.0], 0.7);
        let x = FeatureMatrix::continuous(DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -3.0, 4.0, 0.0, 0.0])).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![0.7; 3]);
        assert_eq!(m.predict_class(&x).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn single_row_dot_product() {
        let m = model(vec![3.0, -1.0], 0.5);
        let x = FeatureMatrix::continuous(DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        assert!((m.predict(&x).unwrap()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch() {
        let m = model(vec![1.0], 0.0);
        let x = FeatureMatrix::continuous(DMatrix::zeros(2, 2)).unwrap();
        assert!(matches!(m.predict(&x), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn json_round_trip() {
        let m = model(vec![1.5, -2.0], 0.25);
        let s = m.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        for key in ["kind", "beta", "b", "config", "training_meta"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(LinearModel::from_json(&s).unwrap(), m);
    }
}
