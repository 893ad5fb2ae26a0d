//! Convex linear models, datasets and client partitions.
//!
//! Every loss here is a per-sample *mean* (plus an optional L2 term), so the
//! size-weighted average of client losses equals the loss on the pooled data.

mod data;
mod estimate;
mod partition;

pub use data::{load_idx_dataset, synthetic_blobs, ClientDataset, SyntheticSpec};
pub use estimate::{estimate_constants, EstimateInputs};
pub use partition::{partition, Partition, PartitionScheme};

use std::fmt;
use std::ops::Index;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense model parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    /// Euclidean distance `‖self − other‖`.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss family of a linear model `f(x) = w·x`.
///
/// Classification labels are stored as `0.0` / `1.0`; the hinge loss maps
/// them to `−1` / `+1` internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Logistic regression, `softplus(z) − y·z`.
    LogLoss,
    /// Linear SVM, `max(0, 1 − s·z)` with `s = 2y − 1`.
    Hinge,
    /// Least squares, `(y − z)²`.
    MeanSquaredError,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::LogLoss => "log-loss",
            LossKind::Hinge => "hinge",
            LossKind::MeanSquaredError => "mean-squared-error",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log-loss" | "logistic" => Ok(LossKind::LogLoss),
            "hinge" | "svm" => Ok(LossKind::Hinge),
            "mean-squared-error" | "mse" => Ok(LossKind::MeanSquaredError),
            other => Err(Error::invalid(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// A loss family plus an optional L2 penalty `(l2 / 2)·‖w‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossModel {
    pub kind: LossKind,
    pub l2: f64,
}

impl LossModel {
    pub fn new(kind: LossKind) -> Self {
        LossModel { kind, l2: 0.0 }
    }

    pub fn with_l2(kind: LossKind, l2: f64) -> Result<Self> {
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::invalid(format!("l2 must be nonnegative, got {l2}")));
        }
        Ok(LossModel { kind, l2 })
    }

    /// Mean per-sample loss over `data`.
    pub fn loss(&self, params: &ParamVector, data: &ClientDataset) -> Result<f64> {
        params.check_dim(data.dim())?;
        let w = params.as_slice();
        let mut total = 0.0;
        for (x, &y) in data.rows().zip(data.labels()) {
            total += self.sample_loss(dot(w, x), y);
        }
        let mut value = total / data.len() as f64;
        if self.l2 > 0.0 {
            value += 0.5 * self.l2 * params.dot(params);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        Ok(value)
    }

    /// Exact full-batch gradient of [`LossModel::loss`]. The hinge kink uses
    /// the zero subgradient.
    pub fn gradient(&self, params: &ParamVector, data: &ClientDataset) -> Result<ParamVector> {
        params.check_dim(data.dim())?;
        let w = params.as_slice();
        let mut grad = vec![0.0; data.dim()];
        for (x, &y) in data.rows().zip(data.labels()) {
            let coef = self.sample_derivative(dot(w, x), y);
            if coef != 0.0 {
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += coef * xi;
                }
            }
        }
        let inv_n = 1.0 / data.len() as f64;
        for (g, wi) in grad.iter_mut().zip(w) {
            *g = *g * inv_n + self.l2 * wi;
        }
        let grad = ParamVector(grad);
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        Ok(grad)
    }

    /// Predicted class (`0.0` or `1.0`) for a feature row.
    pub fn predict(&self, params: &ParamVector, x: &[f64]) -> f64 {
        let z = dot(params.as_slice(), x);
        let threshold = match self.kind {
            LossKind::LogLoss | LossKind::Hinge => 0.0,
            LossKind::MeanSquaredError => 0.5,
        };
        if z > threshold {
            1.0
        } else {
            0.0
        }
    }

    /// Fraction of rows whose thresholded prediction matches the label.
    pub fn accuracy(&self, params: &ParamVector, data: &ClientDataset) -> Result<f64> {
        params.check_dim(data.dim())?;
        let correct = data
            .rows()
            .zip(data.labels())
            .filter(|(x, &y)| self.predict(params, x) == y)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    fn sample_loss(&self, z: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::LogLoss => softplus(z) - y * z,
            LossKind::Hinge => {
                let s = 2.0 * y - 1.0;
                (1.0 - s * z).max(0.0)
            }
            LossKind::MeanSquaredError => (y - z) * (y - z),
        }
    }

    /// d(sample loss)/dz
    fn sample_derivative(&self, z: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::LogLoss => sigmoid(z) - y,
            LossKind::Hinge => {
                let s = 2.0 * y - 1.0;
                if s * z < 1.0 {
                    -s
                } else {
                    0.0
                }
            }
            LossKind::MeanSquaredError => -2.0 * (y - z),
        }
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: Vec<f64>, y: f64) -> ClientDataset {
        let dim = x.len();
        ClientDataset::from_flat(x, dim, vec![y]).unwrap()
    }

    #[test]
    fn mse_perfect_fit_is_zero() {
        let data = ClientDataset::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![2.0, -1.0, 1.0],
        )
        .unwrap();
        let model = LossModel::new(LossKind::MeanSquaredError);
        let w = ParamVector::new(vec![2.0, -1.0]);
        assert_eq!(model.loss(&w, &data).unwrap(), 0.0);
        assert!(model
            .gradient(&w, &data)
            .unwrap()
            .as_slice()
            .iter()
            .all(|g| *g == 0.0));
    }

    #[test]
    fn mse_single_sample_unit_error() {
        let model = LossModel::new(LossKind::MeanSquaredError);
        let data = single(vec![1.0], 1.0);
        assert_eq!(model.loss(&ParamVector::zeros(1), &data).unwrap(), 1.0);
    }

    #[test]
    fn log_loss_at_even_odds_is_ln2() {
        let model = LossModel::new(LossKind::LogLoss);
        let data = single(vec![0.3, -0.7], 1.0);
        let loss = model.loss(&ParamVector::zeros(2), &data).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        // rows e1, e2 with zero targets: F(w) = (w1² + w2²)/2
        let data =
            ClientDataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let model = LossModel::new(LossKind::MeanSquaredError);
        let w = ParamVector::new(vec![0.7, -1.3]);
        let g = model.gradient(&w, &data).unwrap();
        assert!((g[0] - 0.7).abs() < 1e-15 && (g[1] + 1.3).abs() < 1e-15);
    }

    #[test]
    fn hinge_kink_uses_zero_subgradient() {
        let model = LossModel::new(LossKind::Hinge);
        // s·z = 1 exactly
        let data = single(vec![1.0], 1.0);
        let g = model.gradient(&ParamVector::new(vec![1.0]), &data).unwrap();
        assert_eq!(g[0], 0.0);
        let g = model.gradient(&ParamVector::new(vec![0.5]), &data).unwrap();
        assert_eq!(g[0], -1.0);
    }

    #[test]
    fn regularization_adds_half_l2() {
        let model = LossModel::with_l2(LossKind::MeanSquaredError, 0.5).unwrap();
        let data = single(vec![1.0, 0.0], 1.0);
        let w = ParamVector::new(vec![1.0, 2.0]);
        // residual 0, penalty 0.25 * 5
        assert!((model.loss(&w, &data).unwrap() - 1.25).abs() < 1e-15);
        let g = model.gradient(&w, &data).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] - 1.0).abs() < 1e-15);
        assert!(LossModel::with_l2(LossKind::Hinge, -1.0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = LossModel::new(LossKind::LogLoss);
        let data = single(vec![1.0, 2.0], 0.0);
        let err = model.loss(&ParamVector::zeros(3), &data).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 2,
                found: 3
            }
        ));
        assert!(model.gradient(&ParamVector::zeros(1), &data).is_err());
    }

    #[test]
    fn log_loss_is_stable_for_large_margins() {
        let model = LossModel::new(LossKind::LogLoss);
        let data = single(vec![1.0], 0.0);
        let loss = model.loss(&ParamVector::new(vec![800.0]), &data).unwrap();
        assert!((loss - 800.0).abs() < 1e-9);
    }

    #[test]
    fn accuracy_thresholds_by_kind() {
        let data = ClientDataset::from_rows(&[vec![1.0], vec![-1.0]], vec![1.0, 0.0]).unwrap();
        let w = ParamVector::new(vec![0.4]);
        assert_eq!(
            LossModel::new(LossKind::LogLoss)
                .accuracy(&w, &data)
                .unwrap(),
            1.0
        );
        // 0.4 is below the 0.5 regression threshold
        assert_eq!(
            LossModel::new(LossKind::MeanSquaredError)
                .accuracy(&w, &data)
                .unwrap(),
            0.5
        );
    }
}
