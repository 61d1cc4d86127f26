use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::{unflatten, ContextSchema, ContextVector, TipTrajectory, TrainingSet};
use super::serde_rows;
use crate::error::{Error, Result};

/// `exp(-gamma * |a - b|^2)`
pub fn rbf_kernel(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((-gamma * d2).exp())
}

fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a.cholesky().ok_or(Error::SingularSystem)?;
    let x = chol.solve(b);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularSystem)
    }
}

fn check_context(schema: ContextSchema, context: &ContextVector) -> Result<()> {
    if context.schema() != schema {
        return Err(Error::SchemaMismatch { expected: schema.to_string(), got: context.schema().to_string() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRidgeModel {
    pub schema: ContextSchema,
    pub waypoints: usize,
    pub alpha: f64,
    /// k x 3M
    #[serde(with = "serde_rows")]
    pub weights: DMatrix<f64>,
}

impl LinearRidgeModel {
    pub fn predict_flat(&self, context: &[f64]) -> Result<Vec<f64>> {
        if context.len() != self.weights.nrows() {
            return Err(Error::DimensionMismatch { expected: self.weights.nrows(), got: context.len() });
        }
        let x = DVector::from_column_slice(context);
        Ok((self.weights.tr_mul(&x)).as_slice().to_vec())
    }

    pub fn predict(&self, context: &ContextVector) -> Result<TipTrajectory> {
        check_context(self.schema, context)?;
        unflatten(&self.predict_flat(context.values())?, self.waypoints)
    }
}

/// Closed-form ridge solution on raw contexts.
pub fn train_linear_ridge(data: &TrainingSet, alpha: f64) -> Result<LinearRidgeModel> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    let x = data.context_matrix();
    let y = data.target_matrix();
    let k = x.ncols();
    let gram = x.tr_mul(&x) + DMatrix::identity(k, k) * alpha;
    let weights = solve_spd(gram, &x.tr_mul(&y))?;
    Ok(LinearRidgeModel { schema: data.schema(), waypoints: data.waypoints(), alpha, weights })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRidgeModel {
    pub schema: ContextSchema,
    pub waypoints: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub centers: Vec<Vec<f64>>,
    /// D x 3M
    #[serde(with = "serde_rows")]
    pub dual_weights: DMatrix<f64>,
}

impl KernelRidgeModel {
    pub fn features(&self, context: &[f64]) -> Result<DVector<f64>> {
        let mut phi = DVector::zeros(self.centers.len());
        for (j, c) in self.centers.iter().enumerate() {
            phi[j] = rbf_kernel(context, c, self.gamma)?;
        }
        Ok(phi)
    }

    pub fn predict_flat(&self, context: &[f64]) -> Result<Vec<f64>> {
        let phi = self.features(context)?;
        Ok(self.dual_weights.tr_mul(&phi).as_slice().to_vec())
    }

    pub fn predict(&self, context: &ContextVector) -> Result<TipTrajectory> {
        check_context(self.schema, context)?;
        unflatten(&self.predict_flat(context.values())?, self.waypoints)
    }
}

pub fn train_kernel_ridge(data: &TrainingSet, alpha: f64, gamma: f64) -> Result<KernelRidgeModel> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!("kernel gamma must be > 0, got {gamma}")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    let centers: Vec<Vec<f64>> = data.contexts().iter().map(|c| c.values().to_vec()).collect();
    let n = centers.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = rbf_kernel(&centers[i], &centers[j], gamma)?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    gram += DMatrix::identity(n, n) * alpha;
    let dual_weights = solve_spd(gram, &data.target_matrix())?;
    Ok(KernelRidgeModel { schema: data.schema(), waypoints: data.waypoints(), gamma, alpha, centers, dual_weights })
}
