//! Context-conditioned trajectory regression: linear ridge, RBF kernel ridge
//! and a feed-forward trajectory network.

mod data;
mod grid;
mod net;
mod ridge;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use data::{flatten, unflatten, ContextSchema, ContextVector, TipTrajectory, TrainingSet};
pub use grid::{grid_search, train_model, GridResult, GridRow, ModelHyper};
pub use net::{parse_arch, train_trajectory_net, Adam, DenseLayer, Mlp, NetHyper, Standardizer, TrajectoryNetModel};
pub use ridge::{rbf_kernel, train_kernel_ridge, train_linear_ridge, KernelRidgeModel, LinearRidgeModel};

use crate::error::{Error, Result};

/// Default trajectory length after resampling.
pub const DEFAULT_WAYPOINTS: usize = 50;
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Linear,
    Rbf,
    Net,
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelFamily::Linear),
            "rbf" | "kernel" => Ok(ModelFamily::Rbf),
            "net" | "network" => Ok(ModelFamily::Net),
            other => Err(Error::InvalidConfig(format!("unknown model family {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelFamily::Linear => "linear",
            ModelFamily::Rbf => "rbf",
            ModelFamily::Net => "net",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ContextModel {
    Linear(LinearRidgeModel),
    Rbf(KernelRidgeModel),
    Net(TrajectoryNetModel),
}

impl ContextModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            ContextModel::Linear(_) => ModelFamily::Linear,
            ContextModel::Rbf(_) => ModelFamily::Rbf,
            ContextModel::Net(_) => ModelFamily::Net,
        }
    }

    pub fn schema(&self) -> ContextSchema {
        match self {
            ContextModel::Linear(m) => m.schema,
            ContextModel::Rbf(m) => m.schema,
            ContextModel::Net(m) => m.schema,
        }
    }

    pub fn waypoints(&self) -> usize {
        match self {
            ContextModel::Linear(m) => m.waypoints,
            ContextModel::Rbf(m) => m.waypoints,
            ContextModel::Net(m) => m.waypoints,
        }
    }

    pub fn predict(&self, context: &ContextVector) -> Result<TipTrajectory> {
        match self {
            ContextModel::Linear(m) => m.predict(context),
            ContextModel::Rbf(m) => m.predict(context),
            ContextModel::Net(m) => m.predict(context),
        }
    }

    /// Short human-readable identifier, e.g. `rbf(gamma=10,alpha=0.01)`.
    pub fn describe(&self) -> String {
        match self {
            ContextModel::Linear(m) => format!("linear(alpha={})", m.alpha),
            ContextModel::Rbf(m) => format!("rbf(gamma={},alpha={})", m.gamma, m.alpha),
            ContextModel::Net(m) => {
                let hidden = &m.layer_sizes[1..m.layer_sizes.len() - 1];
                let arch = if hidden.iter().all(|&h| h == hidden[0]) && !hidden.is_empty() {
                    format!("{}x{}", hidden.len(), hidden[0])
                } else {
                    format!("{hidden:?}")
                };
                format!("net({arch},epochs={},seed={})", m.hyper.epochs, m.hyper.seed)
            }
        }
    }

    /// Training objective value: ridge loss for the ridge models, final MSE
    /// for the network.
    pub fn training_objective(&self, data: &TrainingSet) -> Result<f64> {
        match self {
            ContextModel::Net(m) => Ok(m.final_loss),
            ContextModel::Linear(m) => {
                let reg = m.alpha * m.weights.norm_squared();
                Ok(squared_residual(self, data)? + reg)
            }
            ContextModel::Rbf(m) => {
                let reg = m.alpha * (m.dual_weights.transpose() * kernel_gram(m) * &m.dual_weights).trace();
                Ok(squared_residual(self, data)? + reg)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn kernel_gram(m: &KernelRidgeModel) -> nalgebra::DMatrix<f64> {
    let n = m.centers.len();
    nalgebra::DMatrix::from_fn(n, n, |i, j| rbf_kernel(&m.centers[i], &m.centers[j], m.gamma).unwrap_or(0.0))
}

/// Sum of squared prediction errors over the training set.
pub fn squared_residual(model: &ContextModel, data: &TrainingSet) -> Result<f64> {
    let mut total = 0.0;
    for (c, t) in data.contexts().iter().zip(data.trajectories()) {
        let p = flatten(&model.predict(c)?);
        total += p.iter().zip(flatten(t)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total)
}

/// Largest absolute coordinate error over all training waypoints.
pub fn max_training_error(model: &ContextModel, data: &TrainingSet) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (c, t) in data.contexts().iter().zip(data.trajectories()) {
        let p = flatten(&model.predict(c)?);
        for (a, b) in p.iter().zip(flatten(t)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

pub(crate) mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        s.collect_seq(rows)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

pub(crate) mod serde_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
