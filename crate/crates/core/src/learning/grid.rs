use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{train_trajectory_net, NetHyper};
use super::ridge::{train_kernel_ridge, train_linear_ridge};
use super::{ContextModel, ModelFamily, TrainingSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelHyper {
    Linear { alpha: f64 },
    Rbf { gamma: f64, alpha: f64 },
    Net { hidden: Vec<usize>, train: NetHyper },
}

impl ModelHyper {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelHyper::Linear { .. } => ModelFamily::Linear,
            ModelHyper::Rbf { .. } => ModelFamily::Rbf,
            ModelHyper::Net { .. } => ModelFamily::Net,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelHyper::Linear { alpha } => format!("alpha={alpha}"),
            ModelHyper::Rbf { gamma, alpha } => format!("gamma={gamma} alpha={alpha}"),
            ModelHyper::Net { hidden, .. } => match hidden.first() {
                Some(&w) if hidden.iter().all(|&h| h == w) => format!("{}x{}", hidden.len(), w),
                _ => format!("{hidden:?}"),
            },
        }
    }

    pub fn linear_grid(alphas: &[f64]) -> Vec<Self> {
        alphas.iter().map(|&alpha| ModelHyper::Linear { alpha }).collect()
    }

    /// Gamma-major product.
    pub fn rbf_grid(gammas: &[f64], alphas: &[f64]) -> Vec<Self> {
        gammas.iter().flat_map(|&gamma| alphas.iter().map(move |&alpha| ModelHyper::Rbf { gamma, alpha })).collect()
    }

    pub fn net_grid(hidden: &[Vec<usize>], train: &NetHyper) -> Vec<Self> {
        hidden.iter().map(|h| ModelHyper::Net { hidden: h.clone(), train: train.clone() }).collect()
    }
}

pub fn train_model(data: &TrainingSet, hyper: &ModelHyper) -> Result<ContextModel> {
    Ok(match hyper {
        ModelHyper::Linear { alpha } => ContextModel::Linear(train_linear_ridge(data, *alpha)?),
        ModelHyper::Rbf { gamma, alpha } => ContextModel::Rbf(train_kernel_ridge(data, *alpha, *gamma)?),
        ModelHyper::Net { hidden, train } => {
            let mut sizes = vec![data.context_dim()];
            sizes.extend_from_slice(hidden);
            sizes.push(3 * data.waypoints());
            ContextModel::Net(train_trajectory_net(data, &sizes, train)?)
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub hyper: ModelHyper,
    /// `None` when training or scoring failed.
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best: usize,
}

impl GridResult {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

/// Trains one model per grid point and scores it (lower is better). Ties go
/// to the earlier grid point. Failed points stay in the table unscored.
pub fn grid_search<F>(data: &TrainingSet, grid: &[ModelHyper], scorer: F) -> Result<GridResult>
where
    F: Fn(&ContextModel) -> Result<f64> + Sync,
{
    if grid.is_empty() {
        return Err(Error::EmptyInput("hyperparameter grid is empty"));
    }
    let rows: Vec<GridRow> = grid
        .par_iter()
        .map(|hyper| match train_model(data, hyper).and_then(|m| scorer(&m)) {
            Ok(score) => GridRow { hyper: hyper.clone(), score: Some(score), error: None },
            Err(e) => GridRow { hyper: hyper.clone(), score: None, error: Some(e.to_string()) },
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in rows.iter().enumerate() {
        if let Some(s) = row.score.filter(|s| !s.is_nan()) {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i, s));
            }
        }
    }
    let (best, _) = best.ok_or(Error::DegenerateData("no grid point could be trained and scored".into()))?;
    Ok(GridResult { rows, best })
}
