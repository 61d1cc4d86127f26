use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which task a context vector describes. Fixes its length and meaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSchema {
    /// `[p_ref, w, h, 1]`
    EightPlane,
    /// `[p_ref, r1, r2, 1]`
    DoubleSphere,
    /// `[p_ref, s, 1]`
    Anatomy,
}

impl ContextSchema {
    pub fn dim(self) -> usize {
        match self {
            ContextSchema::EightPlane | ContextSchema::DoubleSphere => 6,
            ContextSchema::Anatomy => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContextSchema::EightPlane => "eight_plane",
            ContextSchema::DoubleSphere => "double_sphere",
            ContextSchema::Anatomy => "anatomy",
        }
    }

    pub fn field_names(self) -> &'static [&'static str] {
        match self {
            ContextSchema::EightPlane => &["p_ref_x", "p_ref_y", "p_ref_z", "w", "h", "bias"],
            ContextSchema::DoubleSphere => &["p_ref_x", "p_ref_y", "p_ref_z", "r1", "r2", "bias"],
            ContextSchema::Anatomy => &["p_ref_x", "p_ref_y", "p_ref_z", "s", "bias"],
        }
    }
}

impl std::fmt::Display for ContextSchema {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ContextSchema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eight_plane" | "eight" => Ok(ContextSchema::EightPlane),
            "double_sphere" | "sphere" => Ok(ContextSchema::DoubleSphere),
            "anatomy" => Ok(ContextSchema::Anatomy),
            other => Err(Error::SchemaMismatch { expected: "eight_plane|double_sphere|anatomy".into(), got: other.into() }),
        }
    }
}

/// Task context augmented with a trailing constant 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    schema: ContextSchema,
    values: Vec<f64>,
}

impl ContextVector {
    /// `values` must be the full vector, bias element included.
    pub fn new(schema: ContextSchema, values: Vec<f64>) -> Result<Self> {
        if values.len() != schema.dim() {
            return Err(Error::DimensionMismatch { expected: schema.dim(), got: values.len() });
        }
        if values[values.len() - 1] != 1.0 {
            return Err(Error::DegenerateInput(format!("last context element must be 1, got {}", values[values.len() - 1])));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("context values must be finite".into()));
        }
        Ok(Self { schema, values })
    }

    /// Accepts the task values with or without the trailing bias element.
    pub fn from_task_values(schema: ContextSchema, mut values: Vec<f64>) -> Result<Self> {
        if values.len() == schema.dim() - 1 {
            values.push(1.0);
        }
        Self::new(schema, values)
    }

    pub fn schema(&self) -> ContextSchema {
        self.schema
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn p_ref(&self) -> Vector3<f64> {
        Vector3::new(self.values[0], self.values[1], self.values[2])
    }
}

/// Ordered tip waypoints (m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct TipTrajectory {
    waypoints: Vec<Vector3<f64>>,
}

impl TipTrajectory {
    pub fn new(waypoints: Vec<Vector3<f64>>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::DegenerateInput(format!("trajectory needs at least 2 waypoints, got {}", waypoints.len())));
        }
        if waypoints.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::DegenerateInput("trajectory waypoints must be finite".into()));
        }
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[Vector3<f64>] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn into_waypoints(self) -> Vec<Vector3<f64>> {
        self.waypoints
    }
}

impl TryFrom<Vec<[f64; 3]>> for TipTrajectory {
    type Error = Error;

    fn try_from(points: Vec<[f64; 3]>) -> Result<Self> {
        TipTrajectory::new(points.into_iter().map(Vector3::from).collect())
    }
}

impl From<TipTrajectory> for Vec<[f64; 3]> {
    fn from(t: TipTrajectory) -> Self {
        t.waypoints.iter().map(|p| [p.x, p.y, p.z]).collect()
    }
}

/// `(x1, y1, z1, ..., xM, yM, zM)`
pub fn flatten(traj: &TipTrajectory) -> Vec<f64> {
    traj.waypoints.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub fn unflatten(values: &[f64], waypoints: usize) -> Result<TipTrajectory> {
    if values.len() != 3 * waypoints {
        return Err(Error::DimensionMismatch { expected: 3 * waypoints, got: values.len() });
    }
    TipTrajectory::new(values.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
}

/// Demonstrations sharing one context schema and one waypoint count.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    contexts: Vec<ContextVector>,
    trajectories: Vec<TipTrajectory>,
}

impl TrainingSet {
    pub fn new(pairs: impl IntoIterator<Item = (ContextVector, TipTrajectory)>) -> Result<Self> {
        let (contexts, trajectories): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let Some(first_ctx) = contexts.first() else {
            return Err(Error::EmptyInput("training set has no demonstrations"));
        };
        let schema = first_ctx.schema();
        let m = trajectories[0].len();
        for (c, t) in contexts.iter().zip(&trajectories) {
            if c.schema() != schema {
                return Err(Error::SchemaMismatch { expected: schema.to_string(), got: c.schema().to_string() });
            }
            if t.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: t.len() });
            }
        }
        Ok(Self { contexts, trajectories })
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn schema(&self) -> ContextSchema {
        self.contexts[0].schema()
    }

    pub fn context_dim(&self) -> usize {
        self.contexts[0].dim()
    }

    pub fn waypoints(&self) -> usize {
        self.trajectories[0].len()
    }

    pub fn contexts(&self) -> &[ContextVector] {
        &self.contexts
    }

    pub fn trajectories(&self) -> &[TipTrajectory] {
        &self.trajectories
    }

    /// D x k design matrix.
    pub fn context_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.context_dim(), |i, j| self.contexts[i].values()[j])
    }

    /// D x 3M target matrix of flattened trajectories.
    pub fn target_matrix(&self) -> DMatrix<f64> {
        let flat: Vec<Vec<f64>> = self.trajectories.iter().map(flatten).collect();
        DMatrix::from_fn(self.len(), 3 * self.waypoints(), |i, j| flat[i][j])
    }

    /// First `n` demonstrations.
    pub fn head(&self, n: usize) -> Result<Self> {
        Self::new(self.contexts.iter().cloned().zip(self.trajectories.iter().cloned()).take(n))
    }
}
