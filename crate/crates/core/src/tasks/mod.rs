//! Task environments, context sampling and the synthetic demonstrator.

pub mod mesh;
pub mod oracle;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mesh::{load_mesh, project_to_surface, Mesh, SurfacePoint};
pub use oracle::{humanize, Noise};

use crate::error::{Error, Result};
use crate::ik::{plan_config_trajectory, IkSettings};
use crate::kinematics::{Config, RobotSpec};
use crate::learning::{ContextSchema, ContextVector, TipTrajectory};
use crate::metrics::resample_arclength;

fn default_stacking_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_start_polar() -> f64 {
    std::f64::consts::FRAC_PI_2
}

fn default_sweep() -> f64 {
    std::f64::consts::FRAC_PI_2
}

fn default_perturbation() -> f64 {
    0.01
}

fn default_scale() -> [f64; 2] {
    [0.5, 1.5]
}

/// Eight drawn in the plane `y = plane_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EightTask {
    pub plane_y: f64,
    /// Centre of the start rectangle, `[x, z]`.
    pub p_ref_center: [f64; 2],
    /// Rectangle size, `[x, z]`.
    pub p_ref_size: [f64; 2],
    pub width: [f64; 2],
    pub height: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereTask {
    pub p_ref_center: [f64; 3],
    /// Start square size.
    pub p_ref_size: [f64; 2],
    /// Normal of the start square's plane.
    #[serde(default = "default_stacking_axis")]
    pub p_ref_normal: [f64; 3],
    pub radius: [f64; 2],
    #[serde(default = "default_stacking_axis")]
    pub stacking_axis: [f64; 3],
    /// Polar angle of `p_ref` on sphere 1, from the tangency point (rad).
    #[serde(default = "default_start_polar")]
    pub start_polar: f64,
    /// Azimuth of `p_ref` about the stacking axis (rad).
    #[serde(default)]
    pub start_azimuth: f64,
    /// Azimuth swept between `p_ref` and the tangency point (rad).
    #[serde(default = "default_sweep")]
    pub sweep: f64,
}

/// Diamond in the mesh frame: vertices at `center ∓ half_u û` and `center ± half_v v̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diamond {
    pub center: [f64; 3],
    pub u: [f64; 3],
    pub v: [f64; 3],
    pub half_u: f64,
    pub half_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnatomyTask {
    /// Relative paths resolve against the task file's directory.
    pub mesh: String,
    pub nominal_p_ref: [f64; 3],
    /// Half-width of the uniform per-axis offset added to `nominal_p_ref` (m).
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    #[serde(default = "default_scale")]
    pub scale: [f64; 2],
    pub diamond: Diamond,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDef {
    pub name: String,
    pub variant: ContextSchema,
    /// Suggested robot preset.
    #[serde(default)]
    pub robot: Option<String>,
    #[serde(default)]
    pub eight: Option<EightTask>,
    #[serde(default)]
    pub sphere: Option<SphereTask>,
    #[serde(default)]
    pub anatomy: Option<AnatomyTask>,
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
        return Err(Error::InvalidTask(format!("{name} range {r:?} is empty")));
    }
    Ok(())
}

fn check_size(name: &str, s: &[f64]) -> Result<()> {
    if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidTask(format!("{name} {s:?} must be finite and non-negative")));
    }
    Ok(())
}

impl TaskDef {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let def: TaskDef = toml::from_str(text)?;
        def.validate()?;
        Ok(def)
    }

    pub fn validate(&self) -> Result<()> {
        match self.variant {
            ContextSchema::EightPlane => {
                let e = self.eight.as_ref().ok_or_else(|| Error::InvalidTask("missing [eight] section".into()))?;
                check_size("p_ref_size", &e.p_ref_size)?;
                check_range("width", e.width)?;
                check_range("height", e.height)?;
                if e.width[0] <= 0.0 || e.height[0] <= 0.0 {
                    return Err(Error::InvalidTask("eight sizes must be positive".into()));
                }
            }
            ContextSchema::DoubleSphere => {
                let s = self.sphere.as_ref().ok_or_else(|| Error::InvalidTask("missing [sphere] section".into()))?;
                check_size("p_ref_size", &s.p_ref_size)?;
                check_range("radius", s.radius)?;
                if s.radius[0] <= 0.0 || Vector3::from(s.stacking_axis).norm() == 0.0 || Vector3::from(s.p_ref_normal).norm() == 0.0 {
                    return Err(Error::InvalidTask("radii must be positive and the axes nonzero".into()));
                }
            }
            ContextSchema::Anatomy => {
                let a = self.anatomy.as_ref().ok_or_else(|| Error::InvalidTask("missing [anatomy] section".into()))?;
                check_range("scale", a.scale)?;
                check_size("perturbation", &[a.perturbation])?;
                let d = &a.diamond;
                let (u, v) = (Vector3::from(d.u), Vector3::from(d.v));
                if !(d.half_u > 0.0 && d.half_v > 0.0) || u.cross(&v).norm() == 0.0 || a.scale[0] <= 0.0 {
                    return Err(Error::InvalidTask("diamond needs positive half sizes and independent axes".into()));
                }
            }
        }
        Ok(())
    }
}

/// A task definition with its mesh (if any) loaded.
#[derive(Debug, Clone)]
pub struct Task {
    pub def: TaskDef,
    pub mesh: Option<Arc<Mesh>>,
}

impl Task {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let def = TaskDef::from_toml_str(&text)?;
        Self::from_def(def, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_def(def: TaskDef, base_dir: &Path) -> Result<Self> {
        def.validate()?;
        let mesh = match &def.anatomy {
            Some(a) if def.variant == ContextSchema::Anatomy => {
                Some(Arc::new(load_mesh(resolve(base_dir, &a.mesh))?))
            }
            _ => None,
        };
        Ok(Self { def, mesh })
    }

    /// In-memory task with an already loaded mesh.
    pub fn with_mesh(def: TaskDef, mesh: Mesh) -> Result<Self> {
        def.validate()?;
        Ok(Self { def, mesh: Some(Arc::new(mesh)) })
    }

    pub fn schema(&self) -> ContextSchema {
        self.def.variant
    }

    fn eight(&self) -> &EightTask {
        self.def.eight.as_ref().expect("validated")
    }

    fn sphere(&self) -> &SphereTask {
        self.def.sphere.as_ref().expect("validated")
    }

    fn anatomy(&self) -> Result<(&AnatomyTask, &Mesh)> {
        let a = self.def.anatomy.as_ref().expect("validated");
        let m = self.mesh.as_deref().ok_or_else(|| Error::InvalidTask("anatomy task has no mesh loaded".into()))?;
        Ok((a, m))
    }

    pub fn sample_context(&self, rng: &mut impl Rng) -> Result<ContextVector> {
        let mut offset = |size: f64| if size > 0.0 { rng.gen_range(-0.5..0.5) * size } else { 0.0 };
        let values = match self.schema() {
            ContextSchema::EightPlane => {
                let e = self.eight();
                let x = e.p_ref_center[0] + offset(e.p_ref_size[0]);
                let z = e.p_ref_center[1] + offset(e.p_ref_size[1]);
                let w = rng.gen_range(e.width[0]..e.width[1]);
                let h = rng.gen_range(e.height[0]..e.height[1]);
                vec![x, e.plane_y, z, w, h]
            }
            ContextSchema::DoubleSphere => {
                let s = self.sphere();
                let frame = oracle::frame_about(&Vector3::from(s.p_ref_normal));
                let shift = frame[0] * offset(s.p_ref_size[0]) + frame[1] * offset(s.p_ref_size[1]);
                let p = Vector3::from(s.p_ref_center) + shift;
                let r1 = rng.gen_range(s.radius[0]..s.radius[1]);
                let r2 = rng.gen_range(s.radius[0]..s.radius[1]);
                vec![p.x, p.y, p.z, r1, r2]
            }
            ContextSchema::Anatomy => {
                let a = self.def.anatomy.as_ref().expect("validated");
                let d = 2.0 * a.perturbation;
                let p = Vector3::from(a.nominal_p_ref) + Vector3::new(offset(d), offset(d), offset(d));
                let s = rng.gen_range(a.scale[0]..a.scale[1]);
                vec![p.x, p.y, p.z, s]
            }
        };
        ContextVector::from_task_values(self.schema(), values)
    }

    /// Context at the centre of every sampling range.
    pub fn nominal_context(&self) -> Result<ContextVector> {
        let mid = |r: [f64; 2]| 0.5 * (r[0] + r[1]);
        let values = match self.schema() {
            ContextSchema::EightPlane => {
                let e = self.eight();
                vec![e.p_ref_center[0], e.plane_y, e.p_ref_center[1], mid(e.width), mid(e.height)]
            }
            ContextSchema::DoubleSphere => {
                let s = self.sphere();
                let p = s.p_ref_center;
                vec![p[0], p[1], p[2], mid(s.radius), mid(s.radius)]
            }
            ContextSchema::Anatomy => {
                let a = self.def.anatomy.as_ref().expect("validated");
                let p = a.nominal_p_ref;
                vec![p[0], p[1], p[2], mid(a.scale)]
            }
        };
        ContextVector::from_task_values(self.schema(), values)
    }

    /// Noise-free demonstrator curve. The anatomy curve has `2m - 1` points.
    pub fn oracle(&self, context: &ContextVector, m: usize) -> Result<Vec<Vector3<f64>>> {
        if m < 2 {
            return Err(Error::DegenerateInput(format!("need at least 2 waypoints, got {m}")));
        }
        match self.schema() {
            ContextSchema::EightPlane => oracle::oracle_eight(context, m),
            ContextSchema::DoubleSphere => oracle::oracle_double_sphere(self.sphere(), context, m),
            ContextSchema::Anatomy => {
                let (a, mesh) = self.anatomy()?;
                oracle::oracle_anatomy(a, mesh, context, m)
            }
        }
    }

    /// Contexts at the corners of the sampling ranges with the largest sizes.
    pub fn extreme_contexts(&self) -> Result<Vec<ContextVector>> {
        let signs = [-0.5, 0.5];
        let mut out = Vec::new();
        match self.schema() {
            ContextSchema::EightPlane => {
                let e = self.eight();
                for sx in signs {
                    for sz in signs {
                        let x = e.p_ref_center[0] + sx * e.p_ref_size[0];
                        let z = e.p_ref_center[1] + sz * e.p_ref_size[1];
                        out.push(vec![x, e.plane_y, z, e.width[1], e.height[1]]);
                    }
                }
            }
            ContextSchema::DoubleSphere => {
                let s = self.sphere();
                let frame = oracle::frame_about(&Vector3::from(s.p_ref_normal));
                for a in signs {
                    for b in signs {
                        let p = Vector3::from(s.p_ref_center) + frame[0] * (a * s.p_ref_size[0]) + frame[1] * (b * s.p_ref_size[1]);
                        out.push(vec![p.x, p.y, p.z, s.radius[1], s.radius[1]]);
                    }
                }
            }
            ContextSchema::Anatomy => {
                let a = self.def.anatomy.as_ref().expect("validated");
                for sx in signs {
                    for sy in signs {
                        for sz in signs {
                            let d = 2.0 * a.perturbation;
                            let p = Vector3::from(a.nominal_p_ref) + Vector3::new(sx * d, sy * d, sz * d);
                            out.push(vec![p.x, p.y, p.z, a.scale[1]]);
                        }
                    }
                }
            }
        }
        out.into_iter().map(|v| ContextVector::from_task_values(self.schema(), v)).collect()
    }

    /// Worst mean IK residual of the oracle curve over `extreme_contexts`.
    /// A large value means the task's ranges leave the robot's workspace.
    pub fn reachability_check(&self, spec: &RobotSpec, m: usize, settings: &IkSettings) -> Result<f64> {
        let worst = self
            .extreme_contexts()?
            .par_iter()
            .map(|c| {
                let pts = self.oracle(c, m)?;
                Ok(snap_to_reachable(spec, &pts, settings)?.mean_residual())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(worst.into_iter().fold(0.0, f64::max))
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapped {
    /// Achieved tip positions.
    pub points: Vec<Vector3<f64>>,
    /// Distance from each requested point to its achieved tip.
    pub residuals: Vec<f64>,
}

impl Snapped {
    pub fn mean_residual(&self) -> f64 {
        self.residuals.iter().sum::<f64>() / self.residuals.len().max(1) as f64
    }
}

/// Replaces each point with the tip position IK actually achieves, warm
/// starting from the home configuration.
pub fn snap_to_reachable(spec: &RobotSpec, points: &[Vector3<f64>], settings: &IkSettings) -> Result<Snapped> {
    let plan = plan_config_trajectory(spec, points, &Config::home(spec), settings)?;
    Ok(Snapped { points: plan.tip_points(), residuals: plan.residuals })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSource {
    Synthetic,
    Teleop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub source: DemoSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Position of the demonstration in its generated batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    /// Mean IK residual of the snapping pass (m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snap_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub context: ContextVector,
    pub trajectory: TipTrajectory,
    pub meta: DemoMeta,
}

/// Generation parameters for the synthetic demonstrator.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub count: usize,
    pub waypoints: usize,
    pub noise: Noise,
    pub seed: u64,
    pub ik: IkSettings,
}

/// One demonstration per rng stream: sample, trace, perturb, snap, resample.
pub fn generate_demo(task: &Task, spec: &RobotSpec, index: u64, opts: &GenerateOptions) -> Result<Demonstration> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index);
    let context = task.sample_context(&mut rng)?;
    let raw = task.oracle(&context, opts.waypoints)?;
    let noisy = humanize(&raw, &opts.noise, &mut rng);
    let snapped = snap_to_reachable(spec, &noisy, &opts.ik)?;
    let trajectory = resample_arclength(&snapped.points, opts.waypoints)?;
    Ok(Demonstration {
        context,
        trajectory,
        meta: DemoMeta {
            source: DemoSource::Synthetic,
            seed: Some(opts.seed),
            index: Some(index),
            session: None,
            snap_residual: Some(snapped.mean_residual()),
        },
    })
}

/// Deterministic for a given seed regardless of thread count.
pub fn generate_dataset(task: &Task, spec: &RobotSpec, opts: &GenerateOptions) -> Result<Vec<Demonstration>> {
    if opts.count == 0 {
        return Err(Error::EmptyInput("demonstration count must be at least 1"));
    }
    (0..opts.count as u64).into_par_iter().map(|i| generate_demo(task, spec, i, opts)).collect()
}
