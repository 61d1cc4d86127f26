//! Tendon-driven rod statics.
//!
//! The backbone is an inextensible, shear-free rod clamped at the origin and
//! pointing along +z. Each tendon runs through the cross-section at an offset
//! `r(s)` from the backbone axis; pulling it with tension `τ` produces the body
//! moment `τ · (t̂ × r)`, where `t̂` is the unit tangent of the tendon path in the
//! body frame. Dividing by the stiffness `K = diag(EI, EI, GJ)` gives the body
//! curvature, which is integrated with fixed-step RK4 to get the backbone.
//!
//! Routing functions are always evaluated against the full rod length `L`; when
//! the rod is only partially inserted, the retracted material is ignored.

use std::f64::consts::PI;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BENDING_STIFFNESS: f64 = 1e-2;
pub const DEFAULT_TORSIONAL_STIFFNESS: f64 = 0.8e-2;
pub const DEFAULT_TENSION_MAX: f64 = 5.0;
pub const DEFAULT_FK_STEPS: usize = 200;
pub const MIN_FK_STEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingKind {
    Straight,
    Helical,
}

/// Path of one tendon through the backbone cross-sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TendonRouting {
    pub kind: RoutingKind,
    /// Distance from the backbone axis (m).
    pub offset_radius: f64,
    /// Angular position around the backbone at the base (rad).
    #[serde(default)]
    pub phase: f64,
    /// Turns from base to tip; the sign gives handedness. Zero for straight tendons.
    #[serde(default)]
    pub revolutions: f64,
}

impl TendonRouting {
    pub fn straight(offset_radius: f64, phase: f64) -> Self {
        Self { kind: RoutingKind::Straight, offset_radius, phase, revolutions: 0.0 }
    }

    pub fn helical(offset_radius: f64, phase: f64, revolutions: f64) -> Self {
        Self { kind: RoutingKind::Helical, offset_radius, phase, revolutions }
    }
}

/// Tendon offset `r(s)` and its arc-length derivative `r'(s)` in the body frame.
pub fn routing_offset(routing: &TendonRouting, s: f64, length: f64) -> (Vector3<f64>, Vector3<f64>) {
    let d = routing.offset_radius;
    match routing.kind {
        RoutingKind::Straight => {
            let (sin, cos) = routing.phase.sin_cos();
            (Vector3::new(d * cos, d * sin, 0.0), Vector3::zeros())
        }
        RoutingKind::Helical => {
            let rate = 2.0 * PI * routing.revolutions / length;
            let theta = routing.phase + rate * s;
            let (sin, cos) = theta.sin_cos();
            (Vector3::new(d * cos, d * sin, 0.0), Vector3::new(-d * rate * sin, d * rate * cos, 0.0))
        }
    }
}

fn deserialize_tension_max<'de, D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Limit {
        Uniform(f64),
        PerTendon(Vec<f64>),
    }
    Ok(match Limit::deserialize(deserializer)? {
        // expanded to one entry per tendon in `RobotSpec::validate`
        Limit::Uniform(v) => vec![v],
        Limit::PerTendon(v) => v,
    })
}

fn default_bending_stiffness() -> f64 {
    DEFAULT_BENDING_STIFFNESS
}

fn default_torsional_stiffness() -> f64 {
    DEFAULT_TORSIONAL_STIFFNESS
}

fn default_tension_max() -> Vec<f64> {
    vec![DEFAULT_TENSION_MAX]
}

/// Geometry, stiffness and actuation limits of one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    #[serde(default)]
    pub name: String,
    pub length: f64,
    pub backbone_radius: f64,
    #[serde(default = "default_bending_stiffness")]
    pub bending_stiffness: f64,
    #[serde(default = "default_torsional_stiffness")]
    pub torsional_stiffness: f64,
    pub tendons: Vec<TendonRouting>,
    #[serde(default = "default_tension_max", deserialize_with = "deserialize_tension_max")]
    pub tension_max: Vec<f64>,
    pub insertion_max: f64,
    #[serde(default)]
    pub insertion_enabled: bool,
    #[serde(default)]
    pub rotation_enabled: bool,
}

impl RobotSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut spec: RobotSpec = toml::from_str(text)?;
        if spec.tension_max.len() == 1 && spec.tendons.len() > 1 {
            spec.tension_max = vec![spec.tension_max[0]; spec.tendons.len()];
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("robot spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if !(self.length > 0.0) {
            return bad(format!("length must be positive, got {}", self.length));
        }
        if !(self.backbone_radius > 0.0) {
            return bad("backbone_radius must be positive".into());
        }
        if !(self.bending_stiffness > 0.0 && self.torsional_stiffness > 0.0) {
            return bad("stiffnesses must be positive".into());
        }
        if self.tendons.is_empty() {
            return bad("at least one tendon is required".into());
        }
        if self.tension_max.len() != self.tendons.len() {
            return bad(format!(
                "tension_max has {} entries for {} tendons",
                self.tension_max.len(),
                self.tendons.len()
            ));
        }
        if self.tension_max.iter().any(|&t| !(t > 0.0)) {
            return bad("tension_max must be positive for every tendon".into());
        }
        if !(self.insertion_max > 0.0 && self.insertion_max <= self.length) {
            return bad(format!("insertion_max must lie in (0, length], got {}", self.insertion_max));
        }
        for (i, t) in self.tendons.iter().enumerate() {
            if !(t.offset_radius > 0.0 && t.offset_radius <= self.backbone_radius) {
                return bad(format!("tendon {i}: offset_radius must lie in (0, backbone_radius]"));
            }
            if t.kind == RoutingKind::Straight && t.revolutions != 0.0 {
                return bad(format!("tendon {i}: straight tendons cannot have revolutions"));
            }
        }
        Ok(())
    }

    pub fn tendon_count(&self) -> usize {
        self.tendons.len()
    }

    /// Number of controllable degrees of freedom: tensions, then insertion and
    /// rotation when enabled.
    pub fn dof(&self) -> usize {
        self.tendons.len() + usize::from(self.insertion_enabled) + usize::from(self.rotation_enabled)
    }

    pub fn dof_kinds(&self) -> Vec<DofKind> {
        let mut kinds: Vec<DofKind> = (0..self.tendons.len()).map(DofKind::Tension).collect();
        if self.insertion_enabled {
            kinds.push(DofKind::Insertion);
        }
        if self.rotation_enabled {
            kinds.push(DofKind::Rotation);
        }
        kinds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofKind {
    Tension(usize),
    Insertion,
    Rotation,
}

/// Actuation state: tendon tensions (N), insertion length (m), base rotation (rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub tensions: Vec<f64>,
    pub insertion: f64,
    pub rotation: f64,
}

impl Config {
    /// Unloaded rod, fully inserted, no base rotation.
    pub fn home(spec: &RobotSpec) -> Self {
        Self { tensions: vec![0.0; spec.tendon_count()], insertion: spec.insertion_max, rotation: 0.0 }
    }

    pub fn validate(&self, spec: &RobotSpec) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.tensions.len() != spec.tendon_count() {
            return bad(format!("{} tensions for {} tendons", self.tensions.len(), spec.tendon_count()));
        }
        for (i, (&t, &max)) in self.tensions.iter().zip(&spec.tension_max).enumerate() {
            if !(0.0..=max).contains(&t) {
                return bad(format!("tension {i} = {t} outside [0, {max}]"));
            }
        }
        if !(0.0..=spec.insertion_max).contains(&self.insertion) {
            return bad(format!("insertion {} outside [0, {}]", self.insertion, spec.insertion_max));
        }
        if !(-PI..PI).contains(&self.rotation) {
            return bad(format!("rotation {} outside [-pi, pi)", self.rotation));
        }
        if !spec.insertion_enabled && self.insertion != spec.insertion_max {
            return bad("insertion is disabled and must equal insertion_max".into());
        }
        if !spec.rotation_enabled && self.rotation != 0.0 {
            return bad("rotation is disabled and must be zero".into());
        }
        Ok(())
    }

    /// Values of the enabled degrees of freedom, in `RobotSpec::dof_kinds` order.
    pub fn dof_vector(&self, spec: &RobotSpec) -> DVector<f64> {
        let mut v = Vec::with_capacity(spec.dof());
        v.extend_from_slice(&self.tensions);
        if spec.insertion_enabled {
            v.push(self.insertion);
        }
        if spec.rotation_enabled {
            v.push(self.rotation);
        }
        DVector::from_vec(v)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(angle: f64) -> f64 {
    if (-PI..PI).contains(&angle) {
        return angle;
    }
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2pi
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Projects an unconstrained degree-of-freedom vector onto the valid
/// configuration set.
pub fn clamp_config(spec: &RobotSpec, raw: &[f64]) -> Result<Config> {
    if raw.len() != spec.dof() {
        return Err(Error::DimensionMismatch { expected: spec.dof(), got: raw.len() });
    }
    let n = spec.tendon_count();
    let tensions = raw[..n].iter().zip(&spec.tension_max).map(|(&t, &max)| t.clamp(0.0, max)).collect();
    let mut rest = raw[n..].iter();
    let insertion = if spec.insertion_enabled {
        rest.next().unwrap().clamp(0.0, spec.insertion_max)
    } else {
        spec.insertion_max
    };
    let rotation = if spec.rotation_enabled { wrap_angle(*rest.next().unwrap()) } else { 0.0 };
    Ok(Config { tensions, insertion, rotation })
}

/// Body-frame curvature `u(s)` produced by the tendon loads.
pub fn body_curvature(spec: &RobotSpec, config: &Config, s: f64) -> Vector3<f64> {
    let mut moment = Vector3::zeros();
    for (routing, &tension) in spec.tendons.iter().zip(&config.tensions) {
        if tension == 0.0 {
            continue;
        }
        let (r, r_prime) = routing_offset(routing, s, spec.length);
        let tangent = (Vector3::z() + r_prime).normalize();
        moment += tension * tangent.cross(&r);
    }
    Vector3::new(
        moment.x / spec.bending_stiffness,
        moment.y / spec.bending_stiffness,
        moment.z / spec.torsional_stiffness,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub position: Vector3<f64>,
    pub orientation: Matrix3<f64>,
}

/// Backbone frames at uniform arc-length steps from the base to the tip.
#[derive(Debug, Clone)]
pub struct BackboneShape {
    pub frames: Vec<Frame>,
    pub arc_step: f64,
}

impl BackboneShape {
    pub fn positions(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.frames.iter().map(|f| f.position)
    }

    pub fn tip(&self) -> Result<Vector3<f64>> {
        tip_position(self)
    }
}

pub fn tip_position(shape: &BackboneShape) -> Result<Vector3<f64>> {
    shape.frames.last().map(|f| f.position).ok_or(Error::EmptyShape)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn skew(u: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0)
}

/// Nearest rotation to `m` (polar factor) by Newton iteration. `m` is assumed to
/// be close to orthonormal, as it is after a single integration step.
fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let mut r = *m;
    for _ in 0..6 {
        let defect = (r.transpose() * r - Matrix3::identity()).norm();
        if defect < 1e-15 {
            break;
        }
        let Some(inv) = r.try_inverse() else { break };
        r = 0.5 * (r + inv.transpose());
    }
    r
}

fn integrate(
    spec: &RobotSpec,
    config: &Config,
    n_steps: usize,
    mut visit: impl FnMut(&Vector3<f64>, &Matrix3<f64>),
) -> Result<(Vector3<f64>, f64)> {
    config.validate(spec)?;
    if n_steps < MIN_FK_STEPS {
        return Err(Error::InvalidConfig(format!("n_steps must be at least {MIN_FK_STEPS}, got {n_steps}")));
    }
    let h = config.insertion / n_steps as f64;
    // curvature at every half step: index 2k is s = k h, 2k + 1 is s = (k + 1/2) h
    let loaded = config.tensions.iter().any(|&t| t != 0.0);
    let curvature: Vec<Matrix3<f64>> = if loaded {
        (0..=2 * n_steps).map(|j| skew(&body_curvature(spec, config, 0.5 * h * j as f64))).collect()
    } else {
        Vec::new()
    };

    let mut p = Vector3::zeros();
    let mut r = rot_z(config.rotation);
    visit(&p, &r);
    for k in 0..n_steps {
        if loaded {
            let (u0, u_mid, u1) = (&curvature[2 * k], &curvature[2 * k + 1], &curvature[2 * k + 2]);
            let dr1 = r * u0;
            let r2 = r + dr1 * (0.5 * h);
            let dr2 = r2 * u_mid;
            let r3 = r + dr2 * (0.5 * h);
            let dr3 = r3 * u_mid;
            let r4 = r + dr3 * h;
            let dr4 = r4 * u1;
            let dp = r.column(2) + 2.0 * r2.column(2) + 2.0 * r3.column(2) + r4.column(2);
            p += dp * (h / 6.0);
            r = project_to_rotation(&(r + (dr1 + 2.0 * dr2 + 2.0 * dr3 + dr4) * (h / 6.0)));
        } else {
            p += r.column(2) * h;
        }
        visit(&p, &r);
    }
    Ok((p, h))
}

/// Integrates the rod from the base to the deployed length, returning
/// `n_steps + 1` frames.
pub fn forward_kinematics(spec: &RobotSpec, config: &Config, n_steps: usize) -> Result<BackboneShape> {
    let mut frames = Vec::with_capacity(n_steps + 1);
    let (_, arc_step) = integrate(spec, config, n_steps, |p, r| {
        frames.push(Frame { position: *p, orientation: *r })
    })?;
    Ok(BackboneShape { frames, arc_step })
}

/// Tip position only; same integration as `forward_kinematics` without storing frames.
pub fn forward_tip(spec: &RobotSpec, config: &Config, n_steps: usize) -> Result<Vector3<f64>> {
    integrate(spec, config, n_steps, |_, _| {}).map(|(p, _)| p)
}
