//! Damped least squares inverse kinematics for tip-position targets.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{clamp_config, forward_tip, Config, DofKind, RobotSpec, DEFAULT_FK_STEPS};

/// Finite-difference step per kind of degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdSteps {
    /// N
    pub tension: f64,
    /// m
    pub insertion: f64,
    /// rad
    pub rotation: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self { tension: 1e-4, insertion: 1e-4, rotation: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkSettings {
    pub damping: f64,
    pub fd_step: FdSteps,
    /// Converged once the tip error drops below this (m).
    pub tol: f64,
    pub max_iters: usize,
    /// Initial multiplier on the damped least squares update.
    pub step_scale: f64,
    /// Integration steps used by every forward kinematics call.
    pub fk_steps: usize,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            fd_step: FdSteps::default(),
            tol: 1e-4,
            max_iters: 200,
            step_scale: 1.0,
            fk_steps: DEFAULT_FK_STEPS,
        }
    }
}

impl IkSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.tol > 0.0 && self.max_iters >= 1 && self.step_scale > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid IK settings: {self:?}")));
        }
        Ok(())
    }
}

const MAX_HALVINGS: usize = 8;

fn bounds(spec: &RobotSpec, kind: DofKind) -> (f64, f64) {
    match kind {
        DofKind::Tension(i) => (0.0, spec.tension_max[i]),
        DofKind::Insertion => (0.0, spec.insertion_max),
        DofKind::Rotation => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

fn tip_of(spec: &RobotSpec, q: &[f64], settings: &IkSettings) -> Result<(Config, Vector3<f64>)> {
    let config = clamp_config(spec, q)?;
    let tip = forward_tip(spec, &config, settings.fk_steps)?;
    Ok((config, tip))
}

/// Finite-difference Jacobian of the tip position with respect to the enabled
/// degrees of freedom (3 x dof). Probes never leave the actuation limits: at a
/// bound the difference is one-sided.
pub fn tip_jacobian(spec: &RobotSpec, config: &Config, settings: &IkSettings) -> Result<DMatrix<f64>> {
    let tip = forward_tip(spec, config, settings.fk_steps)?;
    jacobian_at(spec, config, &tip, settings)
}

fn jacobian_at(
    spec: &RobotSpec,
    config: &Config,
    tip: &Vector3<f64>,
    settings: &IkSettings,
) -> Result<DMatrix<f64>> {
    let q = config.dof_vector(spec);
    let kinds = spec.dof_kinds();
    let mut jac = DMatrix::zeros(3, kinds.len());
    let mut probe = q.clone();
    for (j, &kind) in kinds.iter().enumerate() {
        let h = match kind {
            DofKind::Tension(_) => settings.fd_step.tension,
            DofKind::Insertion => settings.fd_step.insertion,
            DofKind::Rotation => settings.fd_step.rotation,
        };
        let (lo, hi) = bounds(spec, kind);
        let v = q[j];
        let up = v + h <= hi;
        let down = v - h >= lo;
        let mut eval = |x: f64| -> Result<Vector3<f64>> {
            probe[j] = x;
            let (_, t) = tip_of(spec, probe.as_slice(), settings)?;
            probe[j] = v;
            Ok(t)
        };
        let column = match (up, down) {
            (true, true) => (eval(v + h)? - eval(v - h)?) / (2.0 * h),
            (true, false) => (eval(v + h)? - tip) / h,
            (false, true) => (tip - eval(v - h)?) / h,
            // range narrower than the probe step
            (false, false) => Vector3::zeros(),
        };
        jac.set_column(j, &column);
    }
    Ok(jac)
}

/// `Jᵀ (J Jᵀ + λ² I)⁻¹ e`
fn dls_update(jac: &DMatrix<f64>, error: &Vector3<f64>, damping: f64) -> Result<DVector<f64>> {
    let jjt: Matrix3<f64> = (jac * jac.transpose()).fixed_view::<3, 3>(0, 0).into_owned()
        + Matrix3::identity() * (damping * damping);
    let chol = jjt.cholesky().ok_or(Error::SingularUpdate)?;
    let y = chol.solve(error);
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularUpdate);
    }
    Ok(jac.transpose() * DVector::from_column_slice(y.as_slice()))
}

#[derive(Debug, Clone)]
struct StepOutcome {
    config: Config,
    tip: Vector3<f64>,
    error: f64,
}

fn step_from(
    spec: &RobotSpec,
    config: &Config,
    tip: &Vector3<f64>,
    target: &Vector3<f64>,
    settings: &IkSettings,
) -> Result<StepOutcome> {
    let e = target - tip;
    let err0 = e.norm();
    let unchanged = || StepOutcome { config: config.clone(), tip: *tip, error: err0 };
    if err0 == 0.0 {
        return Ok(unchanged());
    }
    let mut jac = jacobian_at(spec, config, tip, settings)?;
    let q = config.dof_vector(spec);
    // Degrees of freedom pinned at a limit whose descent direction points
    // outward are frozen; the remaining update is clamped by the trial.
    let grad = jac.transpose() * DVector::from_column_slice(e.as_slice());
    for (j, &kind) in spec.dof_kinds().iter().enumerate() {
        let (lo, hi) = bounds(spec, kind);
        if (q[j] <= lo && grad[j] < 0.0) || (q[j] >= hi && grad[j] > 0.0) {
            jac.column_mut(j).fill(0.0);
        }
    }
    let dq = dls_update(&jac, &e, settings.damping)?;
    let mut scale = settings.step_scale;
    for _ in 0..=MAX_HALVINGS {
        let trial = &q + &dq * scale;
        let (candidate, t) = tip_of(spec, trial.as_slice(), settings)?;
        let err = (target - t).norm();
        if err <= err0 {
            return Ok(StepOutcome { config: candidate, tip: t, error: err });
        }
        scale *= 0.5;
    }
    Ok(unchanged())
}

/// One damped least squares update with backtracking. The returned
/// configuration is valid and its tip error never exceeds the input's.
pub fn ik_step(spec: &RobotSpec, config: &Config, target: &Vector3<f64>, settings: &IkSettings) -> Result<Config> {
    let tip = forward_tip(spec, config, settings.fk_steps)?;
    step_from(spec, config, &tip, target, settings).map(|o| o.config)
}

#[derive(Debug, Clone)]
pub struct IkSolution {
    pub config: Config,
    pub tip: Vector3<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Tip error before the first step and after every step.
    pub error_history: Vec<f64>,
}

/// Iterates `ik_step` from `seed` until the residual drops below `tol`, the
/// update stalls, or `max_iters` is reached. Non-convergence is reported
/// through the residual rather than an error.
pub fn solve_ik(spec: &RobotSpec, seed: &Config, target: &Vector3<f64>, settings: &IkSettings) -> Result<IkSolution> {
    settings.validate()?;
    let tip = forward_tip(spec, seed, settings.fk_steps)?;
    let mut best = StepOutcome { config: seed.clone(), tip, error: (target - tip).norm() };
    let mut history = vec![best.error];
    let mut iterations = 0;
    while best.error >= settings.tol && iterations < settings.max_iters {
        let next = match step_from(spec, &best.config, &best.tip, target, settings) {
            Ok(next) => next,
            Err(Error::SingularUpdate) => break,
            Err(e) => return Err(e),
        };
        iterations += 1;
        history.push(next.error);
        let stalled = next.config == best.config;
        if next.error <= best.error {
            best = next;
        }
        if stalled {
            break;
        }
    }
    Ok(IkSolution { config: best.config, tip: best.tip, residual: best.error, iterations, error_history: history })
}

/// Configuration-space execution of a tip trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigTrajectory {
    pub waypoints: Vec<Config>,
    /// Achieved tip position per waypoint.
    pub tips: Vec<[f64; 3]>,
    /// Distance between the achieved tip and the requested waypoint (m).
    pub residuals: Vec<f64>,
}

impl ConfigTrajectory {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn mean_residual(&self) -> f64 {
        if self.residuals.is_empty() {
            return 0.0;
        }
        self.residuals.iter().sum::<f64>() / self.residuals.len() as f64
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn tip_points(&self) -> Vec<Vector3<f64>> {
        self.tips.iter().map(|t| Vector3::from(*t)).collect()
    }

    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.waypoints.reverse();
        out.tips.reverse();
        out.residuals.reverse();
        out
    }
}

/// Solves IK waypoint by waypoint, warm-starting each solve from the previous
/// solution (the first from `seed`).
pub fn plan_config_trajectory(
    spec: &RobotSpec,
    waypoints: &[Vector3<f64>],
    seed: &Config,
    settings: &IkSettings,
) -> Result<ConfigTrajectory> {
    if waypoints.is_empty() {
        return Err(Error::EmptyInput("trajectory has no waypoints"));
    }
    let mut current = seed.clone();
    let mut out = ConfigTrajectory {
        waypoints: Vec::with_capacity(waypoints.len()),
        tips: Vec::with_capacity(waypoints.len()),
        residuals: Vec::with_capacity(waypoints.len()),
    };
    for target in waypoints {
        let sol = solve_ik(spec, &current, target, settings)?;
        out.tips.push(sol.tip.into());
        out.residuals.push(sol.residual);
        out.waypoints.push(sol.config.clone());
        current = sol.config;
    }
    Ok(out)
}
