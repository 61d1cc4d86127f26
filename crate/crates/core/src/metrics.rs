//! Arc-length resampling, discrete Fréchet distance and model evaluation.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ik::{plan_config_trajectory, IkSettings};
use crate::kinematics::{Config, RobotSpec};
use crate::learning::{ContextModel, ContextSchema, ContextVector, TipTrajectory};

/// Side length of the reference eight in both in-plane axes (m).
pub const REFERENCE_EIGHT_SIZE: f64 = 0.025;

/// `m` points equally spaced in arc length along the polyline. The first
/// and last input points are reproduced exactly.
pub fn resample_arclength(points: &[Vector3<f64>], m: usize) -> Result<TipTrajectory> {
    if m < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 output waypoints, got {m}")));
    }
    if points.len() < 2 {
        return Err(Error::DegenerateInput("need at least 2 input points".into()));
    }
    let mut cumulative = Vec::with_capacity(points.len());
    cumulative.push(0.0);
    for w in points.windows(2) {
        cumulative.push(cumulative[cumulative.len() - 1] + (w[1] - w[0]).norm());
    }
    let total = cumulative[cumulative.len() - 1];
    if !(total > 0.0) {
        return Err(Error::DegenerateInput("polyline has zero length".into()));
    }
    let mut out = Vec::with_capacity(m);
    out.push(points[0]);
    let mut seg = 0;
    for j in 1..m - 1 {
        let s = total * j as f64 / (m - 1) as f64;
        while seg + 2 < points.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let f = if len > 0.0 { ((s - cumulative[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(points[seg] + (points[seg + 1] - points[seg]) * f);
    }
    out.push(points[points.len() - 1]);
    TipTrajectory::new(out)
}

/// Discrete Fréchet distance. NaN if either curve is empty.
pub fn frechet_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut prev = vec![0.0_f64; b.len()];
    let mut cur = vec![0.0_f64; b.len()];
    for (i, pa) in a.iter().enumerate() {
        for (j, pb) in b.iter().enumerate() {
            let d = (pa - pb).norm();
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len() - 1]
}

fn eight_context(context: &ContextVector) -> Result<(Vector3<f64>, f64, f64)> {
    if context.schema() != ContextSchema::EightPlane {
        return Err(Error::SchemaMismatch { expected: ContextSchema::EightPlane.to_string(), got: context.schema().to_string() });
    }
    let v = context.values();
    Ok((context.p_ref(), v[3], v[4]))
}

/// Rescales an eight demonstration about its start point to the reference
/// size. x is divided by `40 w`, z by `40 h`, y is left alone.
pub fn to_reference_context(traj: &TipTrajectory, context: &ContextVector) -> Result<TipTrajectory> {
    let (p_ref, w, h) = eight_context(context)?;
    let div = Vector3::new(w / REFERENCE_EIGHT_SIZE, 1.0, h / REFERENCE_EIGHT_SIZE);
    TipTrajectory::new(traj.waypoints().iter().map(|p| p_ref + (p - p_ref).component_div(&div)).collect())
}

/// Reference-scaled displacement of every waypoint from the demo's `p_ref`.
pub fn reference_displacement(traj: &TipTrajectory, context: &ContextVector) -> Result<TipTrajectory> {
    let p_ref = context.p_ref();
    let scaled = to_reference_context(traj, context)?;
    TipTrajectory::new(scaled.waypoints().iter().map(|p| p - p_ref).collect())
}

/// Mean reference-scaled displacement curve, anchored at the origin.
pub fn reference_curve<'a, I>(demos: I) -> Result<TipTrajectory>
where
    I: IntoIterator<Item = (&'a ContextVector, &'a TipTrajectory)>,
{
    let mut sum: Option<Vec<Vector3<f64>>> = None;
    let mut count = 0usize;
    for (context, traj) in demos {
        let disp = reference_displacement(traj, context)?;
        match &mut sum {
            None => sum = Some(disp.into_waypoints()),
            Some(acc) => {
                if acc.len() != disp.len() {
                    return Err(Error::DimensionMismatch { expected: acc.len(), got: disp.len() });
                }
                for (a, d) in acc.iter_mut().zip(disp.waypoints()) {
                    *a += d;
                }
            }
        }
        count += 1;
    }
    let sum = sum.ok_or(Error::EmptyInput("reference curve needs at least one demonstration"))?;
    TipTrajectory::new(sum.into_iter().map(|p| p / count as f64).collect())
}

/// Robot, IK settings and start configuration used to execute predictions.
#[derive(Debug, Clone)]
pub struct Executor<'a> {
    pub spec: &'a RobotSpec,
    pub settings: &'a IkSettings,
    pub seed: Config,
}

impl<'a> Executor<'a> {
    pub fn new(spec: &'a RobotSpec, settings: &'a IkSettings) -> Self {
        Self { spec, settings, seed: Config::home(spec) }
    }

    /// Achieved tip curve and per-waypoint IK residuals.
    pub fn execute(&self, traj: &TipTrajectory) -> Result<(Vec<Vector3<f64>>, Vec<f64>)> {
        let plan = plan_config_trajectory(self.spec, traj.waypoints(), &self.seed, self.settings)?;
        let tips = plan.tip_points();
        Ok((tips, plan.residuals))
    }
}

#[derive(Debug, Clone)]
pub enum EvalMode {
    /// Score the reference-scaled executed curve against a reference curve.
    VsReference(TipTrajectory),
    /// Score the executed curve against each case's held-out demonstration.
    VsDemo,
}

#[derive(Debug, Clone)]
pub struct EvalCase {
    pub context: ContextVector,
    pub truth: Option<TipTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub context: Vec<f64>,
    /// m
    pub distance: f64,
    pub mean_ik_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub schema: ContextSchema,
    pub cases: Vec<CaseReport>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvaluationReport {
    pub fn from_cases(model: String, schema: ContextSchema, cases: Vec<CaseReport>) -> Self {
        let distances: Vec<f64> = cases.iter().map(|c| c.distance).collect();
        let (mean, std) = mean_std(&distances);
        Self { model, schema, cases, mean, std }
    }

    pub fn mean_ik_residual(&self) -> f64 {
        mean_std(&self.cases.iter().map(|c| c.mean_ik_residual).collect::<Vec<_>>()).0
    }

    /// One row per case plus a trailing summary row whose distance column
    /// holds the mean and whose `std` column holds the standard deviation.
    pub fn to_csv(&self) -> String {
        let names = self.schema.field_names();
        let mut out = String::from("case");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push_str(",distance,mean_ik_residual,std\n");
        for (i, c) in self.cases.iter().enumerate() {
            let _ = write!(out, "{i}");
            for v in &c.context {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{},", c.distance, c.mean_ik_residual);
        }
        out.push_str("summary");
        for _ in names {
            out.push(',');
        }
        let _ = writeln!(out, ",{},{},{}", self.mean, self.mean_ik_residual(), self.std);
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Predict, execute through IK and score every case. Cases run in parallel;
/// the report keeps input order.
pub fn evaluate_model(model: &ContextModel, cases: &[EvalCase], mode: &EvalMode, exec: &Executor) -> Result<EvaluationReport> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("evaluation needs at least one case"));
    }
    for case in cases {
        if case.context.schema() != model.schema() {
            return Err(Error::SchemaMismatch { expected: model.schema().to_string(), got: case.context.schema().to_string() });
        }
        if matches!(mode, EvalMode::VsDemo) && case.truth.is_none() {
            return Err(Error::EmptyInput("vs-demo evaluation needs a demonstration per case"));
        }
    }
    let reports: Result<Vec<CaseReport>> = cases
        .par_iter()
        .map(|case| {
            let predicted = model.predict(&case.context)?;
            let (tips, residuals) = exec.execute(&predicted)?;
            let executed = TipTrajectory::new(tips)?;
            let distance = match mode {
                EvalMode::VsReference(reference) => {
                    let disp = reference_displacement(&executed, &case.context)?;
                    frechet_distance(disp.waypoints(), reference.waypoints())
                }
                EvalMode::VsDemo => {
                    let truth = case.truth.as_ref().expect("checked above");
                    frechet_distance(executed.waypoints(), truth.waypoints())
                }
            };
            Ok(CaseReport {
                context: case.context.values().to_vec(),
                distance,
                mean_ik_residual: mean_std(&residuals).0,
            })
        })
        .collect();
    Ok(EvaluationReport::from_cases(model.describe(), model.schema(), reports?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn resample_segment_and_l_shape() {
        let t = resample_arclength(&[v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)], 3).unwrap();
        assert_eq!(t.waypoints(), &[v(0.0, 0.0, 0.0), v(0.5, 0.0, 0.0), v(1.0, 0.0, 0.0)]);
        let t = resample_arclength(&[v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(1.0, 1.0, 0.0)], 5).unwrap();
        let expected = [v(0.0, 0.0, 0.0), v(0.5, 0.0, 0.0), v(1.0, 0.0, 0.0), v(1.0, 0.5, 0.0), v(1.0, 1.0, 0.0)];
        for (a, b) in t.waypoints().iter().zip(expected) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn resample_rejects_zero_length() {
        let p = v(0.3, 0.2, 0.1);
        assert!(matches!(resample_arclength(&[p, p, p], 4), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn frechet_hand_case() {
        let a = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0)];
        let b = [v(0.0, 1.0, 0.0), v(2.0, 1.0, 0.0)];
        // (1,0,0) is sqrt(2) from both points of b, whatever the coupling
        assert_eq!(frechet_distance(&a, &b), 2.0_f64.sqrt());
        assert_eq!(frechet_distance(&a, &a), 0.0);
    }

    #[test]
    fn reference_scaling_by_hand() {
        let c = ContextVector::from_task_values(ContextSchema::EightPlane, vec![0.0, 0.0, 0.0, 0.05, 0.0125]).unwrap();
        let t = TipTrajectory::new(vec![v(0.0, 0.0, 0.0), v(2.0, 3.0, 1.0)]).unwrap();
        let r = to_reference_context(&t, &c).unwrap();
        assert_eq!(r.waypoints()[1], v(1.0, 3.0, 2.0));
    }

    #[test]
    fn reference_curve_of_opposites_is_zero() {
        let c = ContextVector::from_task_values(ContextSchema::EightPlane, vec![0.1, 0.0, 0.1, 0.025, 0.025]).unwrap();
        let f = [v(0.0, 0.0, 0.0), v(0.01, 0.0, 0.02), v(-0.01, 0.0, 0.005)];
        let a = TipTrajectory::new(f.iter().map(|d| c.p_ref() + d).collect()).unwrap();
        let b = TipTrajectory::new(f.iter().map(|d| c.p_ref() - d).collect()).unwrap();
        let r = reference_curve([(&c, &a), (&c, &b)]).unwrap();
        assert!(r.waypoints().iter().all(|p| p.norm() < 1e-17));
        assert!(matches!(reference_curve(std::iter::empty()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn csv_summary_row() {
        let cases = vec![
            CaseReport { context: vec![0.0, 0.0, 0.1, 1.0, 1.0], distance: 0.01, mean_ik_residual: 1e-5 },
            CaseReport { context: vec![0.0, 0.0, 0.1, 1.2, 1.0], distance: 0.03, mean_ik_residual: 3e-5 },
        ];
        let r = EvaluationReport::from_cases("m".into(), ContextSchema::Anatomy, cases);
        assert!((r.mean - 0.02).abs() < 1e-15);
        assert!((r.std - 0.01).abs() < 1e-15);
        let csv = r.to_csv();
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("summary,"));
        assert_eq!(csv.lines().count(), 4);
    }
}
