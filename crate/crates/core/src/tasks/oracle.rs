//! Parametric stand-ins for the human demonstrator's curves.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mesh::{project_to_surface, Mesh};
use super::{AnatomyTask, SphereTask};
use crate::error::{Error, Result};
use crate::learning::{ContextSchema, ContextVector};

fn expect_schema(context: &ContextVector, schema: ContextSchema) -> Result<()> {
    if context.schema() != schema {
        return Err(Error::SchemaMismatch { expected: schema.to_string(), got: context.schema().to_string() });
    }
    Ok(())
}

/// Constant shaping profile of both eight axes: `w` and `h` are the full
/// width and height of the curve.
pub const EIGHT_PROFILE: f64 = 0.5;

/// Displacement of the eight from `p_ref` at parameter `t`.
pub fn eight_displacement(t: f64, w: f64, h: f64) -> Vector3<f64> {
    Vector3::new(w * EIGHT_PROFILE * (2.0 * t).sin(), 0.0, h * EIGHT_PROFILE * t.sin())
}

/// Figure eight in the x-z plane through `p_ref`, `m` samples over one period.
pub fn oracle_eight(context: &ContextVector, m: usize) -> Result<Vec<Vector3<f64>>> {
    expect_schema(context, ContextSchema::EightPlane)?;
    let v = context.values();
    let (p_ref, w, h) = (context.p_ref(), v[3], v[4]);
    Ok((0..m)
        .map(|i| {
            if i == 0 || i + 1 == m {
                p_ref
            } else {
                p_ref + eight_displacement(TAU * i as f64 / (m - 1) as f64, w, h)
            }
        })
        .collect())
}

/// Orthonormal frame whose third axis is `axis`.
pub fn frame_about(axis: &Vector3<f64>) -> [Vector3<f64>; 3] {
    let e3 = axis.normalize();
    let seed = if e3.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (seed - e3 * seed.dot(&e3)).normalize();
    let e2 = e3.cross(&e1);
    [e1, e2, e3]
}

fn direction(frame: &[Vector3<f64>; 3], polar: f64, azimuth: f64) -> Vector3<f64> {
    (frame[0] * azimuth.cos() + frame[1] * azimuth.sin()) * polar.sin() + frame[2] * polar.cos()
}

/// Sphere centres and the pattern's start direction on sphere 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePair {
    pub c1: Vector3<f64>,
    pub r1: f64,
    pub c2: Vector3<f64>,
    pub r2: f64,
}

pub fn sphere_pair(task: &SphereTask, context: &ContextVector) -> Result<SpherePair> {
    expect_schema(context, ContextSchema::DoubleSphere)?;
    let v = context.values();
    let (r1, r2) = (v[3], v[4]);
    let frame = frame_about(&Vector3::from(task.stacking_axis));
    let c1 = context.p_ref() - direction(&frame, task.start_polar, task.start_azimuth) * r1;
    let c2 = c1 + frame[2] * (r1 + r2);
    Ok(SpherePair { c1, r1, c2, r2 })
}

/// Spiral from `p_ref` up to the tangency point on sphere 1, then the mirror
/// image of the same spiral down sphere 2.
pub fn oracle_double_sphere(task: &SphereTask, context: &ContextVector, m: usize) -> Result<Vec<Vector3<f64>>> {
    let pair = sphere_pair(task, context)?;
    let frame = frame_about(&Vector3::from(task.stacking_axis));
    let mirrored = [frame[0], frame[1], -frame[2]];
    let spiral = |u: f64| (task.start_polar * (1.0 - u), task.start_azimuth + task.sweep * u);
    let p_ref = context.p_ref();
    Ok((0..m)
        .map(|i| {
            if i == 0 {
                return p_ref;
            }
            let t = i as f64 / (m - 1) as f64;
            if t <= 0.5 {
                let (polar, az) = spiral(2.0 * t);
                pair.c1 + direction(&frame, polar, az) * pair.r1
            } else {
                let (polar, az) = spiral(2.0 * (1.0 - t));
                pair.c2 + direction(&mirrored, polar, az) * pair.r2
            }
        })
        .collect())
}

/// `p_ref + s (x - centroid)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub anchor: Vector3<f64>,
    pub scale: f64,
    pub p_ref: Vector3<f64>,
}

impl Placement {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.p_ref + (x - self.anchor) * self.scale
    }
}

pub fn anatomy_placement(mesh: &Mesh, context: &ContextVector) -> Result<Placement> {
    expect_schema(context, ContextSchema::Anatomy)?;
    Ok(Placement { anchor: mesh.centroid(), scale: context.values()[3], p_ref: context.p_ref() })
}

/// Diamond vertices in the mesh frame.
pub fn diamond_vertices(task: &AnatomyTask) -> [Vector3<f64>; 4] {
    let c = Vector3::from(task.diamond.center);
    let u = Vector3::from(task.diamond.u).normalize() * task.diamond.half_u;
    let v = Vector3::from(task.diamond.v).normalize() * task.diamond.half_v;
    [c - u, c + v, c + u, c - v]
}

/// `n` points equally spaced along the closed polygon, starting and ending
/// at its first vertex.
fn closed_polygon_samples(vertices: &[Vector3<f64>], n: usize) -> Vec<Vector3<f64>> {
    let k = vertices.len();
    let lengths: Vec<f64> = (0..k).map(|i| (vertices[(i + 1) % k] - vertices[i]).norm()).collect();
    let total: f64 = lengths.iter().sum();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        if j + 1 == n {
            out.push(vertices[0]);
            break;
        }
        let mut s = total * j as f64 / (n - 1) as f64;
        let mut e = 0;
        while e + 1 < k && s > lengths[e] {
            s -= lengths[e];
            e += 1;
        }
        let f = if lengths[e] > 0.0 { (s / lengths[e]).min(1.0) } else { 0.0 };
        out.push(vertices[e] + (vertices[(e + 1) % k] - vertices[e]) * f);
    }
    out
}

/// Diamond traced on the mesh wall, forward then back (`2m - 1` points). The
/// diamond keeps its size and its offset from `p_ref` while the mesh scales.
pub fn oracle_anatomy(task: &AnatomyTask, mesh: &Mesh, context: &ContextVector, m: usize) -> Result<Vec<Vector3<f64>>> {
    let place = anatomy_placement(mesh, context)?;
    let bound = mesh.diameter();
    let mut forward = Vec::with_capacity(m);
    for p in closed_polygon_samples(&diamond_vertices(task), m) {
        // nearest points commute with the similarity, so project in mesh coordinates
        let local = place.anchor + (p - place.anchor) / place.scale;
        let hit = project_to_surface(mesh, &local);
        if hit.distance > bound {
            return Err(Error::ProjectionFailure { distance: hit.distance * place.scale, bound: bound * place.scale });
        }
        forward.push(place.apply(&hit.point));
    }
    let mut out = forward.clone();
    out.extend(forward.iter().rev().skip(1));
    Ok(out)
}

/// Smooth perturbation parameters for the synthetic demonstrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Noise {
    /// Bound on the displacement norm of every point (m).
    pub amplitude: f64,
    /// Larger is smoother: sinusoid frequencies are drawn from
    /// `[0.5, 0.5 + 2 / smoothness]` cycles per trajectory.
    pub smoothness: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Self { amplitude: 0.002, smoothness: 1.0 }
    }
}

/// Adds per-axis sums of at most three random-phase sinusoids under a
/// `4t(1-t)` envelope, rescaled so the largest displacement has norm exactly
/// `amplitude`. Endpoints stay fixed.
pub fn humanize(points: &[Vector3<f64>], noise: &Noise, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    if points.len() < 2 || noise.amplitude == 0.0 {
        return points.to_vec();
    }
    let max_freq = 0.5 + 2.0 / noise.smoothness.max(1e-3);
    let mut axes: Vec<Vec<(f64, f64, f64)>> = Vec::with_capacity(3);
    for _ in 0..3 {
        let count = rng.gen_range(1..=3);
        let mut terms: Vec<(f64, f64, f64)> = (0..count)
            .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.5..max_freq), rng.gen_range(0.0..TAU)))
            .collect();
        let total: f64 = terms.iter().map(|t| t.0).sum::<f64>().max(f64::MIN_POSITIVE);
        for t in &mut terms {
            t.0 /= total;
        }
        axes.push(terms);
    }
    let n = points.len();
    let offsets: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            if i == 0 || i + 1 == n {
                return Vector3::zeros();
            }
            let t = i as f64 / (n - 1) as f64;
            let envelope = 4.0 * t * (1.0 - t);
            let mut d = Vector3::zeros();
            for (k, terms) in axes.iter().enumerate() {
                d[k] = envelope * terms.iter().map(|&(w, f, ph)| w * (TAU * f * t + ph).sin()).sum::<f64>();
            }
            d
        })
        .collect();
    let peak = offsets.iter().map(|d| d.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return points.to_vec();
    }
    let scale = noise.amplitude / peak;
    points.iter().zip(&offsets).map(|(p, d)| p + d * scale).collect()
}

