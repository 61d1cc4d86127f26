//! Triangle meshes: STL (ASCII and binary) and OBJ input, exact nearest-point
//! projection.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    /// Validates indices and drops zero-area triangles.
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidTask(format!("triangle {t:?} references a vertex beyond {n}")));
        }
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|&[a, b, c]| (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a])).norm() > 0.0)
            .collect();
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Ok(Self { vertices, triangles })
    }

    pub fn corners(&self, t: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for t in &self.triangles {
            for &i in t {
                lo = lo.inf(&self.vertices[i]);
                hi = hi.sup(&self.vertices[i]);
            }
        }
        (lo, hi)
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Area-weighted surface centroid.
    pub fn centroid(&self) -> Vector3<f64> {
        let mut sum = Vector3::zeros();
        let mut area = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            let w = (b - a).cross(&(c - a)).norm();
            sum += (a + b + c) * (w / 3.0);
            area += w;
        }
        sum / area
    }

    /// `p0 + s (x - anchor)` applied to every vertex.
    pub fn transformed(&self, anchor: &Vector3<f64>, scale: f64, p0: &Vector3<f64>) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|x| p0 + (x - anchor) * scale).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn to_ascii_stl(&self, name: &str) -> String {
        let mut out = format!("solid {name}\n");
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            let n = (b - a).cross(&(c - a)).normalize();
            let _ = writeln!(out, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z);
            out.push_str("    outer loop\n");
            for p in [a, b, c] {
                let _ = writeln!(out, "      vertex {:e} {:e} {:e}", p.x, p.y, p.z);
            }
            out.push_str("    endloop\n  endfacet\n");
        }
        let _ = writeln!(out, "endsolid {name}");
        out
    }
}

/// Closest point on triangle `abc` to `p`.
pub fn closest_point_on_triangle(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let n = ab.cross(&ac).normalize();
    p - n * n.dot(&ap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub point: Vector3<f64>,
    pub distance: f64,
    pub triangle: usize,
}

/// Globally nearest surface point (linear scan).
pub fn project_to_surface(mesh: &Mesh, p: &Vector3<f64>) -> SurfacePoint {
    let mut best = SurfacePoint { point: *p, distance: f64::INFINITY, triangle: 0 };
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.corners(t);
        let q = closest_point_on_triangle(p, &a, &b, &c);
        let d = (q - p).norm();
        if d < best.distance {
            best = SurfacePoint { point: q, distance: d, triangle: t };
        }
    }
    best
}

/// Loads `.stl` (ASCII or binary) or `.obj` by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("stl") => parse_stl(&bytes, path),
        Some("obj") => {
            let text = std::str::from_utf8(&bytes).map_err(|_| parse_err(path, 0, "file is not UTF-8 text"))?;
            parse_obj(text, path)
        }
        _ => Err(parse_err(path, 0, "unsupported mesh format (expected .stl or .obj)")),
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: PathBuf::from(path), line, msg: msg.into() }
}

/// Welds bit-identical vertices.
#[derive(Default)]
struct Welder {
    index: HashMap<[u64; 3], usize>,
    vertices: Vec<Vector3<f64>>,
}

impl Welder {
    fn add(&mut self, p: Vector3<f64>) -> usize {
        let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
        *self.index.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            self.vertices.len() - 1
        })
    }
}

pub fn parse_stl(bytes: &[u8], path: &Path) -> Result<Mesh> {
    if bytes.len() >= 84 {
        let count = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
        if count.checked_mul(50).and_then(|n| n.checked_add(84)) == Some(bytes.len()) {
            return parse_binary_stl(bytes, count);
        }
    }
    if bytes.trim_ascii_start().starts_with(b"solid") {
        let text = std::str::from_utf8(bytes).map_err(|_| parse_err(path, 0, "ASCII STL is not valid UTF-8"))?;
        return parse_ascii_stl(text, path);
    }
    Err(parse_err(path, 0, "neither a binary STL (size mismatch) nor an ASCII STL (no 'solid' header)"))
}

fn parse_binary_stl(bytes: &[u8], count: usize) -> Result<Mesh> {
    let mut welder = Welder::default();
    let mut triangles = Vec::with_capacity(count);
    for t in 0..count {
        let rec = &bytes[84 + 50 * t..84 + 50 * (t + 1)];
        let f = |i: usize| f32::from_le_bytes([rec[4 * i], rec[4 * i + 1], rec[4 * i + 2], rec[4 * i + 3]]) as f64;
        let mut tri = [0; 3];
        for (k, slot) in tri.iter_mut().enumerate() {
            let base = 3 + 3 * k;
            *slot = welder.add(Vector3::new(f(base), f(base + 1), f(base + 2)));
        }
        triangles.push(tri);
    }
    Mesh::new(welder.vertices, triangles)
}

fn parse_ascii_stl(text: &str, path: &Path) -> Result<Mesh> {
    let mut welder = Welder::default();
    let mut triangles = Vec::new();
    let mut pending: Vec<usize> = Vec::with_capacity(3);
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let mut tok = raw.split_whitespace();
        match tok.next() {
            None => {}
            Some("solid" | "facet" | "outer" | "endsolid") => {}
            Some("vertex") => {
                let coords: Vec<f64> = tok
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, line, format!("bad number {t:?}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 || coords.iter().any(|v| !v.is_finite()) {
                    return Err(parse_err(path, line, "vertex needs three finite coordinates"));
                }
                if pending.len() == 3 {
                    return Err(parse_err(path, line, "more than three vertices in a facet"));
                }
                pending.push(welder.add(Vector3::new(coords[0], coords[1], coords[2])));
            }
            Some("endloop") => {
                if pending.len() != 3 {
                    return Err(parse_err(path, line, format!("facet has {} vertices, expected 3", pending.len())));
                }
                triangles.push([pending[0], pending[1], pending[2]]);
                pending.clear();
            }
            Some("endfacet") => {}
            Some(other) => return Err(parse_err(path, line, format!("unexpected keyword {other:?}"))),
        }
    }
    if !pending.is_empty() {
        return Err(parse_err(path, text.lines().count(), "unterminated facet"));
    }
    Mesh::new(welder.vertices, triangles)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tok = content.split_whitespace();
        match tok.next() {
            Some("v") => {
                let coords: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, line, format!("bad number {t:?}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 || coords.iter().any(|v| !v.is_finite()) {
                    return Err(parse_err(path, line, "vertex needs three finite coordinates"));
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| parse_err(path, line, format!("bad face index {t:?}")))?;
                    let resolved = match i {
                        i if i > 0 && (i as usize) <= vertices.len() => i as usize - 1,
                        i if i < 0 && i.unsigned_abs() as usize <= vertices.len() => vertices.len() - i.unsigned_abs() as usize,
                        _ => return Err(parse_err(path, line, format!("face index {i} out of range"))),
                    };
                    idx.push(resolved);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, line, "face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, triangles)
}

/// Closed, pleural-cavity-like surface: a lumpy ellipsoid with a shallow
/// inward fold on one side, triangulated on a latitude/longitude grid.
pub fn synthetic_cavity(center: Vector3<f64>, semi_axes: Vector3<f64>, rings: usize, segments: usize) -> Mesh {
    use std::f64::consts::PI;
    let mut vertices = vec![center - Vector3::new(0.0, 0.0, semi_axes.z)];
    for i in 1..rings {
        let theta = PI * i as f64 / rings as f64;
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            let lump = 1.0 + 0.06 * (3.0 * phi).cos() * theta.sin() + 0.04 * (2.0 * theta).cos();
            let fold = 1.0 - 0.12 * (-((phi - PI).powi(2)) / 0.3).exp() * theta.sin().powi(2);
            let r = lump * fold;
            vertices.push(
                center
                    + Vector3::new(
                        semi_axes.x * r * theta.sin() * phi.cos(),
                        semi_axes.y * r * theta.sin() * phi.sin(),
                        -semi_axes.z * r * theta.cos(),
                    ),
            );
        }
    }
    vertices.push(center + Vector3::new(0.0, 0.0, semi_axes.z));
    let top = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * segments + j % segments;
    let mut triangles = Vec::new();
    for j in 0..segments {
        triangles.push([0, ring(1, j + 1), ring(1, j)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            triangles.push([ring(i, j), ring(i, j + 1), ring(i + 1, j + 1)]);
            triangles.push([ring(i, j), ring(i + 1, j + 1), ring(i + 1, j)]);
        }
    }
    for j in 0..segments {
        triangles.push([top, ring(rings - 1, j), ring(rings - 1, j + 1)]);
    }
    Mesh::new(vertices, triangles).expect("cavity triangulation is valid")
}
