//! Symmetric surface-to-surface distance statistics.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shapes::mesh::SurfaceMesh;
use crate::spatial::PointIndex;

/// Fewest samples per surface accepted by [`surface_deviation`].
pub const MIN_DEVIATION_SAMPLES: usize = 1000;
/// Vertices whose incident triangles are searched per query.
const CANDIDATE_VERTICES: usize = 8;

/// Closest point of triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Vector3<f64> {
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
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Nearest-surface queries against a fixed mesh.
pub struct MeshDistance<'a> {
    mesh: &'a SurfaceMesh,
    index: PointIndex,
    incident: Vec<Vec<usize>>,
}

impl<'a> MeshDistance<'a> {
    pub fn new(mesh: &'a SurfaceMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::Empty("mesh"));
        }
        let mut incident = vec![Vec::new(); mesh.vertices.len()];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            for &v in tri {
                incident[v].push(t);
            }
        }
        Ok(Self {
            mesh,
            index: PointIndex::new(&mesh.vertices),
            incident,
        })
    }

    /// Distance from `p` to the triangles around its nearest vertices.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        let k = CANDIDATE_VERTICES.min(self.mesh.vertices.len());
        let mut best = f64::INFINITY;
        for (v, _) in self.index.nearest_n(p, k) {
            for &t in &self.incident[v] {
                let [a, b, c] = self.mesh.triangle(t);
                best = best.min((closest_point_on_triangle(p, &a, &b, &c) - p).norm_squared());
            }
        }
        best.sqrt()
    }
}

/// `n` points spread over the surface in proportion to area.
///
/// Triangles are picked by systematic sampling of the area CDF and the point
/// inside each triangle follows an additive-recurrence low-discrepancy sequence,
/// so the sampling is deterministic and evenly stratified.
pub fn sample_surface(mesh: &SurfaceMesh, n: usize) -> Result<Vec<Vector3<f64>>> {
    if mesh.is_empty() {
        return Err(Error::Empty("mesh"));
    }
    let areas = mesh.triangle_areas();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("mesh has zero area".into()));
    }
    // plastic-number recurrence
    const A1: f64 = 0.754_877_666_246_692_7;
    const A2: f64 = 0.569_840_290_998_053_3;
    let mut out = Vec::with_capacity(n);
    let mut t = 0;
    let mut acc = areas[0];
    for i in 0..n {
        let target = (i as f64 + 0.5) / n as f64 * total;
        while acc < target && t + 1 < areas.len() {
            t += 1;
            acc += areas[t];
        }
        let u = (0.5 + A1 * i as f64).fract();
        let v = (0.5 + A2 * i as f64).fract();
        let (u, v) = if u + v > 1.0 { (1.0 - u, 1.0 - v) } else { (u, v) };
        let [a, b, c] = mesh.triangle(t);
        out.push(a + (b - a) * u + (c - a) * v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub rmse: f64,
    pub mae: f64,
    pub hausdorff_max: f64,
    /// Samples taken on each surface.
    pub samples: usize,
}

/// One sampled point and its distance to the other surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationSample {
    pub point: Vector3<f64>,
    pub distance: f64,
}

/// Distances from `samples` points on `from` to the surface `to`.
pub fn deviation_field(from: &SurfaceMesh, to: &MeshDistance<'_>, samples: usize) -> Result<Vec<DeviationSample>> {
    let pts = sample_surface(from, samples)?;
    Ok(pts
        .par_iter()
        .map(|p| DeviationSample {
            point: *p,
            distance: to.distance(p),
        })
        .collect())
}

fn aggregate(d: impl Iterator<Item = f64>) -> (f64, f64, f64, usize) {
    d.fold((0.0, 0.0, 0.0f64, 0), |(sq, ab, mx, n), x| (sq + x * x, ab + x, mx.max(x), n + 1))
}

/// RMSE, MAE and maximum of the symmetric nearest-surface distance field,
/// with `samples` points on each surface.
pub fn surface_deviation(a: &SurfaceMesh, b: &SurfaceMesh, samples: usize) -> Result<DeviationReport> {
    let da = MeshDistance::new(a)?;
    let db = MeshDistance::new(b)?;
    surface_deviation_indexed(&da, &db, samples)
}

/// As [`surface_deviation`], reusing prebuilt distance structures.
pub fn surface_deviation_indexed(
    a: &MeshDistance<'_>,
    b: &MeshDistance<'_>,
    samples: usize,
) -> Result<DeviationReport> {
    if samples < MIN_DEVIATION_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_DEVIATION_SAMPLES} samples, got {samples}"
        )));
    }
    let ab = deviation_field(a.mesh, b, samples)?;
    let ba = deviation_field(b.mesh, a, samples)?;
    let (sq, abs, max, n) = aggregate(ab.iter().chain(&ba).map(|s| s.distance));
    let n = n as f64;
    Ok(DeviationReport {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        hausdorff_max: max,
        samples,
    })
}
