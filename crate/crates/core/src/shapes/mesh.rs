//! Triangle meshes, surface reconstruction from coefficients and enclosed volumes.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::io::{BufRead, Write};

use log::warn;
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{gen_equiangular, icosphere, Direction, SphericalGrid};
use crate::harmonics::ShCoefficients;
use crate::quadrature::{dh_ring_coefficient, QuadratureWeights};
use crate::shapes::star::StarShape;
use crate::transform::{forward_sht, synthesize_real};

/// Lower clamp for synthesized radii.
pub const MIN_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::InvalidParameter(format!(
                "triangle {t:?} references a missing vertex"
            )));
        }
        Ok(Self { vertices, triangles })
    }

    /// Mesh of `center + f(u)·u` over the vertices `u` of an icosphere of frequency `k`.
    pub fn from_radial<F: Fn(&Vector3<f64>) -> f64 + Sync + Send>(
        center: Vector3<f64>,
        k: usize,
        f: F,
    ) -> Result<Self> {
        let (dirs, triangles) = icosphere(k)?;
        let vertices = dirs.par_iter().map(|u| center + u * f(u)).collect();
        Ok(Self { vertices, triangles })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_areas(&self) -> Vec<f64> {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .collect()
    }

    pub fn area(&self) -> f64 {
        self.triangle_areas().iter().sum()
    }

    /// Every undirected edge is shared by exactly two triangles that traverse it
    /// in opposite directions.
    pub fn check_watertight(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::Empty("mesh"));
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                if a == b {
                    return Err(Error::NotWatertight(format!("degenerate triangle {t:?}")));
                }
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            if n != 1 {
                return Err(Error::NotWatertight(format!("edge {a}->{b} used {n} times")));
            }
            if !directed.contains_key(&(b, a)) {
                return Err(Error::NotWatertight(format!("edge {a}-{b} is a boundary")));
            }
        }
        Ok(())
    }

    /// Signed tetrahedron sum about the origin; positive for outward faces.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c]))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn transformed(&self, r: &Matrix3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| r * v).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// `v` and `f` records only; texture or normal indices after `/` are ignored.
    pub fn read_obj<R: BufRead>(reader: R) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (no, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let bad = |msg: &str| Error::InvalidParameter(format!("obj line {}: {msg}", no + 1));
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("v") => {
                    let xyz: Vec<f64> = tok
                        .take(3)
                        .map(|t| t.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("bad vertex"))?;
                    if xyz.len() != 3 {
                        return Err(bad("vertex needs three coordinates"));
                    }
                    vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = tok
                        .map(|t| {
                            t.split('/')
                                .next()
                                .and_then(|s| s.parse::<usize>().ok())
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                        })
                        .collect::<Option<_>>()
                        .ok_or_else(|| bad("bad face index"))?;
                    if idx.len() < 3 {
                        return Err(bad("face needs three vertices"));
                    }
                    // fan-triangulate polygons
                    for i in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[i], idx[i + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles)
    }

    pub fn write_obj<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }
}

/// Volume of a closed mesh.
pub fn enclosed_volume_mesh(mesh: &SurfaceMesh) -> Result<f64> {
    mesh.check_watertight()?;
    Ok(mesh.signed_volume())
}

/// `V = (2π√2 / 3) Σ_j w_j r_j³`.
pub fn enclosed_volume_radial(shape: &StarShape, weights: &QuadratureWeights) -> Result<f64> {
    if shape.radial.grid_id != weights.grid().id() {
        return Err(Error::GridMismatch);
    }
    Ok(volume_from_radii(shape.radii(), weights.weights()))
}

fn volume_from_radii(radii: &[f64], weights: &[f64]) -> f64 {
    2.0 * PI * SQRT_2 / 3.0 * radii.iter().zip(weights).map(|(r, w)| w * r * r * r).sum::<f64>()
}

/// Per-point Driscoll–Healy weights for the equiangular grid of bandwidth `b`,
/// without building the residual.
fn dh_point_weights(b: usize) -> Vec<f64> {
    let rings = 2 * b;
    (0..rings * rings)
        .map(|i| dh_ring_coefficient(b, i / rings) / (4.0 * b as f64))
        .collect()
}

/// Volume of `r(u)` by Driscoll–Healy quadrature of `r³/3` at bandwidth `b`
/// (exact when `r³` is band-limited below `2b`).
pub fn radial_function_volume<F: Fn(&Vector3<f64>) -> f64 + Sync + Send>(f: F, b: usize) -> Result<f64> {
    let grid = gen_equiangular(b)?;
    let radii: Vec<f64> = grid.unit_vectors().par_iter().map(f).collect();
    Ok(volume_from_radii(&radii, &dh_point_weights(b)))
}

/// Volume enclosed by the synthesized radius of `coeffs` (clamped at [`MIN_RADIUS`]),
/// using a grid fine enough to integrate `r³` exactly.
pub fn coefficient_volume(coeffs: &ShCoefficients) -> Result<f64> {
    let b = coeffs.bandwidth();
    // r³ has degree < 3b − 2, so bandwidth 2b integrates it exactly
    let grid = gen_equiangular((2 * b).max(1))?;
    let radii: Vec<f64> = synthesize_real(coeffs, grid.points())
        .into_iter()
        .map(|r| r.max(MIN_RADIUS))
        .collect();
    Ok(volume_from_radii(&radii, &dh_point_weights((2 * b).max(1))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub mesh: SurfaceMesh,
    pub coefficients: ShCoefficients,
    /// Share of mesh vertices whose synthesized radius was raised to [`MIN_RADIUS`].
    pub clamped_fraction: f64,
}

impl Reconstruction {
    pub fn clamped(&self) -> bool {
        self.clamped_fraction > 0.0
    }
}

/// Analyzes the radial field at bandwidth `b` and synthesizes it on an
/// icosphere mesh of frequency `mesh_frequency` around the shape's center.
pub fn reconstruct_surface(
    shape: &StarShape,
    weights: &QuadratureWeights,
    b: usize,
    mesh_frequency: usize,
) -> Result<Reconstruction> {
    let coefficients = forward_sht(&shape.radial, weights, b)?;
    let (dirs, triangles) = icosphere(mesh_frequency)?;
    let targets: Vec<Direction> = dirs.iter().map(Direction::from_unit_vector).collect();
    let radii = synthesize_real(&coefficients, &targets);
    let clamped = radii.iter().filter(|r| !(**r >= MIN_RADIUS)).count();
    if clamped == radii.len() {
        return Err(Error::DegenerateReconstruction);
    }
    if clamped > 0 {
        warn!("clamped {clamped} of {} synthesized radii", radii.len());
    }
    let vertices = dirs
        .iter()
        .zip(&radii)
        .map(|(u, r)| shape.center + u * r.max(MIN_RADIUS))
        .collect();
    Ok(Reconstruction {
        mesh: SurfaceMesh { vertices, triangles },
        coefficients,
        clamped_fraction: clamped as f64 / radii.len() as f64,
    })
}

/// Radii of `coeffs` at arbitrary directions, clamped at [`MIN_RADIUS`].
pub fn synthesize_radii(coeffs: &ShCoefficients, grid: &SphericalGrid) -> Vec<f64> {
    synthesize_real(coeffs, grid.points())
        .into_iter()
        .map(|r| r.max(MIN_RADIUS))
        .collect()
}
