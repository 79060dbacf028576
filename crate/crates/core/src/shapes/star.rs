//! Star-shaped solids described by a radius per direction.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{gen_fibonacci, SphericalGrid};
use crate::harmonics::ShCoefficients;
use crate::quadrature::uniform_direction;
use crate::shapes::cloud::PointCloud;
use crate::spatial::PointIndex;
use crate::transform::{FieldValues, RadialField};

/// Below this angle a cloud direction counts as coincident with a grid direction.
pub const COINCIDENT_ANGLE: f64 = 1e-9;

/// A radius for every direction of one grid, about `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarShape {
    pub center: Vector3<f64>,
    pub radial: RadialField,
}

impl StarShape {
    pub fn new(center: Vector3<f64>, grid: &SphericalGrid, radii: Vec<f64>) -> Result<Self> {
        if let Some(bad) = radii.iter().find(|r| !(**r > 0.0)) {
            return Err(Error::InvalidParameter(format!("radius {bad} is not positive")));
        }
        Ok(Self {
            center,
            radial: RadialField::real(grid, radii)?,
        })
    }

    pub fn radii(&self) -> &[f64] {
        match &self.radial.values {
            FieldValues::Real(v) => v,
            FieldValues::Complex(_) => unreachable!("star shapes hold real radii"),
        }
    }
}

/// Resamples a cloud onto `grid` by inverse-square angular-distance weighting
/// of the `k` nearest cloud directions, seen from the cloud's center.
///
/// Points are sorted before indexing, so the result ignores input order.
pub fn radial_from_pointcloud(cloud: &PointCloud, grid: &SphericalGrid, k: usize) -> Result<StarShape> {
    if grid.is_empty() {
        return Err(Error::Empty("grid"));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("neighbour count must be >= 1".into()));
    }
    // sort first so the centroid sum does not depend on input order
    let mut sorted = cloud.clone();
    sorted.canonicalize();
    let center = sorted.center()?;
    let (dirs, radii): (Vec<Vector3<f64>>, Vec<f64>) = sorted
        .points()
        .iter()
        .filter_map(|p| {
            let d = p - center;
            let r = d.norm();
            (r > 0.0 && r.is_finite()).then(|| (d / r, r))
        })
        .unzip();
    if dirs.is_empty() {
        return Err(Error::DegenerateCloud("every point sits at the center".into()));
    }
    if k > dirs.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the {} usable cloud points",
            dirs.len()
        )));
    }
    let index = PointIndex::new(&dirs);
    let out: Vec<f64> = grid
        .unit_vectors()
        .par_iter()
        .map(|q| {
            let hits = index.nearest_n(q, k);
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, sq) in hits {
                // chord length c = 2 sin(γ/2)
                let angle = 2.0 * (0.5 * sq.max(0.0).sqrt()).min(1.0).asin();
                if angle < COINCIDENT_ANGLE {
                    return radii[i];
                }
                let w = 1.0 / (angle * angle);
                num += w * radii[i];
                den += w;
            }
            num / den
        })
        .collect();
    StarShape::new(center, grid, out)
}

/// A polar cap `amplitude · ((1 + u·axis) / 2)^degree`.
///
/// The cap is a polynomial of the given degree in `u`, so it is band-limited:
/// its expansion stops at that degree. Large degrees give narrow lobes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialBump {
    pub axis: Vector3<f64>,
    pub amplitude: f64,
    pub degree: u32,
}

impl RadialBump {
    pub fn value(&self, u: &Vector3<f64>) -> f64 {
        let x = (0.5 * (1.0 + u.dot(&self.axis))).clamp(0.0, 1.0);
        self.amplitude * x.powi(self.degree as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Smooth,
    Sharp,
}

/// Analytic star shape `r(u) = scale · (1 + Σ bumps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarParams {
    pub family: ShapeFamily,
    pub scale: f64,
    pub bumps: Vec<RadialBump>,
}

impl StarParams {
    /// Radius along the unit vector `u`.
    pub fn radius(&self, u: &Vector3<f64>) -> f64 {
        let s: f64 = self.bumps.iter().map(|b| b.value(u)).sum();
        self.scale * (1.0 + s)
    }

    /// Highest harmonic degree present.
    pub fn degree(&self) -> usize {
        self.bumps.iter().map(|b| b.degree as usize).max().unwrap_or(0)
    }

    /// Guaranteed lower bound on the radius.
    pub fn min_radius_bound(&self) -> f64 {
        let neg: f64 = self.bumps.iter().map(|b| (-b.amplitude).max(0.0)).sum();
        self.scale * (1.0 - neg)
    }

    /// The same shape turned by `r`: `r'(u) = r(Rᵀu)`.
    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        let mut out = self.clone();
        for b in &mut out.bumps {
            b.axis = r * b.axis;
        }
        out
    }

    /// Copy scaled so its axis-aligned bounding box has largest extent 1,
    /// estimated on a dense Fibonacci sampling.
    pub fn normalized(&self) -> Self {
        let dirs = gen_fibonacci(40_000).expect("nonzero count").unit_vectors();
        let (lo, hi) = dirs.iter().fold(
            (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), u| {
                let p = u * self.radius(u);
                (lo.inf(&p), hi.sup(&p))
            },
        );
        let mut out = self.clone();
        out.scale /= (hi - lo).max();
        out
    }

    /// Exact radii on `grid` about the origin.
    pub fn star_shape(&self, grid: &SphericalGrid) -> Result<StarShape> {
        let radii = grid.unit_vectors().par_iter().map(|u| self.radius(u)).collect();
        StarShape::new(Vector3::zeros(), grid, radii)
    }

    /// Surface points along the given unit directions (ray casting from the origin).
    pub fn sample_along(&self, dirs: &[Vector3<f64>]) -> PointCloud {
        let pts = dirs.par_iter().map(|u| u * self.radius(u)).collect();
        PointCloud::new(pts).with_center(Vector3::zeros())
    }

    /// `n` surface points along seeded uniform random directions; center pinned at the origin.
    pub fn sample_cloud(&self, n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                let u = uniform_direction(&mut rng);
                u * self.radius(&u)
            })
            .collect();
        PointCloud::new(pts).with_center(Vector3::zeros())
    }
}

/// Largest total negative amplitude, keeping every radius ≥ 0.2.
const MAX_NEGATIVE_MASS: f64 = 0.8;

/// Reproducible synthetic star shapes; even indices are smooth blobs, odd
/// indices carry narrow, sharp lobes.
pub fn synth_star_corpus(count: usize, seed: u64) -> Result<Vec<StarParams>> {
    if count == 0 {
        return Err(Error::InvalidParameter("corpus needs at least one shape".into()));
    }
    Ok((0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let family = if i % 2 == 0 { ShapeFamily::Smooth } else { ShapeFamily::Sharp };
            synth_star(family, &mut rng)
        })
        .collect())
}

/// One random shape of the given family.
pub fn synth_star<R: Rng + ?Sized>(family: ShapeFamily, rng: &mut R) -> StarParams {
    let (count, degree, amp) = match family {
        ShapeFamily::Smooth => (rng.random_range(3..=6), 4..=12, (-0.35, 0.6)),
        ShapeFamily::Sharp => (rng.random_range(5..=9), 300..=1200, (-0.3, 0.9)),
    };
    let mut bumps: Vec<RadialBump> = (0..count)
        .map(|_| RadialBump {
            axis: uniform_direction(rng),
            amplitude: rng.random_range(amp.0..amp.1),
            degree: rng.random_range(degree.clone()),
        })
        .collect();
    let neg: f64 = bumps.iter().map(|b| (-b.amplitude).max(0.0)).sum();
    if neg > MAX_NEGATIVE_MASS {
        let shrink = MAX_NEGATIVE_MASS / neg;
        for b in bumps.iter_mut().filter(|b| b.amplitude < 0.0) {
            b.amplitude *= shrink;
        }
    }
    StarParams {
        family,
        scale: 1.0,
        bumps,
    }
}

/// Share of the non-constant energy carried by degrees above `l`.
pub fn relative_energy_above(coeffs: &ShCoefficients, l: usize) -> f64 {
    let e = coeffs.degree_energies();
    let total: f64 = e.iter().skip(1).map(|x| x * x).sum();
    if total == 0.0 {
        return 0.0;
    }
    e.iter().skip(l + 1).map(|x| x * x).sum::<f64>() / total
}
