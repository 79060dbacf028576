//! Spherical sampling grids.
//!
//! Three grid families are provided:
//!
//! - the spherical Fibonacci grid (SFG), `n` points on a latitude-monotone spiral
//!   whose azimuth advances by the golden fraction `τ = (√5 − 1)/2`;
//! - the `2b × 2b` equiangular grid with nodes `θ_j = πj/(2b)`, `φ_k = πk/b`
//!   (north pole row included, south pole excluded);
//! - the frequency-`k` geodesic icosphere with `10k² + 2` vertices.
//!
//! Grids are immutable once built. Each grid carries a [`GridId`] fingerprint that
//! quadrature weights and sampled fields use to check they refer to the same points.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Golden fraction `τ = (√5 − 1)/2`.
pub const GOLDEN_FRACTION: f64 = 0.618_033_988_749_894_8;

/// A direction on the unit sphere as colatitude `theta ∈ [0, π]` and azimuth `phi ∈ [0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl From<[f64; 2]> for Direction {
    fn from([theta, phi]: [f64; 2]) -> Self {
        Self { theta, phi }
    }
}

impl From<Direction> for [f64; 2] {
    fn from(d: Direction) -> Self {
        [d.theta, d.phi]
    }
}

impl Direction {
    /// Builds a canonical direction: `theta` is clamped into `[0, π]` and `phi`
    /// wrapped into `[0, 2π)`.
    pub fn new(theta: f64, phi: f64) -> Self {
        Self {
            theta: theta.clamp(0.0, PI),
            phi: wrap_azimuth(phi),
        }
    }

    pub fn from_unit_vector(v: &Vector3<f64>) -> Self {
        let rho = v.x.hypot(v.y);
        let theta = rho.atan2(v.z);
        let phi = if rho == 0.0 { 0.0 } else { v.y.atan2(v.x) };
        Self::new(theta, phi)
    }

    pub fn to_unit_vector(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(st * cp, st * sp, ct)
    }

    /// Great-circle angle to `other`, accurate for nearly coincident and nearly
    /// antipodal pairs.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        angle_between(&self.to_unit_vector(), &other.to_unit_vector())
    }
}

/// Great-circle angle between two (not necessarily unit) vectors.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

fn wrap_azimuth(phi: f64) -> f64 {
    let wrapped = phi - TWO_PI * (phi / TWO_PI).floor();
    // rounding can land exactly on 2π for tiny negative inputs
    if wrapped >= TWO_PI {
        0.0
    } else {
        wrapped
    }
}

/// Grid family plus the parameters it was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum GridSpec {
    Fibonacci { n: usize },
    Equiangular { b: usize },
    Icosahedral { k: usize },
    /// Arbitrary user-supplied directions.
    Custom { n: usize },
}

impl GridSpec {
    pub fn generate(&self) -> Result<SphericalGrid> {
        match *self {
            GridSpec::Fibonacci { n } => gen_fibonacci(n),
            GridSpec::Equiangular { b } => gen_equiangular(b),
            GridSpec::Icosahedral { k } => gen_icosahedral(k),
            GridSpec::Custom { .. } => Err(Error::InvalidParameter(
                "custom grids cannot be regenerated from their spec".into(),
            )),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            GridSpec::Fibonacci { .. } => "fibonacci",
            GridSpec::Equiangular { .. } => "equiangular",
            GridSpec::Icosahedral { .. } => "icosahedral",
            GridSpec::Custom { .. } => "custom",
        }
    }
}

/// Fingerprint of a grid's spec and exact point coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridId(pub u64);

impl Serialize for GridId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", self.0))
    }
}

impl<'de> Deserialize<'de> for GridId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16)
            .map(GridId)
            .map_err(serde::de::Error::custom)
    }
}

impl std::fmt::Display for GridId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// An ordered set of sampling directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalGrid {
    #[serde(flatten)]
    spec: GridSpec,
    points: Vec<Direction>,
}

impl SphericalGrid {
    /// Wraps arbitrary directions (e.g. synthesis targets) as a custom grid.
    pub fn from_directions(points: Vec<Direction>) -> Self {
        Self {
            spec: GridSpec::Custom { n: points.len() },
            points,
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn points(&self) -> &[Direction] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn unit_vectors(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(Direction::to_unit_vector).collect()
    }

    /// FNV-1a over the spec and the raw bits of every coordinate.
    pub fn id(&self) -> GridId {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut feed = |word: u64| {
            for byte in word.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(PRIME);
            }
        };
        let (tag, param) = match self.spec {
            GridSpec::Fibonacci { n } => (1, n),
            GridSpec::Equiangular { b } => (2, b),
            GridSpec::Icosahedral { k } => (3, k),
            GridSpec::Custom { n } => (4, n),
        };
        feed(tag);
        feed(param as u64);
        for p in &self.points {
            feed(p.theta.to_bits());
            feed(p.phi.to_bits());
        }
        GridId(h)
    }

    /// Mean spacing `sqrt(4π/n)` between neighbouring points.
    pub fn mean_spacing(&self) -> f64 {
        (4.0 * PI / self.points.len().max(1) as f64).sqrt()
    }
}

/// Spherical Fibonacci grid with `n` points.
///
/// Point `i` has `d = (1 − n)/2 + i`, colatitude `asin(2d/n) + π/2` and azimuth
/// `2π·frac(d·τ)`, where `frac(x) = x − floor(x)` so negative `d` wraps correctly.
pub fn gen_fibonacci(n: usize) -> Result<SphericalGrid> {
    if n == 0 {
        return Err(Error::InvalidParameter("fibonacci grid needs n >= 1".into()));
    }
    let nf = n as f64;
    let points = (0..n)
        .map(|i| {
            let d = (1.0 - nf) / 2.0 + i as f64;
            let theta = (2.0 * d / nf).asin() + PI / 2.0;
            let x = d * GOLDEN_FRACTION;
            let phi = TWO_PI * (x - x.floor());
            Direction::new(theta, phi)
        })
        .collect();
    Ok(SphericalGrid {
        spec: GridSpec::Fibonacci { n },
        points,
    })
}

/// Default Fibonacci point count for bandwidth `b`: `ceil(4.2·b²)`.
///
/// At `b = 32` this is 4301, one more than the 4300 points commonly quoted for
/// that bandwidth.
pub fn default_fibonacci_count(b: usize) -> usize {
    (4.2 * (b * b) as f64).ceil() as usize
}

/// `2b × 2b` equiangular grid, row-major in (θ ring, φ column).
pub fn gen_equiangular(b: usize) -> Result<SphericalGrid> {
    if b == 0 {
        return Err(Error::InvalidParameter("equiangular grid needs b >= 1".into()));
    }
    let rings = 2 * b;
    let mut points = Vec::with_capacity(rings * rings);
    for j in 0..rings {
        let theta = PI * j as f64 / rings as f64;
        for k in 0..rings {
            let phi = PI * k as f64 / b as f64;
            points.push(Direction { theta, phi });
        }
    }
    Ok(SphericalGrid {
        spec: GridSpec::Equiangular { b },
        points,
    })
}

/// Frequency-`k` icosahedral grid: the vertices of [`icosphere`].
pub fn gen_icosahedral(k: usize) -> Result<SphericalGrid> {
    let (vertices, _) = icosphere(k)?;
    Ok(SphericalGrid {
        spec: GridSpec::Icosahedral { k },
        points: vertices.iter().map(Direction::from_unit_vector).collect(),
    })
}

fn icosahedron() -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let vertices: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .into_iter()
    .map(|(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    // orient every face outward
    for f in &mut faces {
        let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        if (b - a).cross(&(c - a)).dot(&a) < 0.0 {
            f.swap(1, 2);
        }
    }
    (vertices, faces)
}

/// Geodesic icosphere of frequency `k`: every icosahedron face is split by linear
/// barycentric subdivision into `k²` triangles and all vertices are projected onto
/// the unit sphere. Returns `10k² + 2` unit vertices and `20k²` outward-oriented
/// triangles.
///
/// Vertices shared between faces are merged through an exact combinatorial key
/// (the global corner indices and integer barycentric weights), so no tolerance
/// is involved.
pub fn icosphere(k: usize) -> Result<(Vec<Vector3<f64>>, Vec<[usize; 3]>)> {
    if k == 0 {
        return Err(Error::InvalidParameter("icosphere needs frequency k >= 1".into()));
    }
    let (corners, faces) = icosahedron();
    let mut vertices: Vec<Vector3<f64>> = Vec::with_capacity(10 * k * k + 2);
    let mut index: HashMap<[(usize, usize); 3], usize> = HashMap::new();
    let mut triangles = Vec::with_capacity(20 * k * k);

    let mut vertex_id = |face: &[usize; 3], i: usize, j: usize| -> usize {
        // weights on (face[0], face[1], face[2]) are (k - i - j, i, j)
        let mut key = [(face[0], k - i - j), (face[1], i), (face[2], j)];
        for entry in &mut key {
            if entry.1 == 0 {
                *entry = (usize::MAX, 0);
            }
        }
        key.sort_unstable();
        *index.entry(key).or_insert_with(|| {
            let a = corners[face[0]];
            let b = corners[face[1]];
            let c = corners[face[2]];
            let kf = k as f64;
            let p = a * ((k - i - j) as f64 / kf) + b * (i as f64 / kf) + c * (j as f64 / kf);
            vertices.push(p.normalize());
            vertices.len() - 1
        })
    };

    for face in &faces {
        let mut ids = vec![vec![0usize; k + 1]; k + 1];
        for i in 0..=k {
            for j in 0..=(k - i) {
                ids[i][j] = vertex_id(face, i, j);
            }
        }
        for i in 0..k {
            for j in 0..(k - i) {
                triangles.push([ids[i][j], ids[i + 1][j], ids[i][j + 1]]);
                if i + j + 1 < k {
                    triangles.push([ids[i + 1][j], ids[i + 1][j + 1], ids[i][j + 1]]);
                }
            }
        }
    }
    Ok((vertices, triangles))
}

/// Smallest great-circle angle over all distinct index pairs (brute force).
pub fn min_angular_separation(grid: &SphericalGrid) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::InvalidParameter(
            "angular separation needs at least two points".into(),
        ));
    }
    let v = grid.unit_vectors();
    let mut best = f64::INFINITY;
    for i in 0..v.len() {
        for j in (i + 1)..v.len() {
            let a = angle_between(&v[i], &v[j]);
            if a < best {
                best = a;
            }
        }
    }
    Ok(best)
}
