//! Rotation-invariant multi-shell harmonic descriptors and a leave-one-out
//! retrieval harness.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::SphericalGrid;
use crate::quadrature::{uniform_direction, QuadratureWeights};
use crate::shapes::{random_rotation, PointCloud, ShapeFamily, StarParams};
use crate::shapes::star::RadialBump;
use crate::spatial::PointIndex;
use crate::transform::{forward_sht, RadialField};

/// Kernel width as a multiple of the grid's mean spacing.
pub const DEFAULT_SIGMA_SPACINGS: f64 = 2.0;
/// Kernel contributions beyond this many widths are dropped (`exp(−18)`).
const KERNEL_CUTOFF_SIGMAS: f64 = 6.0;
/// The standard 11 recall levels `0.0, 0.1, …, 1.0`.
pub const RECALL_LEVELS: usize = 11;

/// Per-shell, per-degree harmonic energies; row `r` holds shell `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDescriptor")]
pub struct ShellDescriptor {
    shells: usize,
    bandwidth: usize,
    energies: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDescriptor {
    shells: usize,
    bandwidth: usize,
    energies: Vec<f64>,
}

impl TryFrom<RawDescriptor> for ShellDescriptor {
    type Error = Error;
    fn try_from(r: RawDescriptor) -> Result<Self> {
        Self::new(r.shells, r.bandwidth, r.energies)
    }
}

impl ShellDescriptor {
    /// `energies` is row-major, `shells × bandwidth`, all finite and non-negative.
    pub fn new(shells: usize, bandwidth: usize, energies: Vec<f64>) -> Result<Self> {
        if energies.len() != shells * bandwidth {
            return Err(Error::ShapeMismatch(format!(
                "{} energies for {shells} shells × {bandwidth} degrees",
                energies.len()
            )));
        }
        if let Some(bad) = energies.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
            return Err(Error::InvalidParameter(format!("energy {bad} is not a finite non-negative value")));
        }
        Ok(Self {
            shells,
            bandwidth,
            energies,
        })
    }

    pub fn shells(&self) -> usize {
        self.shells
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn energy(&self, shell: usize, degree: usize) -> f64 {
        self.energies[shell * self.bandwidth + degree]
    }

    pub fn row(&self, shell: usize) -> &[f64] {
        &self.energies[shell * self.bandwidth..(shell + 1) * self.bandwidth]
    }

    /// Frobenius norm of the energy matrix.
    pub fn norm(&self) -> f64 {
        self.energies.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Keeps the innermost `shells` rows.
    pub fn first_shells(&self, shells: usize) -> Self {
        let s = shells.min(self.shells);
        Self {
            shells: s,
            bandwidth: self.bandwidth,
            energies: self.energies[..s * self.bandwidth].to_vec(),
        }
    }
}

/// Frobenius norm of the energy difference.
pub fn descriptor_distance(a: &ShellDescriptor, b: &ShellDescriptor) -> Result<f64> {
    if a.shells != b.shells || a.bandwidth != b.bandwidth {
        return Err(Error::ShapeMismatch(format!(
            "{}×{} vs {}×{}",
            a.shells, a.bandwidth, b.shells, b.bandwidth
        )));
    }
    Ok(a
        .energies
        .iter()
        .zip(&b.energies)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Default kernel width for a grid: two mean spacings.
pub fn default_sigma(grid: &SphericalGrid) -> f64 {
    DEFAULT_SIGMA_SPACINGS * grid.mean_spacing()
}

/// Splits the cloud into `shells` equal-width radius bands on `[0, r_max]`
/// about its center and smooths each band's directions onto `grid` with a
/// Gaussian angular kernel of width `sigma` (default [`default_sigma`]).
///
/// Values are normalized by the number of usable points, so a band's field
/// carries its share of the cloud. Empty bands give all-zero fields.
pub fn shell_decompose(
    cloud: &PointCloud,
    shells: usize,
    grid: &SphericalGrid,
    sigma: Option<f64>,
) -> Result<Vec<RadialField>> {
    if cloud.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    if shells == 0 {
        return Err(Error::InvalidParameter("need at least one shell".into()));
    }
    if grid.is_empty() {
        return Err(Error::Empty("grid"));
    }
    let sigma = sigma.unwrap_or_else(|| default_sigma(grid));
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("kernel width {sigma} must be positive")));
    }
    // sort first so the centroid sum does not depend on input order
    let mut sorted = cloud.clone();
    sorted.canonicalize();
    let center = sorted.center()?;
    let polar: Vec<(Vector3<f64>, f64)> = sorted
        .points()
        .iter()
        .filter_map(|p| {
            let d = p - center;
            let r = d.norm();
            (r > 0.0 && r.is_finite()).then(|| (d / r, r))
        })
        .collect();
    if polar.is_empty() {
        return Err(Error::DegenerateCloud("every point sits at the center".into()));
    }
    let r_max = polar.iter().map(|x| x.1).fold(0.0, f64::max);
    let mut bands: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); shells];
    for (u, r) in &polar {
        let s = ((r / r_max * shells as f64) as usize).min(shells - 1);
        bands[s].push(*u);
    }

    let total = polar.len() as f64;
    let cutoff = (KERNEL_CUTOFF_SIGMAS * sigma).min(PI);
    let chord = 2.0 * (0.5 * cutoff).sin();
    // the query radius is padded slightly so antipodal points survive rounding
    let radius_sq = (chord * chord) * (1.0 + 1e-12) + 1e-15;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let dirs = grid.unit_vectors();

    bands
        .iter()
        .map(|band| {
            if band.is_empty() {
                return RadialField::real(grid, vec![0.0; grid.len()]);
            }
            let index = PointIndex::new(band);
            let values = dirs
                .par_iter()
                .map(|q| {
                    index
                        .within(q, radius_sq)
                        .into_iter()
                        .map(|(_, sq)| {
                            let angle = 2.0 * (0.5 * sq.max(0.0).sqrt()).min(1.0).asin();
                            (-angle * angle * inv_two_var).exp()
                        })
                        .sum::<f64>()
                        / total
                })
                .collect();
            RadialField::real(grid, values)
        })
        .collect()
}

/// Energies `sqrt(Σ_m |f̂_r(l, m)|²)` of each shell field for `l < b`.
pub fn shd(fields: &[RadialField], weights: &QuadratureWeights, b: usize) -> Result<ShellDescriptor> {
    if fields.is_empty() {
        return Err(Error::Empty("shell fields"));
    }
    let rows = fields
        .iter()
        .map(|f| forward_sht(f, weights, b).map(|c| c.degree_energies()))
        .collect::<Result<Vec<_>>>()?;
    ShellDescriptor::new(fields.len(), b, rows.concat())
}

/// Shell decomposition followed by [`shd`].
pub fn cloud_descriptor(
    cloud: &PointCloud,
    shells: usize,
    weights: &QuadratureWeights,
    b: usize,
    sigma: Option<f64>,
) -> Result<ShellDescriptor> {
    let fields = shell_decompose(cloud, shells, weights.grid(), sigma)?;
    shd(&fields, weights, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledShape {
    pub label: String,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub entries: Vec<LabeledShape>,
}

impl LabeledCorpus {
    pub fn labels(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fails unless at least two distinct labels occur.
    pub fn check_classes(&self) -> Result<()> {
        check_labels(&self.labels())
    }
}

fn check_labels(labels: &[&str]) -> Result<()> {
    if labels.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Parametric families of the synthetic labeled corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Blob,
    Lobed,
    Spiky,
    Ellipsoidal,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [Self::Blob, Self::Lobed, Self::Spiky, Self::Ellipsoidal];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Blob => "blob",
            Self::Lobed => "lobed",
            Self::Spiky => "spiky",
            Self::Ellipsoidal => "ellipsoidal",
        }
    }
}

/// A member of one synthetic class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassShape {
    Star(StarParams),
    /// Semi-axes in the rotated `frame` (columns are the axes' directions).
    Ellipsoid { axes: Vector3<f64>, frame: Matrix3<f64> },
}

impl ClassShape {
    pub fn radius(&self, u: &Vector3<f64>) -> f64 {
        match self {
            Self::Star(p) => p.radius(u),
            Self::Ellipsoid { axes, frame } => {
                let v = frame.transpose() * u;
                1.0 / (v.x * v.x / (axes.x * axes.x) + v.y * v.y / (axes.y * axes.y) + v.z * v.z / (axes.z * axes.z))
                    .sqrt()
            }
        }
    }

    /// `n` surface points along seeded random directions, center pinned at the origin.
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

fn caps<R: Rng + ?Sized>(
    rng: &mut R,
    count: std::ops::RangeInclusive<usize>,
    degree: std::ops::RangeInclusive<u32>,
    amplitude: (f64, f64),
) -> Vec<RadialBump> {
    let count = rng.random_range(count);
    (0..count)
        .map(|_| RadialBump {
            axis: uniform_direction(rng),
            amplitude: rng.random_range(amplitude.0..amplitude.1),
            degree: rng.random_range(degree.clone()),
        })
        .collect()
}

/// One jittered, randomly oriented member of `class`.
pub fn synth_class_shape<R: Rng + ?Sized>(class: ShapeClass, rng: &mut R) -> ClassShape {
    let star = |family, bumps| {
        ClassShape::Star(StarParams {
            family,
            scale: 1.0,
            bumps,
        })
    };
    match class {
        ShapeClass::Blob => star(ShapeFamily::Smooth, caps(rng, 3..=5, 2..=6, (0.15, 0.45))),
        ShapeClass::Lobed => star(ShapeFamily::Smooth, caps(rng, 4..=6, 16..=40, (0.3, 0.7))),
        ShapeClass::Spiky => star(ShapeFamily::Sharp, caps(rng, 8..=14, 200..=600, (0.4, 0.9))),
        ShapeClass::Ellipsoidal => ClassShape::Ellipsoid {
            axes: Vector3::new(1.0, rng.random_range(0.55..0.85), rng.random_range(0.3..0.55)),
            frame: random_rotation(rng),
        },
    }
    .oriented(rng)
}

impl ClassShape {
    fn oriented<R: Rng + ?Sized>(self, rng: &mut R) -> Self {
        let r = random_rotation(rng);
        match self {
            Self::Star(p) => Self::Star(p.rotated(&r)),
            Self::Ellipsoid { axes, frame } => Self::Ellipsoid { axes, frame: r * frame },
        }
    }
}

/// `classes × per_class` labeled clouds of `points` surface samples each,
/// normalized to unit bounding-box extent about their centers.
pub fn synth_labeled_corpus(classes: usize, per_class: usize, points: usize, seed: u64) -> Result<LabeledCorpus> {
    if !(2..=ShapeClass::ALL.len()).contains(&classes) {
        return Err(Error::InvalidParameter(format!(
            "class count must be in 2..={}, got {classes}",
            ShapeClass::ALL.len()
        )));
    }
    if per_class == 0 || points < 4 {
        return Err(Error::InvalidParameter("need at least one shape per class and four points".into()));
    }
    let jobs: Vec<(ShapeClass, usize)> = ShapeClass::ALL[..classes]
        .iter()
        .flat_map(|c| (0..per_class).map(move |i| (*c, i)))
        .collect();
    let entries = jobs
        .par_iter()
        .enumerate()
        .map(|(k, (class, _))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let shape = synth_class_shape(*class, &mut rng);
            let mut cloud = shape.sample_cloud(points, rng.random());
            cloud.normalize()?;
            Ok(LabeledShape {
                label: class.name().to_string(),
                cloud,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledCorpus { entries })
}

/// Mean interpolated precision at the 11 standard recall levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub precision: [f64; RECALL_LEVELS],
    /// Mean of per-query average precision.
    pub mean_average_precision: f64,
    /// Queries that had at least one relevant item.
    pub queries: usize,
}

impl PrCurve {
    pub fn recall_level(i: usize) -> f64 {
        i as f64 / (RECALL_LEVELS - 1) as f64
    }
}

/// Leave-one-out retrieval: each entry ranks all others by descriptor
/// distance (ties broken by position) and relevance is label equality.
pub fn precision_recall(descriptors: &[ShellDescriptor], labels: &[&str]) -> Result<PrCurve> {
    if descriptors.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} descriptors for {} labels",
            descriptors.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    let n = descriptors.len();
    let per_query = (0..n)
        .into_par_iter()
        .map(|q| -> Result<Option<([f64; RECALL_LEVELS], f64)>> {
            let relevant = (0..n).filter(|&j| j != q && labels[j] == labels[q]).count();
            if relevant == 0 {
                return Ok(None);
            }
            let mut ranked = Vec::with_capacity(n - 1);
            for j in (0..n).filter(|&j| j != q) {
                ranked.push((descriptor_distance(&descriptors[q], &descriptors[j])?, j));
            }
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut hits = 0usize;
            let mut ap = 0.0;
            let mut points = Vec::with_capacity(ranked.len());
            for (k, (_, j)) in ranked.iter().enumerate() {
                if labels[*j] == labels[q] {
                    hits += 1;
                    ap += hits as f64 / (k + 1) as f64;
                }
                points.push((hits as f64 / relevant as f64, hits as f64 / (k + 1) as f64));
            }
            let mut curve = [0.0; RECALL_LEVELS];
            for (i, c) in curve.iter_mut().enumerate() {
                let level = PrCurve::recall_level(i);
                *c = points
                    .iter()
                    .filter(|(rec, _)| *rec >= level - 1e-12)
                    .map(|p| p.1)
                    .fold(0.0, f64::max);
            }
            Ok(Some((curve, ap / relevant as f64)))
        })
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<_> = per_query.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::InvalidParameter("no query has a relevant item".into()));
    }
    let m = used.len() as f64;
    let mut precision = [0.0; RECALL_LEVELS];
    for (c, _) in &used {
        for (p, v) in precision.iter_mut().zip(c) {
            *p += v;
        }
    }
    precision.iter_mut().for_each(|p| *p /= m);
    Ok(PrCurve {
        precision,
        mean_average_precision: used.iter().map(|x| x.1).sum::<f64>() / m,
        queries: used.len(),
    })
}

/// Descriptor settings shared by every entry of a retrieval run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    pub shells: usize,
    pub bandwidth: usize,
    /// Kernel width in radians; `None` uses [`default_sigma`].
    pub sigma: Option<f64>,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            shells: 8,
            bandwidth: 32,
            sigma: None,
        }
    }
}

/// Descriptors of every corpus entry under one set of weights.
pub fn corpus_descriptors(
    corpus: &LabeledCorpus,
    weights: &QuadratureWeights,
    cfg: &DescriptorConfig,
) -> Result<Vec<ShellDescriptor>> {
    corpus
        .entries
        .iter()
        .map(|e| cloud_descriptor(&e.cloud, cfg.shells, weights, cfg.bandwidth, cfg.sigma))
        .collect()
}

/// Descriptors for the whole corpus followed by leave-one-out retrieval.
pub fn classify_and_pr(corpus: &LabeledCorpus, weights: &QuadratureWeights, cfg: &DescriptorConfig) -> Result<PrCurve> {
    corpus.check_classes()?;
    let d = corpus_descriptors(corpus, weights, cfg)?;
    precision_recall(&d, &corpus.labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::{gen_fibonacci, Direction};
    use crate::harmonics::eval_ylm;
    use crate::quadrature::{dh_closed_form_weights, solve_analytic_weights};
    use crate::shapes::rotate_cloud;
    use num_complex::Complex64;

    fn sphere_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| uniform_direction(&mut rng)).collect()).with_center(Vector3::zeros())
    }

    fn field_values(f: &RadialField) -> Vec<f64> {
        f.to_real(0.0).unwrap()
    }

    #[test]
    fn unit_sphere_fills_only_the_outer_shell() {
        let grid = gen_fibonacci(200).unwrap();
        let fields = shell_decompose(&sphere_cloud(3000, 1), 4, &grid, None).unwrap();
        assert_eq!(fields.len(), 4);
        for f in &fields[..3] {
            assert!(field_values(f).iter().all(|v| *v == 0.0));
        }
        assert!(field_values(&fields[3]).iter().all(|v| *v > 0.0));
    }

    // Expected kernel sum per point for uniformly spread directions:
    // (1/4π)∫ exp(−γ²/2σ²) dΩ = ½∫₀^π exp(−γ²/2σ²) sinγ dγ, by composite Simpson.
    fn kernel_moment(sigma: f64, power: f64) -> f64 {
        let n = 20_000;
        let h = PI / n as f64;
        let f = |g: f64| (-power * g * g / (2.0 * sigma * sigma)).exp() * g.sin();
        let mut s = f(0.0) + f(PI);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        0.5 * s * h / 3.0
    }

    #[test]
    fn isotropic_cloud_gives_flat_shells() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        // radii uniform on (0, 1]; the largest sample sets the band edges
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| uniform_direction(&mut rng) * (1.0 - rng.random::<f64>()))
            .collect();
        let r_max = pts.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let cloud = PointCloud::new(pts.clone()).with_center(Vector3::zeros());
        let grid = gen_fibonacci(150).unwrap();
        let sigma = 0.3;
        let shells = 3;
        let fields = shell_decompose(&cloud, shells, &grid, Some(sigma)).unwrap();
        let (m1, m2) = (kernel_moment(sigma, 1.0), kernel_moment(sigma, 2.0));
        for (s, f) in fields.iter().enumerate() {
            let count = pts
                .iter()
                .filter(|p| ((p.norm() / r_max * shells as f64) as usize).min(shells - 1) == s)
                .count() as f64;
            let q = count / n as f64;
            let mean = q * m1;
            let sd = ((q * m2 - mean * mean) / n as f64).sqrt();
            for v in field_values(f) {
                assert!((v - mean).abs() <= 5.0 * sd, "shell {s}: {v} vs {mean} ± {sd}");
            }
        }
    }

    #[test]
    fn permuted_cloud_gives_identical_fields() {
        let a = sphere_cloud(2000, 3);
        let pts: Vec<_> = a.points().iter().map(|p| p * (0.5 + 0.5 * p.z.abs())).collect();
        let mut rev = pts.clone();
        rev.reverse();
        rev.rotate_left(77);
        let grid = gen_fibonacci(300).unwrap();
        let f1 = shell_decompose(&PointCloud::new(pts), 5, &grid, None).unwrap();
        let f2 = shell_decompose(&PointCloud::new(rev), 5, &grid, None).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn decomposition_errors() {
        let grid = gen_fibonacci(50).unwrap();
        assert!(matches!(shell_decompose(&PointCloud::new(vec![]), 2, &grid, None), Err(Error::Empty(_))));
        assert!(shell_decompose(&sphere_cloud(10, 1), 0, &grid, None).is_err());
        assert!(shell_decompose(&sphere_cloud(10, 1), 2, &grid, Some(-1.0)).is_err());
    }

    #[test]
    fn constant_shell_energy() {
        let w = dh_closed_form_weights(6).unwrap();
        let c = 2.5;
        let f = RadialField::real(w.grid(), vec![c; w.grid().len()]).unwrap();
        let d = shd(&[f], &w, 6).unwrap();
        assert!((d.energy(0, 0) - c * (4.0 * PI).sqrt()).abs() <= 1e-9);
        assert!((1..6).all(|l| d.energy(0, l) <= 1e-9));
    }

    #[test]
    fn degree_two_pair_energy() {
        let grid = gen_fibonacci(default_count(5)).unwrap();
        let w = solve_analytic_weights(&grid, 5).unwrap();
        let values: Vec<Complex64> = grid
            .points()
            .iter()
            .map(|d: &Direction| eval_ylm(2, 1, d).unwrap() + eval_ylm(2, -1, d).unwrap())
            .collect();
        let f = RadialField::complex(&grid, values).unwrap();
        let d = shd(&[f], &w, 5).unwrap();
        assert!((d.energy(0, 2) - 2f64.sqrt()).abs() <= 1e-9);
        for l in [0, 1, 3, 4] {
            assert!(d.energy(0, l) <= 1e-9);
        }
    }

    fn default_count(b: usize) -> usize {
        crate::grids::default_fibonacci_count(b)
    }

    #[test]
    fn empty_shells_give_zero_rows() {
        // two radii only: shells 1 and 2 of 4 stay empty
        let mut pts: Vec<_> = sphere_cloud(500, 4).points().to_vec();
        let inner: Vec<_> = sphere_cloud(500, 5).points().iter().map(|p| p * 0.1).collect();
        pts.extend(inner);
        let cloud = PointCloud::new(pts).with_center(Vector3::zeros());
        let w = dh_closed_form_weights(8).unwrap();
        let d = cloud_descriptor(&cloud, 4, &w, 8, None).unwrap();
        assert!(d.row(1).iter().chain(d.row(2)).all(|e| *e == 0.0));
        assert!(d.row(0)[0] > 0.0 && d.row(3)[0] > 0.0);
        assert!(d.energies().iter().all(|e| *e >= 0.0));
    }

    #[test]
    fn descriptor_survives_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let shape = synth_class_shape(ShapeClass::Lobed, &mut rng);
        let mut cloud = shape.sample_cloud(20_000, 1);
        cloud.normalize().unwrap();
        let w = dh_closed_form_weights(32).unwrap();
        let d0 = cloud_descriptor(&cloud, 8, &w, 32, None).unwrap();
        for _ in 0..3 {
            let r = random_rotation(&mut rng);
            let d1 = cloud_descriptor(&rotate_cloud(&cloud, &r).unwrap(), 8, &w, 32, None).unwrap();
            let rel = descriptor_distance(&d0, &d1).unwrap() / d0.norm();
            assert!(rel <= 0.05, "relative change {rel}");
        }
    }

    #[test]
    fn distance_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut random = || ShellDescriptor::new(3, 4, (0..12).map(|_| rng.random::<f64>()).collect()).unwrap();
        let (a, b) = (random(), random());
        assert_eq!(descriptor_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(descriptor_distance(&a, &b).unwrap(), descriptor_distance(&b, &a).unwrap());
        let c = ShellDescriptor::new(2, 4, vec![0.0; 8]).unwrap();
        assert!(matches!(descriptor_distance(&a, &c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn descriptor_json_round_trip_and_validation() {
        let d = ShellDescriptor::new(2, 2, vec![1.0, 0.5, 0.0, 2.0]).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"shells":2,"bandwidth":2,"energies":[1.0,0.5,0.0,2.0]}"#);
        assert_eq!(serde_json::from_str::<ShellDescriptor>(&s).unwrap(), d);
        assert!(serde_json::from_str::<ShellDescriptor>(r#"{"shells":2,"bandwidth":2,"energies":[1.0]}"#).is_err());
        assert!(ShellDescriptor::new(1, 1, vec![-1.0]).is_err());
    }

    #[test]
    fn separated_classes_give_perfect_precision() {
        let labels = ["a", "a", "a", "b", "b", "b", "c", "c"];
        let d: Vec<_> = labels
            .iter()
            .map(|l| {
                let v = match *l {
                    "a" => 1.0,
                    "b" => 5.0,
                    _ => 9.0,
                };
                ShellDescriptor::new(1, 2, vec![v, 0.0]).unwrap()
            })
            .collect();
        let pr = precision_recall(&d, &labels).unwrap();
        assert!(pr.precision.iter().all(|p| *p == 1.0), "{pr:?}");
        assert_eq!(pr.mean_average_precision, 1.0);
    }

    // Same 11-point interpolated curve, computed directly from a ranked
    // relevance list.
    fn curve_of_ranking(rel: &[bool]) -> [f64; RECALL_LEVELS] {
        let total = rel.iter().filter(|x| **x).count() as f64;
        let mut out = [0.0; RECALL_LEVELS];
        for (i, o) in out.iter_mut().enumerate() {
            let level = i as f64 / 10.0;
            let mut hits = 0.0;
            let mut best: f64 = 0.0;
            for (k, r) in rel.iter().enumerate() {
                if *r {
                    hits += 1.0;
                }
                if hits / total >= level - 1e-12 {
                    best = best.max(hits / (k + 1) as f64);
                }
            }
            *o = best;
        }
        out
    }

    #[test]
    fn random_descriptors_match_permutation_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let per = 100;
        let labels: Vec<&str> = (0..2 * per).map(|i| if i < per { "x" } else { "y" }).collect();
        let d: Vec<_> = (0..2 * per)
            .map(|_| ShellDescriptor::new(2, 3, (0..6).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect();
        let pr = precision_recall(&d, &labels).unwrap();

        // null: uniformly shuffled rankings of the other 2·per − 1 entries
        let replicates = 300;
        let mut base: Vec<bool> = (0..2 * per - 1).map(|i| i < per - 1).collect();
        let mut sum = [0.0; RECALL_LEVELS];
        let mut sq = [0.0; RECALL_LEVELS];
        for _ in 0..replicates {
            let mut acc = [0.0; RECALL_LEVELS];
            for _ in 0..2 * per {
                for i in (1..base.len()).rev() {
                    base.swap(i, rng.random_range(0..=i));
                }
                for (a, c) in acc.iter_mut().zip(curve_of_ranking(&base)) {
                    *a += c / (2 * per) as f64;
                }
            }
            for i in 0..RECALL_LEVELS {
                sum[i] += acc[i];
                sq[i] += acc[i] * acc[i];
            }
        }
        let prior = (per - 1) as f64 / (2 * per - 1) as f64;
        for i in 0..RECALL_LEVELS {
            let mean = sum[i] / replicates as f64;
            let sd = (sq[i] / replicates as f64 - mean * mean).max(0.0).sqrt();
            assert!((pr.precision[i] - mean).abs() <= 3.0 * sd + 1e-12, "level {i}: {} vs {mean} ± {sd}", pr.precision[i]);
            // interpolation lifts low-recall precision above the prior; at full recall it meets it
            assert!(mean >= prior - 3.0 * sd);
            if i == RECALL_LEVELS - 1 {
                assert!((mean - prior).abs() < 0.01, "null mean {mean} vs prior {prior}");
            }
        }
    }

    #[test]
    fn retrieval_errors() {
        let d = vec![ShellDescriptor::new(1, 1, vec![1.0]).unwrap(); 3];
        assert!(matches!(precision_recall(&d, &["a", "a", "a"]), Err(Error::SingleClass)));
        assert!(precision_recall(&d, &["a", "b"]).is_err());
    }

    #[test]
    fn labeled_corpus_is_reproducible() {
        let a = synth_labeled_corpus(4, 2, 500, 3).unwrap();
        assert_eq!(a, synth_labeled_corpus(4, 2, 500, 3).unwrap());
        assert_eq!(a.len(), 8);
        assert_eq!(a.labels(), ["blob", "blob", "lobed", "lobed", "spiky", "spiky", "ellipsoidal", "ellipsoidal"]);
        for e in &a.entries {
            let (lo, hi) = e.cloud.bounding_box().unwrap();
            assert!(((hi - lo).max() - 1.0).abs() < 1e-12);
        }
        assert!(synth_labeled_corpus(1, 5, 100, 0).is_err());
        assert!(synth_labeled_corpus(5, 5, 100, 0).is_err());
    }

    #[test]
    fn small_corpus_classifies_above_chance() {
        let corpus = synth_labeled_corpus(4, 4, 4000, 1).unwrap();
        let w = dh_closed_form_weights(8).unwrap();
        let cfg = DescriptorConfig {
            shells: 4,
            bandwidth: 8,
            sigma: None,
        };
        let pr = classify_and_pr(&corpus, &w, &cfg).unwrap();
        assert_eq!(pr.queries, 16);
        assert!(pr.mean_average_precision > 0.4, "{pr:?}");
    }
}
