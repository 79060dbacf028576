//! Point clouds, normalization and rigid rotations.

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for `RᵀR = I` and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    centroid_override: Option<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            centroid_override: None,
        }
    }

    pub fn with_center(mut self, center: Vector3<f64>) -> Self {
        self.centroid_override = Some(center);
        self
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid_override(&self) -> Option<Vector3<f64>> {
        self.centroid_override
    }

    /// Mean of the points.
    pub fn centroid(&self) -> Result<Vector3<f64>> {
        if self.points.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        Ok(sum / self.points.len() as f64)
    }

    /// The override if set, else the centroid.
    pub fn center(&self) -> Result<Vector3<f64>> {
        match self.centroid_override {
            Some(c) => Ok(c),
            None => self.centroid(),
        }
    }

    /// `(min, max)` corners of the axis-aligned bounding box.
    pub fn bounding_box(&self) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.points.first().ok_or(Error::Empty("point cloud"))?;
        Ok(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    /// Translates the center to the origin and scales the largest bounding-box
    /// extent to 1. Returns the applied scale factor.
    pub fn normalize(&mut self) -> Result<f64> {
        let c = self.center()?;
        let (lo, hi) = self.bounding_box()?;
        let extent = (hi - lo).max();
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::DegenerateCloud("zero bounding-box extent".into()));
        }
        let s = 1.0 / extent;
        for p in &mut self.points {
            *p = (*p - c) * s;
        }
        if self.centroid_override.is_some() {
            self.centroid_override = Some(Vector3::zeros());
        }
        Ok(s)
    }

    /// Fails unless the cloud has at least four points spanning a volume.
    pub fn check_reconstructible(&self) -> Result<()> {
        if self.points.len() < 4 {
            return Err(Error::DegenerateCloud(format!(
                "need at least 4 points, got {}",
                self.points.len()
            )));
        }
        let c = self.centroid()?;
        let mut cov = Matrix3::zeros();
        for p in &self.points {
            let d = p - c;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigenvalues();
        let max = eig.max();
        if !(eig.min() > 1e-12 * max) {
            return Err(Error::DegenerateCloud("points are coplanar".into()));
        }
        Ok(())
    }

    /// Sorts points lexicographically so that permuted copies compare equal.
    pub fn canonicalize(&mut self) {
        self.points.sort_by(|a, b| {
            a.x.total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.z.total_cmp(&b.z))
        });
    }

    /// Whitespace-separated `x y z` per line; blank lines and `#` comments are skipped.
    pub fn read_xyz<R: BufRead>(reader: R) -> Result<Self> {
        let mut points = Vec::new();
        for (no, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .take(3)
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidParameter(format!("line {}: {e}", no + 1)))?;
            if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "line {}: expected three finite coordinates",
                    no + 1
                )));
            }
            points.push(Vector3::new(vals[0], vals[1], vals[2]));
        }
        Ok(Self::new(points))
    }

    pub fn write_xyz<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for p in &self.points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    }
}

/// Checks `RᵀR = I` and `det R = +1` within [`ROTATION_TOLERANCE`].
pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let defect = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !(defect <= ROTATION_TOLERANCE) {
        return Err(Error::NotRotation(format!("|RᵀR − I| = {defect:e}")));
    }
    let det = r.determinant();
    if !((det - 1.0).abs() <= ROTATION_TOLERANCE) {
        return Err(Error::NotRotation(format!("det = {det}")));
    }
    Ok(())
}

/// Multiplies every point (and the center override) by `r`.
pub fn rotate_cloud(cloud: &PointCloud, r: &Matrix3<f64>) -> Result<PointCloud> {
    check_rotation(r)?;
    Ok(PointCloud {
        points: cloud.points.iter().map(|p| r * p).collect(),
        centroid_override: cloud.centroid_override.map(|c| r * c),
    })
}

/// Haar-uniform rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
            return orthonormalize(uq.to_rotation_matrix().into_inner());
        }
    }
}

/// Quarter turn about `+z`, exact in floating point.
pub fn quarter_turn_z() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
}

/// Polishes a nearly orthonormal matrix so it passes [`check_rotation`].
pub fn orthonormalize(m: Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    // one Newton step of the polar iteration tightens the last ulp
    r = 0.5 * (r + r.transpose().try_inverse().unwrap_or(r));
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tetra() -> PointCloud {
        PointCloud::new(vec![
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(1.0, -1.0, -1.0),
            Vector3::new(-1.0, 1.0, -1.0),
            Vector3::new(-1.0, -1.0, 1.0),
        ])
    }

    #[test]
    fn normalize_sets_unit_extent() {
        let mut c = PointCloud::new(vec![
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(6.0, 1.0, 0.0),
            Vector3::new(4.0, 0.0, 2.0),
        ]);
        let s = c.normalize().unwrap();
        assert!((s - 0.25).abs() < 1e-15);
        let (lo, hi) = c.bounding_box().unwrap();
        assert!(((hi - lo).max() - 1.0).abs() < 1e-15);
        assert!(c.centroid().unwrap().norm() < 1e-15);
    }

    #[test]
    fn normalize_keeps_override_at_origin() {
        let mut c = tetra().with_center(Vector3::new(1.0, 0.0, 0.0));
        c.normalize().unwrap();
        assert_eq!(c.center().unwrap(), Vector3::zeros());
        assert!((c.points()[0] - Vector3::new(0.0, 0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn degenerate_clouds() {
        let mut same = PointCloud::new(vec![Vector3::new(1.0, 1.0, 1.0); 5]);
        assert!(same.normalize().is_err());
        let flat = PointCloud::new((0..10).map(|i| Vector3::new(i as f64, (i * i) as f64, 0.0)).collect());
        assert!(flat.check_reconstructible().is_err());
        assert!(tetra().check_reconstructible().is_ok());
        assert!(PointCloud::new(vec![]).centroid().is_err());
    }

    #[test]
    fn rotation_checks() {
        assert!(check_rotation(&Matrix3::identity()).is_ok());
        assert!(check_rotation(&(Matrix3::identity() * 1.001)).is_err());
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(check_rotation(&reflection).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert!(check_rotation(&random_rotation(&mut rng)).is_ok());
        }
    }

    #[test]
    fn rotate_identity_and_quarter_turns() {
        let c = tetra();
        assert_eq!(rotate_cloud(&c, &Matrix3::identity()).unwrap(), c);
        let q = quarter_turn_z();
        let mut r = c.clone();
        for _ in 0..4 {
            r = rotate_cloud(&r, &q).unwrap();
        }
        for (a, b) in r.points().iter().zip(c.points()) {
            assert!((a - b).norm() <= 1e-12);
        }
        assert!(rotate_cloud(&c, &(Matrix3::identity() * 2.0)).is_err());
    }

    #[test]
    fn random_rotations_are_spread() {
        // mean of R·e_z over many draws should be near zero
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4000;
        let mean: Vector3<f64> = (0..n).map(|_| random_rotation(&mut rng) * Vector3::z()).sum::<Vector3<f64>>() / n as f64;
        assert!(mean.norm() < 0.05);
    }

    #[test]
    fn xyz_round_trip() {
        let c = tetra();
        let mut buf = Vec::new();
        c.write_xyz(&mut buf).unwrap();
        let text = format!("# header\n\n{}", String::from_utf8(buf).unwrap());
        let back = PointCloud::read_xyz(text.as_bytes()).unwrap();
        assert_eq!(back, c);
        assert!(PointCloud::read_xyz("1 2\n".as_bytes()).is_err());
        assert!(PointCloud::read_xyz("1 2 nan\n".as_bytes()).is_err());
    }

    #[test]
    fn canonical_order_ignores_permutation() {
        let mut a = tetra();
        let mut pts = a.points().to_vec();
        pts.reverse();
        let mut b = PointCloud::new(pts);
        a.canonicalize();
        b.canonicalize();
        assert_eq!(a, b);
    }
}
