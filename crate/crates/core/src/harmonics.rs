//! Orthonormal complex spherical harmonics.
//!
//! `Y_l^m(θ, φ) = (−1)^m N_l^m P_l^m(cos θ) e^{imφ}` with
//! `N_l^m = sqrt((2l+1)/(4π) · (l−m)!/(l+m)!)` and `P_l^m` free of the
//! Condon–Shortley phase. Negative orders follow from
//! `Y_l^{−m} = (−1)^m conj(Y_l^m)`.
//!
//! Normalized Legendre values `N_l^m P_l^m(x)` are produced by the usual
//! sectoral seed followed by the three-term upward recurrence in `l`, working on
//! normalized quantities throughout so no factorial is ever formed.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{Direction, SphericalGrid};

/// Default cap on the number of entries in a dense basis block (2^28).
pub const DEFAULT_BASIS_CAP: usize = 1 << 28;

/// Flat coefficient index `l² + l + m`.
#[inline]
pub fn flat_index(l: usize, m: i64) -> usize {
    (l * l + l) .wrapping_add_signed(m as isize)
}

/// Index into a triangular `(l, m ≥ 0)` table.
#[inline]
pub fn tri_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Number of entries in a triangular table holding degrees `< l_max_exclusive`.
#[inline]
pub fn tri_len(l_max_exclusive: usize) -> usize {
    l_max_exclusive * (l_max_exclusive + 1) / 2
}

/// A degree/order pair with `|m| ≤ l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DegreeOrder {
    l: usize,
    m: i64,
}

impl DegreeOrder {
    pub fn new(l: usize, m: i64) -> Result<Self> {
        if m.unsigned_abs() as usize > l {
            return Err(Error::DegreeOrder { l, m });
        }
        Ok(Self { l, m })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn m(&self) -> i64 {
        self.m
    }

    pub fn flat_index(&self) -> usize {
        flat_index(self.l, self.m)
    }

    pub fn from_flat_index(idx: usize) -> Self {
        let l = (idx as f64).sqrt() as usize;
        // guard against sqrt rounding
        let l = if (l + 1) * (l + 1) <= idx { l + 1 } else { l };
        let l = if l * l > idx { l - 1 } else { l };
        Self {
            l,
            m: idx as i64 - (l * l + l) as i64,
        }
    }
}

/// Normalized associated Legendre values for one argument, all `0 ≤ m ≤ l < L`.
///
/// Stored triangularly; see [`tri_index`].
#[derive(Debug, Clone)]
pub struct LegendreTable {
    l_max_exclusive: usize,
    values: Vec<f64>,
}

impl LegendreTable {
    /// Table at `x = cos θ`, taking `sin θ` from `theta` directly for accuracy near the poles.
    pub fn at_colatitude(l_max_exclusive: usize, theta: f64) -> Self {
        let mut values = vec![0.0; tri_len(l_max_exclusive)];
        let (s, c) = theta.sin_cos();
        fill_legendre(l_max_exclusive, c, s.abs(), &mut values);
        Self {
            l_max_exclusive,
            values,
        }
    }

    pub fn at_cosine(l_max_exclusive: usize, x: f64) -> Self {
        let mut values = vec![0.0; tri_len(l_max_exclusive)];
        let s = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
        fill_legendre(l_max_exclusive, x, s, &mut values);
        Self {
            l_max_exclusive,
            values,
        }
    }

    pub fn l_max_exclusive(&self) -> usize {
        self.l_max_exclusive
    }

    #[inline]
    pub fn get(&self, l: usize, m: usize) -> f64 {
        self.values[tri_index(l, m)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Fills `out[tri_index(l, m)] = N_l^m P_l^m(x)` for `l < lmax`, given `s = sqrt(1 − x²)`.
pub(crate) fn fill_legendre(lmax: usize, x: f64, s: f64, out: &mut [f64]) {
    if lmax == 0 {
        return;
    }
    debug_assert!(out.len() >= tri_len(lmax));
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for m in 0..lmax {
        if m > 0 {
            let mf = m as f64;
            pmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
        }
        out[tri_index(m, m)] = pmm;
        if m + 1 >= lmax {
            continue;
        }
        let mf = m as f64;
        let mut p_prev = pmm;
        let mut p_cur = (2.0 * mf + 3.0).sqrt() * x * pmm;
        out[tri_index(m + 1, m)] = p_cur;
        for l in (m + 2)..lmax {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            let p_next = a * (x * p_cur - b * p_prev);
            out[tri_index(l, m)] = p_next;
            p_prev = p_cur;
            p_cur = p_next;
        }
    }
}

/// `N_l^m P_l^m(x)` for a single `(l, m)`.
pub fn legendre_normalized(l: usize, m: usize, x: f64) -> Result<f64> {
    if m > l {
        return Err(Error::DegreeOrder { l, m: m as i64 });
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::OutOfDomain { value: x });
    }
    Ok(LegendreTable::at_cosine(l + 1, x).get(l, m))
}

#[inline]
fn cs_sign(m: usize) -> f64 {
    if m.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `Y_l^m` at one direction.
pub fn eval_ylm(l: usize, m: i64, dir: &Direction) -> Result<Complex64> {
    let dm = DegreeOrder::new(l, m)?;
    let table = LegendreTable::at_colatitude(l + 1, dir.theta);
    Ok(ylm_from_table(&table, dm.l, dm.m, dir.phi))
}

#[inline]
fn ylm_from_table(table: &LegendreTable, l: usize, m: i64, phi: f64) -> Complex64 {
    let am = m.unsigned_abs() as usize;
    let p = table.get(l, am);
    let (sp, cp) = (m as f64 * phi).sin_cos();
    // Y_l^{-m} = (-1)^m conj(Y_l^m) cancels the phase for negative orders
    let scale = if m >= 0 { cs_sign(am) * p } else { p };
    Complex64::new(scale * cp, scale * sp)
}

/// Writes `Y_l^m(dir)` for every `l < l_max_exclusive` into `out` at flat indices.
pub fn ylm_all(l_max_exclusive: usize, dir: &Direction, out: &mut [Complex64]) {
    let table = LegendreTable::at_colatitude(l_max_exclusive, dir.theta);
    let phases: Vec<(f64, f64)> = (0..l_max_exclusive)
        .map(|m| (m as f64 * dir.phi).sin_cos())
        .collect();
    for l in 0..l_max_exclusive {
        let centre = l * l + l;
        out[centre] = Complex64::new(table.get(l, 0), 0.0);
        for m in 1..=l {
            let p = table.get(l, m);
            let (sp, cp) = phases[m];
            let pos = Complex64::new(cs_sign(m) * p * cp, cs_sign(m) * p * sp);
            out[centre + m] = pos;
            out[centre - m] = Complex64::new(p * cp, -p * sp);
        }
    }
}

/// Dense row-major matrix of basis values, `L²` rows by `n` columns.
#[derive(Debug, Clone)]
pub struct BasisBlock {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl BasisBlock {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[Complex64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

/// Basis block with the default entry cap.
pub fn eval_basis_block(grid: &SphericalGrid, l_max_exclusive: usize) -> Result<BasisBlock> {
    eval_basis_block_capped(grid, l_max_exclusive, DEFAULT_BASIS_CAP)
}

/// Row `l² + l + m`, column `j` holds `Y_l^m(point_j)`. Columns are computed
/// independently, so the result does not depend on the worker count.
pub fn eval_basis_block_capped(
    grid: &SphericalGrid,
    l_max_exclusive: usize,
    cap: usize,
) -> Result<BasisBlock> {
    if l_max_exclusive == 0 {
        return Err(Error::InvalidParameter("basis block needs L >= 1".into()));
    }
    let rows = l_max_exclusive * l_max_exclusive;
    let cols = grid.len();
    let entries = rows.saturating_mul(cols);
    if entries > cap {
        return Err(Error::MemoryCap { entries, cap });
    }
    let columns: Vec<Vec<Complex64>> = grid
        .points()
        .par_iter()
        .map(|p| {
            let mut col = vec![Complex64::new(0.0, 0.0); rows];
            ylm_all(l_max_exclusive, p, &mut col);
            col
        })
        .collect();
    let mut data = vec![Complex64::new(0.0, 0.0); entries];
    for (j, col) in columns.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            data[r * cols + j] = *v;
        }
    }
    Ok(BasisBlock { rows, cols, data })
}

/// Complex coefficient table `f̂(l, m)` for `l < bandwidth`, stored in flat-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShCoefficients {
    bandwidth: usize,
    values: Vec<Complex64>,
}

impl ShCoefficients {
    pub fn zeros(bandwidth: usize) -> Self {
        Self {
            bandwidth,
            values: vec![Complex64::new(0.0, 0.0); bandwidth * bandwidth],
        }
    }

    pub fn from_values(bandwidth: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != bandwidth * bandwidth {
            return Err(Error::ShapeMismatch(format!(
                "bandwidth {bandwidth} needs {} coefficients, got {}",
                bandwidth * bandwidth,
                values.len()
            )));
        }
        Ok(Self { bandwidth, values })
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// Checks the table length matches its bandwidth (e.g. after deserializing).
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.bandwidth * self.bandwidth {
            return Err(Error::ShapeMismatch(format!(
                "bandwidth {} needs {} coefficients, got {}",
                self.bandwidth,
                self.bandwidth * self.bandwidth,
                self.values.len()
            )));
        }
        Ok(())
    }

    /// Panics if `(l, m)` is outside the table.
    pub fn get(&self, l: usize, m: i64) -> Complex64 {
        assert!(l < self.bandwidth && m.unsigned_abs() as usize <= l);
        self.values[flat_index(l, m)]
    }

    pub fn set(&mut self, l: usize, m: i64, value: Complex64) {
        assert!(l < self.bandwidth && m.unsigned_abs() as usize <= l);
        self.values[flat_index(l, m)] = value;
    }

    /// Largest violation of `f̂(l, −m) = (−1)^m conj(f̂(l, m))`.
    pub fn real_signal_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for l in 0..self.bandwidth {
            for m in 0..=l {
                let pos = self.values[flat_index(l, m as i64)];
                let neg = self.values[flat_index(l, -(m as i64))];
                let expect = pos.conj() * cs_sign(m);
                worst = worst.max((neg - expect).norm());
            }
        }
        worst
    }

    pub fn is_real_signal(&self, tol: f64) -> bool {
        self.real_signal_defect() <= tol
    }

    /// Per-degree energy `sqrt(Σ_m |f̂(l, m)|²)`.
    pub fn degree_energies(&self) -> Vec<f64> {
        (0..self.bandwidth)
            .map(|l| {
                (-(l as i64)..=l as i64)
                    .map(|m| self.values[flat_index(l, m)].norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Keeps only degrees `< bandwidth`.
    pub fn truncated(&self, bandwidth: usize) -> Self {
        let b = bandwidth.min(self.bandwidth);
        Self {
            bandwidth: b,
            values: self.values[..b * b].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{One, ToPrimitive, Zero};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dirs(count: usize, seed: u64) -> Vec<Direction> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..1.0);
                Direction::new(z.acos(), rng.random_range(0.0..2.0 * PI))
            })
            .collect()
    }

    fn binom(n: u64, k: u64) -> BigInt {
        let mut acc = BigInt::one();
        for i in 0..k {
            acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
        }
        acc
    }

    fn factorial(n: u64) -> BigInt {
        (1..=n).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
    }

    /// Exact rational `(1 − x²)^{m/2}`-free part of `P_l^m(x)` via the explicit
    /// power series of `d^m P_l / dx^m`, for even `m` so the prefactor is rational too.
    fn legendre_oracle(l: u64, m: u64, x: BigRational) -> f64 {
        assert!(m.is_multiple_of(2));
        let mut deriv = BigRational::zero();
        for k in 0..=(l / 2) {
            let p = l - 2 * k;
            if p < m {
                continue;
            }
            let coeff = binom(l, k) * binom(2 * l - 2 * k, l);
            let falling = factorial(p) / factorial(p - m);
            let sign = if k % 2 == 0 { 1 } else { -1 };
            let mut term = BigRational::from_integer(coeff * falling * BigInt::from(sign));
            for _ in 0..(p - m) {
                term *= x.clone();
            }
            deriv += term;
        }
        deriv /= BigRational::from_integer(BigInt::from(2).pow(l as u32));
        let one_minus_x2 = BigRational::one() - x.clone() * x.clone();
        let mut pre = BigRational::one();
        for _ in 0..(m / 2) {
            pre *= one_minus_x2.clone();
        }
        let plm = deriv * pre;
        // N² without the 1/(4π): (2l+1) (l−m)!/(l+m)!
        let n2 = BigRational::new(
            BigInt::from(2 * l + 1) * factorial(l - m),
            factorial(l + m),
        );
        let sq = (n2 * plm.clone() * plm.clone()).to_f64().unwrap();
        let sign = if plm < BigRational::zero() { -1.0 } else { 1.0 };
        sign * sq.sqrt() / (4.0 * PI).sqrt()
    }

    #[test]
    fn legendre_constant_and_p10() {
        for x in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert_abs_diff_eq!(
                legendre_normalized(0, 0, x).unwrap(),
                0.282_094_791_773_878_1,
                epsilon = 1e-15
            );
        }
        assert_abs_diff_eq!(
            legendre_normalized(1, 0, 1.0).unwrap(),
            0.488_602_511_902_919_9,
            epsilon = 1e-15
        );
    }

    #[test]
    fn legendre_matches_exact_rational_oracle() {
        let x = BigRational::new(BigInt::from(3), BigInt::from(10));
        for (l, m) in [(40u64, 20u64), (12, 4), (25, 0), (60, 30)] {
            let oracle = legendre_oracle(l, m, x.clone());
            let got = legendre_normalized(l as usize, m as usize, 0.3).unwrap();
            let rel = ((got - oracle) / oracle).abs();
            assert!(rel < 1e-12, "l={l} m={m} got={got} oracle={oracle} rel={rel}");
        }
    }

    #[test]
    fn legendre_rejects_bad_input() {
        assert!(matches!(legendre_normalized(2, 3, 0.1), Err(Error::DegreeOrder { .. })));
        assert!(matches!(legendre_normalized(2, 1, 1.5), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn legendre_finite_at_high_degree() {
        for x in [-0.999_999, -0.5, 0.0, 0.123, 0.999_999_9] {
            let t = LegendreTable::at_cosine(513, x);
            assert!(t.as_slice().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn ylm_special_values() {
        let d = Direction::new(0.7, 1.9);
        let y = eval_ylm(0, 0, &d).unwrap();
        assert_abs_diff_eq!(y.re, 1.0 / (4.0 * PI).sqrt(), epsilon = 1e-15);
        assert_eq!(y.im, 0.0);
        let y = eval_ylm(1, 0, &Direction::new(0.0, 0.3)).unwrap();
        assert_abs_diff_eq!(y.re, (3.0 / (4.0 * PI)).sqrt(), epsilon = 1e-15);
        assert!(eval_ylm(2, -3, &d).is_err());
    }

    #[test]
    fn ylm_closed_forms() {
        // Y_1^1 = -sqrt(3/8π) sinθ e^{iφ}, Y_2^2 = (1/4) sqrt(15/2π) sin²θ e^{2iφ}
        for d in random_dirs(20, 3) {
            let y11 = eval_ylm(1, 1, &d).unwrap();
            let e = Complex64::from_polar(1.0, d.phi);
            let expect = -(3.0 / (8.0 * PI)).sqrt() * d.theta.sin() * e;
            assert!((y11 - expect).norm() < 1e-14);
            let y22 = eval_ylm(2, 2, &d).unwrap();
            let expect = 0.25 * (15.0 / (2.0 * PI)).sqrt() * d.theta.sin().powi(2) * e * e;
            assert!((y22 - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn negative_order_symmetry() {
        for d in random_dirs(100, 11) {
            let neg = eval_ylm(5, -3, &d).unwrap();
            let pos = eval_ylm(5, 3, &d).unwrap();
            assert!((neg - (-pos.conj())).norm() < 1e-13);
        }
    }

    #[test]
    fn addition_theorem() {
        let mut buf = vec![Complex64::new(0.0, 0.0); 33 * 33];
        for d in random_dirs(100, 5) {
            ylm_all(33, &d, &mut buf);
            for l in 0..33usize {
                let sum: f64 = (-(l as i64)..=l as i64)
                    .map(|m| buf[flat_index(l, m)].norm_sqr())
                    .sum();
                let expect = (2 * l + 1) as f64 / (4.0 * PI);
                assert!((sum - expect).abs() < 1e-10, "l={l}");
                for m in -(l as i64)..=l as i64 {
                    assert!(buf[flat_index(l, m)].norm() <= expect.sqrt() + 1e-9);
                }
            }
        }
    }

    #[test]
    fn flat_index_is_bijective() {
        let b = 9;
        let mut seen = vec![false; b * b];
        for l in 0..b {
            for m in -(l as i64)..=l as i64 {
                let idx = DegreeOrder::new(l, m).unwrap().flat_index();
                assert!(!seen[idx]);
                seen[idx] = true;
                assert_eq!(DegreeOrder::from_flat_index(idx), DegreeOrder::new(l, m).unwrap());
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn basis_block_layout() {
        let g = crate::grids::gen_fibonacci(100).unwrap();
        let one = eval_basis_block(&g, 1).unwrap();
        assert_eq!((one.rows(), one.cols()), (1, 100));
        assert!(one.row(0).iter().all(|v| (v.re - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-15 && v.im == 0.0));

        let block = eval_basis_block(&g, 4).unwrap();
        assert_eq!((block.rows(), block.cols()), (16, 100));
        for (j, p) in g.points().iter().enumerate() {
            for l in 0..4 {
                for m in -(l as i64)..=l as i64 {
                    let direct = eval_ylm(l, m, p).unwrap();
                    assert!((block.get(flat_index(l, m), j) - direct).norm() < 1e-14);
                }
            }
        }
        assert!(matches!(
            eval_basis_block_capped(&g, 4, 100),
            Err(Error::MemoryCap { .. })
        ));
        assert!(eval_basis_block(&g, 0).is_err());
    }

    #[test]
    fn basis_block_full_scale_is_finite() {
        let g = crate::grids::gen_fibonacci(4300).unwrap();
        let block = eval_basis_block(&g, 64).unwrap();
        assert_eq!((block.rows(), block.cols()), (4096, 4300));
        assert!(block.data.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
    }

    #[test]
    fn coefficient_json_and_symmetry() {
        let mut c = ShCoefficients::zeros(3);
        c.set(1, 1, Complex64::new(0.5, -0.25));
        c.set(1, -1, Complex64::new(-0.5, -0.25));
        assert!(c.is_real_signal(1e-15));
        let json = serde_json::to_value(&c).unwrap();
        assert_eq!(json["bandwidth"], 3);
        assert_eq!(json["values"][3], serde_json::json!([0.5, -0.25]));
        let back: ShCoefficients = serde_json::from_value(json).unwrap();
        assert_eq!(back, c);
        c.set(2, -2, Complex64::new(1.0, 0.0));
        assert!(!c.is_real_signal(1e-10));
    }
}
