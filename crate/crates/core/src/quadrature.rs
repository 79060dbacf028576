//! Quadrature weights for the discrete transform.
//!
//! Weights are normalized so that `√(2π) Σ_j w_j conj(Y_l^m)(x_j)` is the
//! spectrum of the weighted sampling comb; a valid bandwidth-`b` weighting has
//! `ŝ(0,0) = 1` and `ŝ(l,m) = 0` for `0 < l < 2b`, which pushes every aliasing
//! product of a bandwidth-`b` signal to degrees `≥ b`. With that normalization
//! `Σ_j w_j = √2` and `∫ g dΩ ≈ 2π√2 Σ_j w_j g(x_j)`.
//!
//! Four schemes are available:
//!
//! - [`solve_analytic_weights`]: the minimum-norm real solution of the `4b²`
//!   real constraints above, via a thin SVD;
//! - [`equal_weights`]: `√2/n` everywhere;
//! - [`area_weights`]: Monte-Carlo spherical Voronoi cell areas;
//! - [`dh_closed_form_weights`]: Driscoll–Healy weights for the equiangular grid.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use faer::Mat;
use log::debug;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{gen_equiangular, SphericalGrid};
use crate::harmonics::{flat_index, ylm_all, LegendreTable, ShCoefficients};
use crate::spatial::PointIndex;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Relative singular-value cutoff of the minimum-norm solve.
pub const RANK_TOLERANCE: f64 = 1e-12;
/// Constraint residual above which a solve is reported as failed.
pub const SOLVE_FAILURE_RESIDUAL: f64 = 1e-8;
/// Smallest accepted Monte-Carlo sample count for area weights.
pub const MIN_MC_SAMPLES: usize = 100_000;
/// Default Monte-Carlo sample count for area weights.
pub const DEFAULT_MC_SAMPLES: usize = 4_000_000;
/// Default Monte-Carlo seed for area weights.
pub const DEFAULT_MC_SEED: u64 = 0x5EED;
/// Bumped whenever the analytic solve can produce different bits.
pub const SOLVER_VERSION: u32 = 1;

const MC_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Analytic,
    Equal,
    Area,
    DhClosedForm,
}

impl std::fmt::Display for WeightMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightMethod::Analytic => "analytic",
            WeightMethod::Equal => "equal",
            WeightMethod::Area => "area",
            WeightMethod::DhClosedForm => "dh",
        })
    }
}

impl std::str::FromStr for WeightMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(WeightMethod::Analytic),
            "equal" => Ok(WeightMethod::Equal),
            "area" => Ok(WeightMethod::Area),
            "dh" | "dh_closed_form" => Ok(WeightMethod::DhClosedForm),
            other => Err(Error::InvalidParameter(format!("unknown weight method {other:?}"))),
        }
    }
}

/// Per-point weights bound to a grid.
///
/// `bandwidth` is `None` for schemes that are not tied to one (equal, area); the
/// transform treats those as usable at any bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureWeights {
    grid: Arc<SphericalGrid>,
    bandwidth: Option<usize>,
    method: WeightMethod,
    residual: Option<f64>,
    weights: Vec<f64>,
}

impl QuadratureWeights {
    /// Wraps externally computed weights; `residual` is recomputed when a bandwidth is given.
    pub fn from_parts(
        grid: Arc<SphericalGrid>,
        bandwidth: Option<usize>,
        method: WeightMethod,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for a grid of {} points",
                weights.len(),
                grid.len()
            )));
        }
        let residual = bandwidth.map(|b| constraint_residual(&grid, &weights, b));
        Ok(Self {
            grid,
            bandwidth,
            method,
            residual,
            weights,
        })
    }

    pub fn grid(&self) -> &SphericalGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<SphericalGrid> {
        &self.grid
    }

    pub fn bandwidth(&self) -> Option<usize> {
        self.bandwidth
    }

    pub fn method(&self) -> WeightMethod {
        self.method
    }

    /// Max-abs constraint violation recorded at solve time; `None` when not bound to a bandwidth.
    pub fn residual(&self) -> Option<f64> {
        self.residual
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Consistency check after deserializing.
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for a grid of {} points",
                self.weights.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    /// `∫ g dΩ ≈ 2π√2 Σ_j w_j g(x_j)`.
    pub fn integrate(&self, samples: &[f64]) -> f64 {
        assert_eq!(samples.len(), self.weights.len());
        2.0 * PI * SQRT_2 * self.weights.iter().zip(samples).map(|(w, g)| w * g).sum::<f64>()
    }
}

/// Real constraint rows for one direction: `(l, 0)`, then `Re` and `Im` of
/// `√(2π) conj(Y_l^m)` for `0 < m ≤ l`, for all `l < 2b`. Exactly `4b²` entries.
fn constraint_column(b: usize, theta: f64, phi: f64, out: &mut [f64]) {
    let lmax = 2 * b;
    let table = LegendreTable::at_colatitude(lmax, theta);
    let trig: Vec<(f64, f64)> = (0..lmax).map(|m| (m as f64 * phi).sin_cos()).collect();
    let mut row = 0;
    for l in 0..lmax {
        out[row] = SQRT_2PI * table.get(l, 0);
        row += 1;
        for (m, &(s, c)) in trig.iter().enumerate().take(l + 1).skip(1) {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let p = SQRT_2PI * sign * table.get(l, m);
            out[row] = p * c;
            out[row + 1] = -p * s;
            row += 2;
        }
    }
    debug_assert_eq!(row, 4 * b * b);
}

fn constraint_matrix(grid: &SphericalGrid, b: usize) -> Mat<f64> {
    let rows = 4 * b * b;
    let columns: Vec<Vec<f64>> = grid
        .points()
        .par_iter()
        .map(|p| {
            let mut col = vec![0.0; rows];
            constraint_column(b, p.theta, p.phi, &mut col);
            col
        })
        .collect();
    Mat::from_fn(rows, grid.len(), |i, j| columns[j][i])
}

/// Max-abs violation of the `4b²` real constraints.
pub fn constraint_residual(grid: &SphericalGrid, weights: &[f64], b: usize) -> f64 {
    let rows = 4 * b * b;
    let partials: Vec<Vec<f64>> = grid
        .points()
        .par_chunks(256)
        .zip(weights.par_chunks(256))
        .map(|(pts, ws)| {
            let mut acc = vec![0.0; rows];
            let mut col = vec![0.0; rows];
            for (p, w) in pts.iter().zip(ws) {
                constraint_column(b, p.theta, p.phi, &mut col);
                for (a, c) in acc.iter_mut().zip(&col) {
                    *a += w * c;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; rows];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
        .iter()
        .enumerate()
        .map(|(i, v)| (v - if i == 0 { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}

/// Minimum-norm real weights satisfying `ŝ(0,0) = 1`, `ŝ(l,m) = 0` for `0 < l < 2b`.
///
/// The `4b² × n` real system is factored with a thin SVD; singular values below
/// `1e-12·σ_max` are dropped, which absorbs exactly coincident points such as the
/// equiangular pole row. On the equiangular grid the result coincides with the
/// Driscoll–Healy weights.
pub fn solve_analytic_weights(grid: &SphericalGrid, b: usize) -> Result<QuadratureWeights> {
    if b == 0 {
        return Err(Error::InvalidParameter("bandwidth must be >= 1".into()));
    }
    let required = 4 * b * b;
    if grid.len() < required {
        return Err(Error::InsufficientSamples {
            n: grid.len(),
            required,
        });
    }
    let a = constraint_matrix(grid, b);
    debug!("solving {}x{} weight system", a.nrows(), a.ncols());
    let svd = a
        .thin_svd()
        .map_err(|_| Error::SolveFailed { residual: f64::INFINITY })?;
    let u = svd.U();
    let v = svd.V();
    let s = svd.S().column_vector();
    let k = s.nrows();
    let cutoff = RANK_TOLERANCE * s[0];
    let mut w = vec![0.0; grid.len()];
    for i in 0..k {
        if s[i] <= cutoff {
            continue;
        }
        let coef = u[(0, i)] / s[i];
        for (j, wj) in w.iter_mut().enumerate() {
            *wj += v[(j, i)] * coef;
        }
    }
    let residual = constraint_residual(grid, &w, b);
    if !residual.is_finite() || residual > SOLVE_FAILURE_RESIDUAL {
        return Err(Error::SolveFailed { residual });
    }
    Ok(QuadratureWeights {
        grid: Arc::new(grid.clone()),
        bandwidth: Some(b),
        method: WeightMethod::Analytic,
        residual: Some(residual),
        weights: w,
    })
}

/// `w_j = √2 / n`.
pub fn equal_weights(grid: &SphericalGrid) -> Result<QuadratureWeights> {
    if grid.is_empty() {
        return Err(Error::Empty("grid"));
    }
    let w = SQRT_2 / grid.len() as f64;
    Ok(QuadratureWeights {
        grid: Arc::new(grid.clone()),
        bandwidth: None,
        method: WeightMethod::Equal,
        residual: None,
        weights: vec![w; grid.len()],
    })
}

/// Monte-Carlo Voronoi area weights: `w_j = Â_j / (2π√2)` where `Â_j` is `4π`
/// times the fraction of uniform random directions whose nearest grid point is `j`.
///
/// Samples are drawn in fixed-size chunks, each from its own ChaCha stream, so
/// the counts do not depend on how many workers run.
pub fn area_weights(grid: &SphericalGrid, mc_samples: usize, seed: u64) -> Result<QuadratureWeights> {
    if grid.is_empty() {
        return Err(Error::Empty("grid"));
    }
    if grid.len() < 2 {
        return Err(Error::InvalidParameter("area weights need at least two points".into()));
    }
    if mc_samples < MIN_MC_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "area weights need at least {MIN_MC_SAMPLES} Monte-Carlo samples, got {mc_samples}"
        )));
    }
    let index = PointIndex::new(&grid.unit_vectors());
    let chunks = mc_samples.div_ceil(MC_CHUNK);
    let partials: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(mc_samples - c * MC_CHUNK);
            let mut hits = vec![0u64; grid.len()];
            for _ in 0..count {
                let v = uniform_direction(&mut rng);
                hits[index.nearest(&v).0] += 1;
            }
            hits
        })
        .collect();
    let mut hits = vec![0u64; grid.len()];
    for part in partials {
        for (h, p) in hits.iter_mut().zip(part) {
            *h += p;
        }
    }
    let total = mc_samples as f64;
    let weights = hits.iter().map(|&h| SQRT_2 * h as f64 / total).collect();
    Ok(QuadratureWeights {
        grid: Arc::new(grid.clone()),
        bandwidth: None,
        method: WeightMethod::Area,
        residual: None,
        weights,
    })
}

/// Uniform random unit vector (Archimedes: uniform `z`, uniform azimuth).
pub fn uniform_direction<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let rho = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(rho * phi.cos(), rho * phi.sin(), z)
}

/// Driscoll–Healy ring coefficient `a_j` for ring `j` of the `2b`-ring grid.
pub fn dh_ring_coefficient(b: usize, j: usize) -> f64 {
    let bf = b as f64;
    let x = PI * j as f64 / (2.0 * bf);
    let series: f64 = (0..b)
        .map(|k| {
            let o = (2 * k + 1) as f64;
            (o * x).sin() / o
        })
        .sum();
    (2.0 * SQRT_2 / bf) * x.sin() * series
}

/// Closed-form weights for [`gen_equiangular`]`(b)`: every point of ring `j`
/// carries `a_j / (4b)`.
pub fn dh_closed_form_weights(b: usize) -> Result<QuadratureWeights> {
    let grid = gen_equiangular(b)?;
    let rings = 2 * b;
    let ring_weights: Vec<f64> = (0..rings)
        .map(|j| dh_ring_coefficient(b, j) / (4.0 * b as f64))
        .collect();
    let weights: Vec<f64> = (0..rings * rings).map(|i| ring_weights[i / rings]).collect();
    let residual = constraint_residual(&grid, &weights, b);
    Ok(QuadratureWeights {
        grid: Arc::new(grid),
        bandwidth: Some(b),
        method: WeightMethod::DhClosedForm,
        residual: Some(residual),
        weights,
    })
}

/// Spectrum `ŝ(l, m) = √(2π) Σ_j w_j conj(Y_l^m)(x_j)` of a weighted sampling comb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpectrum {
    pub coefficients: ShCoefficients,
}

impl SamplingSpectrum {
    /// `|ŝ(l,m) − δ_{l0}δ_{m0}|` for every entry, in flat-index order.
    pub fn deviations(&self) -> Vec<f64> {
        self.coefficients
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let target = if i == 0 { 1.0 } else { 0.0 };
                (v - target).norm()
            })
            .collect()
    }

    /// Largest `|ŝ(l, m)|` over `0 < l < min(l_limit, L)`.
    pub fn max_offband(&self, l_limit: usize) -> f64 {
        let l_end = l_limit.min(self.coefficients.bandwidth());
        self.coefficients.values()[1..l_end * l_end]
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn dc(&self) -> f64 {
        self.coefficients.values()[0].re
    }
}

pub fn sampling_spectrum(
    grid: &SphericalGrid,
    weights: &QuadratureWeights,
    l_max_exclusive: usize,
) -> Result<SamplingSpectrum> {
    if l_max_exclusive == 0 {
        return Err(Error::InvalidParameter("spectrum needs L >= 1".into()));
    }
    if weights.grid().id() != grid.id() {
        return Err(Error::GridMismatch);
    }
    let l = l_max_exclusive;
    let partials: Vec<Vec<num_complex::Complex64>> = grid
        .points()
        .par_chunks(256)
        .zip(weights.weights().par_chunks(256))
        .map(|(pts, ws)| {
            let mut acc = vec![num_complex::Complex64::new(0.0, 0.0); l * l];
            let mut y = vec![num_complex::Complex64::new(0.0, 0.0); l * l];
            for (p, w) in pts.iter().zip(ws) {
                ylm_all(l, p, &mut y);
                for (a, v) in acc.iter_mut().zip(&y) {
                    *a += v.conj() * (SQRT_2PI * w);
                }
            }
            acc
        })
        .collect();
    let mut total = ShCoefficients::zeros(l);
    for part in partials {
        for (t, p) in total.values_mut().iter_mut().zip(part) {
            *t += p;
        }
    }
    debug_assert_eq!(flat_index(0, 0), 0);
    Ok(SamplingSpectrum {
        coefficients: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::{gen_fibonacci, Direction};
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_point_grid_is_insufficient() {
        let g = gen_fibonacci(1).unwrap();
        assert!(matches!(
            solve_analytic_weights(&g, 1),
            Err(Error::InsufficientSamples { n: 1, required: 4 })
        ));
        assert!(solve_analytic_weights(&g, 0).is_err());
    }

    #[test]
    fn analytic_weights_sum_to_sqrt2() {
        for b in [1, 2, 3, 5] {
            let g = gen_fibonacci(crate::grids::default_fibonacci_count(b)).unwrap();
            let w = solve_analytic_weights(&g, b).unwrap();
            assert!(w.residual().unwrap() <= 1e-10);
            assert_abs_diff_eq!(w.sum(), SQRT_2, epsilon = 1e-10);
        }
    }

    #[test]
    fn analytic_matches_dh_on_equiangular_grid() {
        for b in [1, 2, 4, 8] {
            let g = gen_equiangular(b).unwrap();
            let a = solve_analytic_weights(&g, b).unwrap();
            let d = dh_closed_form_weights(b).unwrap();
            let dev = a
                .weights()
                .iter()
                .zip(d.weights())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(dev <= 1e-12, "b={b} dev={dev:e}");
        }
    }

    #[test]
    fn dh_bandwidth_one_by_hand() {
        let d = dh_closed_form_weights(1).unwrap();
        // pole ring carries nothing, equator ring carries √2 over two points
        assert_abs_diff_eq!(d.weights()[0], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(d.weights()[1], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(d.weights()[2], SQRT_2 / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.weights()[3], SQRT_2 / 2.0, epsilon = 1e-15);
        assert!(d.residual().unwrap() <= 1e-10);
    }

    #[test]
    fn dh_weights_are_ring_constant_and_exact() {
        for b in [2, 7, 16] {
            let d = dh_closed_form_weights(b).unwrap();
            assert!(d.residual().unwrap() <= 1e-10, "b={b}");
            assert_abs_diff_eq!(d.sum(), SQRT_2, epsilon = 1e-12);
            for ring in d.weights().chunks(2 * b) {
                assert!(ring.iter().all(|w| *w == ring[0]));
            }
        }
        assert!(dh_closed_form_weights(0).is_err());
    }

    #[test]
    fn equal_weight_cases() {
        let g = gen_fibonacci(2).unwrap();
        let w = equal_weights(&g).unwrap();
        assert_abs_diff_eq!(w.weights()[0], 0.707_106_781_186_547_6, epsilon = 1e-15);
        let g = gen_fibonacci(4300).unwrap();
        let w = equal_weights(&g).unwrap();
        assert!(w.weights().iter().all(|x| *x == SQRT_2 / 4300.0));
        assert_abs_diff_eq!(w.sum(), SQRT_2, epsilon = 1e-12);
        assert!(equal_weights(&SphericalGrid::from_directions(vec![])).is_err());
    }

    fn mc_sigma(p: f64, samples: usize) -> f64 {
        SQRT_2 * (p * (1.0 - p) / samples as f64).sqrt()
    }

    #[test]
    fn area_weights_antipodal_pair() {
        let g = SphericalGrid::from_directions(vec![Direction::new(0.0, 0.0), Direction::new(PI, 0.0)]);
        let n = 200_000;
        let w = area_weights(&g, n, 9).unwrap();
        let tol = 3.0 * mc_sigma(0.5, n);
        for x in w.weights() {
            assert!((x - SQRT_2 / 2.0).abs() <= tol);
        }
        assert_abs_diff_eq!(w.sum(), SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn area_weights_octahedron() {
        let g = SphericalGrid::from_directions(vec![
            Direction::new(0.0, 0.0),
            Direction::new(PI, 0.0),
            Direction::new(PI / 2.0, 0.0),
            Direction::new(PI / 2.0, PI / 2.0),
            Direction::new(PI / 2.0, PI),
            Direction::new(PI / 2.0, 3.0 * PI / 2.0),
        ]);
        let n = 600_000;
        let w = area_weights(&g, n, 1).unwrap();
        // exact cell area 4π/6
        let expect = (4.0 * PI / 6.0) / (2.0 * PI * SQRT_2);
        let tol = 3.0 * mc_sigma(1.0 / 6.0, n);
        for x in w.weights() {
            assert!((x - expect).abs() <= tol, "{x} vs {expect}");
        }
    }

    #[test]
    fn area_weights_reject_bad_input() {
        let g = gen_fibonacci(10).unwrap();
        assert!(area_weights(&g, 1000, 0).is_err());
        assert!(area_weights(&gen_fibonacci(1).unwrap(), MIN_MC_SAMPLES, 0).is_err());
    }

    #[test]
    fn area_weights_are_reproducible() {
        let g = gen_fibonacci(50).unwrap();
        let a = area_weights(&g, 150_000, 4).unwrap();
        let b = area_weights(&g, 150_000, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spectrum_of_analytic_weights() {
        let b = 4;
        let g = gen_fibonacci(crate::grids::default_fibonacci_count(b)).unwrap();
        let w = solve_analytic_weights(&g, b).unwrap();
        let s = sampling_spectrum(&g, &w, 2 * b).unwrap();
        assert_abs_diff_eq!(s.dc(), 1.0, epsilon = 1e-10);
        assert!(s.max_offband(2 * b) <= 1e-10);
        // degree-0 entry equals Σw/√2 for any weights
        let e = equal_weights(&g).unwrap();
        let se = sampling_spectrum(&g, &e, 2 * b).unwrap();
        assert_abs_diff_eq!(se.dc(), e.sum() / SQRT_2, epsilon = 1e-12);
        assert!(se.max_offband(2 * b) > 1e-6);
    }

    #[test]
    fn spectrum_is_linear_in_weights() {
        let g = gen_fibonacci(80).unwrap();
        let w = equal_weights(&g).unwrap();
        let doubled = QuadratureWeights::from_parts(
            w.grid_arc().clone(),
            None,
            WeightMethod::Equal,
            w.weights().iter().map(|x| 2.0 * x).collect(),
        )
        .unwrap();
        let s1 = sampling_spectrum(&g, &w, 6).unwrap();
        let s2 = sampling_spectrum(&g, &doubled, 6).unwrap();
        for (a, b) in s1.coefficients.values().iter().zip(s2.coefficients.values()) {
            assert!((a * 2.0 - b).norm() < 1e-14);
        }
    }

    #[test]
    fn spectrum_rejects_foreign_grid() {
        let g = gen_fibonacci(80).unwrap();
        let w = equal_weights(&g).unwrap();
        let other = gen_fibonacci(81).unwrap();
        assert!(matches!(sampling_spectrum(&other, &w, 3), Err(Error::GridMismatch)));
    }

    #[test]
    fn weights_json_round_trip() {
        let w = dh_closed_form_weights(2).unwrap();
        let json = serde_json::to_value(&w).unwrap();
        assert_eq!(json["method"], "dh_closed_form");
        assert_eq!(json["bandwidth"], 2);
        assert_eq!(json["grid"]["kind"], "equiangular");
        let back: QuadratureWeights = serde_json::from_value(json).unwrap();
        assert_eq!(back.weights(), w.weights());
    }
}
