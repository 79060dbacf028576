//! Forward and inverse spherical harmonic transforms on weighted grids.
//!
//! Forward: `f̂(l, m) = 2π√2 Σ_j w_j f(x_j) conj(Y_l^m)(x_j)`.
//! Inverse: `f(x) = Σ_{l<b} Σ_m f̂(l, m) Y_l^m(x)`.
//!
//! The weights satisfy `Σ w_j = √2` (unit degree-0 comb spectrum), so `2π√2 Σ_j w_j g(x_j)`
//! is the quadrature for `∫ g dΩ` and the forward transform is exactly the
//! projection onto the orthonormal basis.
//!
//! Both transforms split the points into fixed-size chunks and add the chunk
//! partials in chunk order, so results are bit-identical for any worker count.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{Direction, GridId, SphericalGrid};
use crate::harmonics::{flat_index, tri_index, tri_len, LegendreTable, ShCoefficients};
use crate::quadrature::QuadratureWeights;

/// `2π√2`: turns weighted sums into surface integrals.
const FORWARD_SCALE: f64 = 8.885_765_876_316_732;
const CHUNK: usize = 256;
/// Imaginary parts below this are dropped when synthesizing a real-signal table.
pub const REAL_SIGNAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValues {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl FieldValues {
    pub fn len(&self) -> usize {
        match self {
            FieldValues::Real(v) => v.len(),
            FieldValues::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        match self {
            FieldValues::Real(v) => v.iter().all(|x| x.is_finite()),
            FieldValues::Complex(v) => v.iter().all(|x| x.is_finite()),
        }
    }
}

/// Samples of a spherical function, in the point order of the grid identified by `grid_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialField {
    pub grid_id: GridId,
    pub values: FieldValues,
}

impl RadialField {
    pub fn real(grid: &SphericalGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, FieldValues::Real(values))
    }

    pub fn complex(grid: &SphericalGrid, values: Vec<Complex64>) -> Result<Self> {
        Self::new(grid, FieldValues::Complex(values))
    }

    pub fn new(grid: &SphericalGrid, values: FieldValues) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if !values.is_finite() {
            return Err(Error::InvalidParameter("field contains non-finite values".into()));
        }
        Ok(Self {
            grid_id: grid.id(),
            values,
        })
    }

    /// Samples `f` at every grid point.
    pub fn sample<F: Fn(&Direction) -> f64 + Sync + Send>(grid: &SphericalGrid, f: F) -> Result<Self> {
        let values = grid.points().par_iter().map(f).collect();
        Self::real(grid, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Real values, or an error if any imaginary part exceeds `tol`.
    pub fn to_real(&self, tol: f64) -> Result<Vec<f64>> {
        match &self.values {
            FieldValues::Real(v) => Ok(v.clone()),
            FieldValues::Complex(v) => {
                let max_imag = v.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
                if max_imag > tol {
                    return Err(Error::NotRealSignal { max_imag });
                }
                Ok(v.iter().map(|z| z.re).collect())
            }
        }
    }
}

#[inline]
fn cs_sign(m: usize) -> f64 {
    if m.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn check_forward(field: &RadialField, weights: &QuadratureWeights, b: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::InvalidParameter("bandwidth must be >= 1".into()));
    }
    if field.grid_id != weights.grid().id() || field.len() != weights.weights().len() {
        return Err(Error::GridMismatch);
    }
    if let Some(wb) = weights.bandwidth() {
        if b > wb {
            return Err(Error::BandwidthExceeded {
                requested: b,
                available: wb,
            });
        }
    }
    Ok(())
}

fn sum_chunks(parts: Vec<Vec<Complex64>>, len: usize) -> Vec<Complex64> {
    let mut total = vec![Complex64::new(0.0, 0.0); len];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

/// Forward transform of `field` up to (excluding) degree `b`.
pub fn forward_sht(field: &RadialField, weights: &QuadratureWeights, b: usize) -> Result<ShCoefficients> {
    check_forward(field, weights, b)?;
    match &field.values {
        FieldValues::Real(v) => Ok(forward_real(weights.grid().points(), weights.weights(), v, b)),
        FieldValues::Complex(v) => Ok(forward_complex(weights.grid().points(), weights.weights(), v, b)),
    }
}

/// Real input: accumulate `m ≥ 0` only and mirror the negative orders.
fn forward_real(points: &[Direction], w: &[f64], f: &[f64], b: usize) -> ShCoefficients {
    let parts: Vec<Vec<Complex64>> = points
        .par_chunks(CHUNK)
        .zip(w.par_chunks(CHUNK))
        .zip(f.par_chunks(CHUNK))
        .map(|((pts, ws), fs)| {
            let mut acc = vec![Complex64::new(0.0, 0.0); tri_len(b)];
            for ((p, wj), fj) in pts.iter().zip(ws).zip(fs) {
                let table = LegendreTable::at_colatitude(b, p.theta);
                let s = FORWARD_SCALE * wj * fj;
                for m in 0..b {
                    let (sp, cp) = (m as f64 * p.phi).sin_cos();
                    // conj(Y_l^m) = (-1)^m P̄ e^{-imφ}
                    let phase = Complex64::new(cp, -sp) * (s * cs_sign(m));
                    for l in m..b {
                        acc[tri_index(l, m)] += phase * table.get(l, m);
                    }
                }
            }
            acc
        })
        .collect();
    let tri = sum_chunks(parts, tri_len(b));
    let mut out = ShCoefficients::zeros(b);
    for l in 0..b {
        for m in 0..=l {
            let v = tri[tri_index(l, m)];
            out.set(l, m as i64, v);
            if m > 0 {
                out.set(l, -(m as i64), v.conj() * cs_sign(m));
            }
        }
    }
    out
}

fn forward_complex(points: &[Direction], w: &[f64], f: &[Complex64], b: usize) -> ShCoefficients {
    let parts: Vec<Vec<Complex64>> = points
        .par_chunks(CHUNK)
        .zip(w.par_chunks(CHUNK))
        .zip(f.par_chunks(CHUNK))
        .map(|((pts, ws), fs)| {
            let mut acc = vec![Complex64::new(0.0, 0.0); b * b];
            for ((p, wj), fj) in pts.iter().zip(ws).zip(fs) {
                let table = LegendreTable::at_colatitude(b, p.theta);
                let s = *fj * (FORWARD_SCALE * wj);
                for m in 0..b {
                    let (sp, cp) = (m as f64 * p.phi).sin_cos();
                    // conj(Y_l^m) = (-1)^m P̄ e^{-imφ}, conj(Y_l^{-m}) = P̄ e^{imφ}
                    let pos = s * Complex64::new(cp, -sp) * cs_sign(m);
                    let neg = s * Complex64::new(cp, sp);
                    for l in m..b {
                        let pl = table.get(l, m);
                        acc[flat_index(l, m as i64)] += pos * pl;
                        if m > 0 {
                            acc[flat_index(l, -(m as i64))] += neg * pl;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    ShCoefficients::from_values(b, sum_chunks(parts, b * b)).expect("length matches bandwidth")
}

/// Evaluates `Σ f̂(l, m) Y_l^m` at each direction.
pub fn synthesize_complex(coeffs: &ShCoefficients, targets: &[Direction]) -> Vec<Complex64> {
    let b = coeffs.bandwidth();
    let c = coeffs.values();
    targets
        .par_iter()
        .map(|p| {
            let table = LegendreTable::at_colatitude(b, p.theta);
            let mut sum = Complex64::new(0.0, 0.0);
            for m in 0..b {
                let (sp, cp) = (m as f64 * p.phi).sin_cos();
                let e = Complex64::new(cp, sp);
                for l in m..b {
                    let pl = table.get(l, m);
                    sum += c[flat_index(l, m as i64)] * e * (cs_sign(m) * pl);
                    if m > 0 {
                        sum += c[flat_index(l, -(m as i64))] * e.conj() * pl;
                    }
                }
            }
            sum
        })
        .collect()
}

/// Real synthesis `Σ_l [f̂(l,0) Y_l^0 + 2 Re Σ_{m>0} f̂(l,m) Y_l^m]`.
///
/// Only the `m ≥ 0` half of the table is read; the caller vouches for the
/// real-signal symmetry.
pub fn synthesize_real(coeffs: &ShCoefficients, targets: &[Direction]) -> Vec<f64> {
    let b = coeffs.bandwidth();
    let c = coeffs.values();
    targets
        .par_iter()
        .map(|p| {
            let table = LegendreTable::at_colatitude(b, p.theta);
            let mut sum = 0.0;
            for l in 0..b {
                sum += c[flat_index(l, 0)].re * table.get(l, 0);
            }
            for m in 1..b {
                let (sp, cp) = (m as f64 * p.phi).sin_cos();
                let mut re = 0.0;
                let mut im = 0.0;
                for l in m..b {
                    let pl = table.get(l, m);
                    let v = c[flat_index(l, m as i64)];
                    re += v.re * pl;
                    im += v.im * pl;
                }
                sum += 2.0 * cs_sign(m) * (re * cp - im * sp);
            }
            sum
        })
        .collect()
}

/// Inverse transform onto the points of `targets`. Tables with the real-signal
/// symmetry come back as real fields.
pub fn inverse_sht(coeffs: &ShCoefficients, targets: &SphericalGrid) -> Result<RadialField> {
    coeffs.validate()?;
    if coeffs.is_real_signal(REAL_SIGNAL_TOLERANCE) {
        RadialField::real(targets, synthesize_real(coeffs, targets.points()))
    } else {
        RadialField::complex(targets, synthesize_complex(coeffs, targets.points()))
    }
}

/// Random table with entries uniform in the unit square of the complex plane.
pub fn random_coefficients<R: Rng + ?Sized>(b: usize, rng: &mut R) -> ShCoefficients {
    let values = (0..b * b)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    ShCoefficients::from_values(b, values).expect("length matches bandwidth")
}

/// Random table of a real-valued band-limited function.
pub fn random_real_coefficients<R: Rng + ?Sized>(b: usize, rng: &mut R) -> ShCoefficients {
    let mut out = ShCoefficients::zeros(b);
    for l in 0..b {
        out.set(l, 0, Complex64::new(rng.random_range(-1.0..1.0), 0.0));
        for m in 1..=l {
            let v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            out.set(l, m as i64, v);
            out.set(l, -(m as i64), v.conj() * cs_sign(m));
        }
    }
    out
}

/// `(rmse, mae)` of the entrywise moduli `|a − b|`.
pub fn coefficient_errors(a: &ShCoefficients, b: &ShCoefficients) -> Result<(f64, f64)> {
    if a.bandwidth() != b.bandwidth() {
        return Err(Error::ShapeMismatch(format!(
            "bandwidths {} and {}",
            a.bandwidth(),
            b.bandwidth()
        )));
    }
    let n = a.values().len() as f64;
    let (sq, abs) = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).norm())
        .fold((0.0, 0.0), |(s, t), d| (s + d * d, t + d));
    Ok(((sq / n).sqrt(), abs / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialError {
    pub trial: usize,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub bandwidth: usize,
    pub trials: Vec<TrialError>,
    /// RMSE over every entry of every trial.
    pub rmse: f64,
    /// MAE over every entry of every trial.
    pub mae: f64,
}

pub const DEFAULT_TRIALS: usize = 40;

/// Synthesizes random tables on `grid`, analyzes them back and measures the error.
///
/// Trial `t` draws from ChaCha stream `t` of `seed`, so any single trial can be
/// replayed on its own.
pub fn roundtrip_error(
    b: usize,
    grid: &SphericalGrid,
    weights: &QuadratureWeights,
    trials: usize,
    seed: u64,
) -> Result<RoundtripReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    if weights.grid().id() != grid.id() {
        return Err(Error::GridMismatch);
    }
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let truth = random_coefficients(b, &mut rng);
        let field = RadialField::complex(grid, synthesize_complex(&truth, grid.points()))?;
        let back = forward_sht(&field, weights, b)?;
        let (rmse, mae) = coefficient_errors(&truth, &back)?;
        out.push(TrialError { trial: t, rmse, mae });
    }
    let k = trials as f64;
    let rmse = (out.iter().map(|e| e.rmse * e.rmse).sum::<f64>() / k).sqrt();
    let mae = out.iter().map(|e| e.mae).sum::<f64>() / k;
    Ok(RoundtripReport {
        bandwidth: b,
        trials: out,
        rmse,
        mae,
    })
}

/// `∫ f dΩ` of a real-signal table is `√(4π) f̂(0,0)`.
pub fn integral_from_coefficients(coeffs: &ShCoefficients) -> f64 {
    (4.0 * PI).sqrt() * coeffs.values()[0].re
}
