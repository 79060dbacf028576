//! End-to-end reconstruction pipeline, rotation stability and bandwidth sweeps.
//!
//! A pipeline run takes a point cloud, resamples it onto a grid, analyzes and
//! resynthesizes it at bandwidth `b`, and compares the result with the analytic
//! ground-truth surface. The truth mesh is built in the frame of the input
//! (a rotated input gets the rotated truth) on the same icosphere as the
//! reconstruction, so mesh faceting cancels out of the comparison when both
//! frequencies match.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureWeights;
use crate::shapes::cloud::{rotate_cloud, PointCloud};
use crate::shapes::deviation::{surface_deviation_indexed, MeshDistance};
use crate::shapes::mesh::{coefficient_volume, radial_function_volume, reconstruct_surface, SurfaceMesh};
use crate::shapes::star::{radial_from_pointcloud, ShapeFamily, StarParams};

/// How shapes are turned into point clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudSampling {
    /// Ray-cast the surface along every direction of the grids under test, so
    /// resampling onto a grid is exact. Rotated inputs are re-sampled from the
    /// rotated shape.
    GridRays,
    /// `cloud_points` seeded random surface points; rotated inputs rotate the cloud.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub bandwidth: usize,
    /// Icosphere frequency of reconstructed meshes.
    pub mesh_frequency: usize,
    /// Icosphere frequency of ground-truth meshes.
    pub truth_frequency: usize,
    /// Driscoll–Healy bandwidth used for ground-truth volumes.
    pub truth_volume_bandwidth: usize,
    pub sampling: CloudSampling,
    pub cloud_points: usize,
    pub neighbors: usize,
    pub deviation_samples: usize,
    pub cloud_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bandwidth: 32,
            mesh_frequency: 128,
            truth_frequency: 128,
            truth_volume_bandwidth: 128,
            sampling: CloudSampling::GridRays,
            cloud_points: 40_000,
            neighbors: 8,
            deviation_samples: 20_000,
            cloud_seed: 1,
        }
    }
}

/// A named grid with its weights.
#[derive(Debug, Clone)]
pub struct GridSetup {
    pub name: String,
    pub weights: Arc<QuadratureWeights>,
}

impl GridSetup {
    pub fn new(name: impl Into<String>, weights: QuadratureWeights) -> Self {
        Self {
            name: name.into(),
            weights: Arc::new(weights),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// `|V_recon − V_truth| / V_truth`.
    pub ve: f64,
    pub hausdorff_max: f64,
    pub clamped_fraction: f64,
}

/// Ground truth for one shape: its analytic description, a dense mesh and the exact volume.
pub struct TruthSurface {
    pub params: StarParams,
    pub mesh: SurfaceMesh,
    pub volume: f64,
}

impl TruthSurface {
    pub fn new(params: StarParams, cfg: &PipelineConfig) -> Result<Self> {
        let p = params.clone();
        let mesh = SurfaceMesh::from_radial(Vector3::zeros(), cfg.truth_frequency, move |u| p.radius(u))?;
        let volume = radial_function_volume(|u| params.radius(u), cfg.truth_volume_bandwidth)?;
        Ok(Self { params, mesh, volume })
    }
}

/// Runs the pipeline on `cloud` and scores it against `truth`, given in the same frame.
pub fn evaluate_cloud(
    truth: &TruthSurface,
    truth_distance: &MeshDistance<'_>,
    cloud: &PointCloud,
    setup: &GridSetup,
    cfg: &PipelineConfig,
) -> Result<ShapeMetrics> {
    let star = radial_from_pointcloud(cloud, setup.weights.grid(), cfg.neighbors)?;
    let recon = reconstruct_surface(&star, &setup.weights, cfg.bandwidth, cfg.mesh_frequency)?;
    let recon_distance = MeshDistance::new(&recon.mesh)?;
    let dev = surface_deviation_indexed(&recon_distance, truth_distance, cfg.deviation_samples)?;
    let volume = coefficient_volume(&recon.coefficients)?;
    Ok(ShapeMetrics {
        rmse: dev.rmse,
        mae: dev.mae,
        ve: (volume - truth.volume).abs() / truth.volume,
        hausdorff_max: dev.hausdorff_max,
        clamped_fraction: recon.clamped_fraction,
    })
}

/// One CSV-ready record of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub shape_id: usize,
    pub grid: String,
    pub b: usize,
    pub rmse: f64,
    pub mae: f64,
    pub ve: f64,
    pub hausdorff_max: f64,
    pub clamped_fraction: f64,
}

impl ShapeRow {
    pub fn new(shape_id: usize, grid: &str, b: usize, m: &ShapeMetrics) -> Self {
        Self {
            shape_id,
            grid: grid.to_string(),
            b,
            rmse: m.rmse,
            mae: m.mae,
            ve: m.ve,
            hausdorff_max: m.hausdorff_max,
            clamped_fraction: m.clamped_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub shape_id: usize,
    pub family: ShapeFamily,
    pub grid: String,
    pub rotation: usize,
    pub original: ShapeMetrics,
    pub rotated: ShapeMetrics,
    pub d_rmse: f64,
    pub d_mae: f64,
    pub d_ve: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationTotals {
    pub rmse: f64,
    pub mae: f64,
    pub ve: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridStability {
    pub grid: String,
    pub pairs: usize,
    pub sum: DeviationTotals,
    pub mean: DeviationTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub bandwidth: usize,
    pub rows: Vec<StabilityRow>,
    pub grids: Vec<GridStability>,
}

impl StabilityReport {
    pub fn grid(&self, name: &str) -> Option<&GridStability> {
        self.grids.iter().find(|g| g.grid == name)
    }
}

/// Every direction of every grid, in order.
fn grid_rays(grids: &[GridSetup]) -> Vec<Vector3<f64>> {
    grids.iter().flat_map(|g| g.weights.grid().unit_vectors()).collect()
}

fn sample_shape(params: &StarParams, rays: &[Vector3<f64>], shape: usize, cfg: &PipelineConfig) -> PointCloud {
    match cfg.sampling {
        CloudSampling::GridRays => params.sample_along(rays),
        CloudSampling::Random => params.sample_cloud(cfg.cloud_points, cfg.cloud_seed.wrapping_add(shape as u64)),
    }
}

/// Normalized copy of each corpus entry, scaled to unit bounding-box extent.
pub fn normalize_corpus(corpus: &[StarParams]) -> Vec<StarParams> {
    corpus.par_iter().map(StarParams::normalized).collect()
}

/// Reconstructs every shape once as sampled and once per rotation in
/// `rotations[shape]`, on every grid, and reports `|metric(original) − metric(rotated)|`.
///
/// Shapes are normalized to unit bounding-box extent before sampling and
/// rotated afterwards.
pub fn rotation_stability_report(
    corpus: &[StarParams],
    rotations: &[Vec<Matrix3<f64>>],
    grids: &[GridSetup],
    cfg: &PipelineConfig,
) -> Result<StabilityReport> {
    if corpus.len() != rotations.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} shapes but {} rotation lists",
            corpus.len(),
            rotations.len()
        )));
    }
    let normalized = normalize_corpus(corpus);
    let mut rows = Vec::new();
    for (i, (params, rots)) in normalized.into_iter().zip(rotations).enumerate() {
        let family = params.family;
        let truth = TruthSurface::new(params, cfg)?;
        let truth_distance = MeshDistance::new(&truth.mesh)?;
        let rays = grid_rays(grids);
        let cloud = sample_shape(&truth.params, &rays, i, cfg);
        let turned: Vec<(TruthSurface, PointCloud)> = rots
            .iter()
            .map(|r| {
                let params = truth.params.rotated(r);
                let cloud = match cfg.sampling {
                    CloudSampling::GridRays => params.sample_along(&rays),
                    CloudSampling::Random => rotate_cloud(&cloud, r)?,
                };
                Ok((TruthSurface::new(params, cfg)?, cloud))
            })
            .collect::<Result<_>>()?;
        for setup in grids {
            let original = evaluate_cloud(&truth, &truth_distance, &cloud, setup, cfg)?;
            for (k, (t, c)) in turned.iter().enumerate() {
                let rotated = evaluate_cloud(t, &MeshDistance::new(&t.mesh)?, c, setup, cfg)?;
                rows.push(StabilityRow {
                    shape_id: i,
                    family,
                    grid: setup.name.clone(),
                    rotation: k,
                    original,
                    rotated,
                    d_rmse: (original.rmse - rotated.rmse).abs(),
                    d_mae: (original.mae - rotated.mae).abs(),
                    d_ve: (original.ve - rotated.ve).abs(),
                });
            }
        }
    }
    let summaries = grids
        .iter()
        .map(|g| {
            let mine: Vec<&StabilityRow> = rows.iter().filter(|r| r.grid == g.name).collect();
            let sum = DeviationTotals {
                rmse: mine.iter().map(|r| r.d_rmse).sum(),
                mae: mine.iter().map(|r| r.d_mae).sum(),
                ve: mine.iter().map(|r| r.d_ve).sum(),
            };
            let n = mine.len().max(1) as f64;
            GridStability {
                grid: g.name.clone(),
                pairs: mine.len(),
                sum,
                mean: DeviationTotals {
                    rmse: sum.rmse / n,
                    mae: sum.mae / n,
                    ve: sum.ve / n,
                },
            }
        })
        .collect();
    Ok(StabilityReport {
        bandwidth: cfg.bandwidth,
        rows,
        grids: summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: ShapeFamily,
    #[serde(flatten)]
    pub row: ShapeRow,
}

/// Reconstruction metrics per shape, grid and bandwidth. `grids_for(b)` must
/// return setups whose weights support bandwidth `b`.
pub fn bandwidth_sweep<F>(
    corpus: &[StarParams],
    bandwidths: &[usize],
    mut grids_for: F,
    cfg: &PipelineConfig,
) -> Result<Vec<SweepRow>>
where
    F: FnMut(usize) -> Result<Vec<GridSetup>>,
{
    let setups: Vec<(usize, Vec<GridSetup>)> = bandwidths
        .iter()
        .map(|&b| grids_for(b).map(|g| (b, g)))
        .collect::<Result<_>>()?;
    let normalized = normalize_corpus(corpus);
    let mut out = Vec::new();
    for (i, params) in normalized.into_iter().enumerate() {
        let family = params.family;
        let truth = TruthSurface::new(params, cfg)?;
        let truth_distance = MeshDistance::new(&truth.mesh)?;
        for (b, grids) in &setups {
            let cloud = sample_shape(&truth.params, &grid_rays(grids), i, cfg);
            let run = PipelineConfig {
                bandwidth: *b,
                ..cfg.clone()
            };
            for setup in grids {
                let m = evaluate_cloud(&truth, &truth_distance, &cloud, setup, &run)?;
                out.push(SweepRow {
                    family,
                    row: ShapeRow::new(i, &setup.name, *b, &m),
                });
            }
        }
    }
    Ok(out)
}
