//! Experiment suites shared by `fibsh suite`, `fibsh bench` and the acceptance
//! target. Each experiment returns typed results; `tables` turns them into
//! report files and `checks` evaluates the expected properties.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{ensure, Context, Result};
use fibsh_core::descriptors::{
    corpus_descriptors, precision_recall, synth_labeled_corpus, DescriptorConfig, PrCurve, RECALL_LEVELS,
};
use fibsh_core::grids::{gen_equiangular, gen_fibonacci};
use fibsh_core::harmonics::DegreeOrder;
use fibsh_core::quadrature::{dh_closed_form_weights, sampling_spectrum, WeightMethod};
use fibsh_core::shapes::stability::{StabilityRow, SweepRow};
use fibsh_core::shapes::{
    bandwidth_sweep, quarter_turn_z, random_rotation, reconstruct_surface, rotation_stability_report, GridSetup,
    PipelineConfig, ShapeFamily, StarShape,
};
use fibsh_core::transform::roundtrip_error;
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::WeightCache;
use crate::report::{write_table, Format, Header};
use crate::setup::{
    grid_for, grid_setup, weights_for, DescriptorMethod, GridChoice, LabeledCorpusSpec, MonteCarlo,
    StarCorpusSpec,
};

/// Deviations below this are roundoff and do not count as a per-shape win or loss.
pub const MEASURABLE_DEVIATION: f64 = 1e-10;
/// Slack allowed when checking that errors do not grow with bandwidth.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// One expected property of an experiment. Checks that are not `enforced` are
/// reported but never fail a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub enforced: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            enforced: true,
            detail: detail.into(),
        }
    }

    pub fn soft(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            enforced: false,
            ..Self::new(name, passed, detail)
        }
    }

    pub fn failed(&self) -> bool {
        self.enforced && !self.passed
    }
}

/// A named table waiting to be written.
pub struct Table {
    pub name: String,
    write: Box<dyn Fn(&Path, &Header, Format) -> Result<()>>,
}

impl Table {
    pub fn new<T: Serialize + 'static>(name: impl Into<String>, rows: Vec<T>) -> Self {
        Self {
            name: name.into(),
            write: Box::new(move |p, h, f| write_table(p, h, &rows, f)),
        }
    }

    pub fn file_name(&self, format: Format) -> String {
        match format {
            Format::Csv => format!("{}.csv", self.name),
            Format::Json => format!("{}.json", self.name),
        }
    }

    pub fn write_to(&self, path: &Path, header: &Header, format: Format) -> Result<()> {
        (self.write)(path, header, format)
    }

    pub fn write_in(&self, dir: &Path, header: &Header, format: Format) -> Result<PathBuf> {
        let path = dir.join(self.file_name(format));
        self.write_to(&path, header, format)?;
        Ok(path)
    }
}

/// A grid family paired with a weight scheme, written `fib-analytic`, `equi-dh`, …
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridWeights {
    pub grid: GridChoice,
    pub method: WeightMethod,
}

impl GridWeights {
    pub const fn new(grid: GridChoice, method: WeightMethod) -> Self {
        Self { grid, method }
    }
}

impl FromStr for GridWeights {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        let (g, m) = s
            .split_once('-')
            .with_context(|| format!("'{s}' is not of the form <grid>-<method>"))?;
        Ok(Self {
            grid: g.parse()?,
            method: m.parse()?,
        })
    }
}

impl std::fmt::Display for GridWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.grid, self.method)
    }
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Analytic weights on the equiangular grid against the closed form.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightAgreementConfig {
    pub b: usize,
}

pub const WEIGHT_AGREEMENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct WeightDiffRow {
    pub index: usize,
    pub theta: f64,
    pub phi: f64,
    pub analytic: f64,
    pub dh: f64,
    pub abs_diff: f64,
}

pub struct WeightAgreement {
    pub rows: Vec<WeightDiffRow>,
    pub max_abs_diff: f64,
    pub residual: Option<f64>,
}

pub fn weight_agreement(cfg: &WeightAgreementConfig, cache: &WeightCache) -> Result<WeightAgreement> {
    let grid = gen_equiangular(cfg.b)?;
    let analytic = weights_for(&grid, cfg.b, WeightMethod::Analytic, MonteCarlo::default(), cache)?;
    let dh = dh_closed_form_weights(cfg.b)?;
    let rows: Vec<WeightDiffRow> = grid
        .points()
        .iter()
        .zip(analytic.weights().iter().zip(dh.weights()))
        .enumerate()
        .map(|(index, (p, (&a, &d)))| WeightDiffRow {
            index,
            theta: p.theta,
            phi: p.phi,
            analytic: a,
            dh: d,
            abs_diff: (a - d).abs(),
        })
        .collect();
    Ok(WeightAgreement {
        max_abs_diff: max_of(rows.iter().map(|r| r.abs_diff)),
        residual: analytic.residual(),
        rows,
    })
}

impl WeightAgreement {
    pub fn checks(&self) -> Vec<Check> {
        vec![Check::new(
            "analytic weights match closed form",
            self.max_abs_diff <= WEIGHT_AGREEMENT_TOLERANCE,
            format!("max |Δw| = {:.3e} (limit {WEIGHT_AGREEMENT_TOLERANCE:.0e})", self.max_abs_diff),
        )]
    }

    pub fn tables(self) -> Vec<Table> {
        vec![Table::new("weight_deviation", self.rows)]
    }
}

// ---------------------------------------------------------------------------
// Unit-sphere reconstruction under different weight schemes.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitSphereConfig {
    pub b: usize,
    pub points: usize,
    pub methods: Vec<WeightMethod>,
    pub mesh_frequency: usize,
    pub mc: MonteCarlo,
}

/// Analytic-weight reconstructions of the unit sphere must stay within this radius error.
pub const UNIT_SPHERE_TOLERANCE: f64 = 1e-9;
/// Other weight schemes must be at least this many times worse than analytic weights.
pub const UNIT_SPHERE_MIN_RATIO: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct VertexDeviationRow {
    pub method: WeightMethod,
    pub vertex: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodDeviationRow {
    pub method: WeightMethod,
    pub max_deviation: f64,
    pub rms_deviation: f64,
}

pub struct UnitSphere {
    pub vertices: Vec<VertexDeviationRow>,
    pub summary: Vec<MethodDeviationRow>,
}

pub fn unit_sphere(cfg: &UnitSphereConfig, cache: &WeightCache) -> Result<UnitSphere> {
    let grid = gen_fibonacci(cfg.points)?;
    let shape = StarShape::new(Vector3::zeros(), &grid, vec![1.0; grid.len()])?;
    let mut vertices = Vec::new();
    let mut summary = Vec::new();
    for &method in &cfg.methods {
        let w = weights_for(&grid, cfg.b, method, cfg.mc, cache)?;
        let recon = reconstruct_surface(&shape, &w, cfg.b, cfg.mesh_frequency)?;
        let devs: Vec<f64> = recon.mesh.vertices.iter().map(|v| (v.norm() - 1.0).abs()).collect();
        summary.push(MethodDeviationRow {
            method,
            max_deviation: max_of(devs.iter().copied()),
            rms_deviation: (devs.iter().map(|d| d * d).sum::<f64>() / devs.len() as f64).sqrt(),
        });
        vertices.extend(recon.mesh.vertices.iter().zip(devs).enumerate().map(|(i, (v, d))| {
            VertexDeviationRow {
                method,
                vertex: i,
                x: v.x,
                y: v.y,
                z: v.z,
                deviation: d,
            }
        }));
    }
    Ok(UnitSphere { vertices, summary })
}

impl UnitSphere {
    pub fn max_deviation(&self, method: WeightMethod) -> Option<f64> {
        self.summary.iter().find(|r| r.method == method).map(|r| r.max_deviation)
    }

    pub fn checks(&self) -> Vec<Check> {
        let Some(analytic) = self.max_deviation(WeightMethod::Analytic) else {
            return vec![];
        };
        let mut out = vec![Check::new(
            "analytic reconstruction is exact",
            analytic <= UNIT_SPHERE_TOLERANCE,
            format!("max radial deviation {analytic:.3e} (limit {UNIT_SPHERE_TOLERANCE:.0e})"),
        )];
        for r in self.summary.iter().filter(|r| r.method != WeightMethod::Analytic) {
            out.push(Check::new(
                format!("{} weights are worse than analytic", r.method),
                r.max_deviation >= UNIT_SPHERE_MIN_RATIO * analytic,
                format!(
                    "max radial deviation {:.3e} vs analytic {analytic:.3e} (ratio needed {UNIT_SPHERE_MIN_RATIO})",
                    r.max_deviation
                ),
            ));
        }
        out
    }

    pub fn tables(self) -> Vec<Table> {
        vec![
            Table::new("vertex_deviation", self.vertices),
            Table::new("summary", self.summary),
        ]
    }
}

// ---------------------------------------------------------------------------
// Sampling-comb spectrum of each weight scheme.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumConfig {
    pub b: usize,
    pub points: usize,
    pub methods: Vec<WeightMethod>,
    pub mc: MonteCarlo,
}

pub const SPECTRUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumRow {
    pub method: WeightMethod,
    pub l: usize,
    pub m: i64,
    pub re: f64,
    pub im: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummaryRow {
    pub method: WeightMethod,
    pub dc: f64,
    pub max_offband: f64,
}

pub struct Spectra {
    pub rows: Vec<SpectrumRow>,
    pub summary: Vec<SpectrumSummaryRow>,
}

pub fn spectra(cfg: &SpectrumConfig, cache: &WeightCache) -> Result<Spectra> {
    let grid = gen_fibonacci(cfg.points)?;
    let l_limit = 2 * cfg.b;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &method in &cfg.methods {
        let w = weights_for(&grid, cfg.b, method, cfg.mc, cache)?;
        let s = sampling_spectrum(&grid, &w, l_limit)?;
        summary.push(SpectrumSummaryRow {
            method,
            dc: s.dc(),
            max_offband: s.max_offband(l_limit),
        });
        rows.extend(
            s.coefficients
                .values()
                .iter()
                .zip(s.deviations())
                .enumerate()
                .map(|(i, (v, deviation))| {
                    let lm = DegreeOrder::from_flat_index(i);
                    SpectrumRow {
                        method,
                        l: lm.l(),
                        m: lm.m(),
                        re: v.re,
                        im: v.im,
                        deviation,
                    }
                }),
        );
    }
    Ok(Spectra { rows, summary })
}

impl Spectra {
    pub fn checks(&self) -> Vec<Check> {
        self.summary
            .iter()
            .filter(|r| r.method == WeightMethod::Analytic)
            .map(|r| {
                Check::new(
                    "analytic comb spectrum is a unit impulse below 2b",
                    (r.dc - 1.0).abs() <= SPECTRUM_TOLERANCE && r.max_offband <= SPECTRUM_TOLERANCE,
                    format!("dc {:.15} max off-band {:.3e}", r.dc, r.max_offband),
                )
            })
            .collect()
    }

    pub fn tables(self) -> Vec<Table> {
        vec![Table::new("spectrum", self.rows), Table::new("summary", self.summary)]
    }
}

// ---------------------------------------------------------------------------
// Round-trip accuracy of random band-limited tables.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundtripConfig {
    pub b: usize,
    pub trials: usize,
    pub seed: u64,
    pub setups: Vec<GridWeights>,
    /// Fibonacci point count; defaults to the bandwidth rule.
    pub fib_points: Option<usize>,
    pub mc: MonteCarlo,
}

pub const ROUNDTRIP_REGIME: f64 = 1e-8;
/// Accepted band for the RMSE reduction of Fibonacci over equiangular grids.
pub const REDUCTION_BAND: (f64, f64) = (0.10, 0.60);
/// Equal weights must be at least this many times worse than analytic ones.
pub const EQUAL_WEIGHT_RATIO: f64 = 100.0;

#[derive(Debug, Clone, Serialize)]
pub struct RoundtripRow {
    pub grid: GridChoice,
    pub method: WeightMethod,
    pub trial: usize,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundtripSummary {
    pub grid: GridChoice,
    pub method: WeightMethod,
    pub points: usize,
    pub rmse: f64,
    pub mae: f64,
}

pub struct Roundtrip {
    pub rows: Vec<RoundtripRow>,
    pub summary: Vec<RoundtripSummary>,
}

pub fn roundtrip(cfg: &RoundtripConfig, cache: &WeightCache) -> Result<Roundtrip> {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for gw in &cfg.setups {
        let size = match gw.grid {
            GridChoice::Fib => cfg.fib_points,
            _ => None,
        };
        let grid = grid_for(gw.grid, cfg.b, size)?;
        let w = weights_for(&grid, cfg.b, gw.method, cfg.mc, cache).with_context(|| format!("weights for {gw}"))?;
        let report = roundtrip_error(cfg.b, &grid, &w, cfg.trials, cfg.seed)?;
        log::info!("{gw}: rmse {:.3e} mae {:.3e}", report.rmse, report.mae);
        rows.extend(report.trials.iter().map(|t| RoundtripRow {
            grid: gw.grid,
            method: gw.method,
            trial: t.trial,
            rmse: t.rmse,
            mae: t.mae,
        }));
        summary.push(RoundtripSummary {
            grid: gw.grid,
            method: gw.method,
            points: grid.len(),
            rmse: report.rmse,
            mae: report.mae,
        });
    }
    Ok(Roundtrip { rows, summary })
}

impl Roundtrip {
    pub fn get(&self, grid: GridChoice, method: WeightMethod) -> Option<&RoundtripSummary> {
        self.summary.iter().find(|s| s.grid == grid && s.method == method)
    }

    /// `1 − fib/equi` for RMSE and MAE.
    pub fn reduction(&self) -> Option<(f64, f64)> {
        let f = self.get(GridChoice::Fib, WeightMethod::Analytic)?;
        let e = self.get(GridChoice::Equi, WeightMethod::DhClosedForm)?;
        Some((1.0 - f.rmse / e.rmse, 1.0 - f.mae / e.mae))
    }

    pub fn checks(&self) -> Vec<Check> {
        let (Some(f), Some(e)) = (
            self.get(GridChoice::Fib, WeightMethod::Analytic),
            self.get(GridChoice::Equi, WeightMethod::DhClosedForm),
        ) else {
            return vec![];
        };
        let (red_rmse, red_mae) = self.reduction().expect("both rows present");
        let in_band = (REDUCTION_BAND.0..=REDUCTION_BAND.1).contains(&red_rmse);
        let equal_ratio = self
            .get(GridChoice::Fib, WeightMethod::Equal)
            .map(|q| q.rmse / f.rmse.max(f64::MIN_POSITIVE));
        let mut out = vec![
            Check::new(
                "round trips at machine precision",
                f.rmse <= ROUNDTRIP_REGIME && e.rmse <= ROUNDTRIP_REGIME,
                format!("fib {:.3e} equi {:.3e} (limit {ROUNDTRIP_REGIME:.0e})", f.rmse, e.rmse),
            ),
            Check::new(
                "fib rmse <= equi rmse",
                f.rmse <= e.rmse,
                format!("fib {:.4e} equi {:.4e}", f.rmse, e.rmse),
            ),
            Check::new(
                "reduction in band or equal weights far worse",
                in_band || equal_ratio.is_some_and(|r| r >= EQUAL_WEIGHT_RATIO),
                format!(
                    "rmse reduction {:.1}% mae reduction {:.1}% (band {:.0}%-{:.0}%), equal/analytic ratio {}",
                    100.0 * red_rmse,
                    100.0 * red_mae,
                    100.0 * REDUCTION_BAND.0,
                    100.0 * REDUCTION_BAND.1,
                    equal_ratio.map_or("n/a".into(), |r| format!("{r:.3e}"))
                ),
            ),
        ];
        let best = self
            .summary
            .iter()
            .min_by(|a, b| a.rmse.total_cmp(&b.rmse))
            .expect("nonempty summary");
        out.push(Check::soft(
            "fib-analytic has the lowest rmse",
            best.grid == GridChoice::Fib && best.method == WeightMethod::Analytic,
            format!("lowest: {}-{} at {:.4e}", best.grid, best.method, best.rmse),
        ));
        out
    }

    pub fn tables(self) -> Vec<Table> {
        vec![Table::new("trials", self.rows), Table::new("summary", self.summary)]
    }
}

// ---------------------------------------------------------------------------
// Rotation stability on the synthetic star corpus.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationConfig {
    pub corpus: StarCorpusSpec,
    /// Seeded uniform random rotations per shape.
    pub rotations: usize,
    /// Also apply a 90° turn about z to every shape.
    pub quarter_turn: bool,
    pub rotation_seed: u64,
    pub fib_points: Option<usize>,
    pub pipeline: PipelineConfig,
}

/// Share of measurable shapes on which the Fibonacci grid must win.
pub const PER_SHAPE_WIN_SHARE: f64 = 0.8;

/// Rotation lists for `count` shapes: shape `i` draws from ChaCha stream `i`.
pub fn seeded_rotations(count: usize, random: usize, quarter_turn: bool, seed: u64) -> Vec<Vec<Matrix3<f64>>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut rots: Vec<Matrix3<f64>> = (0..random).map(|_| random_rotation(&mut rng)).collect();
            if quarter_turn {
                rots.push(quarter_turn_z());
            }
            rots
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RotationRow {
    pub shape_id: usize,
    pub family: ShapeFamily,
    pub grid: String,
    pub rotation: usize,
    pub rmse: f64,
    pub rmse_rotated: f64,
    pub d_rmse: f64,
    pub mae: f64,
    pub mae_rotated: f64,
    pub d_mae: f64,
    pub ve: f64,
    pub ve_rotated: f64,
    pub d_ve: f64,
}

impl From<&StabilityRow> for RotationRow {
    fn from(r: &StabilityRow) -> Self {
        Self {
            shape_id: r.shape_id,
            family: r.family,
            grid: r.grid.clone(),
            rotation: r.rotation,
            rmse: r.original.rmse,
            rmse_rotated: r.rotated.rmse,
            d_rmse: r.d_rmse,
            mae: r.original.mae,
            mae_rotated: r.rotated.mae,
            d_mae: r.d_mae,
            ve: r.original.ve,
            ve_rotated: r.rotated.ve,
            d_ve: r.d_ve,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShapeDeviationRow {
    pub shape_id: usize,
    pub family: ShapeFamily,
    pub grid: String,
    pub d_rmse: f64,
    pub d_mae: f64,
    pub d_ve: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RotationSummaryRow {
    pub grid: String,
    pub pairs: usize,
    pub sum_rmse: f64,
    pub sum_mae: f64,
    pub sum_ve: f64,
    pub mean_rmse: f64,
    pub mean_mae: f64,
    pub mean_ve: f64,
}

pub struct Rotation {
    pub rows: Vec<RotationRow>,
    pub shapes: Vec<ShapeDeviationRow>,
    pub summary: Vec<RotationSummaryRow>,
}

const METRICS: [&str; 3] = ["rmse", "mae", "ve"];

pub fn rotation(cfg: &RotationConfig, cache: &WeightCache) -> Result<Rotation> {
    let b = cfg.pipeline.bandwidth;
    let corpus = fibsh_core::shapes::synth_star_corpus(cfg.corpus.count, cfg.corpus.seed)?;
    let rots = seeded_rotations(corpus.len(), cfg.rotations, cfg.quarter_turn, cfg.rotation_seed);
    let setups = vec![
        grid_setup(GridChoice::Fib, b, cfg.fib_points, cache)?,
        grid_setup(GridChoice::Equi, b, None, cache)?,
    ];
    let report = rotation_stability_report(&corpus, &rots, &setups, &cfg.pipeline)?;
    let rows: Vec<RotationRow> = report.rows.iter().map(RotationRow::from).collect();
    let mut shapes = Vec::new();
    for i in 0..corpus.len() {
        for s in &setups {
            let mine: Vec<&RotationRow> = rows.iter().filter(|r| r.shape_id == i && r.grid == s.name).collect();
            let Some(first) = mine.first() else { continue };
            shapes.push(ShapeDeviationRow {
                shape_id: i,
                family: first.family,
                grid: s.name.clone(),
                d_rmse: mine.iter().map(|r| r.d_rmse).sum(),
                d_mae: mine.iter().map(|r| r.d_mae).sum(),
                d_ve: mine.iter().map(|r| r.d_ve).sum(),
            });
        }
    }
    let summary = report
        .grids
        .iter()
        .map(|g| RotationSummaryRow {
            grid: g.grid.clone(),
            pairs: g.pairs,
            sum_rmse: g.sum.rmse,
            sum_mae: g.sum.mae,
            sum_ve: g.sum.ve,
            mean_rmse: g.mean.rmse,
            mean_mae: g.mean.mae,
            mean_ve: g.mean.ve,
        })
        .collect();
    Ok(Rotation { rows, shapes, summary })
}

fn metric_of3(m: &str, rmse: f64, mae: f64, ve: f64) -> f64 {
    match m {
        "rmse" => rmse,
        "mae" => mae,
        _ => ve,
    }
}

impl Rotation {
    pub fn summary_for(&self, grid: &str) -> Option<&RotationSummaryRow> {
        self.summary.iter().find(|s| s.grid == grid)
    }

    /// (wins, measurable shapes) of the Fibonacci grid for one metric.
    pub fn per_shape_wins(&self, metric: &str) -> (usize, usize) {
        let value = |r: &ShapeDeviationRow| metric_of3(metric, r.d_rmse, r.d_mae, r.d_ve);
        let mut wins = 0;
        let mut measurable = 0;
        for f in self.shapes.iter().filter(|r| r.grid == "fib") {
            let Some(e) = self.shapes.iter().find(|r| r.grid == "equi" && r.shape_id == f.shape_id) else {
                continue;
            };
            if value(f).max(value(e)) > MEASURABLE_DEVIATION {
                measurable += 1;
                wins += usize::from(value(f) < value(e));
            }
        }
        (wins, measurable)
    }

    pub fn checks(&self) -> Vec<Check> {
        let (Some(f), Some(e)) = (self.summary_for("fib"), self.summary_for("equi")) else {
            return vec![];
        };
        let mut out = Vec::new();
        for m in METRICS {
            let a = metric_of3(m, f.sum_rmse, f.sum_mae, f.sum_ve);
            let b = metric_of3(m, e.sum_rmse, e.sum_mae, e.sum_ve);
            out.push(Check::new(
                format!("summed {m} deviation fib < equi"),
                a < b,
                format!("fib {a:.4e} equi {b:.4e}"),
            ));
        }
        for m in METRICS {
            let (wins, measurable) = self.per_shape_wins(m);
            let share = wins as f64 / measurable.max(1) as f64;
            out.push(Check::new(
                format!("fib wins per shape on {m}"),
                measurable > 0 && share >= PER_SHAPE_WIN_SHARE,
                format!(
                    "{wins} of {measurable} measurable shapes (need {:.0}%)",
                    100.0 * PER_SHAPE_WIN_SHARE
                ),
            ));
        }
        out
    }

    pub fn tables(self) -> Vec<Table> {
        vec![
            Table::new("rotations", self.rows),
            Table::new("shapes", self.shapes),
            Table::new("summary", self.summary),
        ]
    }
}

// ---------------------------------------------------------------------------
// Reconstruction error across bandwidths.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub corpus: StarCorpusSpec,
    pub bandwidths: Vec<usize>,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub shape_id: usize,
    pub family: ShapeFamily,
    pub grid: String,
    pub b: usize,
    pub rmse: f64,
    pub mae: f64,
    pub ve: f64,
    pub hausdorff_max: f64,
    pub clamped_fraction: f64,
}

impl From<&SweepRow> for SweepRecord {
    fn from(r: &SweepRow) -> Self {
        Self {
            shape_id: r.row.shape_id,
            family: r.family,
            grid: r.row.grid.clone(),
            b: r.row.b,
            rmse: r.row.rmse,
            mae: r.row.mae,
            ve: r.row.ve,
            hausdorff_max: r.row.hausdorff_max,
            clamped_fraction: r.row.clamped_fraction,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyMeanRow {
    pub family: ShapeFamily,
    pub grid: String,
    pub b: usize,
    pub shapes: usize,
    pub rmse: f64,
    pub mae: f64,
    pub ve: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityRow {
    pub shape_id: usize,
    pub grid: String,
    pub metric: &'static str,
    pub b_from: usize,
    pub b_to: usize,
    pub value_from: f64,
    pub value_to: f64,
}

pub struct Sweep {
    pub bandwidths: Vec<usize>,
    pub rows: Vec<SweepRecord>,
    pub means: Vec<FamilyMeanRow>,
    pub violations: Vec<MonotonicityRow>,
}

pub fn sweep(cfg: &SweepConfig, cache: &WeightCache) -> Result<Sweep> {
    ensure!(!cfg.bandwidths.is_empty(), "no bandwidths given");
    let mut bandwidths = cfg.bandwidths.clone();
    bandwidths.sort_unstable();
    bandwidths.dedup();
    let corpus = fibsh_core::shapes::synth_star_corpus(cfg.corpus.count, cfg.corpus.seed)?;
    let grids = |b: usize| -> fibsh_core::Result<Vec<GridSetup>> {
        let setup = |g| {
            grid_setup(g, b, None, cache).map_err(|e| match e.downcast::<fibsh_core::Error>() {
                Ok(core) => core,
                Err(other) => fibsh_core::Error::InvalidParameter(format!("{other:#}")),
            })
        };
        Ok(vec![setup(GridChoice::Fib)?, setup(GridChoice::Equi)?])
    };
    let rows: Vec<SweepRecord> = bandwidth_sweep(&corpus, &bandwidths, grids, &cfg.pipeline)?
        .iter()
        .map(SweepRecord::from)
        .collect();

    let mut means = Vec::new();
    for family in [ShapeFamily::Smooth, ShapeFamily::Sharp] {
        for &b in &bandwidths {
            for grid in ["fib", "equi"] {
                let sel: Vec<&SweepRecord> = rows
                    .iter()
                    .filter(|r| r.family == family && r.b == b && r.grid == grid)
                    .collect();
                if sel.is_empty() {
                    continue;
                }
                let n = sel.len() as f64;
                means.push(FamilyMeanRow {
                    family,
                    grid: grid.to_string(),
                    b,
                    shapes: sel.len(),
                    rmse: sel.iter().map(|r| r.rmse).sum::<f64>() / n,
                    mae: sel.iter().map(|r| r.mae).sum::<f64>() / n,
                    ve: sel.iter().map(|r| r.ve).sum::<f64>() / n,
                });
            }
        }
    }

    let mut violations = Vec::new();
    for shape_id in 0..corpus.len() {
        for grid in ["fib", "equi"] {
            let series: Vec<&SweepRecord> = bandwidths
                .iter()
                .filter_map(|&b| rows.iter().find(|r| r.shape_id == shape_id && r.grid == grid && r.b == b))
                .collect();
            for pair in series.windows(2) {
                for metric in METRICS {
                    let from = metric_of3(metric, pair[0].rmse, pair[0].mae, pair[0].ve);
                    let to = metric_of3(metric, pair[1].rmse, pair[1].mae, pair[1].ve);
                    if to > from + MONOTONE_SLACK {
                        violations.push(MonotonicityRow {
                            shape_id,
                            grid: grid.to_string(),
                            metric,
                            b_from: pair[0].b,
                            b_to: pair[1].b,
                            value_from: from,
                            value_to: to,
                        });
                    }
                }
            }
        }
    }
    Ok(Sweep {
        bandwidths,
        rows,
        means,
        violations,
    })
}

impl Sweep {
    pub fn mean(&self, family: ShapeFamily, grid: &str, b: usize) -> Option<&FamilyMeanRow> {
        self.means
            .iter()
            .find(|m| m.family == family && m.grid == grid && m.b == b)
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for metric in METRICS {
            let bad: Vec<String> = self
                .violations
                .iter()
                .filter(|v| v.metric == metric)
                .map(|v| format!("shape {} {} b {}->{}", v.shape_id, v.grid, v.b_from, v.b_to))
                .collect();
            out.push(Check::new(
                format!("per-shape {metric} non-increasing in b"),
                bad.is_empty(),
                if bad.is_empty() {
                    "no violations".to_string()
                } else {
                    format!("{} violations: {}", bad.len(), bad.join(", "))
                },
            ));
        }
        for &b in &self.bandwidths {
            let (Some(f), Some(e)) = (
                self.mean(ShapeFamily::Sharp, "fib", b),
                self.mean(ShapeFamily::Sharp, "equi", b),
            ) else {
                continue;
            };
            for metric in METRICS {
                let a = metric_of3(metric, f.rmse, f.mae, f.ve);
                let c = metric_of3(metric, e.rmse, e.mae, e.ve);
                out.push(Check::new(
                    format!("sharp family {metric} fib <= equi at b={b}"),
                    a <= c,
                    format!("fib {a:.4e} equi {c:.4e}"),
                ));
            }
        }
        out
    }

    pub fn tables(self) -> Vec<Table> {
        vec![
            Table::new("shapes", self.rows),
            Table::new("family_means", self.means),
            Table::new("monotonicity_violations", self.violations),
        ]
    }
}

// ---------------------------------------------------------------------------
// Retrieval with shell descriptors.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub corpus: LabeledCorpusSpec,
    pub points: usize,
    pub descriptor: DescriptorConfig,
    pub methods: Vec<DescriptorMethod>,
    pub fib_points: Option<usize>,
    /// Also report MAP for every prefix of the shell stack.
    pub shell_sweep: bool,
}

/// Recall levels at which the Fibonacci pipeline must match or beat the equiangular one.
pub const RETRIEVAL_MAJORITY: usize = RECALL_LEVELS / 2 + 1;

#[derive(Debug, Clone, Serialize)]
pub struct PrRow {
    pub method: DescriptorMethod,
    pub recall_level: f64,
    pub mean_precision: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MapRow {
    pub method: DescriptorMethod,
    pub shells: usize,
    pub map: f64,
}

pub struct Retrieval {
    pub curves: Vec<(DescriptorMethod, PrCurve)>,
    pub maps: Vec<MapRow>,
}

pub fn retrieval(cfg: &RetrievalConfig, cache: &WeightCache) -> Result<Retrieval> {
    let c = &cfg.corpus;
    let corpus = synth_labeled_corpus(c.classes, c.per_class, cfg.points, c.seed)?;
    corpus.check_classes()?;
    let labels = corpus.labels();
    let b = cfg.descriptor.bandwidth;
    let mut curves = Vec::new();
    let mut maps = Vec::new();
    for &method in &cfg.methods {
        let size = match method.grid() {
            GridChoice::Fib => cfg.fib_points,
            _ => None,
        };
        let setup = grid_setup(method.grid(), b, size, cache)?;
        let descriptors = corpus_descriptors(&corpus, &setup.weights, &cfg.descriptor)?;
        let curve = precision_recall(&descriptors, &labels)?;
        log::info!("{method}: MAP {:.4}", curve.mean_average_precision);
        if cfg.shell_sweep {
            for s in 1..=cfg.descriptor.shells {
                let prefix: Vec<_> = descriptors.iter().map(|d| d.first_shells(s)).collect();
                maps.push(MapRow {
                    method,
                    shells: s,
                    map: precision_recall(&prefix, &labels)?.mean_average_precision,
                });
            }
        } else {
            maps.push(MapRow {
                method,
                shells: cfg.descriptor.shells,
                map: curve.mean_average_precision,
            });
        }
        curves.push((method, curve));
    }
    Ok(Retrieval { curves, maps })
}

impl Retrieval {
    pub fn curve(&self, method: DescriptorMethod) -> Option<&PrCurve> {
        self.curves.iter().find(|(m, _)| *m == method).map(|(_, c)| c)
    }

    /// Recall levels at which FSH3D precision is at least ESH precision.
    pub fn levels_not_worse(&self) -> Option<usize> {
        let f = self.curve(DescriptorMethod::ShdFsh3d)?;
        let e = self.curve(DescriptorMethod::ShdEsh)?;
        Some(f.precision.iter().zip(&e.precision).filter(|(a, b)| a >= b).count())
    }

    pub fn rows(&self) -> Vec<PrRow> {
        self.curves
            .iter()
            .flat_map(|(method, c)| {
                c.precision.iter().enumerate().map(move |(i, &p)| PrRow {
                    method: *method,
                    recall_level: PrCurve::recall_level(i),
                    mean_precision: p,
                })
            })
            .collect()
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        if let Some(n) = self.levels_not_worse() {
            let f = self.curve(DescriptorMethod::ShdFsh3d).expect("present");
            let e = self.curve(DescriptorMethod::ShdEsh).expect("present");
            out.push(Check::new(
                "fsh3d precision >= esh at a majority of recall levels",
                n >= RETRIEVAL_MAJORITY,
                format!(
                    "{n} of {RECALL_LEVELS} levels (need {RETRIEVAL_MAJORITY}); MAP fsh3d {:.4} esh {:.4}",
                    f.mean_average_precision, e.mean_average_precision
                ),
            ));
        }
        for (method, _) in &self.curves {
            let series: Vec<f64> = self.maps.iter().filter(|r| r.method == *method).map(|r| r.map).collect();
            if series.len() > 1 {
                let monotone = series.windows(2).all(|w| w[1] >= w[0]);
                out.push(Check::soft(
                    format!("{method} MAP non-decreasing in shell count"),
                    monotone,
                    series.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join(" "),
                ));
            }
        }
        out
    }

    pub fn tables(self) -> Vec<Table> {
        let rows = self.rows();
        vec![Table::new("precision_recall", rows), Table::new("map_by_shells", self.maps)]
    }
}
