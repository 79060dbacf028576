//! Subcommand implementations.

use std::fs;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use fibsh_core::descriptors::{cloud_descriptor, DescriptorConfig};
use fibsh_core::grids::{gen_equiangular, gen_fibonacci, gen_icosahedral, SphericalGrid};
use fibsh_core::harmonics::ShCoefficients;
use fibsh_core::quadrature::{QuadratureWeights, WeightMethod};
use fibsh_core::shapes::{
    enclosed_volume_mesh, radial_from_pointcloud, reconstruct_surface, surface_deviation, MeshDistance, PointCloud,
    PipelineConfig, ShapeMetrics, ShapeRow, SurfaceMesh,
};
use fibsh_core::transform::{forward_sht, inverse_sht, RadialField, REAL_SIGNAL_TOLERANCE};
use serde::Serialize;

use crate::args::*;
use crate::cache::WeightCache;
use crate::experiments::{self as exp, Check, Table};
use crate::report::{read_json, write_json, write_table, Format, Header};
use crate::setup::{
    fibonacci_count, grid_for, icosahedral_frequency, parse_list, weights_for, DescriptorMethod, GridChoice,
    LabeledCorpusSpec, MonteCarlo, StarCorpusSpec,
};

/// Shared state of one invocation.
pub struct Context {
    pub global: GlobalArgs,
    pub cache: WeightCache,
}

impl Context {
    pub fn new(global: GlobalArgs) -> Self {
        let cache = if global.no_cache {
            WeightCache::disabled()
        } else {
            WeightCache::new(global.cache_dir.clone().unwrap_or_else(WeightCache::default_dir))
        };
        Self { global, cache }
    }

    fn header(&self, command: &str, config: &impl Serialize) -> Header {
        #[derive(Serialize)]
        struct Full<'a, C> {
            command: &'a str,
            config: &'a C,
            global: &'a GlobalArgs,
        }
        Header::new(
            &Full {
                command,
                config,
                global: &self.global,
            },
            self.global.timestamps,
        )
    }

    fn format(&self) -> Format {
        self.global.format
    }

    fn desk(&self) -> bool {
        self.global.desk
    }
}

/// What a successful run produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    /// Set by `suite --assert`: failed checks make the run fail.
    pub assert_checks: bool,
}

impl Outcome {
    pub fn violations(&self) -> usize {
        self.checks.iter().filter(|c| c.failed()).count()
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let ctx = Context::new(cli.global);
    match cli.command {
        Command::Grid(a) => grid(&a),
        Command::Weights(a) => weights(&ctx, &a),
        Command::Sht(a) => sht(&a),
        Command::Isht(a) => isht(&a),
        Command::Reconstruct(a) => reconstruct(&ctx, &a),
        Command::Descriptor(a) => descriptor(&ctx, &a),
        Command::Bench(b) => bench(&ctx, b),
        Command::Suite(a) => suite(&ctx, &a),
        Command::Cache(c) => cache(&ctx, c),
    }
}

/// A grid given either as a JSON file or as a family name sized for `b`.
fn resolve_grid(arg: &str, b: usize) -> Result<(SphericalGrid, Option<GridChoice>)> {
    if let Ok(choice) = arg.parse::<GridChoice>() {
        return Ok((grid_for(choice, b, None)?, Some(choice)));
    }
    let path = Path::new(arg);
    if !path.exists() {
        bail!("'{arg}' is neither a grid name (fib, equi, ico) nor an existing grid file");
    }
    Ok((read_json(path)?, None))
}

/// Grid plus weights: the weights file when given, otherwise the family's usual
/// weights (analytic for grid files) through the cache.
fn resolve_weights(ctx: &Context, grid: &str, weights: Option<&Path>, b: usize) -> Result<QuadratureWeights> {
    if let Some(p) = weights {
        let w: QuadratureWeights = read_json(p)?;
        w.validate()?;
        return Ok(w);
    }
    let (g, choice) = resolve_grid(grid, b)?;
    let method = choice.map_or(WeightMethod::Analytic, GridChoice::default_method);
    weights_for(&g, b, method, MonteCarlo::default(), &ctx.cache)
}

fn done() -> Result<Outcome> {
    Ok(Outcome::default())
}

fn grid(a: &GridArgs) -> Result<Outcome> {
    let need_b = || a.b.context("give --b or the grid's own size option");
    let g = match a.kind {
        GridKind::Fib => gen_fibonacci(match a.n {
            Some(n) => n,
            None => fibonacci_count(need_b()?),
        })?,
        GridKind::Equi => gen_equiangular(need_b()?)?,
        GridKind::Ico => gen_icosahedral(match a.k {
            Some(k) => k,
            None => icosahedral_frequency(need_b()?),
        })?,
    };
    log::info!("{} grid with {} points", g.spec().kind_name(), g.len());
    write_json(&a.out, &g)?;
    done()
}

fn weights(ctx: &Context, a: &WeightsArgs) -> Result<Outcome> {
    let (g, choice) = resolve_grid(&a.grid, a.b)?;
    let method = match &a.method {
        Some(m) => m.parse()?,
        None => choice.map_or(WeightMethod::Analytic, GridChoice::default_method),
    };
    let mc = MonteCarlo {
        samples: a.mc_samples,
        seed: a.mc_seed,
    };
    let w = weights_for(&g, a.b, method, mc, &ctx.cache)?;
    if let Some(r) = w.residual() {
        log::info!("constraint residual {r:.3e}");
    }
    write_json(&a.out, &w)?;
    done()
}

fn sht(a: &ShtArgs) -> Result<Outcome> {
    let field: RadialField = read_json(&a.field)?;
    let w: QuadratureWeights = read_json(&a.weights)?;
    w.validate()?;
    let coeffs = forward_sht(&field, &w, a.b)?;
    write_json(&a.out, &coeffs)?;
    done()
}

fn isht(a: &IshtArgs) -> Result<Outcome> {
    let coeffs: ShCoefficients = read_json(&a.coeffs)?;
    coeffs.validate()?;
    let (targets, _) = resolve_grid(&a.targets, coeffs.bandwidth())?;
    let mut field = inverse_sht(&coeffs, &targets)?;
    if !a.complex {
        if let Ok(real) = field.to_real(REAL_SIGNAL_TOLERANCE) {
            field = RadialField::real(&targets, real)?;
        }
    }
    write_json(&a.out, &field)?;
    done()
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    PointCloud::read_xyz(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn read_mesh(path: &Path) -> Result<SurfaceMesh> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    SurfaceMesh::read_obj(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write(&mut w).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Sidecar path `<stem>.deviation.<ext>` next to `out`.
fn sidecar(out: &Path, format: Format) -> PathBuf {
    let stem = out.file_stem().map_or("mesh".into(), |s| s.to_string_lossy().into_owned());
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    out.with_file_name(format!("{stem}.deviation.{ext}"))
}

#[derive(Serialize)]
struct VertexDistance {
    vertex: usize,
    distance: f64,
}

fn reconstruct(ctx: &Context, a: &ReconstructArgs) -> Result<Outcome> {
    let cloud = read_cloud(&a.cloud)?;
    let w = resolve_weights(ctx, &a.grid, a.weights.as_deref(), a.b)?;
    let star = radial_from_pointcloud(&cloud, w.grid(), a.neighbors)?;
    let recon = reconstruct_surface(&star, &w, a.b, a.mesh_frequency)?;
    write_file(&a.out, |f| recon.mesh.write_obj(f))?;
    if recon.clamped() {
        log::warn!("{:.3}% of radii were clamped", 100.0 * recon.clamped_fraction);
    }
    let Some(truth_path) = &a.truth else {
        return done();
    };
    let truth = read_mesh(truth_path)?;
    let dev = surface_deviation(&recon.mesh, &truth, a.samples)?;
    let v_truth = enclosed_volume_mesh(&truth)?;
    let v_recon = enclosed_volume_mesh(&recon.mesh)?;
    let metrics = ShapeMetrics {
        rmse: dev.rmse,
        mae: dev.mae,
        ve: (v_recon - v_truth).abs() / v_truth,
        hausdorff_max: dev.hausdorff_max,
        clamped_fraction: recon.clamped_fraction,
    };
    #[derive(Serialize)]
    struct Config<'a> {
        cloud: &'a Path,
        grid: &'a str,
        b: usize,
        neighbors: usize,
        mesh_frequency: usize,
        truth: &'a Path,
        samples: usize,
    }
    let header = ctx.header(
        "reconstruct",
        &Config {
            cloud: &a.cloud,
            grid: &a.grid,
            b: a.b,
            neighbors: a.neighbors,
            mesh_frequency: a.mesh_frequency,
            truth: truth_path,
            samples: a.samples,
        },
    );
    let grid_name = a.grid.parse::<GridChoice>().map_or_else(|_| a.grid.clone(), |g| g.to_string());
    if let Some(report) = &a.report {
        let row = ShapeRow::new(a.shape_id, &grid_name, a.b, &metrics);
        write_table(report, &header, &[row], ctx.format())?;
    }
    let to_truth = MeshDistance::new(&truth)?;
    let per_vertex: Vec<VertexDistance> = recon
        .mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(vertex, v)| VertexDistance {
            vertex,
            distance: to_truth.distance(v),
        })
        .collect();
    let path = a.deviation_out.clone().unwrap_or_else(|| sidecar(&a.out, ctx.format()));
    write_table(&path, &header, &per_vertex, ctx.format())?;
    done()
}

fn descriptor(ctx: &Context, a: &DescriptorArgs) -> Result<Outcome> {
    let cloud = read_cloud(&a.cloud)?;
    let w = resolve_weights(ctx, &a.grid, a.weights.as_deref(), a.b)?;
    let d = cloud_descriptor(&cloud, a.shells, &w, a.b, a.sigma)?;
    write_json(&a.out, &d)?;
    done()
}

// ---------------------------------------------------------------------------
// Resolved experiment configurations. Defaults follow the full scale unless
// `--desk` is set.

fn pick<T>(desk: bool, full: T, small: T) -> T {
    if desk {
        small
    } else {
        full
    }
}

fn pipeline(desk: bool, b: usize, mesh_frequency: Option<usize>) -> PipelineConfig {
    let freq = mesh_frequency.unwrap_or(pick(desk, 128, 64));
    PipelineConfig {
        bandwidth: b,
        mesh_frequency: freq,
        truth_frequency: freq,
        truth_volume_bandwidth: pick(desk, 128, 64),
        deviation_samples: pick(desk, 20_000, 10_000),
        ..PipelineConfig::default()
    }
}

pub const DEFAULT_ROUNDTRIP_SETUPS: &str = "fib-analytic,fib-equal,equi-dh,ico-analytic";
pub const DEFAULT_WEIGHT_METHODS: &str = "analytic,equal,area";

pub fn roundtrip_config(
    desk: bool,
    b: Option<usize>,
    trials: Option<usize>,
    seed: u64,
    setups: Option<&str>,
    n: Option<usize>,
) -> Result<exp::RoundtripConfig> {
    Ok(exp::RoundtripConfig {
        b: b.unwrap_or(pick(desk, 32, 16)),
        trials: trials.unwrap_or(pick(desk, 40, 10)),
        seed,
        setups: parse_list(setups.unwrap_or(DEFAULT_ROUNDTRIP_SETUPS))?,
        fib_points: n,
        mc: MonteCarlo::default(),
    })
}

pub fn rotation_config(
    desk: bool,
    corpus: Option<&str>,
    b: Option<usize>,
    rotations: Option<usize>,
    quarter_turn: bool,
    rotation_seed: u64,
    n: Option<usize>,
    mesh_frequency: Option<usize>,
) -> Result<exp::RotationConfig> {
    let b = b.unwrap_or(pick(desk, 32, 16));
    Ok(exp::RotationConfig {
        corpus: corpus.unwrap_or(pick(desk, "synth:10:seed7", "synth:4:seed7")).parse()?,
        rotations: rotations.unwrap_or(pick(desk, 20, 3)),
        quarter_turn,
        rotation_seed,
        fib_points: n,
        pipeline: pipeline(desk, b, mesh_frequency),
    })
}

pub fn retrieval_config(
    desk: bool,
    corpus: Option<&str>,
    methods: Option<&str>,
    points: Option<usize>,
    shells: Option<usize>,
    b: Option<usize>,
    sigma: Option<f64>,
    n: Option<usize>,
    shell_sweep: bool,
) -> Result<exp::RetrievalConfig> {
    let corpus: LabeledCorpusSpec = corpus.unwrap_or(pick(desk, "synth4x15:seed3", "synth4x8:seed3")).parse()?;
    Ok(exp::RetrievalConfig {
        corpus,
        points: points.unwrap_or(pick(desk, 20_000, 5_000)),
        descriptor: DescriptorConfig {
            shells: shells.unwrap_or(8),
            bandwidth: b.unwrap_or(pick(desk, 32, 16)),
            sigma,
        },
        methods: parse_list::<DescriptorMethod>(methods.unwrap_or("shd-esh,shd-fsh3d"))?,
        fib_points: n,
        shell_sweep,
    })
}

fn bench(ctx: &Context, cmd: BenchCommand) -> Result<Outcome> {
    let desk = ctx.desk();
    match cmd {
        BenchCommand::Roundtrip(a) => {
            let cfg = roundtrip_config(desk, a.b, a.trials, a.seed, a.setups.as_deref(), a.n)?;
            let r = exp::roundtrip(&cfg, &ctx.cache)?;
            write_table(&a.out, &ctx.header("bench roundtrip", &cfg), &r.rows, ctx.format())?;
            Ok(Outcome {
                checks: r.checks(),
                assert_checks: false,
            })
        }
        BenchCommand::Rotation(a) => {
            let cfg = rotation_config(
                desk,
                Some(&a.corpus),
                a.b,
                a.rotations,
                !a.no_quarter_turn,
                a.rotation_seed,
                a.n,
                None,
            )?;
            let r = exp::rotation(&cfg, &ctx.cache)?;
            write_table(&a.out, &ctx.header("bench rotation", &cfg), &r.rows, ctx.format())?;
            Ok(Outcome {
                checks: r.checks(),
                assert_checks: false,
            })
        }
        BenchCommand::Classify(a) => {
            let cfg = retrieval_config(
                desk,
                Some(&a.corpus),
                Some(&a.methods),
                a.points,
                a.shells,
                a.b,
                a.sigma,
                None,
                false,
            )?;
            let r = exp::retrieval(&cfg, &ctx.cache)?;
            write_table(&a.out, &ctx.header("bench classify", &cfg), &r.rows(), ctx.format())?;
            Ok(Outcome {
                checks: r.checks(),
                assert_checks: false,
            })
        }
    }
}

fn methods_or_default(arg: Option<&str>) -> Result<Vec<WeightMethod>> {
    parse_list(arg.unwrap_or(DEFAULT_WEIGHT_METHODS))
}

/// Runs one suite and writes its tables plus `checks` into the output directory.
fn suite(ctx: &Context, a: &SuiteArgs) -> Result<Outcome> {
    let desk = ctx.desk();
    let name = a.suite.name();
    let (config, checks, tables): (serde_json::Value, Vec<Check>, Vec<Table>) = match a.suite {
        Suite::Fig4 => {
            let cfg = exp::WeightAgreementConfig {
                b: a.b.unwrap_or(pick(desk, 32, 8)),
            };
            let r = exp::weight_agreement(&cfg, &ctx.cache)?;
            (serde_json::to_value(&cfg)?, r.checks(), r.tables())
        }
        Suite::Fig5 => {
            let b = a.b.unwrap_or(pick(desk, 16, 8));
            let cfg = exp::UnitSphereConfig {
                b,
                points: a.n.unwrap_or_else(|| fibonacci_count(b)),
                methods: methods_or_default(a.methods.as_deref())?,
                mesh_frequency: a.mesh_frequency.unwrap_or(pick(desk, 32, 16)),
                mc: MonteCarlo::default(),
            };
            let r = exp::unit_sphere(&cfg, &ctx.cache)?;
            (serde_json::to_value(&cfg)?, r.checks(), r.tables())
        }
        Suite::Fig6 => {
            let b = a.b.unwrap_or(pick(desk, 16, 8));
            let cfg = exp::SpectrumConfig {
                b,
                points: a.n.unwrap_or_else(|| fibonacci_count(b)),
                methods: methods_or_default(a.methods.as_deref())?,
                mc: MonteCarlo::default(),
            };
            let r = exp::spectra(&cfg, &ctx.cache)?;
            (serde_json::to_value(&cfg)?, r.checks(), r.tables())
        }
        Suite::Fig7 => {
            let cfg = roundtrip_config(desk, a.b, a.trials, a.seed.unwrap_or(7), a.setups.as_deref(), a.n)?;
            let r = exp::roundtrip(&cfg, &ctx.cache)?;
            (serde_json::to_value(&cfg)?, r.checks(), r.tables())
        }
        Suite::Table1 => {
            let cfg = rotation_config(
                desk,
                a.corpus.as_deref(),
                a.b,
                a.rotations,
                true,
                a.seed.unwrap_or(11),
                a.n,
                a.mesh_frequency,
            )?;
            let r = exp::rotation(&cfg, &ctx.cache)?;
            (serde_json::to_value(&cfg)?, r.checks(), r.tables())
        }
        Suite::Table2 => {
            let corpus: StarCorpusSpec = a
                .corpus
                .as_deref()
                .unwrap_or(pick(desk, "synth:10:seed7", "synth:4:seed7"))
                .parse()?;
            let bandwidths = parse_list(a.bandwidths.as_deref().unwrap_or(pick(desk, "8,16,32", "8,16")))?;
            let top = bandwidths.iter().copied().max().unwrap_or(8);
            let cfg = exp::SweepConfig {
                corpus,
                bandwidths,
                pipeline: pipeline(desk, top, a.mesh_frequency),
            };
            let r = exp::sweep(&cfg, &ctx.cache)?;
            (serde_json::to_value(&cfg)?, r.checks(), r.tables())
        }
        Suite::Fig11 => {
            let cfg = retrieval_config(
                desk,
                a.corpus.as_deref(),
                a.methods.as_deref(),
                a.points,
                a.shells,
                a.b,
                None,
                a.n,
                true,
            )?;
            let r = exp::retrieval(&cfg, &ctx.cache)?;
            (serde_json::to_value(&cfg)?, r.checks(), r.tables())
        }
    };
    let dir = a.out_dir.clone().unwrap_or_else(|| PathBuf::from("reports").join(name));
    let header = ctx.header(&format!("suite {name}"), &config);
    for t in &tables {
        t.write_in(&dir, &header, ctx.format())?;
    }
    Table::new("checks", checks.clone()).write_in(&dir, &header, ctx.format())?;
    for c in &checks {
        let status = match (c.passed, c.enforced) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "NOTE",
        };
        // A closed pipe on stdout is not worth failing the run over.
        let _ = writeln!(std::io::stdout().lock(), "{status} {name}: {} ({})", c.name, c.detail);
    }
    Ok(Outcome {
        checks,
        assert_checks: a.assert_checks,
    })
}

fn cache(ctx: &Context, cmd: CacheCommand) -> Result<Outcome> {
    match cmd {
        CacheCommand::Ls => {
            let Some(dir) = ctx.cache.dir() else {
                bail!("the cache is disabled");
            };
            println!("cache: {}", dir.display());
            for e in ctx.cache.list()? {
                let what = e.key.map_or("unreadable".to_string(), |k| {
                    let b = k.bandwidth.map_or("-".to_string(), |b| b.to_string());
                    format!("{} {} b={b} {}", k.grid_kind, k.grid_params, k.method)
                });
                println!("{}  {:>10}  {what}", e.digest, e.bytes);
            }
        }
        CacheCommand::Clear => {
            let n = ctx.cache.clear()?;
            println!("removed {n} entries");
        }
    }
    done()
}
