//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::report::Format;

#[derive(Debug, Parser)]
#[command(name = "fibsh", version, about = "Spherical harmonic transforms on Fibonacci grids, with experiment suites")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FIBSH_WORKERS")]
    pub workers: Option<usize>,
    /// Directory of the weight cache.
    #[arg(long, global = true, env = "FIBSH_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Solve weights every time instead of using the cache.
    #[arg(long, global = true)]
    pub no_cache: bool,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Reduced scales for quick runs.
    #[arg(long, global = true)]
    pub desk: bool,
    /// Add a generation timestamp to report headers.
    #[arg(long, global = true)]
    pub timestamps: bool,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, env = "FIBSH_LOG", default_value = "warn")]
    pub log_level: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a sampling grid.
    Grid(GridArgs),
    /// Compute quadrature weights for a grid.
    Weights(WeightsArgs),
    /// Forward transform of a sampled field.
    Sht(ShtArgs),
    /// Synthesize coefficients at target directions.
    Isht(IshtArgs),
    /// Reconstruct a star-shaped surface from a point cloud.
    Reconstruct(ReconstructArgs),
    /// Shell descriptor of a point cloud.
    Descriptor(DescriptorArgs),
    /// Benchmarks producing a single table.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run an experiment suite and check its expected properties.
    Suite(SuiteArgs),
    /// Inspect or empty the weight cache.
    #[command(subcommand)]
    Cache(CacheCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridKind {
    Fib,
    Equi,
    Ico,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, value_enum)]
    pub kind: GridKind,
    /// Fibonacci point count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Bandwidth: sizes any grid when --n or --k is absent.
    #[arg(long)]
    pub b: Option<usize>,
    /// Icosahedral subdivision frequency.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    /// Grid JSON file, or fib/equi/ico to generate one sized for --b.
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub b: usize,
    /// analytic, equal, area or dh (default: the grid family's usual choice).
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, default_value_t = fibsh_core::quadrature::DEFAULT_MC_SAMPLES)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = fibsh_core::quadrature::DEFAULT_MC_SEED)]
    pub mc_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ShtArgs {
    /// Field JSON.
    #[arg(long)]
    pub field: PathBuf,
    /// Weights JSON for the field's grid.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub b: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IshtArgs {
    /// Coefficient JSON.
    #[arg(long)]
    pub coeffs: PathBuf,
    /// Grid JSON file, or fib/equi/ico sized for the coefficients' bandwidth.
    #[arg(long)]
    pub targets: String,
    /// Keep complex values even when the coefficients describe a real signal.
    #[arg(long)]
    pub complex: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Point cloud, one `x y z` per line.
    #[arg(long)]
    pub cloud: PathBuf,
    /// Grid JSON file, or fib/equi/ico sized for --b.
    #[arg(long, default_value = "fib")]
    pub grid: String,
    /// Weights JSON; solved (and cached) when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub b: usize,
    /// Nearest cloud points used per grid direction.
    #[arg(long, default_value_t = 8)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 64)]
    pub mesh_frequency: usize,
    /// Output mesh (OBJ).
    #[arg(long)]
    pub out: PathBuf,
    /// Reference surface (OBJ) to measure against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// One-row metrics report; needs --truth.
    #[arg(long, requires = "truth")]
    pub report: Option<PathBuf>,
    /// Per-vertex distance to --truth (default: next to --out).
    #[arg(long, requires = "truth")]
    pub deviation_out: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    /// Identifier written to the report row.
    #[arg(long, default_value_t = 0)]
    pub shape_id: usize,
}

#[derive(Debug, Args)]
pub struct DescriptorArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub shells: usize,
    #[arg(long, default_value_t = 32)]
    pub b: usize,
    /// Grid JSON file, or fib/equi/ico sized for --b.
    #[arg(long, default_value = "fib")]
    pub grid: String,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Angular kernel width in radians (default: twice the mean grid spacing).
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Round-trip error of random band-limited tables.
    Roundtrip(BenchRoundtripArgs),
    /// Rotation stability of reconstructions on the star corpus.
    Rotation(BenchRotationArgs),
    /// Leave-one-out retrieval on the labeled corpus.
    Classify(BenchClassifyArgs),
}

#[derive(Debug, Args)]
pub struct BenchRoundtripArgs {
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Comma-separated grid-method pairs, e.g. fib-analytic,equi-dh.
    #[arg(long)]
    pub setups: Option<String>,
    /// Fibonacci point count.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchRotationArgs {
    /// Star corpus, synth:<count>:seed<n>.
    #[arg(long, default_value = "synth:10:seed7")]
    pub corpus: String,
    #[arg(long)]
    pub b: Option<usize>,
    /// Random rotations per shape (the 90° turn is added unless --no-quarter-turn).
    #[arg(long)]
    pub rotations: Option<usize>,
    #[arg(long)]
    pub no_quarter_turn: bool,
    #[arg(long, default_value_t = 11)]
    pub rotation_seed: u64,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchClassifyArgs {
    /// Labeled corpus, synth<classes>x<per_class>:seed<n>.
    #[arg(long, default_value = "synth4x15:seed3")]
    pub corpus: String,
    /// Comma-separated descriptor pipelines: shd-esh, shd-fsh3d.
    #[arg(long, default_value = "shd-esh,shd-fsh3d")]
    pub methods: String,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub shells: Option<usize>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Table1,
    Table2,
    Fig11,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Fig4 => "fig4",
            Suite::Fig5 => "fig5",
            Suite::Fig6 => "fig6",
            Suite::Fig7 => "fig7",
            Suite::Table1 => "table1",
            Suite::Table2 => "table2",
            Suite::Fig11 => "fig11",
        }
    }
}

/// Suite options; each suite reads the ones it understands and falls back to
/// its own defaults (smaller ones under --desk).
#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    #[arg(long)]
    pub b: Option<usize>,
    /// Fibonacci point count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Weight methods (fig5, fig6) or descriptor pipelines (fig11), comma-separated.
    #[arg(long)]
    pub methods: Option<String>,
    /// Grid-method pairs for fig7, e.g. fib-analytic,equi-dh.
    #[arg(long)]
    pub setups: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus specification (table1, table2, fig11).
    #[arg(long)]
    pub corpus: Option<String>,
    /// Random rotations per shape (table1).
    #[arg(long)]
    pub rotations: Option<usize>,
    /// Comma-separated bandwidths (table2).
    #[arg(long)]
    pub bandwidths: Option<String>,
    #[arg(long)]
    pub shells: Option<usize>,
    /// Points per labeled-corpus cloud (fig11).
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub mesh_frequency: Option<usize>,
    /// Output directory (default: reports/<suite>).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Exit with status 2 when an expected property does not hold.
    #[arg(long = "assert")]
    pub assert_checks: bool,
}

#[derive(Debug, Subcommand)]
pub enum CacheCommand {
    /// List cached weight sets.
    Ls,
    /// Remove every cached weight set.
    Clear,
}
