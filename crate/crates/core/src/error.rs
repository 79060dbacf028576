use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degree/order out of range: l = {l}, m = {m}")]
    DegreeOrder { l: usize, m: i64 },

    #[error("argument {value} outside [-1, 1]")]
    OutOfDomain { value: f64 },

    #[error("basis block of {entries} entries exceeds the cap of {cap}")]
    MemoryCap { entries: usize, cap: usize },

    #[error("insufficient samples: {n} points, at least {required} required")]
    InsufficientSamples { n: usize, required: usize },

    #[error("weight solve failed: residual {residual:e}")]
    SolveFailed { residual: f64 },

    #[error("field and weights refer to different grids")]
    GridMismatch,

    #[error("requested bandwidth {requested} exceeds available bandwidth {available}")]
    BandwidthExceeded { requested: usize, available: usize },

    #[error("synthesized values are not real (max imaginary part {max_imag:e})")]
    NotRealSignal { max_imag: f64 },

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("matrix is not a proper rotation: {0}")]
    NotRotation(String),

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("classification needs at least two distinct labels")]
    SingleClass,

    #[error("all reconstructed radii were clamped")]
    DegenerateReconstruction,
}
