//! Resolving named grids, weights and corpus specifications.

use std::str::FromStr;

use anyhow::{bail, Context, Result};
use fibsh_core::grids::{default_fibonacci_count, gen_equiangular, gen_fibonacci, gen_icosahedral, GridSpec, SphericalGrid};
use fibsh_core::quadrature::{
    area_weights, dh_closed_form_weights, equal_weights, solve_analytic_weights, QuadratureWeights, WeightMethod,
    DEFAULT_MC_SAMPLES, DEFAULT_MC_SEED,
};
use fibsh_core::shapes::GridSetup;
use serde::{Deserialize, Serialize};

use crate::cache::{CacheKey, WeightCache};

/// Fibonacci point count quoted for bandwidth 32.
pub const STANDARD_FIBONACCI_COUNT_B32: usize = 4300;

/// Grid families selectable by short name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridChoice {
    Fib,
    Equi,
    Ico,
}

impl FromStr for GridChoice {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "fib" | "fibonacci" | "sfg" => Self::Fib,
            "equi" | "equiangular" | "dh" => Self::Equi,
            "ico" | "icosahedral" => Self::Ico,
            other => bail!("unknown grid '{other}' (expected fib, equi or ico)"),
        })
    }
}

impl std::fmt::Display for GridChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fib => "fib",
            Self::Equi => "equi",
            Self::Ico => "ico",
        })
    }
}

impl GridChoice {
    /// Weights each family is normally paired with.
    pub fn default_method(self) -> WeightMethod {
        match self {
            Self::Equi => WeightMethod::DhClosedForm,
            Self::Fib | Self::Ico => WeightMethod::Analytic,
        }
    }
}

/// Fibonacci count used for bandwidth `b` when none is given: 4300 at `b = 32`,
/// `ceil(4.2·b²)` otherwise.
pub fn fibonacci_count(b: usize) -> usize {
    if b == 32 {
        STANDARD_FIBONACCI_COUNT_B32
    } else {
        default_fibonacci_count(b)
    }
}

/// Smallest icosahedral frequency with at least `fibonacci_count(b)` points.
pub fn icosahedral_frequency(b: usize) -> usize {
    let need = fibonacci_count(b);
    (1..).find(|k| 10 * k * k + 2 >= need).expect("unbounded search")
}

/// Grid of the given family sized for bandwidth `b`; `size` overrides the
/// Fibonacci count or icosahedral frequency.
pub fn grid_for(choice: GridChoice, b: usize, size: Option<usize>) -> Result<SphericalGrid> {
    Ok(match choice {
        GridChoice::Fib => gen_fibonacci(size.unwrap_or_else(|| fibonacci_count(b)))?,
        GridChoice::Equi => gen_equiangular(b)?,
        GridChoice::Ico => gen_icosahedral(size.unwrap_or_else(|| icosahedral_frequency(b)))?,
    })
}

/// Monte Carlo settings for area weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self {
            samples: DEFAULT_MC_SAMPLES,
            seed: DEFAULT_MC_SEED,
        }
    }
}

/// Weights of `method` on `grid` at bandwidth `b`, going through the cache for
/// the solved and Monte Carlo methods.
pub fn weights_for(
    grid: &SphericalGrid,
    b: usize,
    method: WeightMethod,
    mc: MonteCarlo,
    cache: &WeightCache,
) -> Result<QuadratureWeights> {
    match method {
        WeightMethod::Analytic => {
            let key = CacheKey::new(grid, Some(b), method, None);
            let (w, outcome) = cache.get_or_solve(&key, || {
                log::info!("solving analytic weights: {} points, b = {b}", grid.len());
                solve_analytic_weights(grid, b)
            })?;
            log::debug!("analytic weights ({} points, b = {b}): {outcome:?}", grid.len());
            Ok(w)
        }
        WeightMethod::Area => {
            let key = CacheKey::new(grid, None, method, Some((mc.samples, mc.seed)));
            Ok(cache.get_or_solve(&key, || area_weights(grid, mc.samples, mc.seed))?.0)
        }
        WeightMethod::Equal => Ok(equal_weights(grid)?),
        WeightMethod::DhClosedForm => {
            let GridSpec::Equiangular { b: gb } = grid.spec() else {
                bail!("DH weights need an equiangular grid, got {}", grid.spec().kind_name());
            };
            let w = dh_closed_form_weights(gb)?;
            anyhow::ensure!(w.grid().id() == grid.id(), "grid does not match the equiangular layout");
            anyhow::ensure!(b <= gb, "DH weights for bandwidth {gb} cannot serve bandwidth {b}");
            Ok(w)
        }
    }
}

/// Default grid and weights of a family at bandwidth `b`, named after the family.
pub fn grid_setup(choice: GridChoice, b: usize, size: Option<usize>, cache: &WeightCache) -> Result<GridSetup> {
    let grid = grid_for(choice, b, size)?;
    let w = weights_for(&grid, b, choice.default_method(), MonteCarlo::default(), cache)
        .with_context(|| format!("weights for {choice} at b = {b}"))?;
    Ok(GridSetup::new(choice.to_string(), w))
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| anyhow::anyhow!("'{x}': {e}")))
        .collect()
}

/// `synth:<count>:seed<seed>`, the star-shape corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarCorpusSpec {
    pub count: usize,
    pub seed: u64,
}

impl FromStr for StarCorpusSpec {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["synth", count, seed] => Ok(Self {
                count: count.parse().with_context(|| format!("corpus count in '{s}'"))?,
                seed: parse_seed(seed).with_context(|| format!("corpus seed in '{s}'"))?,
            }),
            _ => bail!("corpus '{s}' is not of the form synth:<count>:seed<n>"),
        }
    }
}

impl std::fmt::Display for StarCorpusSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "synth:{}:seed{}", self.count, self.seed)
    }
}

/// `synth<classes>x<per_class>:seed<seed>`, the labeled descriptor corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCorpusSpec {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
}

impl FromStr for LabeledCorpusSpec {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || anyhow::anyhow!("corpus '{s}' is not of the form synth<classes>x<per_class>:seed<n>");
        let (head, seed) = s.split_once(':').ok_or_else(bad)?;
        let dims = head.strip_prefix("synth").ok_or_else(bad)?;
        let (c, p) = dims.split_once('x').ok_or_else(bad)?;
        Ok(Self {
            classes: c.parse().map_err(|_| bad())?,
            per_class: p.parse().map_err(|_| bad())?,
            seed: parse_seed(seed).map_err(|_| bad())?,
        })
    }
}

impl std::fmt::Display for LabeledCorpusSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "synth{}x{}:seed{}", self.classes, self.per_class, self.seed)
    }
}

fn parse_seed(s: &str) -> Result<u64> {
    Ok(s.strip_prefix("seed").unwrap_or(s).parse()?)
}

/// Descriptor pipelines: SHD over the equiangular grid with DH weights, or
/// over the Fibonacci grid with analytic weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DescriptorMethod {
    #[serde(rename = "shd-esh")]
    ShdEsh,
    #[serde(rename = "shd-fsh3d")]
    ShdFsh3d,
}

impl DescriptorMethod {
    pub fn grid(self) -> GridChoice {
        match self {
            Self::ShdEsh => GridChoice::Equi,
            Self::ShdFsh3d => GridChoice::Fib,
        }
    }
}

impl FromStr for DescriptorMethod {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "shd-esh" | "esh" => Self::ShdEsh,
            "shd-fsh3d" | "fsh3d" => Self::ShdFsh3d,
            other => bail!("unknown descriptor method '{other}' (expected shd-esh or shd-fsh3d)"),
        })
    }
}

impl std::fmt::Display for DescriptorMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ShdEsh => "shd-esh",
            Self::ShdFsh3d => "shd-fsh3d",
        })
    }
}
