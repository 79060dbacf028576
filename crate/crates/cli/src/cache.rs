//! On-disk cache of solved quadrature weights.
//!
//! Entries are keyed by a SHA-256 digest of the grid family, its parameters,
//! the exact grid fingerprint, the bandwidth, the weight method and the solver
//! version. Each entry stores a checksum of its weights; an entry that fails to
//! parse or verify is treated as a miss and rewritten. Writes go to a temporary
//! file in the cache directory and are renamed into place, so concurrent
//! invocations never observe a partial entry.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use anyhow::{Context, Result};
use fibsh_core::grids::SphericalGrid;
use fibsh_core::quadrature::{QuadratureWeights, WeightMethod, SOLVER_VERSION};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CACHE_DIR_ENV: &str = "FIBSH_CACHE_DIR";
const ENTRY_EXTENSION: &str = "json";

/// Everything that determines a set of weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub grid_kind: String,
    pub grid_params: serde_json::Value,
    pub grid_id: String,
    pub bandwidth: Option<usize>,
    pub method: WeightMethod,
    /// Monte Carlo sample count and seed, for area weights.
    pub mc: Option<(usize, u64)>,
    pub solver_version: u32,
}

impl CacheKey {
    pub fn new(grid: &SphericalGrid, bandwidth: Option<usize>, method: WeightMethod, mc: Option<(usize, u64)>) -> Self {
        let spec = serde_json::to_value(grid.spec()).expect("grid spec serializes");
        Self {
            grid_kind: grid.spec().kind_name().to_string(),
            grid_params: spec.get("params").cloned().unwrap_or(serde_json::Value::Null),
            grid_id: grid.id().to_string(),
            bandwidth,
            method,
            mc,
            solver_version: SOLVER_VERSION,
        }
    }

    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("cache key serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: CacheKey,
    checksum: String,
    weights: QuadratureWeights,
}

fn checksum(w: &QuadratureWeights) -> String {
    let text = serde_json::to_string(w).expect("weights serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOutcome {
    Hit,
    Miss,
    /// An entry existed but was unreadable or failed its checksum.
    Repaired,
    Disabled,
}

/// Summary of one stored entry, for listings.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryInfo {
    pub digest: String,
    pub key: Option<CacheKey>,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct WeightCache {
    dir: Option<PathBuf>,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl WeightCache {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir: Some(dir) }
    }

    pub fn disabled() -> Self {
        Self { dir: None }
    }

    /// `$FIBSH_CACHE_DIR`, else the user cache directory, else `.fibsh-cache`.
    pub fn default_dir() -> PathBuf {
        if let Some(d) = std::env::var_os(CACHE_DIR_ENV) {
            return PathBuf::from(d);
        }
        if let Some(d) = std::env::var_os("XDG_CACHE_HOME") {
            return PathBuf::from(d).join("fibsh");
        }
        if let Some(h) = std::env::var_os("HOME") {
            return PathBuf::from(h).join(".cache").join("fibsh");
        }
        PathBuf::from(".fibsh-cache")
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn entry_path(&self, key: &CacheKey) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{}.{ENTRY_EXTENSION}", key.digest())))
    }

    /// Returns the cached weights for `key`, or runs `solve` and stores the result.
    pub fn get_or_solve<F>(&self, key: &CacheKey, solve: F) -> Result<(QuadratureWeights, CacheOutcome)>
    where
        F: FnOnce() -> fibsh_core::Result<QuadratureWeights>,
    {
        let Some(path) = self.entry_path(key) else {
            return Ok((solve()?, CacheOutcome::Disabled));
        };
        let mut outcome = CacheOutcome::Miss;
        if path.exists() {
            match read_entry(&path, key) {
                Ok(w) => {
                    log::info!("weight cache hit {}", path.display());
                    return Ok((w, CacheOutcome::Hit));
                }
                Err(e) => {
                    log::warn!("discarding cache entry {}: {e:#}", path.display());
                    outcome = CacheOutcome::Repaired;
                }
            }
        }
        let weights = solve()?;
        self.store(&path, key, &weights)?;
        Ok((weights, outcome))
    }

    fn store(&self, path: &Path, key: &CacheKey, weights: &QuadratureWeights) -> Result<()> {
        let dir = path.parent().expect("entry lives in the cache directory");
        fs::create_dir_all(dir).with_context(|| format!("creating cache directory {}", dir.display()))?;
        let entry = Entry {
            key: key.clone(),
            checksum: checksum(weights),
            weights: weights.clone(),
        };
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            key.digest(),
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let text = serde_json::to_vec(&entry)?;
        fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
        log::info!("weight cache stored {}", path.display());
        Ok(())
    }

    pub fn list(&self) -> Result<Vec<EntryInfo>> {
        let Some(dir) = &self.dir else {
            return Ok(Vec::new());
        };
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for e in fs::read_dir(dir)? {
            let e = e?;
            let p = e.path();
            if p.extension().and_then(|x| x.to_str()) != Some(ENTRY_EXTENSION) {
                continue;
            }
            let digest = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let key = fs::read(&p)
                .ok()
                .and_then(|b| serde_json::from_slice::<Entry>(&b).ok())
                .map(|e| e.key);
            out.push(EntryInfo {
                digest,
                key,
                bytes: e.metadata()?.len(),
            });
        }
        out.sort_by(|a, b| a.digest.cmp(&b.digest));
        Ok(out)
    }

    /// Deletes every entry and stray temporary file; returns the number of entries removed.
    pub fn clear(&self) -> Result<usize> {
        let Some(dir) = &self.dir else {
            return Ok(0);
        };
        if !dir.exists() {
            return Ok(0);
        }
        let mut removed = 0;
        for e in fs::read_dir(dir)? {
            let p = e?.path();
            let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default();
            let is_entry = p.extension().and_then(|x| x.to_str()) == Some(ENTRY_EXTENSION);
            if is_entry || (name.starts_with('.') && name.ends_with(".tmp")) {
                fs::remove_file(&p)?;
                removed += is_entry as usize;
            }
        }
        Ok(removed)
    }
}

fn read_entry(path: &Path, key: &CacheKey) -> Result<QuadratureWeights> {
    let bytes = fs::read(path)?;
    let entry: Entry = serde_json::from_slice(&bytes).context("entry does not parse")?;
    anyhow::ensure!(entry.key == *key, "entry key differs from the requested key");
    anyhow::ensure!(entry.checksum == checksum(&entry.weights), "checksum mismatch");
    entry.weights.validate()?;
    Ok(entry.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fibsh_core::grids::gen_fibonacci;
    use fibsh_core::quadrature::solve_analytic_weights;
    use std::cell::Cell;

    #[test]
    fn second_call_hits_with_identical_weights() {
        let dir = tempfile::tempdir().unwrap();
        let cache = WeightCache::new(dir.path().to_path_buf());
        let grid = gen_fibonacci(20).unwrap();
        let key = CacheKey::new(&grid, Some(2), WeightMethod::Analytic, None);
        let solves = Cell::new(0);
        let solve = || {
            solves.set(solves.get() + 1);
            solve_analytic_weights(&grid, 2)
        };
        let (a, o1) = cache.get_or_solve(&key, solve).unwrap();
        let bytes = fs::read(cache.entry_path(&key).unwrap()).unwrap();
        let (b, o2) = cache
            .get_or_solve(&key, || {
                solves.set(solves.get() + 1);
                solve_analytic_weights(&grid, 2)
            })
            .unwrap();
        assert_eq!((o1, o2), (CacheOutcome::Miss, CacheOutcome::Hit));
        assert_eq!(solves.get(), 1);
        assert_eq!(a, b);
        assert_eq!(bytes, fs::read(cache.entry_path(&key).unwrap()).unwrap());
    }

    #[test]
    fn keys_differ_by_bandwidth_and_method() {
        let grid = gen_fibonacci(40).unwrap();
        let a = CacheKey::new(&grid, Some(2), WeightMethod::Analytic, None);
        let b = CacheKey::new(&grid, Some(3), WeightMethod::Analytic, None);
        let c = CacheKey::new(&grid, None, WeightMethod::Area, Some((100_000, 1)));
        assert_ne!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest(), CacheKey::new(&grid, Some(2), WeightMethod::Analytic, None).digest());
    }

    #[test]
    fn corrupt_entry_is_resolved() {
        let dir = tempfile::tempdir().unwrap();
        let cache = WeightCache::new(dir.path().to_path_buf());
        let grid = gen_fibonacci(20).unwrap();
        let key = CacheKey::new(&grid, Some(2), WeightMethod::Analytic, None);
        let (good, _) = cache.get_or_solve(&key, || solve_analytic_weights(&grid, 2)).unwrap();
        let path = cache.entry_path(&key).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // flip one weight digit but keep the JSON valid
        let pos = text.rfind("\"weights\":[").unwrap() + 12;
        let mut bytes = text.into_bytes();
        bytes[pos] = if bytes[pos] == b'1' { b'2' } else { b'1' };
        fs::write(&path, &bytes).unwrap();
        let (again, outcome) = cache.get_or_solve(&key, || solve_analytic_weights(&grid, 2)).unwrap();
        assert_eq!(outcome, CacheOutcome::Repaired);
        assert_eq!(again, good);
        fs::write(&path, b"not json").unwrap();
        assert_eq!(
            cache.get_or_solve(&key, || solve_analytic_weights(&grid, 2)).unwrap().1,
            CacheOutcome::Repaired
        );
        assert_eq!(cache.get_or_solve(&key, || solve_analytic_weights(&grid, 2)).unwrap().1, CacheOutcome::Hit);
    }

    #[test]
    fn disabled_cache_always_solves_identically() {
        let cache = WeightCache::disabled();
        let grid = gen_fibonacci(20).unwrap();
        let key = CacheKey::new(&grid, Some(2), WeightMethod::Analytic, None);
        let (a, o) = cache.get_or_solve(&key, || solve_analytic_weights(&grid, 2)).unwrap();
        let (b, _) = cache.get_or_solve(&key, || solve_analytic_weights(&grid, 2)).unwrap();
        assert_eq!(o, CacheOutcome::Disabled);
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn list_and_clear() {
        let dir = tempfile::tempdir().unwrap();
        let cache = WeightCache::new(dir.path().join("nested"));
        assert!(cache.list().unwrap().is_empty());
        let grid = gen_fibonacci(20).unwrap();
        for b in [1, 2] {
            let key = CacheKey::new(&grid, Some(b), WeightMethod::Analytic, None);
            cache.get_or_solve(&key, || solve_analytic_weights(&grid, b)).unwrap();
        }
        let listed = cache.list().unwrap();
        assert_eq!(listed.len(), 2);
        assert!(listed.iter().all(|e| e.key.is_some() && e.bytes > 0));
        assert_eq!(cache.clear().unwrap(), 2);
        assert!(cache.list().unwrap().is_empty());
    }
}
