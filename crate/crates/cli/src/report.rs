//! Report files: CSV with a commented header, or a JSON mirror.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

pub const TOOL: &str = concat!("fibsh ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Provenance written at the top of every report.
#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool: String,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_unix: Option<u64>,
}

impl Header {
    pub fn new(config: &impl Serialize, timestamps: bool) -> Self {
        Self {
            tool: TOOL.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            generated_unix: timestamps.then(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            }),
        }
    }
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

/// Writes `rows` as CSV (header lines prefixed by `#`) or as
/// `{"header": …, "rows": […]}`.
pub fn write_table<T: Serialize>(path: &Path, header: &Header, rows: &[T], format: Format) -> Result<()> {
    let mut file = create(path)?;
    match format {
        Format::Csv => {
            writeln!(file, "# {}", header.tool)?;
            writeln!(file, "# config {}", serde_json::to_string(&header.config)?)?;
            if let Some(t) = header.generated_unix {
                writeln!(file, "# generated_unix {t}")?;
            }
            let mut w = csv::Writer::from_writer(file);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a, T> {
                header: &'a Header,
                rows: &'a [T],
            }
            serde_json::to_writer_pretty(&mut file, &Doc { header, rows })?;
            writeln!(file)?;
        }
    }
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Plain JSON document (grids, weights, coefficients, fields, descriptors).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = create(path)?;
    serde_json::to_writer(&mut file, value)?;
    writeln!(file)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Lines of a CSV report that are not header comments.
pub fn csv_body(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        grid: &'static str,
        rmse: f64,
    }

    #[test]
    fn csv_and_json_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let header = Header::new(&serde_json::json!({"b": 4}), false);
        let rows = [Row { grid: "fib", rmse: 1e-15 }, Row { grid: "equi", rmse: 0.5 }];
        let p = dir.path().join("sub/r.csv");
        write_table(&p, &header, &rows, Format::Csv).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(&format!("# {TOOL}\n# config {{\"b\":4}}\n")));
        assert_eq!(csv_body(&text), "grid,rmse\nfib,1e-15\nequi,0.5\n");

        let j = dir.path().join("r.json");
        write_table(&j, &header, &rows, Format::Json).unwrap();
        let v: serde_json::Value = read_json(&j).unwrap();
        assert_eq!(v["rows"][1]["grid"], "equi");
        assert_eq!(v["header"]["config"]["b"], 4);
        assert!(v["header"].get("generated_unix").is_none());
        assert!(Header::new(&1, true).generated_unix.is_some());
    }
}
