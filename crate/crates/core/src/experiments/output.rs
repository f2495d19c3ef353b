//! CSV tables with a JSON metadata sidecar.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;

use super::config::ExperimentConfig;

/// Serializes rows with a header line and RFC 4180 quoting.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes `rows` to `path` and the configuration (desk-scale values and the
/// full-scale reference) plus `extra` to `<path>.meta.json`.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T], cfg: Option<&ExperimentConfig>, extra: Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, csv_bytes(rows)?)?;
    let meta = match cfg {
        Some(c) => json!({
            "config": c,
            "config_hash": c.hash(),
            "reference_scale": c.reference_scale(),
            "details": extra,
        }),
        None => json!({ "details": extra }),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        name: String,
        value: f64,
    }

    #[test]
    fn header_and_quoting() {
        let rows = [Row {
            name: "a,b".into(),
            value: 0.5,
        }];
        let text = String::from_utf8(csv_bytes(&rows).unwrap()).unwrap();
        assert_eq!(text, "name,value\n\"a,b\",0.5\n");
    }

    #[test]
    fn sidecar_next_to_table() {
        assert_eq!(sidecar_path(Path::new("out/t.csv")), PathBuf::from("out/t.csv.meta.json"));
    }
}
