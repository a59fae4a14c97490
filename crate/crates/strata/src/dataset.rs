//! CSV ingestion, node-context maps, synthetic profiles and dataset files.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use strata_core::data::{align_records, CityDataset, ParkingRecord, SyntheticProfile};

use crate::error::{Error, Result};
use crate::fsutil;

/// Column names of an availability CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub timestamp: String,
    pub node_id: String,
    pub available: String,
    pub capacity: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            node_id: "node_id".into(),
            available: "available".into(),
            capacity: "capacity".into(),
        }
    }
}

/// Reads availability rows. Errors carry the 1-based file line number.
pub fn read_records(path: &Path, schema: &CsvSchema) -> Result<Vec<ParkingRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::format(path, format!("missing column '{name}' (header: {})", headers.iter().collect::<Vec<_>>().join(","))))
    };
    let (ct, cn, ca, cc) = (col(&schema.timestamp)?, col(&schema.node_id)?, col(&schema.available)?, col(&schema.capacity)?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let timestamp = DateTime::parse_from_rfc3339(field(ct))
            .map_err(|e| Error::format(path, format!("line {line}: malformed timestamp '{}': {e}", field(ct))))?
            .with_timezone(&Utc);
        let int = |i: usize, what: &str| -> Result<u32> {
            field(i)
                .parse()
                .map_err(|_| Error::format(path, format!("line {line}: {what} '{}' is not a non-negative integer", field(i))))
        };
        out.push(ParkingRecord {
            timestamp,
            node_id: field(cn).to_string(),
            available: int(ca, "available")?,
            capacity: int(cc, "capacity")?,
        });
    }
    Ok(out)
}

pub fn read_context(path: &Path) -> Result<BTreeMap<String, String>> {
    fsutil::read_json(path)
}

/// Reads a synthetic profile from TOML, or JSON when the extension is `.json`.
pub fn read_profile(path: &Path) -> Result<SyntheticProfile> {
    let text = fsutil::read_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Reads and aligns a CSV into a dataset; rows with `available > capacity`
/// fail validation with their row indices.
pub fn ingest_csv(
    path: &Path,
    schema: &CsvSchema,
    city: &str,
    frequency: u32,
    max_gap: usize,
    context: &BTreeMap<String, String>,
) -> Result<CityDataset> {
    let records = read_records(path, schema)?;
    let ds = align_records(&records, city, frequency, max_gap, context)?;
    for note in &ds.provenance {
        log::info!("{note}");
    }
    Ok(ds)
}

pub fn save_dataset(path: &Path, ds: &CityDataset) -> Result<()> {
    fsutil::write_json(path, ds)
}

pub fn load_dataset(path: &Path, step: &'static str) -> Result<CityDataset> {
    fsutil::require(path, step)?;
    let ds: CityDataset = fsutil::read_json(path)?;
    ds.validate()?;
    Ok(ds)
}
