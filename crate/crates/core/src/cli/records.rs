//! File formats written by `predict` and read by `evaluate` / `export-region`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::Method;
use crate::error::{Error, Result};
use crate::io::Example;
use crate::region::PredictionRegion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub id: String,
    pub landmark: usize,
    pub region: PredictionRegion,
    #[serde(with = "crate::json_float")]
    pub measure: f64,
    #[serde(with = "crate::json_float::vec")]
    pub thresholds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub method: Method,
    pub alpha: f64,
    pub records: Vec<RegionRecord>,
}

/// Pairs records with examples by id, in example order. Both id sets must be
/// equal.
pub fn align<'a>(
    records: &'a [RegionRecord],
    examples: &'a [Example],
) -> Result<Vec<(&'a RegionRecord, &'a Example)>> {
    let by_id: BTreeMap<&str, &RegionRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let ids: BTreeSet<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    if by_id.len() != records.len() {
        return Err(Error::IdMismatch("duplicate region ids".into()));
    }
    let missing: Vec<&str> = ids
        .iter()
        .filter(|id| !by_id.contains_key(*id))
        .copied()
        .collect();
    let extra: Vec<&str> = by_id.keys().filter(|id| !ids.contains(*id)).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::IdMismatch(format!(
            "{} examples without a region, {} regions without an example (first: {:?})",
            missing.len(),
            extra.len(),
            missing.first().or(extra.first())
        )));
    }
    Ok(examples.iter().map(|e| (by_id[e.id.as_str()], e)).collect())
}

/// Reads a bare region, a single record, or a prediction file.
pub fn load_region(path: &Path, id: Option<&str>) -> Result<PredictionRegion> {
    let value: serde_json::Value = crate::io::read_json(path)?;
    if value.get("records").is_some() {
        let file: PredictionFile = serde_json::from_value(value)?;
        let rec = match id {
            Some(id) => file
                .records
                .into_iter()
                .find(|r| r.id == id)
                .ok_or_else(|| Error::IdMismatch(format!("no record with id {id:?}")))?,
            None => file
                .records
                .into_iter()
                .next()
                .ok_or_else(|| Error::DegenerateInput("prediction file has no records".into()))?,
        };
        Ok(rec.region)
    } else if value.get("region").is_some() {
        Ok(serde_json::from_value::<RegionRecord>(value)?.region)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}
