//! JSON artifacts of the pipeline and the combined report.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calibration::{OperatingPoint, SweepAnchors};
use crate::error::{Error, Result};
use crate::map::{SweepMapPoint, VariantAggregation};
use crate::pairs::MorphPair;
use crate::variants::{AttackScoreRule, CorrelationMatrix, Objective};

pub const REPORT_SCHEMA_VERSION: &str = "1.0.0";
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

pub const SCORE_SUMMARY_JSON: &str = "score_summary.json";
pub const OPERATING_POINTS_JSON: &str = "operating_points.json";
pub const MAP_JSON: &str = "map_matrix.json";
pub const SWEEP_JSON: &str = "sweep.json";
pub const VARIANTS_JSON: &str = "variant_study.json";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub frs_name: String,
    pub n_mated: usize,
    pub mated_mean: f64,
    pub n_nonmated: usize,
    pub nonmated_mean: f64,
    pub n_morph: usize,
    pub morph_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapArtifact {
    pub rows: usize,
    pub cols: usize,
    pub aggregate: VariantAggregation,
    pub n_morphs: usize,
    pub frs_names: Vec<String>,
    pub thresholds: Vec<f64>,
    /// `cells[r-1][c-1]`.
    pub cells: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepArtifact {
    pub r: usize,
    pub c: usize,
    pub target_fmr: f64,
    pub aggregate: VariantAggregation,
    pub anchors: Vec<SweepAnchors>,
    pub points: Vec<SweepMapPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantsArtifact {
    pub pair_id: u32,
    pub pair: MorphPair,
    pub n_variants: usize,
    pub objective: Objective,
    pub score_rule: AttackScoreRule,
    pub best_variant: usize,
    pub best_value: f64,
    pub first_value: f64,
    pub frs_names: Vec<String>,
    pub per_frs_best: Vec<f64>,
    pub per_frs_mean: Vec<f64>,
    pub correlation: CorrelationMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub generator: Generator,
    pub scores: Vec<ScoreSummary>,
    pub operating_points: Vec<OperatingPoint>,
    pub map: MapArtifact,
    pub sweep: SweepArtifact,
    pub variants: VariantsArtifact,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Collects the stage artifacts of `dir` into one report.
pub fn build_report(dir: &Path) -> Result<Report> {
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        generator: Generator {
            name: "morphmap".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        scores: read_json(&dir.join(SCORE_SUMMARY_JSON))?,
        operating_points: read_json(&dir.join(OPERATING_POINTS_JSON))?,
        map: read_json(&dir.join(MAP_JSON))?,
        sweep: read_json(&dir.join(SWEEP_JSON))?,
        variants: read_json(&dir.join(VARIANTS_JSON))?,
    })
}

pub fn write_report(dir: &Path) -> Result<std::path::PathBuf> {
    let report = build_report(dir)?;
    let path = dir.join(REPORT_JSON);
    write_json(&path, &report)?;
    Ok(path)
}
