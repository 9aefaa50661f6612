//! CSV and JSON reading and writing for datasets, fitted models and reports.
//!
//! Matrices are written with a header row of column ids and a first column
//! of row ids. Numbers use 17 significant digits in scientific notation so
//! that a write followed by a read reproduces every `f64` exactly.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::error::{Error, Result};
use crate::evaluation::{BlockRanking, StabilityReport};
use crate::factorization::{Diagnostics, FactorModel, IterationRecord, MultiBlockDataset, PenaltyConfig};
use crate::model_selection::SelectionReport;
use crate::simulate::TruthFile;

pub const SCHEMA_VERSION: u32 = 1;
/// JSON Schema of `report.json`.
pub const REPORT_SCHEMA: &str = include_str!("../report.schema.json");
const ID_HEADER: &str = "sample_id";

/// Scientific notation with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

/// One CSV table: row ids, column ids and a numeric body.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: Array2<f64>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let file = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::input(format!("{file}: needs an id column and at least one variable")));
    }
    let col_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    check_unique(&col_ids, &file, "variable")?;
    let mut row_ids = Vec::new();
    let mut data = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        // Row numbers are 1-based and count the header line.
        let row = r + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                file: file.clone(),
                row,
                column: record.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        row_ids.push(record[0].trim().to_string());
        for (c, cell) in record.iter().enumerate().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                file: file.clone(),
                row,
                column: c + 1,
                message: format!("non-numeric cell '{cell}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    file: file.clone(),
                    row,
                    column: c + 1,
                    message: format!("non-finite value '{cell}'"),
                });
            }
            data.push(v);
        }
    }
    if row_ids.is_empty() {
        return Err(Error::input(format!("{file}: no data rows")));
    }
    check_unique(&row_ids, &file, "sample")?;
    let values = Array2::from_shape_vec((row_ids.len(), col_ids.len()), data)
        .map_err(|e| Error::input(format!("{file}: {e}")))?;
    Ok(Table {
        row_ids,
        col_ids,
        values,
    })
}

fn check_unique(ids: &[String], file: &str, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::input(format!("{file}: duplicate {what} id '{id}'")));
        }
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let file = path.display().to_string();
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => {
            let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse {
                file,
                row,
                column: 0,
                message: e.to_string(),
            }
        }
    }
}

/// Block name from a file path: the file stem.
pub fn block_name_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "block".into())
}

/// Read one CSV per block and align them on the samples present in every
/// file, in the order of the first file. Returns the dataset and warnings.
pub fn load_blocks(paths: &[PathBuf], names: Option<&[String]>) -> Result<(MultiBlockDataset, Vec<String>)> {
    if paths.is_empty() {
        return Err(Error::input("at least one block file is required"));
    }
    let names: Vec<String> = match names {
        Some(n) if n.len() != paths.len() => {
            return Err(Error::input(format!(
                "{} block names for {} files",
                n.len(),
                paths.len()
            )))
        }
        Some(n) => n.to_vec(),
        None => paths.iter().map(|p| block_name_from_path(p)).collect(),
    };
    check_unique(&names, "block list", "block")?;
    let tables = paths.iter().map(|p| read_table(p)).collect::<Result<Vec<_>>>()?;

    let mut common: Vec<String> = tables[0].row_ids.clone();
    for t in &tables[1..] {
        let ids: HashSet<&str> = t.row_ids.iter().map(|s| s.as_str()).collect();
        common.retain(|s| ids.contains(s.as_str()));
    }
    if common.is_empty() {
        return Err(Error::input("blocks share no sample ids"));
    }
    let mut warnings = Vec::new();
    for (t, name) in tables.iter().zip(&names) {
        if t.row_ids.len() != common.len() {
            warnings.push(format!(
                "block '{}': {} of {} samples dropped to match the other blocks",
                name,
                t.row_ids.len() - common.len(),
                t.row_ids.len()
            ));
        }
    }
    let mut blocks = Vec::with_capacity(tables.len());
    let mut variable_ids = Vec::with_capacity(tables.len());
    for t in tables {
        let pos: std::collections::HashMap<&str, usize> =
            t.row_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let idx: Vec<usize> = common.iter().map(|s| pos[s.as_str()]).collect();
        blocks.push(t.values.select(ndarray::Axis(0), &idx));
        variable_ids.push(t.col_ids);
    }
    let data = MultiBlockDataset::new(blocks, common, variable_ids, names)?;
    Ok((data, warnings))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn finish(path: &Path, mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_table(path: &Path, corner: &str, row_ids: &[String], col_ids: &[String], values: &Array2<f64>) -> Result<()> {
    if values.dim() != (row_ids.len(), col_ids.len()) {
        return Err(Error::input("table ids do not match the matrix shape"));
    }
    let mut w = csv_writer(path)?;
    let mut header = vec![corner.to_string()];
    header.extend(col_ids.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (id, row) in row_ids.iter().zip(values.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| format_f64(*v)));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// Write each block as `<name>.csv`; returns the file paths.
pub fn write_dataset(dir: &Path, data: &MultiBlockDataset) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for k in 0..data.n_blocks() {
        let path = dir.join(format!("{}.csv", data.block_names()[k]));
        write_table(&path, ID_HEADER, data.sample_ids(), &data.variable_ids()[k], data.block(k))?;
        out.push(path);
    }
    Ok(out)
}

pub fn write_truth(path: &Path, truth: &TruthFile) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(truth)? + "\n"))
}

pub fn read_truth(path: &Path) -> Result<TruthFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_clusters(path: &Path, sample_ids: &[String], partition: &Partition) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([ID_HEADER, "label"]).map_err(|e| csv_error(path, e))?;
    for (id, l) in sample_ids.iter().zip(partition.labels()) {
        w.write_record([id.as_str(), &l.to_string()]).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// `(sample id, label)` pairs in file order.
pub fn read_clusters(path: &Path) -> Result<Vec<(String, usize)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let label = rec.get(1).unwrap_or("").trim().parse().map_err(|_| Error::Parse {
            file: path.display().to_string(),
            row: r + 2,
            column: 2,
            message: "label must be a non-negative integer".into(),
        })?;
        out.push((rec[0].trim().to_string(), label));
    }
    Ok(out)
}

pub fn write_ranking(path: &Path, ranking: &BlockRanking) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["rank", "variable_id", "score", "selected"])
        .map_err(|e| csv_error(path, e))?;
    for (r, ((id, s), sel)) in ranking
        .variable_ids
        .iter()
        .zip(&ranking.scores)
        .zip(&ranking.selected)
        .enumerate()
    {
        w.write_record([
            (r + 1).to_string(),
            id.clone(),
            format_f64(*s),
            (*sel as u8).to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// `(variable id, score)` pairs in rank order.
pub fn read_ranking(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let score = rec.get(2).unwrap_or("").trim().parse().map_err(|_| Error::Parse {
            file: path.display().to_string(),
            row: r + 2,
            column: 3,
            message: "score must be numeric".into(),
        })?;
        out.push((rec.get(1).unwrap_or("").trim().to_string(), score));
    }
    Ok(out)
}

pub fn write_stability(path: &Path, block: &crate::evaluation::BlockStability) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["variable_id", "frequency"]).map_err(|e| csv_error(path, e))?;
    for (id, f) in block.variable_ids.iter().zip(&block.frequency) {
        w.write_record([id.clone(), format_f64(*f)])
            .map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// Summary of one fitted model inside `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub p: usize,
    pub converged: bool,
    pub iterations: usize,
    pub penalties: PenaltyConfig,
    pub history: Vec<IterationRecord>,
    pub diagnostics: Diagnostics,
}

impl From<&FactorModel> for FitSummary {
    fn from(m: &FactorModel) -> Self {
        FitSummary {
            p: m.p,
            converged: m.converged,
            iterations: m.iterations,
            penalties: m.penalties.clone(),
            history: m.history.clone(),
            diagnostics: m.diagnostics.clone(),
        }
    }
}

/// Contents of `report.json`. Holds no paths or timings so reruns compare
/// byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub n_samples: usize,
    pub blocks: IndexMap<String, usize>,
    pub fit: Option<FitSummary>,
    pub selection: Option<SelectionReport>,
    pub stability: Option<StabilitySummary>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub run_count: usize,
    pub failed_runs: Vec<(String, String)>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, data: &MultiBlockDataset) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            seed,
            n_samples: data.n_samples(),
            blocks: data
                .block_names()
                .iter()
                .cloned()
                .zip(data.blocks().iter().map(|b| b.ncols()))
                .collect(),
            fit: None,
            selection: None,
            stability: None,
            warnings: Vec::new(),
        }
    }
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    let value = serde_json::to_value(report)?;
    validate_report(&value)?;
    write_text(path, &(serde_json::to_string_pretty(&value)? + "\n"))
}

/// Structural check of a report against [`REPORT_SCHEMA`]: required
/// top-level keys and their JSON types.
pub fn validate_report(value: &serde_json::Value) -> Result<()> {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::input("report is not a JSON object"))?;
    let required = schema["required"].as_array().cloned().unwrap_or_default();
    for key in required.iter().filter_map(|k| k.as_str()) {
        if !obj.contains_key(key) {
            return Err(Error::input(format!("report lacks required key '{key}'")));
        }
    }
    let props = schema["properties"].as_object().cloned().unwrap_or_default();
    for (key, v) in obj {
        let spec = props
            .get(key)
            .ok_or_else(|| Error::input(format!("report has unknown key '{key}'")))?;
        if !type_matches(v, &spec["type"]) {
            return Err(Error::input(format!("report key '{key}' has the wrong type")));
        }
        if let (Some(inner), Some(req)) = (v.as_object(), spec["required"].as_array()) {
            if let Some(k) = req.iter().filter_map(|k| k.as_str()).find(|k| !inner.contains_key(*k)) {
                return Err(Error::input(format!("report key '{key}' lacks '{k}'")));
            }
        }
    }
    if obj.get("schema_version").and_then(|v| v.as_u64()) != Some(SCHEMA_VERSION as u64) {
        return Err(Error::input("unsupported report schema version"));
    }
    Ok(())
}

fn type_matches(v: &serde_json::Value, ty: &serde_json::Value) -> bool {
    match ty {
        serde_json::Value::Array(options) => options.iter().any(|t| type_matches(v, t)),
        serde_json::Value::String(t) => match t.as_str() {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "integer" => v.is_u64() || v.is_i64(),
            "number" => v.is_number(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            _ => false,
        },
        _ => true,
    }
}

/// Write `W.csv`, `H_<block>.csv` and `clusters.csv` for a fitted model.
pub fn write_model(dir: &Path, model: &FactorModel, partition: &Partition) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let comps: Vec<String> = (1..=model.p).map(|p| format!("lv{p}")).collect();
    write_table(&dir.join("W.csv"), ID_HEADER, &model.sample_ids, &comps, &model.w)?;
    for (k, h) in model.h.iter().enumerate() {
        let path = dir.join(format!("H_{}.csv", model.block_names[k]));
        write_table(&path, "component", &comps, &model.variable_ids[k], h)?;
    }
    write_clusters(&dir.join("clusters.csv"), &model.sample_ids, partition)
}

pub fn write_stability_files(dir: &Path, report: &StabilityReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for b in &report.blocks {
        write_stability(&dir.join(format!("stability_{}.csv", b.block)), b)?;
    }
    Ok(())
}
