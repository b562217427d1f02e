use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::MpsRecord;
use crate::tensor::PixelMask;

pub const RECORDS_DIR: &str = "records";
pub const AGGREGATE_CSV: &str = "records.csv";
pub const MODELS_JSON: &str = "models.json";
pub const RUN_JSON: &str = "run.json";

/// On-disk form of one record; the mask lives in a sibling PNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordDocument {
    #[serde(flatten)]
    pub record: MpsRecord,
    /// File name of the mask PNG, relative to this document.
    pub mask_path: String,
    pub mask_height: usize,
    pub mask_width: usize,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

/// Per-model status written to `models.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub architecture_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dims: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run-level provenance written to `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub images: usize,
    pub skipped_images: usize,
    pub records: usize,
    pub degenerate: usize,
    pub failed_models: Vec<String>,
}

pub fn record_dir(root: &Path, model_id: &str) -> PathBuf {
    root.join(RECORDS_DIR).join(model_id)
}

pub fn record_json_path(root: &Path, model_id: &str, image_id: &str) -> PathBuf {
    record_dir(root, model_id).join(format!("{image_id}.json"))
}

pub fn mask_png_path(root: &Path, model_id: &str, image_id: &str) -> PathBuf {
    record_dir(root, model_id).join(format!("{image_id}.png"))
}

pub fn landscape_path(root: &Path, model_id: &str, image_id: &str) -> PathBuf {
    record_dir(root, model_id).join("landscapes").join(format!("{image_id}.bin"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
}

/// Writes the mask PNG, then the JSON document that marks the record done.
pub fn persist_record(root: &Path, doc: &RecordDocument) -> Result<()> {
    let r = &doc.record;
    let dir = record_dir(root, &r.model_id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let png = mask_png_path(root, &r.model_id, &r.image_id);
    let tmp = png.with_extension("png.tmp");
    r.mask.save_png(&tmp)?;
    std::fs::rename(&tmp, &png).map_err(|e| Error::io(&png, e))?;
    write_json(&record_json_path(root, &r.model_id, &r.image_id), doc)
}

/// Reads a record document together with its mask.
pub fn load_record(root: &Path, model_id: &str, image_id: &str) -> Result<RecordDocument> {
    let path = record_json_path(root, model_id, image_id);
    let mut doc: RecordDocument = read_json(&path)?;
    let png = path.with_file_name(&doc.mask_path);
    let mask = PixelMask::load_png(&png)?;
    if (mask.height(), mask.width()) != (doc.mask_height, doc.mask_width) {
        return Err(Error::data(
            &png,
            format!("mask is {}x{}, record says {}x{}", mask.height(), mask.width(), doc.mask_height, doc.mask_width),
        ));
    }
    doc.record.mask = mask;
    Ok(doc)
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    model_id: String,
    image_id: String,
    area_ratio: f64,
    predicted_class: usize,
    ground_truth: Option<usize>,
    correct: Option<bool>,
    degenerate: bool,
    oracle_calls_used: usize,
}

/// Aggregate CSV, rows in the given order.
pub fn aggregate_csv(records: &[MpsRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(CsvRow {
            model_id: r.model_id.clone(),
            image_id: r.image_id.clone(),
            area_ratio: r.area_ratio,
            predicted_class: r.predicted_class,
            ground_truth: r.ground_truth,
            correct: r.correct,
            degenerate: r.degenerate,
            oracle_calls_used: r.oracle_calls_used,
        })
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    if records.is_empty() {
        w.write_record([
            "model_id",
            "image_id",
            "area_ratio",
            "predicted_class",
            "ground_truth",
            "correct",
            "degenerate",
            "oracle_calls_used",
        ])
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Parses an aggregate CSV. Masks are left empty.
pub fn read_aggregate_csv(path: &Path) -> Result<Vec<MpsRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| Error::data(path, format!("row {}: {e}", i + 1)))?;
        out.push(MpsRecord {
            model_id: row.model_id,
            image_id: row.image_id,
            mask: PixelMask::default(),
            area_ratio: row.area_ratio,
            predicted_class: row.predicted_class,
            ground_truth: row.ground_truth,
            correct: row.correct,
            degenerate: row.degenerate,
            oracle_calls_used: row.oracle_calls_used,
        });
    }
    Ok(out)
}

/// Persisted output of a run, read back for comparison and reporting.
#[derive(Clone, Debug)]
pub struct RecordStore {
    pub root: PathBuf,
    pub records: Vec<MpsRecord>,
    pub models: Vec<ModelInfo>,
    pub run: Option<RunMetadata>,
}

impl RecordStore {
    /// Opens a run directory. `records.csv` is required; `models.json` and
    /// `run.json` are optional.
    pub fn open(root: &Path) -> Result<Self> {
        let csv_path = root.join(AGGREGATE_CSV);
        if !csv_path.is_file() {
            return Err(Error::data(&csv_path, "aggregate CSV not found"));
        }
        let records = read_aggregate_csv(&csv_path)?;
        let models_path = root.join(MODELS_JSON);
        let models = if models_path.is_file() { read_json(&models_path)? } else { Vec::new() };
        let run_path = root.join(RUN_JSON);
        let run = if run_path.is_file() { Some(read_json(&run_path)?) } else { None };
        Ok(Self { root: root.to_path_buf(), records, models, run })
    }

    /// Tag of `model_id`, or the id itself when the model is unknown.
    pub fn architecture_tag<'a>(&'a self, model_id: &'a str) -> &'a str {
        self.models
            .iter()
            .find(|m| m.model_id == model_id)
            .map_or(model_id, |m| m.architecture_tag.as_str())
    }

    pub fn tags(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            out.entry(r.model_id.clone())
                .or_insert_with(|| self.architecture_tag(&r.model_id).to_string());
        }
        out
    }

    pub fn load_mask(&self, model_id: &str, image_id: &str) -> Result<PixelMask> {
        Ok(load_record(&self.root, model_id, image_id)?.record.mask)
    }

    /// Replaces ground truth from a label map; unlabeled images lose theirs.
    pub fn apply_labels(&mut self, labels: &BTreeMap<String, usize>) {
        for r in &mut self.records {
            r.set_ground_truth(labels.get(&r.image_id).copied());
        }
    }
}
