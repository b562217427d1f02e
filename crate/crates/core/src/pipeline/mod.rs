//! Batch extraction over models and images, persisted records, and the
//! cross-model comparison built on them.

mod analysis;
mod config;
mod dataset;
mod plot;
mod records;
mod report;
mod run;

pub use analysis::{consensus_correctness, intersect_by_fidelity, model_accuracy, select_top_models, Consensus};
pub use config::{config_hash, ModelEntry, ResolvedModel, RunConfig};
pub use dataset::{ingest_dataset, read_labels, Dataset, DatasetEntry};
pub use plot::{gaussian_kde, plot_violin, silverman_bandwidth};
pub use records::{
    aggregate_csv, landscape_path, load_record, mask_png_path, read_aggregate_csv, record_json_path, ModelInfo,
    RecordDocument, RecordStore, RunMetadata, AGGREGATE_CSV, MODELS_JSON, RECORDS_DIR, RUN_JSON,
};
pub use report::{
    area_table, make_report, stats_battery, AreaRow, ComparisonReport, CorrectnessSource, EffectReport, ReportOptions,
};
pub use run::{load_model, run_extraction, RunOptions, RunSummary};
