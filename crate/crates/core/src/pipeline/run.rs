use rayon::prelude::*;

use super::config::{check_id, config_hash, ResolvedModel, RunConfig};
use super::dataset::{ingest_dataset, Dataset, DatasetEntry};
use super::records::{
    aggregate_csv, landscape_path, load_record, persist_record, record_json_path, write_json, ModelInfo, RecordDocument,
    RunMetadata, AGGREGATE_CSV, MODELS_JSON, RUN_JSON,
};
use crate::error::{Error, Result};
use crate::extraction::{extract_mps, MpsRecord};
use crate::oracle::{make_synthetic_oracle, Concurrency, CountingOracle, Oracle};
use crate::responsibility::search_landscape;
use crate::tensor::ImageTensor;
use crate::TOOL_VERSION;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Upper bound on concurrent jobs; `None` uses every core.
    pub workers: Option<usize>,
    /// Recompute records that already exist.
    pub force: bool,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub config_hash: String,
    /// Every record of the run, ordered by `(model_id, image_id)`.
    pub records: Vec<MpsRecord>,
    pub computed: usize,
    pub reused: usize,
    /// Oracle calls spent on newly computed records.
    pub oracle_calls: u64,
    pub failed_models: Vec<(String, String)>,
    pub skipped_images: usize,
}

struct LoadedModel {
    resolved: ResolvedModel,
    oracle: Box<dyn Oracle>,
}

/// Instantiates the oracle for a resolved model entry.
pub fn load_model(model: &ResolvedModel) -> Result<Box<dyn Oracle>> {
    match model {
        ResolvedModel::Synthetic { model_id, spec, .. } => Ok(Box::new(make_synthetic_oracle(model_id.clone(), spec.clone())?)),
        #[cfg(feature = "onnx")]
        ResolvedModel::Manifest(manifest) => Ok(Box::new(crate::oracle::load_external_model(manifest)?)),
        #[cfg(not(feature = "onnx"))]
        ResolvedModel::Manifest(manifest) => Err(Error::Backend {
            model_id: manifest.model_id.clone(),
            path: manifest.model_path.clone(),
            message: "built without the `onnx` feature".into(),
        }),
    }
}

struct Context<'a> {
    config: &'a RunConfig,
    hash: &'a str,
    force: bool,
}

enum Outcome {
    Computed(MpsRecord, u64),
    Reused(MpsRecord),
}

fn run_job(ctx: &Context<'_>, model: &LoadedModel, entry: &DatasetEntry, label: Option<usize>) -> Result<Outcome> {
    let root = &ctx.config.output;
    let model_id = model.resolved.model_id();
    if !ctx.force && record_json_path(root, model_id, &entry.image_id).is_file() {
        match load_record(root, model_id, &entry.image_id) {
            Ok(doc) if doc.config_hash == ctx.hash => {
                let mut record = doc.record;
                record.set_ground_truth(label);
                return Ok(Outcome::Reused(record));
            }
            Ok(_) => log::info!("{model_id}/{}: config changed, recomputing", entry.image_id),
            Err(e) => log::warn!("{model_id}/{}: unreadable record ({e}), recomputing", entry.image_id),
        }
    }
    let oracle = CountingOracle::new(model.oracle.as_ref());
    let raw = ImageTensor::load(&entry.path)?;
    let input = oracle.preprocess(&raw)?;
    ctx.config.baseline.check_channels(input.channels())?;
    let target = oracle.classify(&input)?.class_index;
    let (landscape, stats) = search_landscape(&input, &oracle, target, &ctx.config.search, &ctx.config.baseline)?;
    if stats.truncated > 0 {
        log::debug!("{model_id}/{}: {} branches cut by the budget", entry.image_id, stats.truncated);
    }
    let extraction = extract_mps(&input, &landscape, &oracle, target, &ctx.config.baseline, ctx.config.chunk_fraction)?;
    let calls = oracle.calls();
    let record = MpsRecord::new(model_id, entry.image_id.clone(), extraction, label, calls as usize);
    if ctx.config.save_landscapes {
        let path = landscape_path(root, model_id, &entry.image_id);
        let dir = path.parent().expect("landscape path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        landscape.save(&path, &ctx.config.search)?;
    }
    let doc = RecordDocument {
        mask_path: format!("{}.png", entry.image_id),
        mask_height: record.mask.height(),
        mask_width: record.mask.width(),
        config_hash: ctx.hash.to_string(),
        seed: ctx.config.search.seed,
        tool_version: TOOL_VERSION.to_string(),
        record,
    };
    persist_record(root, &doc)?;
    Ok(Outcome::Computed(doc.record, calls))
}

/// Runs every `(model, image)` extraction of `config` and persists the
/// records, the aggregate CSV, `models.json` and `run.json` under
/// `config.output`.
///
/// A model that fails to load is recorded in `models.json` and skipped;
/// the run fails only when no model loads.
pub fn run_extraction(config: &RunConfig, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let dataset = ingest_dataset(&config.dataset, config.labels.as_deref())?;
    for e in &dataset.entries {
        check_id("image id", &e.image_id)?;
    }
    let root = &config.output;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let mut resolved = Vec::new();
    let mut infos = Vec::new();
    let mut failed = Vec::new();
    for entry in &config.models {
        match ResolvedModel::resolve(entry) {
            Ok(r) => resolved.push(r),
            Err(e) => {
                let id = match entry {
                    super::ModelEntry::Manifest { path } => path.display().to_string(),
                    super::ModelEntry::Synthetic { model_id, .. } => model_id.clone(),
                };
                log::error!("model {id}: {e}");
                failed.push((id, e));
            }
        }
    }
    resolved.sort_by(|a, b| a.model_id().cmp(b.model_id()));
    if let Some(w) = resolved.windows(2).find(|w| w[0].model_id() == w[1].model_id()) {
        return Err(Error::InvalidArgument(format!("model id {} listed twice", w[0].model_id())));
    }
    let hash = config_hash(config, &resolved)?;

    let mut loaded = Vec::new();
    for r in resolved {
        let mut info = ModelInfo {
            model_id: r.model_id().to_string(),
            architecture_tag: r.architecture_tag().to_string(),
            class_count: None,
            input_dims: None,
            error: None,
        };
        match load_model(&r).and_then(|o| dataset.check_labels(o.class_count(), r.model_id()).map(|_| o)) {
            Ok(oracle) => {
                let d = oracle.input_dims();
                info.class_count = Some(oracle.class_count());
                info.input_dims = Some([d.height, d.width, d.channels]);
                loaded.push(LoadedModel { resolved: r, oracle });
            }
            Err(e) => {
                log::error!("model {}: {e}", info.model_id);
                info.error = Some(e.to_string());
                failed.push((info.model_id.clone(), e));
            }
        }
        infos.push(info);
    }
    for (id, e) in &failed {
        if !infos.iter().any(|i| &i.model_id == id) {
            infos.push(ModelInfo {
                model_id: id.clone(),
                architecture_tag: String::new(),
                class_count: None,
                input_dims: None,
                error: Some(e.to_string()),
            });
        }
    }
    write_json(&root.join(MODELS_JSON), &infos)?;
    if loaded.is_empty() {
        return Err(failed.into_iter().next().map(|(_, e)| e).unwrap_or_else(|| {
            Error::InvalidArgument("no models to run".into())
        }));
    }

    let ctx = Context { config, hash: &hash, force: options.force };
    let outcomes = run_jobs(&ctx, &loaded, &dataset, options.workers)?;

    let mut summary = RunSummary {
        config_hash: hash.clone(),
        records: Vec::with_capacity(outcomes.len()),
        computed: 0,
        reused: 0,
        oracle_calls: 0,
        failed_models: failed.into_iter().map(|(id, e)| (id, e.to_string())).collect(),
        skipped_images: dataset.skipped.len(),
    };
    for o in outcomes {
        match o {
            Outcome::Computed(r, calls) => {
                summary.computed += 1;
                summary.oracle_calls += calls;
                summary.records.push(r);
            }
            Outcome::Reused(r) => {
                summary.reused += 1;
                summary.records.push(r);
            }
        }
    }
    std::fs::write(root.join(AGGREGATE_CSV), aggregate_csv(&summary.records)?)
        .map_err(|e| Error::io(root.join(AGGREGATE_CSV), e))?;
    let meta = RunMetadata {
        config_hash: hash,
        seed: config.search.seed,
        tool_version: TOOL_VERSION.to_string(),
        images: dataset.len(),
        skipped_images: dataset.skipped.len(),
        records: summary.records.len(),
        degenerate: summary.records.iter().filter(|r| r.degenerate).count(),
        failed_models: summary.failed_models.iter().map(|(id, _)| id.clone()).collect(),
    };
    write_json(&root.join(RUN_JSON), &meta)?;
    Ok(summary)
}

/// Runs all jobs, returning outcomes ordered by `(model_id, image_id)`.
/// Jobs of a single-threaded oracle run one after another in one task.
fn run_jobs(ctx: &Context<'_>, models: &[LoadedModel], dataset: &Dataset, workers: Option<usize>) -> Result<Vec<Outcome>> {
    let mut tasks: Vec<(usize, Vec<usize>)> = Vec::new();
    for (m, model) in models.iter().enumerate() {
        match model.oracle.concurrency() {
            Concurrency::Shared => tasks.extend((0..dataset.len()).map(|i| (m, vec![i]))),
            Concurrency::SingleThreaded => tasks.push((m, (0..dataset.len()).collect())),
        }
    }
    let execute = || -> Vec<Vec<Result<Outcome>>> {
        tasks
            .par_iter()
            .map(|(m, images)| {
                images
                    .iter()
                    .map(|&i| {
                        let entry = &dataset.entries[i];
                        run_job(ctx, &models[*m], entry, dataset.label(&entry.image_id))
                    })
                    .collect()
            })
            .collect()
    };
    let results = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {n} workers: {e}")))?
            .install(execute),
        None => execute(),
    };
    // tasks were generated model by model in image order, so flattening keeps the order
    results.into_iter().flatten().collect()
}
