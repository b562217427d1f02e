use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::occlusion::BaselineSpec;
use crate::oracle::{ModelManifest, SyntheticOracleSpec};
use crate::responsibility::SearchConfig;
use crate::stats::DEFAULT_ALPHA;

/// One model of a run: an exported graph described by a manifest file, or a
/// built-in synthetic classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelEntry {
    Manifest {
        path: PathBuf,
    },
    Synthetic {
        model_id: String,
        architecture_tag: String,
        spec: SyntheticOracleSpec,
    },
}

impl ModelEntry {
    pub fn synthetic(model_id: impl Into<String>, architecture_tag: impl Into<String>, spec: SyntheticOracleSpec) -> Self {
        ModelEntry::Synthetic {
            model_id: model_id.into(),
            architecture_tag: architecture_tag.into(),
            spec,
        }
    }
}

fn default_chunk_fraction() -> f64 {
    0.01
}

fn default_significance() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub models: Vec<ModelEntry>,
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub output: PathBuf,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub baseline: BaselineSpec,
    #[serde(default = "default_chunk_fraction")]
    pub chunk_fraction: f64,
    #[serde(default = "default_significance")]
    pub significance: f64,
    /// Also write each landscape next to its record.
    #[serde(default)]
    pub save_landscapes: bool,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Ids become directory and file names, so they must be plain names.
pub(crate) fn check_id(kind: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && !id.chars().any(|c| matches!(c, '/' | '\\' | '\0' | '\n' | '\r'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("invalid {kind} {id:?}")))
    }
}

impl RunConfig {
    pub fn new(models: Vec<ModelEntry>, dataset: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            models,
            dataset: dataset.into(),
            labels: None,
            output: output.into(),
            search: SearchConfig::default(),
            baseline: BaselineSpec::default(),
            chunk_fraction: default_chunk_fraction(),
            significance: default_significance(),
            save_landscapes: false,
        }
    }

    /// Reads a config file; relative paths are taken relative to the file.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.dataset = resolve(base, &config.dataset);
        config.output = resolve(base, &config.output);
        config.labels = config.labels.map(|l| resolve(base, &l));
        for m in &mut config.models {
            if let ModelEntry::Manifest { path } = m {
                *path = resolve(base, path);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::InvalidArgument("run config lists no models".into()));
        }
        self.search.validate()?;
        self.baseline.validate()?;
        if !(self.chunk_fraction > 0.0 && self.chunk_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("chunk_fraction {} outside (0, 1]", self.chunk_fraction)));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::InvalidArgument(format!("significance {} outside (0, 1)", self.significance)));
        }
        for m in &self.models {
            if let ModelEntry::Synthetic { model_id, spec, .. } = m {
                check_id("model id", model_id)?;
                spec.validate()?;
            }
        }
        Ok(())
    }
}

/// A model entry with its manifest read from disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ResolvedModel {
    Manifest(ModelManifest),
    Synthetic {
        model_id: String,
        architecture_tag: String,
        spec: SyntheticOracleSpec,
    },
}

impl ResolvedModel {
    /// Reads a manifest entry; its `model_path` is taken relative to the
    /// manifest file.
    pub fn resolve(entry: &ModelEntry) -> Result<Self> {
        match entry {
            ModelEntry::Manifest { path } => {
                let mut manifest = ModelManifest::from_json_file(path)?;
                check_id("model id", &manifest.model_id)?;
                manifest.model_path = resolve(path.parent().unwrap_or(Path::new(".")), &manifest.model_path);
                Ok(ResolvedModel::Manifest(manifest))
            }
            ModelEntry::Synthetic { model_id, architecture_tag, spec } => Ok(ResolvedModel::Synthetic {
                model_id: model_id.clone(),
                architecture_tag: architecture_tag.clone(),
                spec: spec.clone(),
            }),
        }
    }

    pub fn model_id(&self) -> &str {
        match self {
            ResolvedModel::Manifest(m) => &m.model_id,
            ResolvedModel::Synthetic { model_id, .. } => model_id,
        }
    }

    pub fn architecture_tag(&self) -> &str {
        match self {
            ResolvedModel::Manifest(m) => &m.architecture_tag,
            ResolvedModel::Synthetic { architecture_tag, .. } => architecture_tag,
        }
    }
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    models: &'a [ResolvedModel],
    model_digests: &'a [Option<String>],
    search: &'a SearchConfig,
    baseline: &'a BaselineSpec,
    chunk_fraction: f64,
}

/// SHA-256 over everything that determines extraction results: the resolved
/// models (with a digest of each model file), search settings, baseline and
/// chunk fraction. Paths of the dataset and output are not included.
pub fn config_hash(config: &RunConfig, models: &[ResolvedModel]) -> Result<String> {
    let mut digests = Vec::with_capacity(models.len());
    for m in models {
        digests.push(match m {
            ResolvedModel::Manifest(manifest) => match std::fs::read(&manifest.model_path) {
                Ok(bytes) => Some(hex::encode(Sha256::digest(&bytes))),
                Err(_) => None,
            },
            ResolvedModel::Synthetic { .. } => None,
        });
    }
    let hashed = HashedConfig {
        models,
        model_digests: &digests,
        search: &config.search,
        baseline: &config.baseline,
        chunk_fraction: config.chunk_fraction,
    };
    let bytes = serde_json::to_vec(&hashed)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
