use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::analysis::{consensus_correctness, intersect_by_fidelity, model_accuracy, select_top_models};
use super::records::{write_json, RecordStore, RunMetadata};
use crate::error::{Error, Result};
use crate::extraction::MpsRecord;
use crate::setmetrics::{pairwise_matrix, Metric, PairwiseMatrix};
use crate::stats::{bonferroni, fit_size_model, friedman, kruskal_wallis, EffectEstimate, TestReport, DEFAULT_ALPHA, Z_99};
use crate::tensor::PixelMask;

/// Where correctness flags come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectnessSource {
    Labels,
    /// Strict-majority vote across models stands in for ground truth.
    Consensus,
    None,
}

/// One row of the area table (means are over non-degenerate records).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaRow {
    pub model_id: String,
    pub architecture_tag: String,
    /// Mean over records with known correctness.
    pub area: Option<f64>,
    pub correct: Option<f64>,
    pub incorrect: Option<f64>,
    /// Mean over all records.
    pub mean: Option<f64>,
    pub accuracy: Option<f64>,
    pub records: usize,
    pub degenerate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    #[serde(flatten)]
    pub estimate: EffectEstimate,
    pub interval_99: (f64, f64),
    pub model: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub run: Option<RunMetadata>,
    pub records: usize,
    pub degenerate: usize,
    pub correctness_source: CorrectnessSource,
    /// Images without a strict-majority class when consensus is used.
    pub abstentions: Option<usize>,
    pub area_table: Vec<AreaRow>,
    pub dice: Option<PairwiseMatrix>,
    pub hausdorff: Option<PairwiseMatrix>,
    /// Which models, images and grid the matrices were computed on.
    pub matrix_scope: String,
    pub tests: Vec<TestReport>,
    pub effect: Option<EffectReport>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ReportOptions {
    pub significance: f64,
    /// Fall back to a majority vote when no record carries ground truth.
    pub consensus_fallback: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { significance: DEFAULT_ALPHA, consensus_fallback: true }
    }
}

const EFFECT_MODEL: &str =
    "fixed-effects least squares: area_ratio ~ intercept + model indicators + incorrect (approximates a mixed model)";

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn area_table(records: &[MpsRecord], tags: &BTreeMap<String, String>) -> Vec<AreaRow> {
    let accuracy = model_accuracy(records);
    let mut by_model: BTreeMap<&str, Vec<&MpsRecord>> = BTreeMap::new();
    for r in records {
        by_model.entry(&r.model_id).or_default().push(r);
    }
    by_model
        .into_iter()
        .map(|(model, rs)| {
            let live: Vec<&&MpsRecord> = rs.iter().filter(|r| !r.degenerate).collect();
            AreaRow {
                model_id: model.to_string(),
                architecture_tag: tags.get(model).cloned().unwrap_or_else(|| model.to_string()),
                area: mean(live.iter().filter(|r| r.correct.is_some()).map(|r| r.area_ratio)),
                correct: mean(live.iter().filter(|r| r.correct == Some(true)).map(|r| r.area_ratio)),
                incorrect: mean(live.iter().filter(|r| r.correct == Some(false)).map(|r| r.area_ratio)),
                mean: mean(live.iter().map(|r| r.area_ratio)),
                accuracy: accuracy.get(model).copied(),
                records: rs.len(),
                degenerate: rs.len() - live.len(),
            }
        })
        .collect()
}

fn grouped<'a, K: Ord>(records: &'a [MpsRecord], key: impl Fn(&'a MpsRecord) -> K) -> BTreeMap<K, Vec<f64>> {
    let mut out: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.degenerate) {
        out.entry(key(r)).or_default().push(r.area_ratio);
    }
    out
}

/// Kruskal-Wallis across tags and across models, then one Friedman test per
/// tag with at least two models (Bonferroni-corrected as a family).
pub fn stats_battery(
    records: &[MpsRecord],
    tags: &BTreeMap<String, String>,
    alpha: f64,
    notes: &mut Vec<String>,
) -> Vec<TestReport> {
    let mut tests = Vec::new();
    let tag_of = |m: &str| tags.get(m).map_or(m.to_string(), Clone::clone);

    let by_tag = grouped(records, |r| tag_of(&r.model_id));
    if by_tag.len() >= 2 {
        let groups: Vec<Vec<f64>> = by_tag.into_values().collect();
        match kruskal_wallis(&groups) {
            Ok(r) => tests.push(TestReport::new("kruskal_wallis:architectures", r, None, alpha)),
            Err(e) => notes.push(format!("kruskal_wallis across architectures skipped: {e}")),
        }
    } else {
        notes.push("kruskal_wallis across architectures skipped: fewer than 2 architectures".into());
    }

    let by_model = grouped(records, |r| r.model_id.as_str());
    if by_model.len() >= 2 {
        let groups: Vec<Vec<f64>> = by_model.into_values().collect();
        match kruskal_wallis(&groups) {
            Ok(r) => tests.push(TestReport::new("kruskal_wallis:models", r, None, alpha)),
            Err(e) => notes.push(format!("kruskal_wallis across models skipped: {e}")),
        }
    }

    let mut per_tag: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        per_tag.entry(tag_of(&r.model_id)).or_default().insert(&r.model_id);
    }
    let mut family = Vec::new();
    for (tag, models) in per_tag.into_iter().filter(|(_, m)| m.len() >= 2) {
        let models: Vec<&str> = models.into_iter().collect();
        let mut cells: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
        for r in records.iter().filter(|r| !r.degenerate && models.contains(&r.model_id.as_str())) {
            cells.entry(&r.image_id).or_default().insert(&r.model_id, r.area_ratio);
        }
        let blocks: Vec<Vec<f64>> = cells
            .into_values()
            .filter(|row| row.len() == models.len())
            .map(|row| row.into_values().collect())
            .collect();
        match friedman(&blocks) {
            Ok(r) => family.push((format!("friedman:{tag}"), r)),
            Err(e) => notes.push(format!("friedman within {tag} skipped: {e}")),
        }
    }
    let corrected = bonferroni(&family.iter().map(|(_, r)| r.p_value).collect::<Vec<_>>());
    for ((name, r), p) in family.into_iter().zip(corrected) {
        tests.push(TestReport::new(name, r, Some(p), alpha));
    }
    tests
}

fn matrices(
    store: &RecordStore,
    records: &[MpsRecord],
    tags: &BTreeMap<String, String>,
    notes: &mut Vec<String>,
) -> (Option<PairwiseMatrix>, Option<PairwiseMatrix>, String) {
    let labeled = records.iter().any(|r| r.correct.is_some());
    let mut models: Vec<String> = tags.keys().cloned().collect();
    let mut scope = String::from("all models");
    if labeled {
        if let Ok(top) = select_top_models(records, tags) {
            if top.len() >= 2 {
                models = top.into_values().collect();
                models.sort();
                scope = "best model per architecture".into();
            }
        }
    }
    if models.len() < 2 {
        notes.push("pairwise matrices skipped: fewer than 2 models".into());
        return (None, None, String::new());
    }
    let live: BTreeMap<(&str, &str), &MpsRecord> = records
        .iter()
        .filter(|r| !r.degenerate)
        .map(|r| ((r.model_id.as_str(), r.image_id.as_str()), r))
        .collect();
    let common: BTreeSet<&str> = records
        .iter()
        .map(|r| r.image_id.as_str())
        .filter(|img| models.iter().all(|m| live.contains_key(&(m.as_str(), *img))))
        .collect();
    let mut images: Vec<&str> = common.iter().copied().collect();
    let mut image_scope = "images with non-degenerate records for every model";
    if labeled {
        let (all_correct, _) = intersect_by_fidelity(records, &models);
        let chosen: Vec<&str> = images.iter().copied().filter(|i| all_correct.contains(*i)).collect();
        if chosen.is_empty() {
            notes.push("no image is classified correctly by every compared model; matrices use all common images".into());
        } else {
            images = chosen;
            image_scope = "images every compared model classifies correctly";
        }
    }
    if images.is_empty() {
        notes.push("pairwise matrices skipped: no common non-degenerate images".into());
        return (None, None, String::new());
    }
    let mut masks: Vec<Vec<PixelMask>> = Vec::with_capacity(models.len());
    for m in &models {
        let mut row = Vec::with_capacity(images.len());
        for img in &images {
            match store.load_mask(m, img) {
                Ok(mask) => row.push(mask),
                Err(e) => {
                    notes.push(format!("pairwise matrices skipped: {e}"));
                    return (None, None, String::new());
                }
            }
        }
        masks.push(row);
    }
    let grid = masks
        .iter()
        .flatten()
        .fold((0, 0), |(h, w), m| (h.max(m.height()), w.max(m.width())));
    let dice = pairwise_matrix(&models, &masks, Metric::Dice, grid);
    let haus = pairwise_matrix(&models, &masks, Metric::Hausdorff, grid);
    let scope = format!(
        "{scope} ({}), {} {image_scope}; masks resampled (nearest neighbour) to a {}x{} grid, Hausdorff in pixels of that grid",
        models.join(", "),
        images.len(),
        grid.0,
        grid.1
    );
    let mut keep = |r: Result<PairwiseMatrix>, name: &str| match r {
        Ok(m) => Some(m),
        Err(e) => {
            notes.push(format!("{name} matrix skipped: {e}"));
            None
        }
    };
    (keep(dice, "dice"), keep(haus, "hausdorff"), scope)
}

/// Builds the comparison report from a run directory.
pub fn make_report(store: &RecordStore, options: &ReportOptions) -> Result<ComparisonReport> {
    if store.records.is_empty() {
        return Err(Error::data(&store.root, "no records to report on"));
    }
    let mut notes = Vec::new();
    let tags = store.tags();
    let mut source = if store.records.iter().any(|r| r.ground_truth.is_some()) {
        CorrectnessSource::Labels
    } else {
        CorrectnessSource::None
    };
    let mut abstentions = None;
    let records: Vec<MpsRecord> = if source == CorrectnessSource::None && options.consensus_fallback && tags.len() >= 3 {
        let consensus = consensus_correctness(&store.records);
        abstentions = Some(consensus.abstentions());
        source = CorrectnessSource::Consensus;
        let mut relabeled = consensus.relabel(&store.records);
        // keep no-consensus records for the unpartitioned statistics
        let voted: BTreeSet<&str> = consensus.classes.keys().map(String::as_str).collect();
        relabeled.extend(store.records.iter().filter(|r| !voted.contains(r.image_id.as_str())).cloned());
        relabeled.sort_by(|a, b| (&a.model_id, &a.image_id).cmp(&(&b.model_id, &b.image_id)));
        relabeled
    } else {
        store.records.clone()
    };

    let area_table = area_table(&records, &tags);
    let (dice, hausdorff, matrix_scope) = matrices(store, &records, &tags, &mut notes);
    let tests = stats_battery(&records, &tags, options.significance, &mut notes);
    let effect = if source == CorrectnessSource::None {
        notes.push("effect model skipped: no correctness information".into());
        None
    } else {
        match fit_size_model(&records) {
            Ok(estimate) => Some(EffectReport { interval_99: estimate.interval(Z_99), estimate, model: EFFECT_MODEL.into() }),
            Err(e) => {
                notes.push(format!("effect model skipped: {e}"));
                None
            }
        }
    };
    Ok(ComparisonReport {
        run: store.run.clone(),
        records: records.len(),
        degenerate: records.iter().filter(|r| r.degenerate).count(),
        correctness_source: source,
        abstentions,
        area_table,
        dice,
        hausdorff,
        matrix_scope,
        tests,
        effect,
        notes,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

pub const AREA_COLUMNS: [&str; 5] = ["Area", "Correct", "Incorrect", "Mean", "Accuracy"];

impl ComparisonReport {
    /// The area table as CSV: `Model,Area,Correct,Incorrect,Mean,Accuracy`.
    /// Undefined means are left empty; values are not rounded.
    pub fn area_csv(&self) -> String {
        let mut out = format!("Model,{}\n", AREA_COLUMNS.join(","));
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        for r in &self.area_table {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.model_id,
                opt(r.area),
                opt(r.correct),
                opt(r.incorrect),
                opt(r.mean),
                opt(r.accuracy)
            );
        }
        out
    }

    pub fn area_markdown(&self) -> String {
        let mut out = format!("| Model | {} |\n|---|{}\n", AREA_COLUMNS.join(" | "), "---:|".repeat(AREA_COLUMNS.len()));
        for r in &self.area_table {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} |",
                r.model_id,
                cell(r.area),
                cell(r.correct),
                cell(r.incorrect),
                cell(r.mean),
                cell(r.accuracy)
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# MPS comparison report\n\n");
        if let Some(run) = &self.run {
            let _ = writeln!(out, "- config hash: `{}`\n- seed: {}\n- tool version: {}", run.config_hash, run.seed, run.tool_version);
        }
        let _ = writeln!(out, "- records: {} ({} degenerate, excluded from statistics)", self.records, self.degenerate);
        let source = match self.correctness_source {
            CorrectnessSource::Labels => "ground-truth labels".to_string(),
            CorrectnessSource::Consensus => format!(
                "strict-majority vote across models ({} image(s) without consensus)",
                self.abstentions.unwrap_or(0)
            ),
            CorrectnessSource::None => "none".to_string(),
        };
        let _ = writeln!(out, "- correctness: {source}\n");
        out.push_str("## Average MPS size (fraction of image)\n\n");
        out.push_str(&self.area_markdown());
        for (title, m) in [("Dice coefficient", &self.dice), ("Hausdorff distance", &self.hausdorff)] {
            if let Some(m) = m {
                let _ = write!(out, "\n## {title}\n\n{}", m.to_markdown());
            }
        }
        if !self.matrix_scope.is_empty() {
            let _ = writeln!(out, "\nMatrices: {}.", self.matrix_scope);
        }
        if !self.tests.is_empty() {
            out.push_str("\n## Tests\n\n| Test | Statistic | df | p | Bonferroni p | Significant |\n|---|---:|---:|---:|---:|:---:|\n");
            for t in &self.tests {
                let _ = writeln!(
                    out,
                    "| {} | {:.3} | {} | {:.3e} | {} | {} |",
                    t.test,
                    t.statistic,
                    t.df,
                    t.p_value,
                    t.corrected_p.map_or_else(|| "-".to_string(), |p| format!("{p:.3e}")),
                    if t.significant { "yes" } else { "no" }
                );
            }
            if let Some(t) = self.tests.first() {
                let _ = writeln!(out, "\nThreshold p < {}.", t.threshold);
            }
        }
        if let Some(e) = &self.effect {
            let _ = writeln!(
                out,
                "\n## Incorrect-classification effect\n\n{:+.4} area ratio (standard error {:.4}, p = {:.3e}, 99% interval [{:.4}, {:.4}]), {} records over {} models.\nModel: {}.",
                e.estimate.coefficient,
                e.estimate.std_error,
                e.estimate.p_value,
                e.interval_99.0,
                e.interval_99.1,
                e.estimate.observations,
                e.estimate.models,
                e.model
            );
        }
        if !self.notes.is_empty() {
            out.push_str("\n## Notes\n\n");
            for n in &self.notes {
                let _ = writeln!(out, "- {n}");
            }
        }
        out
    }

    /// Writes `report.json`, `report.md`, `area.csv` and the matrix CSV and
    /// Markdown files into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| std::fs::write(dir.join(name), text).map_err(|e| Error::io(dir.join(name), e));
        write_json(&dir.join("report.json"), self)?;
        put("report.md", self.to_markdown())?;
        put("area.csv", self.area_csv())?;
        for m in [&self.dice, &self.hausdorff].into_iter().flatten() {
            put(&format!("{}.csv", m.metric.name()), m.to_csv())?;
            put(&format!("{}.md", m.metric.name()), m.to_markdown())?;
        }
        Ok(())
    }
}
