use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub image_id: String,
    pub path: PathBuf,
}

/// Images of one directory, ordered by `image_id` (the file stem).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub labels: BTreeMap<String, usize>,
    /// Files that could not be decoded, with the decoder message.
    pub skipped: Vec<(PathBuf, String)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label(&self, image_id: &str) -> Option<usize> {
        self.labels.get(image_id).copied()
    }

    /// Rejects labels outside `0..class_count`.
    pub fn check_labels(&self, class_count: usize, model_id: &str) -> Result<()> {
        if let Some((id, &l)) = self.labels.iter().find(|(_, &l)| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {l} of image {id} is outside the {class_count} classes of model {model_id}"
            )));
        }
        Ok(())
    }
}

/// Lists and test-decodes every file directly inside `dir`, then attaches
/// labels from an optional `image_id,class_index` CSV.
pub fn ingest_dataset(dir: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let listing = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries: Vec<DatasetEntry> = Vec::new();
    let mut skipped = Vec::new();
    let mut paths = Vec::new();
    for item in listing {
        let item = item.map_err(|e| Error::io(dir, e))?;
        let path = item.path();
        if path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    for path in paths {
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            skipped.push((path.clone(), "file name is not valid UTF-8".to_string()));
            continue;
        };
        if stem.starts_with('.') {
            continue;
        }
        let stem = stem.to_string();
        match ImageTensor::load(&path) {
            Ok(_) => entries.push(DatasetEntry { image_id: stem, path }),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push((path, e.to_string()));
            }
        }
    }
    if !skipped.is_empty() {
        log::warn!("{} undecodable file(s) skipped in {}", skipped.len(), dir.display());
    }
    if entries.is_empty() {
        return Err(Error::data(dir, "no decodable images"));
    }
    entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    if let Some(w) = entries.windows(2).find(|w| w[0].image_id == w[1].image_id) {
        return Err(Error::data(
            &w[1].path,
            format!("image id {} also used by {}", w[1].image_id, w[0].path.display()),
        ));
    }
    let mut dataset = Dataset { entries, labels: BTreeMap::new(), skipped };
    if let Some(path) = labels {
        let parsed = read_labels(path)?;
        for (id, class) in parsed {
            if dataset.entries.binary_search_by(|e| e.image_id.as_str().cmp(&id)).is_ok() {
                dataset.labels.insert(id, class);
            } else {
                log::warn!("label for unknown image id {id} ignored");
            }
        }
    }
    Ok(dataset)
}

/// Parses `image_id,class_index` rows. A header row naming those two
/// columns is optional. Errors carry the 1-based row number.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let has_header = text
        .lines()
        .next()
        .is_some_and(|l| l.trim().eq_ignore_ascii_case("image_id,class_index"));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut labels = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 1;
        if has_header && i == 0 {
            continue;
        }
        let row = row.map_err(|e| Error::data(path, format!("row {line}: {e}")))?;
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != 2 {
            return Err(Error::data(path, format!("row {line}: expected 2 fields, found {}", row.len())));
        }
        let (image_id, class_index) = (row[0].to_string(), &row[1]);
        if image_id.is_empty() {
            return Err(Error::data(path, format!("row {line}: empty image id")));
        }
        let class: usize = class_index
            .parse()
            .map_err(|_| Error::data(path, format!("row {line}: class index {class_index:?} is not a nonnegative integer")))?;
        if labels.insert(image_id.clone(), class).is_some() {
            return Err(Error::data(path, format!("row {line}: duplicate label for {image_id}")));
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(dir: &Path, name: &str, v: f32) {
        ImageTensor::filled(4, 5, 1, v).unwrap().save_png(&dir.join(name)).unwrap();
    }

    #[test]
    fn three_pngs_without_labels() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["c.png", "a.png", "b.png"] {
            write_png(dir.path(), name, 0.5);
        }
        let ds = ingest_dataset(dir.path(), None).unwrap();
        let ids: Vec<&str> = ds.entries.iter().map(|e| e.image_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(ds.labels.is_empty());
    }

    #[test]
    fn undecodable_files_are_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "good.png", 0.1);
        std::fs::write(dir.path().join("bad.png"), b"not an image").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"hello").unwrap();
        let ds = ingest_dataset(dir.path(), None).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.skipped.len(), 2);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ingest_dataset(dir.path(), None), Err(Error::Data { .. })));
    }

    #[test]
    fn labels_attach_and_unknown_ids_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = dir.path().join("imgs");
        std::fs::create_dir(&imgs).unwrap();
        write_png(&imgs, "x.png", 0.2);
        write_png(&imgs, "y.png", 0.3);
        let labels = dir.path().join("labels.csv");
        std::fs::write(&labels, "image_id,class_index\nx,3\nghost,1\n").unwrap();
        let ds = ingest_dataset(&imgs, Some(&labels)).unwrap();
        assert_eq!(ds.label("x"), Some(3));
        assert_eq!(ds.label("y"), None);
        assert_eq!(ds.labels.len(), 1);
        assert!(ds.check_labels(4, "m").is_ok());
        assert!(ds.check_labels(3, "m").is_err());
    }

    #[test]
    fn malformed_label_rows_report_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        for (text, row) in [("a,1\nb,x\n", "row 2"), ("a,1\nb,2\nc\n", "row 3"), ("a,-1\n", "row 1"), ("a,1\na,2\n", "row 2")] {
            std::fs::write(&path, text).unwrap();
            let err = read_labels(&path).unwrap_err().to_string();
            assert!(err.contains(row), "{text:?}: {err}");
        }
    }
}
