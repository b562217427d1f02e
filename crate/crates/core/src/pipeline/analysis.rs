use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::MpsRecord;

/// Fraction of labeled records that are correct, per model.
pub fn model_accuracy(records: &[MpsRecord]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        if let Some(c) = r.correct {
            let e = counts.entry(&r.model_id).or_default();
            e.0 += usize::from(c);
            e.1 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(m, (ok, n))| (m.to_string(), ok as f64 / n as f64))
        .collect()
}

/// Best model per architecture tag by accuracy, ties going to the
/// lexicographically smaller id. `tags` maps model id to tag; models with
/// no labeled records are not eligible.
pub fn select_top_models(records: &[MpsRecord], tags: &BTreeMap<String, String>) -> Result<BTreeMap<String, String>> {
    let accuracy = model_accuracy(records);
    if accuracy.is_empty() {
        return Err(Error::InvalidArgument("no labeled records to rank models by".into()));
    }
    let mut best: BTreeMap<String, (String, f64)> = BTreeMap::new();
    // BTreeMap iteration is ascending by id, so a strict `>` keeps the smaller id on ties
    for (model, acc) in &accuracy {
        let tag = tags.get(model).cloned().unwrap_or_else(|| model.clone());
        match best.get(&tag) {
            Some((_, a)) if *acc <= *a => {}
            _ => {
                best.insert(tag, (model.clone(), *acc));
            }
        }
    }
    Ok(best.into_iter().map(|(tag, (model, _))| (tag, model)).collect())
}

/// Majority-vote classes per image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Consensus {
    pub classes: BTreeMap<String, usize>,
    /// Images without a strict majority.
    pub no_consensus: Vec<String>,
}

impl Consensus {
    pub fn abstentions(&self) -> usize {
        self.no_consensus.len()
    }

    /// Records relabeled with the consensus class as ground truth; records
    /// of no-consensus images are dropped.
    pub fn relabel(&self, records: &[MpsRecord]) -> Vec<MpsRecord> {
        records
            .iter()
            .filter_map(|r| {
                self.classes.get(&r.image_id).map(|&c| {
                    let mut r = r.clone();
                    r.set_ground_truth(Some(c));
                    r
                })
            })
            .collect()
    }
}

/// Strict-majority predicted class per image across models.
pub fn consensus_correctness(records: &[MpsRecord]) -> Consensus {
    let mut votes: BTreeMap<&str, BTreeMap<usize, usize>> = BTreeMap::new();
    let mut models = BTreeSet::new();
    for r in records {
        *votes.entry(&r.image_id).or_default().entry(r.predicted_class).or_default() += 1;
        models.insert(&r.model_id);
    }
    if models.len() < 3 {
        log::warn!("majority vote over {} model(s); at least 3 are needed for a meaningful vote", models.len());
    }
    let mut out = Consensus::default();
    for (image, tally) in votes {
        let total: usize = tally.values().sum();
        match tally.iter().find(|(_, &n)| 2 * n > total) {
            Some((&class, _)) => {
                out.classes.insert(image.to_string(), class);
            }
            None => out.no_consensus.push(image.to_string()),
        }
    }
    out
}

/// Images every listed model classifies correctly, and images every listed
/// model classifies incorrectly. Images lacking a labeled record for any
/// listed model are in neither set.
pub fn intersect_by_fidelity(records: &[MpsRecord], models: &[String]) -> (BTreeSet<String>, BTreeSet<String>) {
    let wanted: BTreeSet<&str> = models.iter().map(String::as_str).collect();
    let mut flags: BTreeMap<&str, BTreeMap<&str, bool>> = BTreeMap::new();
    for r in records {
        if let (true, Some(c)) = (wanted.contains(r.model_id.as_str()), r.correct) {
            flags.entry(&r.image_id).or_default().insert(&r.model_id, c);
        }
    }
    let mut all_correct = BTreeSet::new();
    let mut all_incorrect = BTreeSet::new();
    for (image, per_model) in flags {
        if per_model.len() != wanted.len() || wanted.is_empty() {
            continue;
        }
        if per_model.values().all(|&c| c) {
            all_correct.insert(image.to_string());
        } else if per_model.values().all(|&c| !c) {
            all_incorrect.insert(image.to_string());
        }
    }
    (all_correct, all_incorrect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::Extraction;
    use crate::tensor::PixelMask;

    pub(crate) fn rec(model: &str, image: &str, predicted: usize, gt: Option<usize>) -> MpsRecord {
        MpsRecord::new(
            model,
            image,
            Extraction { mask: PixelMask::new(2, 2, true), target_class: predicted, degenerate: false, oracle_calls: 0 },
            gt,
            0,
        )
    }

    fn with_accuracy(model: &str, correct: usize, total: usize) -> Vec<MpsRecord> {
        (0..total).map(|i| rec(model, &format!("i{i}"), 1, Some(if i < correct { 1 } else { 0 }))).collect()
    }

    #[test]
    fn top_model_per_tag() {
        let mut recs = with_accuracy("m1", 9, 10);
        recs.extend(with_accuracy("m2", 8, 10));
        recs.extend(with_accuracy("z", 5, 10));
        let tags: BTreeMap<String, String> =
            [("m1", "A"), ("m2", "A"), ("z", "B")].iter().map(|(m, t)| (m.to_string(), t.to_string())).collect();
        let top = select_top_models(&recs, &tags).unwrap();
        assert_eq!(top["A"], "m1");
        assert_eq!(top["B"], "z");

        let mut tie = with_accuracy("mb", 9, 10);
        tie.extend(with_accuracy("ma", 9, 10));
        let tags: BTreeMap<String, String> = [("ma", "A"), ("mb", "A")].iter().map(|(m, t)| (m.to_string(), t.to_string())).collect();
        assert_eq!(select_top_models(&tie, &tags).unwrap()["A"], "ma");

        assert!(select_top_models(&[rec("m", "i", 0, None)], &tags).is_err());
    }

    #[test]
    fn majority_vote() {
        let mut recs = Vec::new();
        for (m, c) in ["a", "b", "c", "d", "e"].iter().zip([7, 7, 7, 1, 2]) {
            recs.push(rec(m, "x", c, None));
        }
        for (m, c) in ["a", "b", "c", "d"].iter().zip([3, 3, 4, 4]) {
            recs.push(rec(m, "y", c, None));
        }
        for m in ["a", "b", "c"] {
            recs.push(rec(m, "z", 5, None));
        }
        let c = consensus_correctness(&recs);
        assert_eq!(c.classes.get("x"), Some(&7));
        assert_eq!(c.classes.get("y"), None);
        assert_eq!(c.no_consensus, vec!["y".to_string()]);
        assert_eq!(c.classes.get("z"), Some(&5));
        assert_eq!(c.abstentions(), 1);
        let relabeled = c.relabel(&recs);
        assert_eq!(relabeled.len(), 8);
        assert!(relabeled.iter().filter(|r| r.image_id == "x").filter(|r| r.correct == Some(true)).count() == 3);
    }

    #[test]
    fn fidelity_intersections() {
        let recs = vec![
            rec("p", "x", 1, Some(1)),
            rec("q", "x", 1, Some(1)),
            rec("p", "y", 1, Some(1)),
            rec("q", "y", 0, Some(1)),
            rec("p", "w", 0, Some(1)),
            rec("q", "w", 2, Some(1)),
            rec("p", "v", 1, Some(1)),
        ];
        let (ok, bad) = intersect_by_fidelity(&recs, &["p".into(), "q".into()]);
        assert_eq!(ok.into_iter().collect::<Vec<_>>(), vec!["x".to_string()]);
        assert_eq!(bad.into_iter().collect::<Vec<_>>(), vec!["w".to_string()]);
    }
}
