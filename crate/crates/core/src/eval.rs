//! Classification accuracy, sample-selection quality, and OOD detection metrics.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy<S: Scalar>(scores: &[Vec<S>], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            context: "accuracy labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::param("scores", "cannot score an empty set"));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, &y)| argmax(s) == y)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    /// `None` when the selected set is empty.
    pub precision: Option<f64>,
    pub recall: f64,
    pub f1: f64,
    pub selected: usize,
    pub clean_selected: usize,
}

/// Precision/recall/F1 of a selected id set, positive = "noisy label is correct".
pub fn selection_metrics(selected: &[usize], dataset: &LabeledDataset) -> Result<SelectionMetrics> {
    if dataset.is_empty() {
        return Err(Error::param("dataset", "selection metrics need a nonempty dataset"));
    }
    let truth = dataset.truth();
    let total_clean = (0..dataset.len()).filter(|&i| truth.is_clean(i)).count();
    let mut clean_selected = 0;
    for &id in selected {
        let idx = dataset
            .index_of(id)
            .ok_or_else(|| Error::param("selected", format!("unknown sample id {id}")))?;
        if truth.is_clean(idx) {
            clean_selected += 1;
        }
    }
    let precision = if selected.is_empty() {
        None
    } else {
        Some(clean_selected as f64 / selected.len() as f64)
    };
    let recall = if total_clean == 0 {
        0.0
    } else {
        clean_selected as f64 / total_clean as f64
    };
    let f1 = match precision {
        Some(p) if p + recall > 0.0 => 2.0 * p * recall / (p + recall),
        _ => 0.0,
    };
    Ok(SelectionMetrics {
        precision,
        recall,
        f1,
        selected: selected.len(),
        clean_selected,
    })
}

/// Detection scores; higher means more in-distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodScoreSet<S> {
    pub id: Vec<S>,
    pub ood: Vec<S>,
}

impl<S: Scalar> OodScoreSet<S> {
    pub fn new(id: Vec<S>, ood: Vec<S>) -> Result<Self> {
        if id.is_empty() || ood.is_empty() {
            return Err(Error::param("scores", "both score sets must be nonempty"));
        }
        if id.iter().chain(&ood).any(|s| !s.is_finite()) {
            return Err(Error::param("scores", "scores must be finite"));
        }
        Ok(Self { id, ood })
    }

    /// Scores from energies: `score = -E`.
    pub fn from_energies(id_energy: &[S], ood_energy: &[S]) -> Result<Self> {
        Self::new(
            id_energy.iter().map(|&e| -e).collect(),
            ood_energy.iter().map(|&e| -e).collect(),
        )
    }
}

fn sorted<S: Scalar>(v: &[S]) -> Vec<S> {
    let mut out = v.to_vec();
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    out
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted 1/2.
pub fn auroc<S: Scalar>(scores: &OodScoreSet<S>) -> f64 {
    let ood = sorted(&scores.ood);
    let mut wins = 0.0;
    for &s in &scores.id {
        let below = ood.partition_point(|&o| o < s);
        let not_above = ood.partition_point(|&o| o <= s);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    wins / (scores.id.len() as f64 * scores.ood.len() as f64)
}

/// False-positive rate at the strictest observed threshold keeping TPR >= 0.95.
///
/// A sample is called in-distribution when its score is `>=` the threshold.
pub fn fpr_at_95_tpr<S: Scalar>(scores: &OodScoreSet<S>) -> f64 {
    let mut id = sorted(&scores.id);
    id.reverse();
    let needed = (0.95 * id.len() as f64 - 1e-9).ceil().max(1.0) as usize;
    let threshold = id[needed - 1];
    let false_pos = scores.ood.iter().filter(|&&o| o >= threshold).count();
    false_pos as f64 / scores.ood.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec};
    use proptest::prelude::*;

    fn pairwise_auroc(id: &[f64], ood: &[f64]) -> f64 {
        let mut count = 0.0;
        for &a in id {
            for &b in ood {
                if a > b {
                    count += 1.0;
                } else if a == b {
                    count += 0.5;
                }
            }
        }
        count / (id.len() * ood.len()) as f64
    }

    #[test]
    fn accuracy_examples() {
        let s = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]];
        assert_eq!(accuracy(&s, &[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&s, &[1, 0, 1]).unwrap(), 0.0);
        assert!(accuracy(&s, &[0]).is_err());
    }

    #[test]
    fn separated_scores() {
        let s = OodScoreSet::new(vec![5.0, 6.0, 7.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(auroc(&s), 1.0);
        assert_eq!(fpr_at_95_tpr(&s), 0.0);
        let same = OodScoreSet::new(vec![1.0, 2.0, 2.0], vec![2.0, 1.0, 2.0]).unwrap();
        assert_eq!(auroc(&same), 0.5);
        assert!(OodScoreSet::<f64>::new(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn fpr95_step_threshold() {
        // 20 ID scores 1..=20: 19 must pass -> threshold 2; OOD >= 2 are {2, 3}
        let id: Vec<f64> = (1..=20).map(f64::from).collect();
        let s = OodScoreSet::new(id, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(fpr_at_95_tpr(&s), 0.5);
    }

    #[test]
    fn energy_scores_are_negated() {
        let s = OodScoreSet::from_energies(&[-5.0_f64], &[1.0]).unwrap();
        assert_eq!(s.id, vec![5.0]);
        assert_eq!(auroc(&s), 1.0);
    }

    #[test]
    fn selection_examples() {
        let mut ds = generate(&DatasetSpec { n_samples: 40, ..DatasetSpec::default() }).unwrap();
        ds = crate::data::inject_noise(&ds, &crate::data::NoiseSpec::symmetric(0.5, 3)).unwrap();
        let truth = ds.truth();
        let clean: Vec<usize> = (0..ds.len()).filter(|&i| truth.is_clean(i)).map(|i| ds.ids()[i]).collect();
        let m = selection_metrics(&clean, &ds).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (Some(1.0), 1.0, 1.0));
        let none = selection_metrics(&[], &ds).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (None, 0.0, 0.0));
        assert!(selection_metrics(&[10_000], &ds).is_err());

        // confusion-matrix oracle on an alternating membership vector
        let chosen: Vec<usize> = ds.ids().iter().copied().filter(|id| id % 2 == 0).collect();
        let m = selection_metrics(&chosen, &ds).unwrap();
        let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
        for i in 0..ds.len() {
            let sel = ds.ids()[i] % 2 == 0;
            match (sel, truth.is_clean(i)) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fnn += 1.0,
                _ => {}
            }
        }
        let p: f64 = tp / (tp + fp);
        let r: f64 = tp / (tp + fnn);
        assert!((m.precision.unwrap() - p).abs() < 1e-15);
        assert!((m.recall - r).abs() < 1e-15);
        assert!((m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise(
            id in prop::collection::vec(-5i32..5, 10),
            ood in prop::collection::vec(-5i32..5, 10),
        ) {
            // integer-valued scores force ties
            let id: Vec<f64> = id.into_iter().map(f64::from).collect();
            let ood: Vec<f64> = ood.into_iter().map(f64::from).collect();
            let s = OodScoreSet::new(id.clone(), ood.clone()).unwrap();
            prop_assert_eq!(auroc(&s), pairwise_auroc(&id, &ood));
        }

        #[test]
        fn auroc_transform_invariance(
            id in prop::collection::vec(-3.0_f64..3.0, 1..30),
            ood in prop::collection::vec(-3.0_f64..3.0, 1..30),
        ) {
            let s = OodScoreSet::new(id.clone(), ood.clone()).unwrap();
            let base = auroc(&s);
            let t = OodScoreSet::new(
                id.iter().map(|v| v.exp() * 3.0 + 1.0).collect(),
                ood.iter().map(|v| v.exp() * 3.0 + 1.0).collect(),
            ).unwrap();
            prop_assert!((auroc(&t) - base).abs() < 1e-12);
            let neg = OodScoreSet::new(
                id.iter().map(|v| -v).collect(),
                ood.iter().map(|v| -v).collect(),
            ).unwrap();
            prop_assert!((auroc(&neg) - (1.0 - base)).abs() < 1e-12);
        }

        #[test]
        fn fpr95_non_increasing_under_separation(
            id in prop::collection::vec(-3.0_f64..3.0, 1..30),
            ood in prop::collection::vec(-3.0_f64..3.0, 1..30),
            a in 0.0_f64..2.0,
            b in 0.0_f64..2.0,
        ) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let shifted = |d: f64| OodScoreSet::new(
                id.iter().map(|v| v + d).collect(),
                ood.clone(),
            ).unwrap();
            prop_assert!(fpr_at_95_tpr(&shifted(hi)) <= fpr_at_95_tpr(&shifted(lo)));
        }
    }
}
