//! Nearest-core-pattern classification and its evaluation metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corepatterns::{binarize, build_bank, CoreId, MemoryBank};
use crate::datasetio::{format_scalar, FeatureTable};
use crate::error::{Error, Result};
use crate::hopfield::{retrieve_nearest, Mode, Pattern};
use crate::rng::SplitMix64;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationResult {
    pub predicted_label: String,
    /// Every core pattern at the minimal distance, ordered by id.
    pub tied_candidates: Vec<CoreId>,
    pub min_distance: f64,
    pub tie_broken_randomly: bool,
}

/// Map a raw feature vector into the bank's pattern space.
pub fn test_pattern(feature: &[f64], bank: &MemoryBank) -> Result<Pattern> {
    if feature.len() != bank.n() {
        return Err(Error::DimensionMismatch {
            expected: bank.n(),
            found: feature.len(),
        });
    }
    match (bank.mode(), bank.thresholds()) {
        (Mode::Bipolar, Some(t)) => binarize(feature, t),
        _ => Pattern::real(feature.to_vec()),
    }
}

/// Label of the nearest core pattern; ties are broken by a uniform draw
/// seeded with `rng_seed`.
pub fn classify(feature: &[f64], bank: &MemoryBank, rng_seed: u64) -> Result<ClassificationResult> {
    let pattern = test_pattern(feature, bank)?;
    let nearest = retrieve_nearest(&pattern, bank)?;
    let tie = nearest.ids.len() > 1;
    let chosen = if tie {
        let i = SplitMix64::new(rng_seed).below(nearest.ids.len() as u64) as usize;
        nearest.ids[i]
    } else {
        nearest.ids[0]
    };
    let label = bank
        .get(chosen)
        .expect("retrieved id belongs to the bank")
        .class_id
        .clone();
    Ok(ClassificationResult {
        predicted_label: label,
        tied_candidates: nearest.ids,
        min_distance: nearest.distance,
        tie_broken_randomly: tie,
    })
}

/// Seed used for test row `index` of an evaluation seeded with `seed`.
pub fn row_seed(seed: u64, index: usize) -> u64 {
    SplitMix64::substream(seed, index as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted union of bank and test labels; indexes the confusion matrix.
    pub labels: Vec<String>,
    /// Accuracy of every label with at least one test row.
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub mean_per_class_accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
    pub false_positives_total: u64,
    pub n_test: usize,
    /// Bank labels without test rows, left out of the mean.
    pub excluded_classes: Vec<String>,
    /// Test labels the bank cannot predict.
    pub unseen_labels: Vec<String>,
}

impl EvalReport {
    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.confusion[i][i]).sum()
    }

    /// Key-value header followed by a `[confusion]` CSV block whose rows are
    /// true labels and columns predicted labels.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "report_version: {REPORT_VERSION}");
        let _ = writeln!(out, "n_test: {}", self.n_test);
        let _ = writeln!(
            out,
            "mean_per_class_accuracy: {}",
            format_scalar(self.mean_per_class_accuracy)
        );
        let _ = writeln!(out, "false_positives_total: {}", self.false_positives_total);
        let _ = writeln!(out, "classes_scored: {}", self.per_class_accuracy.len());
        let _ = writeln!(out, "excluded_classes: {}", self.excluded_classes.join(";"));
        let _ = writeln!(out, "unseen_labels: {}", self.unseen_labels.join(";"));
        for (label, acc) in &self.per_class_accuracy {
            let _ = writeln!(out, "accuracy[{label}]: {}", format_scalar(*acc));
        }
        out.push_str("\n[confusion]\n");

        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.labels.iter().cloned());
        writer.write_record(&header).expect("in-memory write");
        for (label, row) in self.labels.iter().zip(&self.confusion) {
            let mut record = vec![label.clone()];
            record.extend(row.iter().map(u64::to_string));
            writer.write_record(&record).expect("in-memory write");
        }
        let block = writer.into_inner().expect("in-memory flush");
        out.push_str(std::str::from_utf8(&block).expect("utf-8 labels"));
        out
    }
}

/// Classify every test row (row `i` uses [`row_seed`]`(rng_seed, i)`) and
/// tabulate per-class accuracies and the confusion matrix. Rows run on the
/// current rayon pool; the result does not depend on its size.
pub fn evaluate(test: &FeatureTable, bank: &MemoryBank, rng_seed: u64) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Empty("test set has no rows".into()));
    }
    let predictions: Vec<String> = test
        .rows()
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            classify(&row.values, bank, row_seed(rng_seed, i)).map(|r| r.predicted_label)
        })
        .collect::<Result<_>>()?;

    let bank_labels: BTreeSet<&str> = bank.labels().into_iter().collect();
    let test_labels: BTreeSet<&str> = test.labels().into_iter().collect();
    let labels: Vec<String> = bank_labels
        .union(&test_labels)
        .map(|s| s.to_string())
        .collect();
    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut confusion = vec![vec![0u64; labels.len()]; labels.len()];
    for (row, predicted) in test.rows().iter().zip(&predictions) {
        confusion[index[row.label.as_str()]][index[predicted.as_str()]] += 1;
    }

    let mut per_class_accuracy = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        let total: u64 = confusion[i].iter().sum();
        if total > 0 {
            per_class_accuracy.insert(label.clone(), confusion[i][i] as f64 / total as f64);
        }
    }
    let mean_per_class_accuracy =
        per_class_accuracy.values().sum::<f64>() / per_class_accuracy.len() as f64;
    let correct: u64 = (0..labels.len()).map(|i| confusion[i][i]).sum();

    Ok(EvalReport {
        per_class_accuracy,
        mean_per_class_accuracy,
        false_positives_total: test.len() as u64 - correct,
        n_test: test.len(),
        excluded_classes: bank_labels
            .difference(&test_labels)
            .map(|s| s.to_string())
            .collect(),
        unseen_labels: test_labels
            .difference(&bank_labels)
            .map(|s| s.to_string())
            .collect(),
        confusion,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub k: usize,
    pub accuracy: f64,
}

/// Mean per-class accuracy for each core-pattern count in `k_list`
/// (ascending, duplicates dropped). Every bank and evaluation uses `seed`.
pub fn sweep_core_patterns(
    train: &FeatureTable,
    test: &FeatureTable,
    k_list: &[usize],
    mode: Mode,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if k_list.is_empty() {
        return Err(Error::Empty("k list is empty".into()));
    }
    if k_list.contains(&0) {
        return Err(Error::contract("every k must be at least 1"));
    }
    let mut ks = k_list.to_vec();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter()
        .map(|k| {
            let bank = build_bank(train, k, mode, seed)?;
            let report = evaluate(test, &bank, seed)?;
            Ok(SweepPoint {
                k,
                accuracy: report.mean_per_class_accuracy,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corepatterns::CorePattern;
    use crate::datasetio::FeatureRow;

    fn core(id: u32, class: &str, values: Vec<f64>, mode: Mode) -> CorePattern {
        CorePattern {
            id: CoreId(id),
            class_id: class.into(),
            values: Pattern::new(values, mode).unwrap(),
            member_count: 1,
        }
    }

    fn row(id: &str, label: &str, values: &[f64]) -> FeatureRow {
        FeatureRow {
            id: id.into(),
            label: label.into(),
            values: values.to_vec(),
        }
    }

    #[test]
    fn stored_pattern_classifies_to_itself() {
        let bank = MemoryBank::new(
            3,
            Mode::Real,
            vec![
                core(0, "a", vec![1.0, 2.0, 3.0], Mode::Real),
                core(1, "b", vec![-4.0, 0.5, 1.0], Mode::Real),
            ],
            None,
            1,
        )
        .unwrap();
        let r = classify(&[-4.0, 0.5, 1.0], &bank, 0).unwrap();
        assert_eq!(r.predicted_label, "b");
        assert_eq!(r.min_distance, 0.0);
        assert_eq!(r.tied_candidates, vec![CoreId(1)]);
        assert!(!r.tie_broken_randomly);
        assert!(classify(&[1.0, 2.0], &bank, 0).is_err());
    }

    #[test]
    fn antipodal_patterns_tie() {
        let p = vec![1.0, -1.0, 1.0, 1.0];
        let neg: Vec<f64> = p.iter().map(|v| -v).collect();
        let bank = MemoryBank::new(
            4,
            Mode::Bipolar,
            vec![
                core(0, "A", p, Mode::Bipolar),
                core(1, "B", neg, Mode::Bipolar),
            ],
            Some(vec![0.0; 4]),
            1,
        )
        .unwrap();
        let mut seen = BTreeSet::new();
        for seed in 0..32 {
            let r = classify(&[0.3, 0.2, -0.7, 0.1], &bank, seed).unwrap();
            assert!(r.tie_broken_randomly);
            assert_eq!(r.tied_candidates, vec![CoreId(0), CoreId(1)]);
            assert_eq!(r, classify(&[0.3, 0.2, -0.7, 0.1], &bank, seed).unwrap());
            seen.insert(r.predicted_label);
        }
        assert_eq!(seen.len(), 2);
    }

    /// 3 classes, 9 rows, D = 4. Predictions come from an independent
    /// materialized-matrix distance oracle run outside this crate:
    ///   a: a a b      -> 2/3
    ///   b: b b b c    -> 3/4
    ///   c: c a        -> 1/2
    /// mean = (2/3 + 3/4 + 1/2) / 3 = 23/36, false positives = 3.
    #[test]
    fn hand_computed_report() {
        let bank = MemoryBank::new(
            4,
            Mode::Real,
            vec![
                core(0, "a", vec![4.0, 4.0, 0.0, 0.0], Mode::Real),
                core(1, "b", vec![0.0, 0.0, 4.0, 4.0], Mode::Real),
                core(2, "c", vec![4.0, 0.0, 4.0, 0.0], Mode::Real),
            ],
            None,
            1,
        )
        .unwrap();
        let test = FeatureTable::new(
            4,
            vec![
                row("1", "a", &[3.0, 5.0, 0.0, 1.0]),
                row("2", "a", &[4.0, 3.0, 1.0, 0.0]),
                row("3", "a", &[1.0, 0.0, 4.0, 5.0]),
                row("4", "b", &[0.0, 1.0, 4.0, 3.0]),
                row("5", "b", &[1.0, 0.0, 5.0, 4.0]),
                row("6", "b", &[0.0, 0.0, 3.0, 4.0]),
                row("7", "b", &[5.0, 0.0, 4.0, 1.0]),
                row("8", "c", &[4.0, 1.0, 4.0, 0.0]),
                row("9", "c", &[5.0, 4.0, 1.0, 0.0]),
            ],
        )
        .unwrap();
        let r = evaluate(&test, &bank, 7).unwrap();
        assert!((r.mean_per_class_accuracy - 23.0 / 36.0).abs() < 1e-15);
        assert_eq!(
            r.confusion,
            vec![vec![2, 1, 0], vec![0, 3, 1], vec![1, 0, 1]]
        );
        assert_eq!(r.false_positives_total, 3);
        assert_eq!(r.false_positives_total, r.n_test as u64 - r.trace());

        let doc = r.to_document();
        assert!(doc.starts_with("report_version: 1\nn_test: 9\n"), "{doc}");
        assert!(doc.contains("false_positives_total: 3\n"));
        assert!(
            doc.ends_with("[confusion]\ntrue\\predicted,a,b,c\na,2,1,0\nb,0,3,1\nc,1,0,1\n"),
            "{doc}"
        );
    }

    #[test]
    fn unseen_and_missing_classes() {
        let bank = MemoryBank::new(
            3,
            Mode::Real,
            vec![
                core(0, "a", vec![3.0, 3.0, 0.0], Mode::Real),
                core(1, "b", vec![0.0, 3.0, 3.0], Mode::Real),
            ],
            None,
            1,
        )
        .unwrap();
        let test = FeatureTable::new(
            3,
            vec![
                row("1", "a", &[3.0, 3.0, 0.5]),
                row("2", "z", &[3.0, 3.0, 0.5]),
            ],
        )
        .unwrap();
        let r = evaluate(&test, &bank, 0).unwrap();
        assert_eq!(r.labels, vec!["a", "b", "z"]);
        assert_eq!(r.excluded_classes, vec!["b"]);
        assert_eq!(r.unseen_labels, vec!["z"]);
        assert_eq!(r.per_class_accuracy["z"], 0.0);
        assert_eq!(r.mean_per_class_accuracy, 0.5);
        assert_eq!(r.confusion[2], vec![1, 0, 0]);

        let single = FeatureTable::new(
            3,
            vec![
                row("1", "a", &[3.0, 3.0, 0.5]),
                row("2", "a", &[0.0, 3.0, 3.0]),
            ],
        )
        .unwrap();
        let r = evaluate(&single, &bank, 0).unwrap();
        let nonzero_rows = r
            .confusion
            .iter()
            .filter(|row| row.iter().any(|&c| c > 0))
            .count();
        assert_eq!(nonzero_rows, 1);

        assert!(evaluate(&FeatureTable::new(3, vec![]).unwrap(), &bank, 0).is_err());
    }

    #[test]
    fn sweep_validates_and_orders() {
        let train = FeatureTable::new(
            2,
            (0..12)
                .map(|i| {
                    row(
                        &format!("r{i}"),
                        if i % 2 == 0 { "x" } else { "y" },
                        &[i as f64, (i % 2) as f64 * 5.0],
                    )
                })
                .collect(),
        )
        .unwrap();
        assert!(sweep_core_patterns(&train, &train, &[], Mode::Real, 0).is_err());
        assert!(sweep_core_patterns(&train, &train, &[1, 0], Mode::Real, 0).is_err());
        let curve = sweep_core_patterns(&train, &train, &[8, 1, 4, 2], Mode::Real, 0).unwrap();
        assert_eq!(
            curve.iter().map(|p| p.k).collect::<Vec<_>>(),
            vec![1, 2, 4, 8]
        );

        let bank = build_bank(&train, 1, Mode::Real, 0).unwrap();
        let direct = evaluate(&train, &bank, 0).unwrap();
        let one = sweep_core_patterns(&train, &train, &[1], Mode::Real, 0).unwrap();
        assert_eq!(one[0].accuracy, direct.mean_per_class_accuracy);
    }
}
