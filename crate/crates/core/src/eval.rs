//! Classification metrics: confusion matrix, per-class precision /
//! recall / F1 with support, accuracy, macro and support-weighted
//! averages, plus the text / JSON / heatmap-CSV report emitters.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::OffenseLabel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold and predicted lists differ in length ({gold} vs {pred})")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("label {0} is not in the evaluation labelset")]
    LabelOutsideSet(OffenseLabel),
    #[error("labelset must be non-empty and duplicate-free")]
    BadLabelset,
    #[error("nothing to evaluate")]
    EmptyEvaluation,
}

/// counts[g][p] = number of samples with gold label g predicted as p.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<OffenseLabel>,
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn labels(&self) -> &[OffenseLabel] {
        &self.labels
    }

    pub fn count(&self, gold_idx: usize, pred_idx: usize) -> usize {
        self.counts[gold_idx][pred_idx]
    }

    /// Row sum: number of gold samples of the class.
    pub fn support(&self, gold_idx: usize) -> usize {
        self.counts[gold_idx].iter().sum()
    }

    /// Column sum: number of predictions of the class.
    pub fn predicted(&self, pred_idx: usize) -> usize {
        self.counts.iter().map(|row| row[pred_idx]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|row| row.iter().sum::<usize>()).sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }
}

/// Tally (gold, pred) pairs over an ordered labelset.
pub fn confusion_matrix(
    gold: &[OffenseLabel],
    pred: &[OffenseLabel],
    labelset: &[OffenseLabel],
) -> Result<ConfusionMatrix, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    if labelset.is_empty() {
        return Err(EvalError::BadLabelset);
    }
    for (i, l) in labelset.iter().enumerate() {
        if labelset[..i].contains(l) {
            return Err(EvalError::BadLabelset);
        }
    }
    let index_of = |l: OffenseLabel| -> Result<usize, EvalError> {
        labelset
            .iter()
            .position(|x| *x == l)
            .ok_or(EvalError::LabelOutsideSet(l))
    };
    let n = labelset.len();
    let mut counts = vec![vec![0usize; n]; n];
    for (g, p) in gold.iter().zip(pred) {
        counts[index_of(*g)?][index_of(*p)?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labelset.to_vec(),
        counts,
    })
}

/// Per-class precision, recall, F1, and support. Zero denominators yield
/// zero with the flag set, never an error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: OffenseLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub zero_division: bool,
}

/// 2PR/(P+R), or 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn per_class_prf(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.labels().len())
        .map(|i| {
            let tp = cm.count(i, i);
            let support = cm.support(i);
            let predicted = cm.predicted(i);
            let mut zero_division = false;
            let precision = if predicted > 0 {
                tp as f64 / predicted as f64
            } else {
                zero_division = true;
                0.0
            };
            let recall = if support > 0 {
                tp as f64 / support as f64
            } else {
                zero_division = true;
                0.0
            };
            if precision + recall == 0.0 {
                zero_division = true;
            }
            ClassMetrics {
                label: cm.labels()[i],
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
                zero_division,
            }
        })
        .collect()
}

/// The full report: per-class rows plus accuracy, macro, and
/// support-weighted aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub total_support: usize,
}

/// Macro values are unweighted means; weighted values use support
/// fractions as weights, which makes weighted recall equal accuracy.
pub fn aggregate_metrics(
    per_class: &[ClassMetrics],
    cm: &ConfusionMatrix,
) -> Result<MetricsReport, EvalError> {
    if per_class.len() != cm.labels().len()
        || per_class
            .iter()
            .zip(cm.labels())
            .any(|(m, l)| m.label != *l)
    {
        return Err(EvalError::BadLabelset);
    }
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    let n = per_class.len() as f64;
    let total_f = total as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|m| f(m) * m.support as f64 / total_f)
            .sum::<f64>()
    };
    Ok(MetricsReport {
        per_class: per_class.to_vec(),
        accuracy: cm.trace() as f64 / total_f,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        weighted_f1: weighted(|m| m.f1),
        total_support: total,
    })
}

/// Confusion matrix, per-class metrics, and aggregates in one call.
pub fn evaluate(
    gold: &[OffenseLabel],
    pred: &[OffenseLabel],
    labelset: &[OffenseLabel],
) -> Result<(ConfusionMatrix, MetricsReport), EvalError> {
    let cm = confusion_matrix(gold, pred, labelset)?;
    let per_class = per_class_prf(&cm);
    let report = aggregate_metrics(&per_class, &cm)?;
    Ok((cm, report))
}

/// Aligned plain-text classification report, four decimals, class rows in
/// labelset order followed by Accuracy, Macro Average, Weighted Average.
pub fn classification_report_text(report: &MetricsReport) -> String {
    let mut out = String::new();
    let name_width = report
        .per_class
        .iter()
        .map(|m| m.label.display_name().len())
        .chain(std::iter::once("Weighted Average".len()))
        .max()
        .unwrap_or(16)
        + 2;
    let _ = writeln!(
        out,
        "{:<name_width$}{:>11}{:>11}{:>11}{:>10}",
        "", "Precision", "Recall", "F1-Score", "Support"
    );
    for m in &report.per_class {
        let _ = writeln!(
            out,
            "{:<name_width$}{:>11.4}{:>11.4}{:>11.4}{:>10}",
            m.label.display_name(),
            m.precision,
            m.recall,
            m.f1,
            m.support
        );
    }
    let _ = writeln!(
        out,
        "{:<name_width$}{:>11}{:>11}{:>11.4}{:>10}",
        "Accuracy", "", "", report.accuracy, report.total_support
    );
    let _ = writeln!(
        out,
        "{:<name_width$}{:>11.4}{:>11.4}{:>11.4}{:>10}",
        "Macro Average",
        report.macro_precision,
        report.macro_recall,
        report.macro_f1,
        report.total_support
    );
    let _ = writeln!(
        out,
        "{:<name_width$}{:>11.4}{:>11.4}{:>11.4}{:>10}",
        "Weighted Average",
        report.weighted_precision,
        report.weighted_recall,
        report.weighted_f1,
        report.total_support
    );
    out
}

/// Machine-readable report at full precision.
pub fn classification_report_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Heatmap data: one row per (gold, pred) cell with the count and the
/// row-normalized fraction.
pub fn heatmap_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("gold,pred,count,row_fraction\n");
    for g in 0..cm.labels().len() {
        let support = cm.support(g);
        for p in 0..cm.labels().len() {
            let count = cm.count(g, p);
            let frac = if support > 0 {
                count as f64 / support as f64
            } else {
                0.0
            };
            let _ = writeln!(
                out,
                "{},{},{},{}",
                cm.labels()[g].canonical(),
                cm.labels()[p].canonical(),
                count,
                frac
            );
        }
    }
    out
}

/// Independent brute-force recomputation of every report number straight
/// from the (gold, pred) pairs, bypassing the confusion matrix. Test
/// oracle; kept separate from the production path on purpose.
pub fn brute_force_report(
    gold: &[OffenseLabel],
    pred: &[OffenseLabel],
    labelset: &[OffenseLabel],
) -> MetricsReport {
    let total = gold.len();
    let mut per_class = Vec::with_capacity(labelset.len());
    for &label in labelset {
        let tp = gold
            .iter()
            .zip(pred)
            .filter(|(g, p)| **g == label && **p == label)
            .count();
        let fp = gold
            .iter()
            .zip(pred)
            .filter(|(g, p)| **g != label && **p == label)
            .count();
        let fn_ = gold
            .iter()
            .zip(pred)
            .filter(|(g, p)| **g == label && **p != label)
            .count();
        let support = tp + fn_;
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        per_class.push(ClassMetrics {
            label,
            precision,
            recall,
            f1: f1_score(precision, recall),
            support,
            zero_division: tp + fp == 0 || support == 0 || precision + recall == 0.0,
        });
    }
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    let n = labelset.len() as f64;
    MetricsReport {
        accuracy: correct as f64 / total as f64,
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / n,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / n,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
        weighted_precision: per_class
            .iter()
            .map(|m| m.precision * m.support as f64 / total as f64)
            .sum(),
        weighted_recall: per_class
            .iter()
            .map(|m| m.recall * m.support as f64 / total as f64)
            .sum(),
        weighted_f1: per_class
            .iter()
            .map(|m| m.f1 * m.support as f64 / total as f64)
            .sum(),
        per_class,
        total_support: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language;
    use rand::Rng;
    use OffenseLabel::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let gold = [NotOffensive, NotOffensive, OtherLanguage, OffensiveUntargeted];
        let cm = confusion_matrix(&gold, &gold, Language::Kannada.label_set()).unwrap();
        assert_eq!(cm.trace(), 4);
        assert_eq!(cm.count(0, 0), 2);
        assert_eq!(cm.support(0), 2);
        let report = aggregate_metrics(&per_class_prf(&cm), &cm).unwrap();
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn hand_tallied_three_sample_case() {
        let gold = [NotOffensive, NotOffensive, OtherLanguage];
        let pred = [NotOffensive, OtherLanguage, OtherLanguage];
        let cm = confusion_matrix(&gold, &pred, Language::Kannada.label_set()).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 1), 1);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn single_sample_fills_one_cell() {
        let cm = confusion_matrix(
            &[OffensiveUntargeted],
            &[NotOffensive],
            Language::Tamil.label_set(),
        )
        .unwrap();
        assert_eq!(cm.total(), 1);
        assert_eq!(cm.count(5, 0), 1);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let set = Language::Kannada.label_set();
        assert_eq!(
            confusion_matrix(&[NotOffensive], &[], set).unwrap_err(),
            EvalError::LengthMismatch { gold: 1, pred: 0 }
        );
        assert_eq!(
            confusion_matrix(
                &[OffensiveTargetedInsultOther],
                &[NotOffensive],
                Language::Malayalam.label_set()
            )
            .unwrap_err(),
            EvalError::LabelOutsideSet(OffensiveTargetedInsultOther)
        );
    }

    // The published Kannada Not-Offensive row: F1 via the formula from
    // the rounded printed P and R lands ~6e-5 above the printed 0.7812
    // (the printed triple is internally consistent only at more digits).
    #[test]
    fn f1_identity_on_published_rows() {
        assert!((f1_score(0.8216, 0.7447) - 0.7812).abs() < 1e-4);
        assert!((f1_score(0.8408, 0.9496) - 0.8919).abs() < 5e-5);
        assert!((f1_score(0.9285, 0.8456) - 0.8851).abs() < 5e-5);
    }

    #[test]
    fn macro_precision_of_published_malayalam_row() {
        let ps = [0.9875, 0.8408, 0.5926, 0.5217, 0.6897];
        let macro_p: f64 = ps.iter().sum::<f64>() / ps.len() as f64;
        assert!((macro_p - 0.7265).abs() < 1e-4);
    }

    #[test]
    fn zero_true_positives_give_flagged_zeros() {
        // One OTO sample predicted as NO and one NO predicted as OTO:
        // OTO has no true positives, so all three metrics are 0.
        let gold = [OffensiveTargetedInsultOther, NotOffensive];
        let pred = [NotOffensive, OffensiveTargetedInsultOther];
        let cm = confusion_matrix(&gold, &pred, Language::Tamil.label_set()).unwrap();
        let metrics = per_class_prf(&cm);
        let oto = metrics
            .iter()
            .find(|m| m.label == OffensiveTargetedInsultOther)
            .unwrap();
        assert_eq!((oto.precision, oto.recall, oto.f1), (0.0, 0.0, 0.0));
        assert!(oto.zero_division);
    }

    #[test]
    fn absent_class_is_all_zero_with_flag() {
        let gold = [NotOffensive, NotOffensive];
        let cm = confusion_matrix(&gold, &gold, Language::Kannada.label_set()).unwrap();
        let metrics = per_class_prf(&cm);
        let ou = metrics.iter().find(|m| m.label == OffensiveUntargeted).unwrap();
        assert_eq!((ou.precision, ou.recall, ou.f1, ou.support), (0.0, 0.0, 0.0, 0));
        assert!(ou.zero_division);
    }

    fn random_instance(seed: u64, max_classes: usize, max_samples: usize) -> (Vec<OffenseLabel>, Vec<OffenseLabel>, Vec<OffenseLabel>) {
        let mut rng = crate::rng::substream(seed, "eval-random-instance");
        let k = rng.gen_range(2..=max_classes);
        let labelset: Vec<OffenseLabel> = OffenseLabel::ALL[..k].to_vec();
        let n = rng.gen_range(1..=max_samples);
        let gold: Vec<OffenseLabel> = (0..n).map(|_| labelset[rng.gen_range(0..k)]).collect();
        let pred: Vec<OffenseLabel> = (0..n).map(|_| labelset[rng.gen_range(0..k)]).collect();
        (gold, pred, labelset)
    }

    #[test]
    fn matches_brute_force_oracle_on_random_instances() {
        for seed in 0..100 {
            let (gold, pred, labelset) = random_instance(seed, 6, 200);
            let (_, report) = evaluate(&gold, &pred, &labelset).unwrap();
            let oracle = brute_force_report(&gold, &pred, &labelset);
            let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
            assert!(close(report.accuracy, oracle.accuracy));
            assert!(close(report.macro_precision, oracle.macro_precision));
            assert!(close(report.macro_recall, oracle.macro_recall));
            assert!(close(report.macro_f1, oracle.macro_f1));
            assert!(close(report.weighted_precision, oracle.weighted_precision));
            assert!(close(report.weighted_recall, oracle.weighted_recall));
            assert!(close(report.weighted_f1, oracle.weighted_f1));
            for (a, b) in report.per_class.iter().zip(&oracle.per_class) {
                assert_eq!(a.label, b.label);
                assert_eq!(a.support, b.support);
                assert!(close(a.precision, b.precision));
                assert!(close(a.recall, b.recall));
                assert!(close(a.f1, b.f1));
            }
        }
    }

    #[test]
    fn weighted_recall_equals_accuracy() {
        for seed in 100..120 {
            let (gold, pred, labelset) = random_instance(seed, 6, 120);
            let (_, report) = evaluate(&gold, &pred, &labelset).unwrap();
            assert!((report.weighted_recall - report.accuracy).abs() < 1e-12);
        }
    }

    #[test]
    fn micro_averages_collapse_to_accuracy() {
        let (gold, pred, labelset) = random_instance(7, 6, 150);
        let cm = confusion_matrix(&gold, &pred, &labelset).unwrap();
        let tp: usize = cm.trace();
        let fp: usize = (0..labelset.len()).map(|i| cm.predicted(i) - cm.count(i, i)).sum();
        let fn_: usize = (0..labelset.len()).map(|i| cm.support(i) - cm.count(i, i)).sum();
        let micro_p = tp as f64 / (tp + fp) as f64;
        let micro_r = tp as f64 / (tp + fn_) as f64;
        let accuracy = tp as f64 / cm.total() as f64;
        assert!((micro_p - accuracy).abs() < 1e-12);
        assert!((micro_r - accuracy).abs() < 1e-12);
    }

    #[test]
    fn metrics_invariant_under_pair_permutation() {
        let (mut gold, mut pred, labelset) = random_instance(13, 6, 100);
        let (_, before) = evaluate(&gold, &pred, &labelset).unwrap();
        // Reverse both lists in lockstep.
        gold.reverse();
        pred.reverse();
        let (_, after) = evaluate(&gold, &pred, &labelset).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn f1_lies_between_min_and_max_of_p_and_r() {
        for seed in 200..230 {
            let (gold, pred, labelset) = random_instance(seed, 6, 80);
            let (cm, _) = evaluate(&gold, &pred, &labelset).unwrap();
            for m in per_class_prf(&cm) {
                if m.precision > 0.0 && m.recall > 0.0 {
                    let lo = m.precision.min(m.recall);
                    let hi = m.precision.max(m.recall);
                    assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);
                    let harmonic = 2.0 / (1.0 / m.precision + 1.0 / m.recall);
                    assert!((m.f1 - harmonic).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn report_text_has_class_rows_and_three_summary_rows() {
        let gold = [NotOffensive, OtherLanguage, OffensiveUntargeted];
        let (_, report) = evaluate(&gold, &gold, Language::Kannada.label_set()).unwrap();
        let text = classification_report_text(&report);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 6 + 3);
        assert!(lines[1].starts_with("Not Offensive"));
        assert!(lines[7].starts_with("Accuracy"));
        assert!(lines[8].starts_with("Macro Average"));
        assert!(lines[9].starts_with("Weighted Average"));
        assert!(text.contains("1.0000"));

        let mal_gold = [NotOffensive, OtherLanguage];
        let (_, mal_report) = evaluate(&mal_gold, &mal_gold, Language::Malayalam.label_set()).unwrap();
        let mal_text = classification_report_text(&mal_report);
        assert_eq!(mal_text.lines().count(), 1 + 5 + 3);
        assert!(!mal_text.contains("Offensive Targeted Others"));
    }

    #[test]
    fn heatmap_has_squared_labelset_rows() {
        let gold = [NotOffensive, OtherLanguage];
        let (cm, _) = evaluate(&gold, &gold, Language::Malayalam.label_set()).unwrap();
        let csv = heatmap_csv(&cm);
        assert_eq!(csv.lines().count(), 1 + 25);
        assert!(csv.starts_with("gold,pred,count,row_fraction"));
        assert!(csv.contains("Not_offensive,Not_offensive,1,1"));
    }

    #[test]
    fn json_report_round_trips_numbers() {
        let gold = [NotOffensive, OtherLanguage, NotOffensive];
        let pred = [NotOffensive, NotOffensive, OtherLanguage];
        let (_, report) = evaluate(&gold, &pred, Language::Kannada.label_set()).unwrap();
        let json = classification_report_json(&report);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["total_support"], 3);
        assert!((value["accuracy"].as_f64().unwrap() - report.accuracy).abs() < 1e-15);
    }
}
