//! Confusion matrices, per-class and averaged F1, and one-vs-rest ROC.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("ROC needs at least one positive and one negative sample")]
    SingleClass,
    #[error("probability row {row} has {found} columns, expected {expected}")]
    RowWidth { row: usize, found: usize, expected: usize },
    #[error("probability row {row} sums to {sum}, not 1")]
    RowSum { row: usize, sum: f64 },
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum::<u64>() - self.true_positives(class)
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        self.support(class) - self.true_positives(class)
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        self.class_names = names;
        self
    }

    /// CSV with a header row and a leading column of class names.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.class_names.iter().cloned());
        writer.write_record(&header)?;
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            let mut record = vec![name.clone()];
            record.extend(row.iter().map(u64::to_string));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| i.to_string()).collect()
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for label in [t, p] {
            if label >= num_classes {
                return Err(EvalError::LabelOutOfRange {
                    label,
                    classes: num_classes,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: default_names(num_classes),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision `TP/(TP+FP)`, recall `TP/(TP+FN)` and `F = 2PR/(P+R)` per class,
/// each 0 when its denominator is 0. Macro averages divide by all K classes.
pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let k = cm.num_classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.true_positives(c);
            let precision = ratio(tp, tp + cm.false_positives(c));
            let recall = ratio(tp, tp + cm.false_negatives(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                name: cm.class_names.get(c).cloned().unwrap_or_else(|| c.to_string()),
                precision,
                recall,
                f1,
                support: cm.support(c),
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if k == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / k as f64
        }
    };
    let tp: u64 = (0..k).map(|c| cm.true_positives(c)).sum();
    let fp: u64 = (0..k).map(|c| cm.false_positives(c)).sum();
    let fn_: u64 = (0..k).map(|c| cm.false_negatives(c)).sum();
    let micro_p = ratio(tp, tp + fp);
    let micro_r = ratio(tp, tp + fn_);
    let micro_f1 = if micro_p + micro_r == 0.0 {
        0.0
    } else {
        2.0 * micro_p * micro_r / (micro_p + micro_r)
    };
    MetricsReport {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        micro_f1,
        accuracy: ratio(tp, cm.total()),
        total: cm.total(),
        per_class,
    }
}

/// Convenience: macro-F1 straight from label lists.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64, EvalError> {
    Ok(metrics(&confusion(y_true, y_pred, num_classes)?).macro_f1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Samples scoring at least this are predicted positive. The first point uses +inf.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["threshold", "fpr", "tpr"])?;
        for p in &self.points {
            writer.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Threshold sweep over distinct scores, descending. Equal scores form a
/// single step, so the trapezoidal AUC equals the Mann-Whitney statistic.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<RocCurve, EvalError> {
    if scores.len() != positives.len() {
        return Err(EvalError::LengthMismatch {
            truth: positives.len(),
            pred: scores.len(),
        });
    }
    let n_pos = positives.iter().filter(|&&p| p).count() as u64;
    let n_neg = positives.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    // Twice the area in units of one positive-negative pair.
    let mut doubled_area: u128 = 0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (prev_tp, prev_fp) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled_area += (fp - prev_fp) as u128 * (tp + prev_tp) as u128;
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    let auc = doubled_area as f64 / (2 * n_pos as u128 * n_neg as u128) as f64;
    Ok(RocCurve { points, auc })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvrRoc {
    /// `None` for classes without positives (or without negatives).
    pub curves: Vec<Option<RocCurve>>,
    pub warnings: Vec<String>,
}

impl OvrRoc {
    pub fn aucs(&self) -> Vec<Option<f64>> {
        self.curves.iter().map(|c| c.as_ref().map(|c| c.auc)).collect()
    }
}

/// One-vs-rest ROC per class, scoring with that class's probability column.
pub fn ovr_roc(proba: &[Vec<f64>], y_true: &[usize], num_classes: usize) -> Result<OvrRoc, EvalError> {
    if proba.len() != y_true.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            pred: proba.len(),
        });
    }
    for (row, p) in proba.iter().enumerate() {
        if p.len() != num_classes {
            return Err(EvalError::RowWidth {
                row,
                found: p.len(),
                expected: num_classes,
            });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(EvalError::RowSum { row, sum });
        }
    }
    if let Some(&label) = y_true.iter().find(|&&y| y >= num_classes) {
        return Err(EvalError::LabelOutOfRange {
            label,
            classes: num_classes,
        });
    }
    let mut result = OvrRoc {
        curves: Vec::with_capacity(num_classes),
        warnings: Vec::new(),
    };
    for class in 0..num_classes {
        let scores: Vec<f64> = proba.iter().map(|p| p[class]).collect();
        let positives: Vec<bool> = y_true.iter().map(|&y| y == class).collect();
        match roc_curve(&scores, &positives) {
            Ok(curve) => result.curves.push(Some(curve)),
            Err(_) => {
                result
                    .warnings
                    .push(format!("class {class}: no positive or no negative samples, curve omitted"));
                result.curves.push(None);
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn confusion_counts() {
        let cm = confusion(&[0, 1], &[0, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0], vec![0, 1]]);
        let cm = confusion(&[0, 0, 1], &[1, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 2], vec![0, 1]]);
        let cm = confusion(&[], &[], 3).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(
            confusion(&[0, 3], &[0, 0], 3),
            Err(EvalError::LabelOutOfRange { label: 3, classes: 3 })
        );
        assert!(matches!(confusion(&[0], &[], 2), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn hand_evaluated_metrics() {
        let cm = confusion(&[0, 0, 1], &[1, 1, 1], 2).unwrap();
        let m = metrics(&cm);
        assert_eq!(m.per_class[0].precision, 0.0);
        assert!((m.per_class[1].precision - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class[0].recall, 0.0);
        assert_eq!(m.per_class[1].recall, 1.0);
        assert_eq!(m.per_class[0].f1, 0.0);
        assert!((m.per_class[1].f1 - 0.5).abs() < 1e-15);
        assert!((m.macro_f1 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1];
        let m = metrics(&confusion(&y, &y, 3).unwrap());
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn zero_support_class_counts_in_macro_average() {
        let m = metrics(&confusion(&[0, 1], &[0, 1], 4).unwrap());
        assert_eq!(m.macro_f1, 0.5);
    }

    #[test]
    fn roc_edge_cases() {
        let perfect = roc_curve(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(perfect.auc, 1.0);
        assert_eq!(perfect.points.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(perfect.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        let flat = roc_curve(&[0.4; 5], &[true, false, true, false, false]).unwrap();
        assert_eq!(flat.auc, 0.5);
        assert_eq!(flat.points.len(), 2);
        assert_eq!(roc_curve(&[0.1, 0.2], &[true, true]), Err(EvalError::SingleClass));
    }

    #[test]
    fn auc_equals_mann_whitney() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scores: Vec<f64> = (0..300).map(|_| (rng.random::<f64>() * 10.0).floor()).collect();
        let labels: Vec<bool> = (0..300).map(|_| rng.random::<bool>()).collect();
        let curve = roc_curve(&scores, &labels).unwrap();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..300 {
            for j in 0..300 {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((curve.auc - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn ovr_symmetry_and_missing_class() {
        let proba = vec![vec![0.8, 0.2], vec![0.3, 0.7], vec![0.55, 0.45], vec![0.1, 0.9]];
        let y = [0, 1, 1, 0];
        let roc = ovr_roc(&proba, &y, 2).unwrap();
        let aucs = roc.aucs();
        assert!((aucs[0].unwrap() - aucs[1].unwrap()).abs() < 1e-15);

        let proba3 = vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.7, 0.1]];
        let roc = ovr_roc(&proba3, &[0, 1], 3).unwrap();
        assert!(roc.curves[2].is_none());
        assert_eq!(roc.warnings.len(), 1);
        assert!(matches!(
            ovr_roc(&[vec![0.5, 0.6]], &[0], 2),
            Err(EvalError::RowSum { .. })
        ));
    }

    #[test]
    fn csv_outputs() {
        let cm = confusion(&[0, 1, 1], &[0, 1, 0], 2)
            .unwrap()
            .with_class_names(vec!["E".into(), "H".into()]);
        let mut buf = Vec::new();
        cm.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), ",E,H\nE,1,0\nH,1,1\n");
        let curve = roc_curve(&[0.9, 0.1], &[true, false]).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<(f64, f64, f64)> = reader.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows[0], (f64::INFINITY, 0.0, 0.0));
        assert_eq!(rows.len(), 3);
    }

    proptest! {
        #[test]
        fn permutation_invariance(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60), shift in 1usize..4) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let perm = |c: usize| (c + shift) % 4;
            let a = metrics(&confusion(&t, &p, 4).unwrap());
            let tp: Vec<usize> = t.iter().map(|&c| perm(c)).collect();
            let pp: Vec<usize> = p.iter().map(|&c| perm(c)).collect();
            let b = metrics(&confusion(&tp, &pp, 4).unwrap());
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            prop_assert!((a.micro_f1 - a.accuracy).abs() < 1e-12);
            for m in &a.per_class {
                prop_assert!((0.0..=1.0).contains(&m.f1));
            }
        }

        #[test]
        fn auc_monotone_invariance(data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..80)) {
            let (s, l): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let a = roc_curve(&s, &l).unwrap().auc;
            let transformed: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            let b = roc_curve(&transformed, &l).unwrap().auc;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
