//! Label-based mean accuracy and F1.
//!
//! Binary attributes contribute one column (class 1 is positive). An attribute
//! with `K > 2` classes is expanded one-vs-rest into `K` columns. A recall,
//! precision or F1 whose denominator is zero counts as 0 and its column is
//! flagged, so every column keeps equal weight in the averages.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::AttributeSpec;
use crate::error::{Error, Result};

/// Column names plus a `[samples][columns]` boolean matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<bool>>,
}

pub fn binarize(class_indices: &[Vec<usize>], specs: &[AttributeSpec]) -> Result<BinaryMatrix> {
    let mut columns = Vec::new();
    for s in specs {
        if s.num_classes == 2 {
            columns.push(s.name.clone());
        } else {
            columns.extend((0..s.num_classes).map(|k| format!("{}={k}", s.name)));
        }
    }
    let mut rows = Vec::with_capacity(class_indices.len());
    for (r, sample) in class_indices.iter().enumerate() {
        if sample.len() != specs.len() {
            return Err(Error::Input(format!(
                "row {r} has {} attribute values, expected {}",
                sample.len(),
                specs.len()
            )));
        }
        let mut row = Vec::with_capacity(columns.len());
        for (&y, s) in sample.iter().zip(specs) {
            if y >= s.num_classes {
                return Err(Error::Input(format!(
                    "row {r}: class {y} invalid for attribute '{}' with {} classes",
                    s.name, s.num_classes
                )));
            }
            if s.num_classes == 2 {
                row.push(y == 1);
            } else {
                row.extend((0..s.num_classes).map(|k| k == y));
            }
        }
        rows.push(row);
    }
    Ok(BinaryMatrix { columns, rows })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(pred: &[Vec<bool>], label: &[Vec<bool>]) -> Result<Vec<ConfusionCounts>> {
    if pred.len() != label.len() {
        return Err(Error::shape("confusion", &[pred.len()], &[label.len()]));
    }
    let cols = label.first().map(Vec::len).unwrap_or(0);
    let mut counts = vec![ConfusionCounts::default(); cols];
    for (p, l) in pred.iter().zip(label) {
        if p.len() != cols || l.len() != cols {
            return Err(Error::shape("confusion", &[p.len()], &[l.len()]));
        }
        for (c, (&pv, &lv)) in counts.iter_mut().zip(p.iter().zip(l)) {
            match (pv, lv) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
    }
    Ok(counts)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMetrics {
    pub name: String,
    pub counts: ConfusionCounts,
    pub recall_pos: f64,
    pub recall_neg: f64,
    pub precision: f64,
    pub f1: f64,
    /// Mean of the two recalls.
    pub balanced_accuracy: f64,
    pub undefined: Vec<String>,
}

impl ColumnMetrics {
    pub fn from_counts(name: impl Into<String>, c: ConfusionCounts) -> Self {
        let mut undefined = Vec::new();
        let mut or_flag = |v: Option<f64>, what: &str| {
            v.unwrap_or_else(|| {
                undefined.push(what.to_string());
                0.0
            })
        };
        let recall_pos = or_flag(ratio(c.tp, c.tp + c.fn_), "recall_pos");
        let recall_neg = or_flag(ratio(c.tn, c.tn + c.fp), "recall_neg");
        let precision = or_flag(ratio(c.tp, c.tp + c.fp), "precision");
        // 2PR/(P+R) in count form, one rounding.
        let f1 = if c.tp == 0 {
            undefined.push("f1".to_string());
            0.0
        } else {
            (2 * c.tp) as f64 / (2 * c.tp + c.fp + c.fn_) as f64
        };
        Self {
            name: name.into(),
            counts: c,
            recall_pos,
            recall_neg,
            precision,
            f1,
            balanced_accuracy: (recall_pos + recall_neg) / 2.0,
            undefined,
        }
    }
}

/// `(1/2A) Σ (TP/(TP+FN) + TN/(TN+FP))`, zero-denominator terms as 0.
pub fn mean_accuracy(counts: &[ConfusionCounts]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let sum: f64 = counts
        .iter()
        .map(|c| ratio(c.tp, c.tp + c.fn_).unwrap_or(0.0) + ratio(c.tn, c.tn + c.fp).unwrap_or(0.0))
        .sum();
    sum / (2.0 * counts.len() as f64)
}

/// Per-column F1 and their mean.
pub fn f1_scores(counts: &[ConfusionCounts]) -> (Vec<f64>, f64) {
    let per: Vec<f64> = counts.iter().map(|&c| ColumnMetrics::from_counts("", c).f1).collect();
    let mean = if per.is_empty() { 0.0 } else { per.iter().sum::<f64>() / per.len() as f64 };
    (per, mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_columns: usize,
    pub num_samples: usize,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
    pub columns: Vec<ColumnMetrics>,
    /// Columns with at least one undefined term.
    pub flagged: Vec<String>,
}

impl MetricsReport {
    pub fn from_binary(pred: &BinaryMatrix, label: &BinaryMatrix) -> Result<Self> {
        if pred.columns != label.columns {
            return Err(Error::Input("prediction and label columns differ".into()));
        }
        let counts = confusion(&pred.rows, &label.rows)?;
        let columns: Vec<ColumnMetrics> = label
            .columns
            .iter()
            .zip(&counts)
            .map(|(n, &c)| ColumnMetrics::from_counts(n.clone(), c))
            .collect();
        let (_, mean_f1) = f1_scores(&counts);
        Ok(Self {
            num_columns: columns.len(),
            num_samples: label.rows.len(),
            mean_accuracy: mean_accuracy(&counts),
            mean_f1,
            flagged: columns.iter().filter(|c| !c.undefined.is_empty()).map(|c| c.name.clone()).collect(),
            columns,
        })
    }

    /// Binarizes class predictions and labels, then scores them.
    pub fn from_classes(pred: &[Vec<usize>], label: &[Vec<usize>], specs: &[AttributeSpec]) -> Result<Self> {
        Self::from_binary(&binarize(pred, specs)?, &binarize(label, specs)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per column plus a final aggregate row holding mA and mean F1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("attribute,recall_pos,recall_neg,precision,f1,mean_accuracy\n");
        for c in &self.columns {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.name, c.recall_pos, c.recall_neg, c.precision, c.f1, c.balanced_accuracy
            );
        }
        let _ = writeln!(out, "ALL,,,,{},{}", self.mean_f1, self.mean_accuracy);
        out
    }
}

/// Fraction of samples whose predicted class matches, per attribute.
pub fn per_attribute_accuracy(pred: &[Vec<usize>], label: &[Vec<usize>], num_attributes: usize) -> Vec<f64> {
    (0..num_attributes)
        .map(|a| {
            let hits = pred.iter().zip(label).filter(|(p, l)| p[a] == l[a]).count();
            if label.is_empty() {
                0.0
            } else {
                hits as f64 / label.len() as f64
            }
        })
        .collect()
}
