//! Confusion matrix, accuracy, per-category precision and recall.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::signal::RhythmCategory;

/// Rows are true categories, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Shape(format!("{} counts for a {k}x{k} matrix", counts.len())));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn categories(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.k).map(|j| self.get(truth, j)).sum()
    }

    pub fn column_sum(&self, predicted: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, predicted)).sum()
    }

    /// Matrix as CSV with category symbols on both axes (`true\pred` corner).
    pub fn to_csv(&self) -> String {
        let sym = |i: usize| RhythmCategory::from_index(i).map_or_else(|| i.to_string(), |c| c.to_string());
        let mut out = String::from("true\\pred");
        for j in 0..self.k {
            let _ = write!(out, ",{}", sym(j));
        }
        out.push('\n');
        for i in 0..self.k {
            out.push_str(&sym(i));
            for j in 0..self.k {
                let _ = write!(out, ",{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies `(label, pred)` pairs into a `k × k` matrix.
pub fn confusion(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut m = ConfusionMatrix::new(k);
    for (&p, &l) in preds.iter().zip(labels) {
        for v in [p, l] {
            if v >= k {
                return Err(Error::LabelOutOfRange { label: v, classes: k });
            }
        }
        m.counts[l * k + p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Set where the predicted-column sum is zero; precision is then reported as 0.
    pub precision_undefined: Vec<bool>,
    /// Set where the true-row sum is zero; recall is then reported as 0.
    pub recall_undefined: Vec<bool>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Accuracy is 0 for an empty matrix.
pub fn metrics(m: &ConfusionMatrix) -> Metrics {
    let (accuracy, _) = ratio(m.trace(), m.total());
    let (precision, precision_undefined) = (0..m.k).map(|j| ratio(m.get(j, j), m.column_sum(j))).unzip();
    let (recall, recall_undefined) = (0..m.k).map(|i| ratio(m.get(i, i), m.row_sum(i))).unzip();
    Metrics {
        accuracy,
        precision,
        recall,
        precision_undefined,
        recall_undefined,
    }
}

/// Fraction of matching entries.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / preds.len() as f64)
}

/// Per-category block (`category,precision,recall,undefined`) after the accuracy line.
pub fn metrics_csv(m: &Metrics) -> String {
    let mut out = format!("accuracy,{:.6}\ncategory,precision,recall,undefined\n", m.accuracy);
    for k in 0..m.precision.len() {
        let sym = RhythmCategory::from_index(k).map_or_else(|| k.to_string(), |c| c.to_string());
        let flag = match (m.precision_undefined[k], m.recall_undefined[k]) {
            (true, true) => "precision;recall",
            (true, false) => "precision",
            (false, true) => "recall",
            (false, false) => "",
        };
        let _ = writeln!(out, "{sym},{:.6},{:.6},{flag}", m.precision[k], m.recall[k]);
    }
    out
}

/// Human-readable summary: matrix (rows true, columns predicted) and metrics.
pub fn text_report(m: &ConfusionMatrix) -> String {
    let met = metrics(m);
    let sym = |i: usize| RhythmCategory::from_index(i).map_or_else(|| i.to_string(), |c| c.to_string());
    let mut out = String::from("confusion matrix (rows: true, columns: predicted)\n      ");
    for j in 0..m.k {
        let _ = write!(out, "{:>8}", sym(j));
    }
    out.push('\n');
    for i in 0..m.k {
        let _ = write!(out, "{:>6}", sym(i));
        for j in 0..m.k {
            let _ = write!(out, "{:>8}", m.get(i, j));
        }
        out.push('\n');
    }
    let _ = writeln!(out, "accuracy {:.4} ({} of {})", met.accuracy, m.trace(), m.total());
    for k in 0..m.k {
        let mark = |u: bool| if u { " (undefined)" } else { "" };
        let _ = writeln!(
            out,
            "{}: precision {:.4}{} recall {:.4}{}",
            sym(k),
            met.precision[k],
            mark(met.precision_undefined[k]),
            met.recall[k],
            mark(met.recall_undefined[k])
        );
    }
    out
}
