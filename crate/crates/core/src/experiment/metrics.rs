//! Classification metrics, confusion matrices, and multi-run aggregation.

use crate::error::{Error, Result};
use crate::nn::loss::softmax_rows;
use crate::tensor::Tensor;

use super::RunReport;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub acc1: f64,
    pub acc5: f64,
    pub precision: f64,
    pub recall: f64,
    pub weighted_f1: f64,
}

impl Metrics {
    pub fn in_unit_range(&self) -> bool {
        [self.acc1, self.acc5, self.precision, self.recall, self.weighted_f1]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }
}

/// Rank of the true class among the logits: the number of classes scoring
/// strictly higher, plus lower-indexed ties. The true label is inside the
/// top k exactly when its rank is below k, which breaks ties toward lower
/// class indices.
fn rank_of(row: &[f32], true_class: usize) -> usize {
    let t = row[true_class];
    let mut rank = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > t || (v == t && j < true_class) {
            rank += 1;
        }
    }
    rank
}

/// Predicted class: the highest logit, lower index on ties.
pub fn argmax_class(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Accumulates per-batch logits into split-level metrics.
pub struct MetricAccum {
    num_classes: usize,
    confusion: Vec<Vec<usize>>,
    top5_hits: usize,
    loss_sum: f64,
    n: usize,
}

impl MetricAccum {
    pub fn new(num_classes: usize) -> Self {
        MetricAccum {
            num_classes,
            confusion: vec![vec![0; num_classes]; num_classes],
            top5_hits: 0,
            loss_sum: 0.0,
            n: 0,
        }
    }

    /// Feed one batch of logits (B, C) with true labels. Loss contribution
    /// is summed as plain one-hot cross-entropy over the batch.
    pub fn add_batch(&mut self, logits: &Tensor<f32>, labels: &[usize]) -> Result<()> {
        let s = logits.shape();
        if s.len() != 2 || s[0] != labels.len() || s[1] != self.num_classes {
            return Err(Error::shape(
                "metrics",
                format!("logits {s:?} against {} labels, {} classes", labels.len(), self.num_classes),
            ));
        }
        let probs = softmax_rows(logits)?;
        let c = self.num_classes;
        for (i, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(Error::invalid("metrics", format!("label {label} outside 0..{c}")));
            }
            let row = &logits.data()[i * c..(i + 1) * c];
            self.confusion[label][argmax_class(row)] += 1;
            if rank_of(row, label) < 5.min(c) {
                self.top5_hits += 1;
            }
            self.loss_sum -= (probs.data()[i * c + label] as f64).max(1e-300).ln();
            self.n += 1;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<EvalOut> {
        if self.n == 0 {
            return Err(Error::invalid("metrics", "empty split"));
        }
        let mut warnings = Vec::new();
        let acc5 = if self.num_classes < 5 {
            warnings.push(format!(
                "acc@5 is trivially 1.0 with {} classes; reported as 1.0",
                self.num_classes
            ));
            1.0
        } else {
            self.top5_hits as f64 / self.n as f64
        };
        let (metrics, confusion) = metrics_from_confusion(self.confusion, acc5);
        Ok(EvalOut { metrics, confusion, mean_loss: self.loss_sum / self.n as f64, warnings })
    }
}

#[derive(Debug)]
pub struct EvalOut {
    pub metrics: Metrics,
    /// Rows are true classes, columns predicted.
    pub confusion: Vec<Vec<usize>>,
    pub mean_loss: f64,
    pub warnings: Vec<String>,
}

/// One-vs-rest precision/recall/F1 from a confusion matrix, with 0/0 read
/// as 0, weighted by class support. Accuracy is the trace over the total.
fn metrics_from_confusion(confusion: Vec<Vec<usize>>, acc5: f64) -> (Metrics, Vec<Vec<usize>>) {
    let c = confusion.len();
    let n: usize = confusion.iter().map(|r| r.iter().sum::<usize>()).sum();
    let mut trace = 0usize;
    let (mut precision, mut recall, mut weighted_f1) = (0.0, 0.0, 0.0);
    for class in 0..c {
        let tp = confusion[class][class];
        trace += tp;
        let support: usize = confusion[class].iter().sum();
        let predicted: usize = (0..c).map(|r| confusion[r][class]).sum();
        let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let r = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let weight = support as f64 / n as f64;
        precision += weight * p;
        recall += weight * r;
        weighted_f1 += weight * f1;
    }
    let metrics = Metrics { acc1: trace as f64 / n as f64, acc5, precision, recall, weighted_f1 };
    (metrics, confusion)
}

/// Metrics for a full split's logits in one call.
pub fn classification_metrics(logits: &Tensor<f32>, labels: &[usize], num_classes: usize) -> Result<EvalOut> {
    let mut acc = MetricAccum::new(num_classes);
    acc.add_batch(logits, labels)?;
    acc.finish()
}

pub fn confusion_csv(confusion: &[Vec<usize>]) -> String {
    let c = confusion.len();
    let mut out = String::from("true\\pred");
    for j in 0..c {
        out.push_str(&format!(",{j}"));
    }
    out.push('\n');
    for (i, row) in confusion.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------

/// Mean and sample standard deviation (n−1 denominator; 0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// "45.8±6.5"-style cell from fractional mean/std.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.1}±{:.1}", mean * 100.0, std * 100.0)
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub languages: String,
    pub runs: usize,
    /// (metric name, mean, sample std), as fractions.
    pub rows: Vec<(String, f64, f64)>,
}

impl Aggregate {
    pub fn text_table(&self) -> String {
        let header: Vec<String> = ["model", "languages"]
            .into_iter()
            .map(str::to_string)
            .chain(self.rows.iter().map(|(m, _, _)| m.clone()))
            .collect();
        let cells: Vec<String> = [self.model.clone(), self.languages.clone()]
            .into_iter()
            .chain(self.rows.iter().map(|&(_, m, s)| format_cell(m, s)))
            .collect();
        let widths: Vec<usize> =
            header.iter().zip(&cells).map(|(h, c)| h.len().max(c.len())).collect();
        let mut out = String::new();
        for (h, w) in header.iter().zip(&widths) {
            out.push_str(&format!("{h:<w$}  "));
        }
        out.push('\n');
        for (c, w) in cells.iter().zip(&widths) {
            out.push_str(&format!("{c:<w$}  "));
        }
        out.push('\n');
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,languages,metric,mean,std\n");
        for (metric, mean, std) in &self.rows {
            out.push_str(&format!("{},{},{metric},{mean},{std}\n", self.model, self.languages));
        }
        out
    }
}

pub fn aggregate(reports: &[RunReport]) -> Result<Aggregate> {
    if reports.len() < 2 {
        return Err(Error::invalid(
            "aggregate",
            format!("need at least 2 reports, got {}", reports.len()),
        ));
    }
    let first = &reports[0];
    for r in &reports[1..] {
        if r.model_label != first.model_label || r.languages != first.languages {
            return Err(Error::invalid(
                "aggregate",
                format!(
                    "reports mix configurations: {} on {} vs {} on {}",
                    first.model_label, first.languages, r.model_label, r.languages
                ),
            ));
        }
    }
    let pull = |f: fn(&Metrics) -> f64| -> Vec<f64> { reports.iter().map(|r| f(&r.test)).collect() };
    let rows = vec![
        ("acc@1", pull(|m| m.acc1)),
        ("acc@5", pull(|m| m.acc5)),
        ("precision", pull(|m| m.precision)),
        ("recall", pull(|m| m.recall)),
        ("f1", pull(|m| m.weighted_f1)),
    ];
    Ok(Aggregate {
        model: first.model_label.clone(),
        languages: first.languages.clone(),
        runs: reports.len(),
        rows: rows
            .into_iter()
            .map(|(name, xs)| {
                let (m, s) = mean_std(&xs);
                (name.to_string(), m, s)
            })
            .collect(),
    })
}
