//! Confusion matrices, per-class precision/recall/F1, and their CSV and
//! text renderings.

use std::fmt::Write as _;

use super::LabelSet;
use crate::error::{LidError, Result};

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if let Some(row) = counts.iter().find(|r| r.len() != k) {
            return Err(LidError::dims("confusion matrix", &[k, k], &[k, row.len()]));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn support(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    /// Element-wise sum, for merging evaluation shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(LidError::dims(
                "confusion merge",
                &[self.num_classes()],
                &[other.num_classes()],
            ));
        }
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        Ok(())
    }
}

/// Counts `(true, predicted)` class-index pairs.
pub fn build_confusion(pairs: &[(usize, usize)], num_classes: usize) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::zeros(num_classes);
    for &(t, p) in pairs {
        if t >= num_classes || p >= num_classes {
            return Err(LidError::Contract(format!(
                "label pair ({t}, {p}) outside {num_classes} classes"
            )));
        }
        m.counts[t][p] += 1;
    }
    Ok(m)
}

/// Counts `(true, predicted)` ISO code pairs.
pub fn build_confusion_codes(pairs: &[(&str, &str)], labels: &LabelSet) -> Result<ConfusionMatrix> {
    let index = |code: &str| {
        labels
            .index(code)
            .ok_or_else(|| LidError::Contract(format!("unknown label `{code}`")))
    };
    let pairs = pairs
        .iter()
        .map(|&(t, p)| Ok((index(t)?, index(p)?)))
        .collect::<Result<Vec<_>>>()?;
    build_confusion(&pairs, labels.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

pub fn class_metrics(m: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let k = m.num_classes();
    (0..k)
        .map(|c| {
            let tp = m.get(c, c) as f64;
            let predicted: u64 = (0..k).map(|r| m.get(r, c)).sum();
            let support = m.support(c);
            let precision = ratio(tp, predicted as f64);
            let recall = ratio(tp, support as f64);
            ClassMetrics {
                class: c,
                support,
                precision,
                recall,
                f1: f1_score(precision, recall),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

pub fn aggregate_report(metrics: Vec<ClassMetrics>, m: &ConfusionMatrix) -> Result<Report> {
    let total = m.total();
    if total == 0 || metrics.is_empty() {
        return Err(LidError::Contract("cannot report on an empty confusion matrix".into()));
    }
    let k = metrics.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / k;
    Ok(Report {
        accuracy: m.trace() as f64 / total as f64,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        classes: metrics,
    })
}

/// `language,support,precision,recall,f1`, one row per class, then the
/// aggregate rows. Reals have four decimals.
pub fn metrics_csv(report: &Report, labels: &LabelSet) -> String {
    let mut out = String::from("language,support,precision,recall,f1\n");
    for c in &report.classes {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4}",
            labels.code(c.class),
            c.support,
            c.precision,
            c.recall,
            c.f1
        );
    }
    let total: u64 = report.classes.iter().map(|c| c.support).sum();
    for (name, v) in [
        ("accuracy", report.accuracy),
        ("macro_precision", report.macro_precision),
        ("macro_recall", report.macro_recall),
        ("macro_f1", report.macro_f1),
    ] {
        let _ = writeln!(out, "{name},{total},{v:.4},{v:.4},{v:.4}");
    }
    out
}

/// Header row and first column hold the codes; cell `[i][j]` counts true
/// `i` predicted `j`.
pub fn confusion_csv(m: &ConfusionMatrix, labels: &LabelSet) -> String {
    let mut out = String::from("true\\predicted");
    for code in labels.codes() {
        out.push(',');
        out.push_str(code);
    }
    out.push('\n');
    for t in 0..m.num_classes() {
        out.push_str(labels.code(t));
        for v in m.row(t) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses [`confusion_csv`] output back into a matrix.
pub fn parse_confusion_csv(text: &str, labels: &LabelSet) -> Result<ConfusionMatrix> {
    let err = |line: usize, detail: String| LidError::Data {
        source_name: "confusion csv".into(),
        line,
        detail,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').skip(1).collect();
    if !header.iter().copied().eq(labels.codes()) {
        return Err(err(1, "header does not match the label set".into()));
    }
    let mut counts = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let code = fields.next().unwrap_or_default();
        if labels.index(code) != Some(counts.len()) {
            return Err(err(i + 2, format!("unexpected row label `{code}`")));
        }
        let row = fields
            .map(|f| f.parse::<u64>().map_err(|e| err(i + 2, format!("{f}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        counts.push(row);
    }
    ConfusionMatrix::from_counts(counts)
}

/// Counts as a grid, each cell followed by a shade glyph for its share of
/// the row's support.
pub fn confusion_heatmap(m: &ConfusionMatrix, labels: &LabelSet) -> String {
    const SHADES: [char; 5] = [' ', '.', ':', '*', '#'];
    let width = m.counts.iter().flatten().max().map_or(1, |v| v.to_string().len()).max(3);
    let mut out = format!("{:>5}", "");
    for code in labels.codes() {
        let _ = write!(out, " {code:>width$} ");
    }
    out.push('\n');
    for t in 0..m.num_classes() {
        let _ = write!(out, "{:>5}", labels.code(t));
        let support = m.support(t);
        for &v in m.row(t) {
            let share = ratio(v as f64, support as f64);
            let shade = if v == 0 {
                SHADES[0]
            } else {
                SHADES[1 + ((share * 4.0).ceil() as usize).clamp(1, 4) - 1]
            };
            let _ = write!(out, " {v:>width$}{shade}");
        }
        out.push('\n');
    }
    out
}
