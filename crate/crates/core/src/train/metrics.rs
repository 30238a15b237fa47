use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::edf::Label;
use crate::error::{Error, Result};

/// `counts[true][predicted]`, classes in [`Label::ALL`] order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 2]; 2]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (t, p) in pairs {
            cm.record(t, p);
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

/// An exact ratio of counts; undefined when the denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub num: u64,
    pub den: u64,
}

impl Rate {
    pub fn value(self) -> Option<f64> {
        (self.den > 0).then(|| self.num as f64 / self.den as f64)
    }

    fn percent(self) -> String {
        self.value()
            .map_or_else(|| "undefined".to_string(), |v| format!("{:.2}%", 100.0 * v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Rate,
    /// Per true class: diagonal over row sum.
    pub sensitivity: [Rate; 2],
    /// Per predicted class: diagonal over column sum.
    pub precision: [Rate; 2],
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() == 0 {
        return Err(Error::Contract("metrics of an empty confusion matrix".into()));
    }
    let rate = |num, den| Rate { num, den };
    Ok(Metrics {
        accuracy: rate(cm.trace(), cm.total()),
        sensitivity: [0, 1].map(|c| rate(cm.counts[c][c], cm.row_sum(c))),
        precision: [0, 1].map(|c| rate(cm.counts[c][c], cm.col_sum(c))),
    })
}

/// Aligned text table with predicted classes as rows and true classes as
/// columns. The right column holds precision, the bottom row sensitivity and
/// the lower-right cell overall accuracy.
pub fn render_table(cm: &ConfusionMatrix, m: &Metrics) -> String {
    let names = Label::ALL.map(|l| l.name());
    let mut rows: Vec<[String; 4]> = vec![[
        "predicted \\ true".to_string(),
        names[0].to_string(),
        names[1].to_string(),
        "precision".to_string(),
    ]];
    for p in 0..2 {
        rows.push([
            names[p].to_string(),
            cm.counts[0][p].to_string(),
            cm.counts[1][p].to_string(),
            m.precision[p].percent(),
        ]);
    }
    rows.push([
        "sensitivity".to_string(),
        m.sensitivity[0].percent(),
        m.sensitivity[1].percent(),
        m.accuracy.percent(),
    ]);
    let widths: Vec<usize> = (0..4)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let _ = write!(out, "{:<w$}", r[0], w = widths[0]);
        for c in 1..4 {
            let _ = write!(out, "  {:>w$}", r[c], w = widths[c]);
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

impl EvalReport {
    pub fn new(confusion: ConfusionMatrix) -> Result<Self> {
        let metrics = metrics(&confusion)?;
        Ok(EvalReport { confusion, metrics })
    }

    pub fn table(&self) -> String {
        render_table(&self.confusion, &self.metrics)
    }
}
