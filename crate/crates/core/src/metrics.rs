//! Confusion matrix and the binary classification scores reported for the
//! detector: accuracy, precision, recall, F1, CSI and MCC.
//!
//! Any score whose denominator is zero is reported as 0 so that evaluating a
//! degenerate slice never aborts.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// CSV row in `tn,fp,fn,tp` order.
    pub fn to_csv(&self) -> String {
        format!("tn,fp,fn,tp\n{},{},{},{}\n", self.tn, self.fp, self.fn_, self.tp)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "                 predicted 0   predicted 1")?;
        writeln!(f, "actual 0 {:>16} {:>13}", self.tn, self.fp)?;
        write!(f, "actual 1 {:>16} {:>13}", self.fn_, self.tp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub csi: f64,
    pub mcc: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "tp,tn,fp,fn,accuracy,precision,recall,f1,csi,mcc";

    /// One CSV row matching [`EvalReport::CSV_HEADER`].
    pub fn to_csv_row(&self) -> String {
        let c = &self.confusion;
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            c.tp, c.tn, c.fp, c.fn_, self.accuracy, self.precision, self.recall, self.f1, self.csi, self.mcc
        )
    }

    /// `key = value` text block.
    pub fn to_key_value(&self) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        for (k, v) in [("tp", c.tp), ("tn", c.tn), ("fp", c.fp), ("fn", c.fn_)] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("csi", self.csi),
            ("mcc", self.mcc),
        ] {
            s.push_str(&format!("{k} = {v:.6}\n"));
        }
        s
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Tally predictions against labels. A sample is predicted positive iff
/// `p > threshold`.
pub fn confusion(probs: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p > threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

pub fn compute_metrics(c: &ConfusionMatrix) -> Result<EvalReport> {
    if c.total() == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);

    let accuracy = (tp + tn) / (tp + tn + fp + fn_);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    let csi = ratio(tp, tp + fn_ + fp);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, den);

    Ok(EvalReport {
        confusion: *c,
        accuracy,
        precision,
        recall,
        f1,
        csi,
        mcc,
    })
}
