//! Binarization and overlap metrics for binary masks.

use std::fmt;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// 1 where `p ≥ threshold`, else 0.
pub fn binarize<T: Element>(p: &Tensor<T>, threshold: f64) -> Tensor<T> {
    let t = T::from_f64_lossy(threshold);
    p.map(|v| if v >= t { T::one() } else { T::zero() })
}

/// Pixel counts of a binary prediction against a binary ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts over two equally shaped binary masks.
    pub fn from_masks<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Self> {
        if pred.shape() != gt.shape() {
            return Err(Error::ShapeMismatch {
                op: "compute_metrics",
                lhs: pred.shape(),
                rhs: gt.shape(),
            });
        }
        let mut c = ConfusionCounts::default();
        for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
            let p = to_bit(p, i)?;
            let g = to_bit(g, i)?;
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn report(self) -> MetricsReport {
        MetricsReport::from_counts(self)
    }
}

fn to_bit<T: Element>(v: T, index: usize) -> Result<bool> {
    if v == T::one() {
        Ok(true)
    } else if v == T::zero() {
        Ok(false)
    } else {
        Err(Error::NonBinary {
            value: v.as_f64(),
            index,
        })
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.tn += rhs.tn;
        self.fn_ += rhs.fn_;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

/// A ratio whose denominator counts are all zero is defined as 1: an empty
/// prediction of an empty target is a perfect score.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// The five overlap scores plus the counts they came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub dsc: f64,
    pub jsi: f64,
    pub se: f64,
    pub sp: f64,
    pub pr: f64,
    pub counts: ConfusionCounts,
}

impl MetricsReport {
    pub fn from_counts(c: ConfusionCounts) -> Self {
        MetricsReport {
            dsc: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            jsi: ratio(c.tp, c.tp + c.fp + c.fn_),
            se: ratio(c.tp, c.tp + c.fn_),
            sp: ratio(c.tn, c.tn + c.fp),
            pr: ratio(c.tp, c.tp + c.fp),
            counts: c,
        }
    }

    /// Unweighted mean of per-item scores. Counts are summed.
    pub fn macro_average(reports: &[MetricsReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let k = reports.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        Some(MetricsReport {
            dsc: mean(|r| r.dsc),
            jsi: mean(|r| r.jsi),
            se: mean(|r| r.se),
            sp: mean(|r| r.sp),
            pr: mean(|r| r.pr),
            counts: reports.iter().map(|r| r.counts).sum(),
        })
    }

    /// `(key, value)` pairs in output order.
    pub fn scores(&self) -> [(&'static str, f64); 5] {
        [
            ("dsc", self.dsc),
            ("jsi", self.jsi),
            ("se", self.se),
            ("sp", self.sp),
            ("pr", self.pr),
        ]
    }

    /// Flat `key=value` record, one per line, with an optional key prefix.
    pub fn to_record(&self, prefix: &str) -> String {
        let mut s = String::new();
        for (k, v) in self.scores() {
            s.push_str(&format!("{prefix}{k}={v:.6}\n"));
        }
        let c = self.counts;
        for (k, v) in [("tp", c.tp), ("fp", c.fp), ("tn", c.tn), ("fn", c.fn_)] {
            s.push_str(&format!("{prefix}{k}={v}\n"));
        }
        s
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_record(""))
    }
}

/// Counts and scores for a binary prediction against a binary ground truth.
pub fn compute_metrics<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<MetricsReport> {
    Ok(ConfusionCounts::from_masks(pred, gt)?.report())
}
