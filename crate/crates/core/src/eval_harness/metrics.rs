use serde::{Deserialize, Serialize};

use crate::llm_gateway::Prediction;
use crate::Label;

/// Confusion counts with ASD as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Adds one case. An abstention counts as a wrong answer.
    pub fn record(&mut self, truth: Label, predicted: Prediction) {
        match (truth, predicted) {
            (Label::ASD, Prediction::ASD) => self.tp += 1,
            (Label::ASD, _) => self.fn_ += 1,
            (Label::TD, Prediction::TD) => self.tn += 1,
            (Label::TD, _) => self.fp += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Prediction)>) -> Self {
        let mut c = Self::default();
        for (t, p) in pairs {
            c.record(t, p);
        }
        c
    }
}

/// An exact non-negative fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    /// `None` when the denominator is zero.
    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den > 0).then_some(Self { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.num as f64 / self.den as f64
    }
}

/// Metrics as exact fractions; undefined ratios are absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metrics {
    pub acc: Option<Ratio>,
    pub sn: Option<Ratio>,
    pub sp: Option<Ratio>,
    pub precision: Option<Ratio>,
    pub f1: Option<Ratio>,
}

/// `f1 = 2 tp / (2 tp + fp + fn)`, which equals the harmonic mean of
/// precision and sensitivity whenever both are defined and non-zero.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let f1 = if c.tp + c.fp == 0 || c.tp + c.fn_ == 0 {
        None
    } else {
        Ratio::new(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
    };
    Metrics {
        acc: Ratio::new(c.tp + c.tn, c.total()),
        sn: Ratio::new(c.tp, c.tp + c.fn_),
        sp: Ratio::new(c.tn, c.tn + c.fp),
        precision: Ratio::new(c.tp, c.tp + c.fp),
        f1,
    }
}

/// Percentages for presentation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub acc: Option<f64>,
    pub f1: Option<f64>,
    pub sn: Option<f64>,
    pub sp: Option<f64>,
    pub precision: Option<f64>,
}

impl From<Metrics> for MetricsSummary {
    fn from(m: Metrics) -> Self {
        let p = |r: Option<Ratio>| r.map(|r| r.percent());
        Self {
            acc: p(m.acc),
            f1: p(m.f1),
            sn: p(m.sn),
            sp: p(m.sp),
            precision: p(m.precision),
        }
    }
}

pub fn format_percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn degenerate_class() {
        let m = metrics(&ConfusionCounts::new(0, 0, 5, 0));
        assert_eq!(m.acc.unwrap().percent(), 100.0);
        assert_eq!(m.sp.unwrap().percent(), 100.0);
        assert!(m.sn.is_none());
        assert!(m.precision.is_none());
        assert!(m.f1.is_none());
    }

    #[test]
    fn abstentions_count_as_errors() {
        let c = ConfusionCounts::from_pairs([
            (Label::ASD, Prediction::Abstain),
            (Label::TD, Prediction::Abstain),
            (Label::ASD, Prediction::ASD),
        ]);
        assert_eq!(c, ConfusionCounts::new(1, 1, 0, 1));
    }

    proptest! {
        #[test]
        fn matches_textbook_formulas(tp in 1u64..200, fp in 0u64..200, tn in 0u64..200, fn_ in 0u64..200) {
            let m = metrics(&ConfusionCounts::new(tp, fp, tn, fn_));
            let (tp, fp, tn, fn_) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
            let prec = tp / (tp + fp);
            let sn = tp / (tp + fn_);
            let f1 = 2.0 * prec * sn / (prec + sn);
            prop_assert!((m.f1.unwrap().value() - f1).abs() < 1e-12);
            prop_assert!((m.acc.unwrap().value() - (tp + tn) / (tp + fp + tn + fn_)).abs() < 1e-12);
            prop_assert!((m.sn.unwrap().value() - sn).abs() < 1e-12);
            if tn + fp > 0.0 {
                prop_assert!((m.sp.unwrap().value() - tn / (tn + fp)).abs() < 1e-12);
            }
        }
    }
}
