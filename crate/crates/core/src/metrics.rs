//! Binary classification metrics with per-class confusion counts.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub r#fn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub confusion: Confusion,
    /// Names of metrics whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Index 0 is the negative class, 1 the positive class.
    pub classes: [ClassMetrics; 2],
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(label: u8, predictions: &[u8], labels: &[u8]) -> ClassMetrics {
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == label, y == label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.r#fn += 1,
            (false, false) => c.tn += 1,
        }
    }
    let mut undefined = Vec::new();
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
    let recall = ratio(c.tp, c.tp + c.r#fn, "recall", &mut undefined);
    let f1 = if precision + recall == 0.0 {
        undefined.push("f1".into());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        label,
        precision,
        recall,
        f1,
        support: c.tp + c.r#fn,
        confusion: c,
        undefined,
    }
}

impl MetricsReport {
    /// `predictions` and `labels` are 0/1 and of equal length.
    pub fn compute(predictions: &[u8], labels: &[u8]) -> Self {
        assert_eq!(predictions.len(), labels.len(), "prediction/label length mismatch");
        let n = labels.len();
        let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
        let classes = [class_metrics(0, predictions, labels), class_metrics(1, predictions, labels)];
        Self {
            samples: n,
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            macro_f1: (classes[0].f1 + classes[1].f1) / 2.0,
            classes,
        }
    }

    /// Aligned text table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<10}{:>11}{:>11}{:>11}{:>9}\n", "class", "precision", "recall", "f1", "support"));
        for c in &self.classes {
            s.push_str(&format!("{:<10}{:>11.4}{:>11.4}{:>11.4}{:>9}\n", c.label, c.precision, c.recall, c.f1, c.support));
        }
        s.push_str(&format!("{:<10}{:>11.4}\n", "accuracy", self.accuracy));
        s.push_str(&format!("{:<10}{:>11.4}\n", "macro-F1", self.macro_f1));
        s
    }
}

/// Probability to class at the fixed 0.5 threshold.
pub fn decide(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_positive_class() {
        // TP=3, FP=1, FN=2, TN=4
        let mut pred = vec![1, 1, 1, 1, 0, 0];
        let mut lab = vec![1, 1, 1, 0, 1, 1];
        pred.extend([0; 4]);
        lab.extend([0; 4]);
        let r = MetricsReport::compute(&pred, &lab);
        let c = &r.classes[1];
        assert_eq!(c.confusion, Confusion { tp: 3, tn: 4, fp: 1, r#fn: 2 });
        assert_eq!(c.precision, 0.75);
        assert_eq!(c.recall, 0.6);
        assert!((c.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.accuracy, 0.7);
    }

    #[test]
    fn all_correct() {
        let y = [0, 1, 1, 0, 1];
        let r = MetricsReport::compute(&y, &y);
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
        assert!(r.classes.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.undefined.is_empty()));
    }

    #[test]
    fn zero_division_flagged() {
        let r = MetricsReport::compute(&[0, 0, 0], &[0, 1, 0]);
        let pos = &r.classes[1];
        assert_eq!(pos.precision, 0.0);
        assert!(pos.undefined.contains(&"precision".to_string()));
        assert!(pos.undefined.contains(&"f1".to_string()));
    }

    #[test]
    fn label_swap_keeps_macro_f1() {
        let p = [1, 0, 1, 1, 0, 0, 1];
        let y = [1, 1, 0, 1, 0, 1, 1];
        let flip = |v: &[u8]| v.iter().map(|x| 1 - x).collect::<Vec<u8>>();
        let a = MetricsReport::compute(&p, &y);
        let b = MetricsReport::compute(&flip(&p), &flip(&y));
        assert_eq!(a.macro_f1, b.macro_f1);
    }

    #[test]
    fn threshold() {
        assert_eq!(decide(0.5), 1);
        assert_eq!(decide(0.4999), 0);
    }
}
