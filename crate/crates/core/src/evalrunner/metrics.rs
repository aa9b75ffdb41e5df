use serde::{Deserialize, Serialize};

use crate::corpus::LabelRegistry;
use crate::scoring::PredictionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub k: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub n_queries: usize,
    /// Queries where at least one label prompt lost shots to the budget.
    pub truncated_queries: usize,
}

impl RunMetrics {
    pub fn from_records(seed: u64, k: usize, records: &[PredictionRecord], registry: &LabelRegistry) -> Self {
        Self {
            seed,
            k,
            accuracy: accuracy(records),
            macro_f1: macro_f1(records, registry),
            n_queries: records.len(),
            truncated_queries: records.iter().filter(|r| r.dropped_pairs_max > 0).count(),
        }
    }
}

pub fn accuracy(records: &[PredictionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.is_correct()).count() as f64 / records.len() as f64
}

/// Unweighted mean of per-label F1 over every registry label. A label with
/// precision + recall = 0 (including one never gold and never predicted)
/// contributes 0.
pub fn macro_f1(records: &[PredictionRecord], registry: &LabelRegistry) -> f64 {
    let n = registry.len();
    let (mut tp, mut fp, mut fnn) = (vec![0usize; n], vec![0usize; n], vec![0usize; n]);
    for r in records {
        let gold = registry.index_of(&r.gold_label);
        let pred = registry.index_of(&r.predicted_label);
        match (gold, pred) {
            (Some(g), Some(p)) if g == p => tp[g] += 1,
            (g, p) => {
                if let Some(p) = p {
                    fp[p] += 1;
                }
                if let Some(g) = g {
                    fnn[g] += 1;
                }
            }
        }
    }
    let total: f64 = (0..n)
        .map(|i| {
            let precision = ratio(tp[i], tp[i] + fp[i]);
            let recall = ratio(tp[i], tp[i] + fnn[i]);
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .sum();
    total / n as f64
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Sample mean and Bessel-corrected standard deviation; std is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn rec(gold: &str, pred: &str) -> PredictionRecord {
        PredictionRecord {
            query_id: String::new(),
            gold_label: gold.into(),
            per_label: BTreeMap::new(),
            predicted_label: pred.into(),
            dropped_pairs_max: 0,
        }
    }

    #[test]
    fn bessel() {
        let (m, s) = mean_std(&[0.5, 0.6, 0.7]);
        assert!((m - 0.6).abs() < 1e-12);
        assert!((s - 0.1).abs() < 1e-12);
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
        let (m2, s2) = mean_std(&[0.7, 0.5, 0.6]);
        assert_eq!(format!("{m:.6} {s:.6}"), format!("{m2:.6} {s2:.6}"));
    }

    // Hand count: a: tp=1 fp=1 fn=1 → F1 0.5; b: tp=1 fp=0 fn=1 → P=1 R=0.5 F1=2/3;
    // c: tp=0 fp=1 fn=0 → 0. Macro = (0.5 + 2/3 + 0) / 3 = 7/18.
    #[test]
    fn macro_f1_hand_count() {
        let registry = LabelRegistry::new(["a", "b", "c"]).unwrap();
        let records = [rec("a", "a"), rec("a", "c"), rec("b", "b"), rec("b", "a")];
        assert!((macro_f1(&records, &registry) - 7.0 / 18.0).abs() < 1e-12);
        assert!((accuracy(&records) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let registry = LabelRegistry::new(["a", "b"]).unwrap();
        let records = [rec("a", "a"), rec("b", "b")];
        assert_eq!(macro_f1(&records, &registry), 1.0);
        assert_eq!(accuracy(&records), 1.0);
    }
}
