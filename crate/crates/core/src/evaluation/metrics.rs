//! Count regression metrics: MSE, rounded accuracies, histograms.
//!
//! Real-valued count predictions become integers via *half-away-from-zero*
//! rounding clamped to `[0, max_count]` — the usual `round()` semantics, so
//! 1.5 counts as 2 and an off-the-rails 7.3 prediction cannot escape the
//! count support. Accuracy is reported three ways (per class, per sample,
//! per true count value) because "average accuracy" is genuinely ambiguous;
//! `average_accuracy` always means the mean of per-class accuracies.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::datasets::CountVector;
use crate::error::{Error, Result};

/// Round half away from zero, clamp to `[0, max_count]`.
pub fn round_count(pred: f64, max_count: u32) -> u32 {
    let rounded = pred.round().max(0.0);
    (rounded as u32).min(max_count)
}

fn check_shapes(predictions: &ArrayView2<'_, f64>, targets: &[CountVector]) -> Result<()> {
    let (n, d) = predictions.dim();
    if n == 0 {
        return Err(Error::InsufficientSamples(
            "count metrics need at least one sample".into(),
        ));
    }
    if n != targets.len() {
        return Err(Error::ShapeMismatch {
            context: "count metrics".into(),
            expected: format!("{n} targets"),
            got: targets.len().to_string(),
        });
    }
    if let Some(bad) = targets.iter().find(|t| t.n_classes() != d) {
        return Err(Error::ShapeMismatch {
            context: "count metrics".into(),
            expected: format!("{d}-class targets"),
            got: bad.n_classes().to_string(),
        });
    }
    Ok(())
}

/// Mean squared per-class count error: `1/(N*n_classes) * sum ||pred - target||^2`.
pub fn count_mse(predictions: ArrayView2<'_, f64>, targets: &[CountVector]) -> Result<f64> {
    check_shapes(&predictions, targets)?;
    let (n, d) = predictions.dim();
    let mut total = 0.0;
    for (row, target) in predictions.rows().into_iter().zip(targets) {
        for (&p, &t) in row.iter().zip(&target.0) {
            let e = p - t as f64;
            total += e * e;
        }
    }
    Ok(total / (n * d) as f64)
}

/// All accuracy readings of one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountAccuracy {
    /// Fraction of samples whose rounded prediction matches the target,
    /// per class.
    pub per_class: Vec<f64>,
    /// Mean of `per_class` — the headline number.
    pub average: f64,
    /// Fraction of samples whose entire rounded count vector is exact.
    pub per_sample: f64,
    /// Accuracy over all (sample, class) cells grouped by the true count
    /// value at that cell.
    pub per_value: BTreeMap<u32, f64>,
}

/// Rounded-count accuracy under the clamped half-away-from-zero rule.
pub fn count_accuracy(
    predictions: ArrayView2<'_, f64>,
    targets: &[CountVector],
    max_count: u32,
) -> Result<CountAccuracy> {
    check_shapes(&predictions, targets)?;
    let (n, d) = predictions.dim();
    let mut class_hits = vec![0usize; d];
    let mut sample_hits = 0usize;
    let mut value_totals: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (row, target) in predictions.rows().into_iter().zip(targets) {
        let mut all = true;
        for (c, (&p, &t)) in row.iter().zip(&target.0).enumerate() {
            let hit = round_count(p, max_count) == t;
            if hit {
                class_hits[c] += 1;
            } else {
                all = false;
            }
            let slot = value_totals.entry(t).or_insert((0, 0));
            slot.0 += usize::from(hit);
            slot.1 += 1;
        }
        sample_hits += usize::from(all);
    }
    let per_class: Vec<f64> = class_hits.iter().map(|&h| h as f64 / n as f64).collect();
    Ok(CountAccuracy {
        average: per_class.iter().sum::<f64>() / d as f64,
        per_class,
        per_sample: sample_hits as f64 / n as f64,
        per_value: value_totals
            .into_iter()
            .map(|(v, (hits, total))| (v, hits as f64 / total as f64))
            .collect(),
    })
}

/// Predicted-vs-true tallies for one class: `rows[true][predicted]`,
/// both axes `0..=max_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountHistogram {
    pub class_name: String,
    pub max_count: u32,
    pub rows: Vec<Vec<u64>>,
}

impl CountHistogram {
    /// Samples per true-count row.
    pub fn row_sums(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.iter().sum()).collect()
    }

    /// CSV with a header row, one line per true count value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true_count");
        for p in 0..=self.max_count {
            out.push_str(&format!(",pred_{p}"));
        }
        out.push('\n');
        for (t, row) in self.rows.iter().enumerate() {
            out.push_str(&t.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Tally rounded predictions against targets, one histogram per class.
pub fn count_histograms(
    predictions: ArrayView2<'_, f64>,
    targets: &[CountVector],
    class_names: &[String],
    max_count: u32,
) -> Result<Vec<CountHistogram>> {
    check_shapes(&predictions, targets)?;
    let d = predictions.dim().1;
    assert_eq!(class_names.len(), d, "one name per class");
    let bins = max_count as usize + 1;
    let mut histograms: Vec<CountHistogram> = class_names
        .iter()
        .map(|name| CountHistogram {
            class_name: name.clone(),
            max_count,
            rows: vec![vec![0; bins]; bins],
        })
        .collect();
    for (row, target) in predictions.rows().into_iter().zip(targets) {
        for (c, (&p, &t)) in row.iter().zip(&target.0).enumerate() {
            let pred = round_count(p, max_count) as usize;
            histograms[c].rows[(t as usize).min(bins - 1)][pred] += 1;
        }
    }
    Ok(histograms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mse_matches_hand_computed_cases() {
        let preds = array![[3.0, 1.0]];
        let targets = vec![CountVector(vec![2, 1])];
        assert_eq!(count_mse(preds.view(), &targets).unwrap(), 0.5);

        let exact = array![[2.0, 1.0], [0.0, 4.0]];
        let targets = vec![CountVector(vec![2, 1]), CountVector(vec![0, 4])];
        assert_eq!(count_mse(exact.view(), &targets).unwrap(), 0.0);
    }

    #[test]
    fn mse_matches_direct_summation_on_random_pairs() {
        use rand::Rng;
        let mut rng = crate::rng::derive_rng(31, &[0xE1]);
        let n = 200;
        let d = 3;
        let preds = ndarray::Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..6.0));
        let targets: Vec<CountVector> = (0..n)
            .map(|_| CountVector((0..d).map(|_| rng.random_range(0..5u32)).collect()))
            .collect();
        let mut brute = 0.0;
        for i in 0..n {
            for c in 0..d {
                brute += (preds[[i, c]] - targets[i].0[c] as f64).powi(2);
            }
        }
        brute /= (n * d) as f64;
        assert_eq!(count_mse(preds.view(), &targets).unwrap(), brute);
    }

    #[test]
    fn rounding_is_half_away_from_zero_with_clamping() {
        assert_eq!(round_count(1.5, 5), 2);
        assert_eq!(round_count(2.5, 5), 3);
        assert_eq!(round_count(2.4999, 5), 2);
        assert_eq!(round_count(-0.7, 5), 0);
        assert_eq!(round_count(7.3, 5), 5);
        // Idempotent on integers.
        for v in 0..=5u32 {
            assert_eq!(round_count(v as f64, 5), v);
        }
    }

    #[test]
    fn accuracy_readings_cover_all_three_definitions() {
        // Sample 0: both classes right. Sample 1: class 0 wrong.
        let preds = array![[2.1, 0.9], [0.6, 1.4]];
        let targets = vec![CountVector(vec![2, 1]), CountVector(vec![0, 1])];
        let acc = count_accuracy(preds.view(), &targets, 2).unwrap();
        assert_eq!(acc.per_class, vec![0.5, 1.0]);
        assert_eq!(acc.average, 0.75);
        assert_eq!(acc.per_sample, 0.5);
        // True value 2 appears once (hit); value 1 twice (both hit);
        // value 0 once (miss: 0.6 rounds to 1).
        assert_eq!(acc.per_value[&2], 1.0);
        assert_eq!(acc.per_value[&1], 1.0);
        assert_eq!(acc.per_value[&0], 0.0);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let preds = array![[1.2, 0.1], [3.9, 2.2], [0.4, 1.6]];
        let targets = vec![
            CountVector(vec![1, 0]),
            CountVector(vec![4, 2]),
            CountVector(vec![0, 2]),
        ];
        let perm = array![[0.4, 1.6], [1.2, 0.1], [3.9, 2.2]];
        let perm_targets = vec![targets[2].clone(), targets[0].clone(), targets[1].clone()];
        assert_eq!(
            count_mse(preds.view(), &targets).unwrap(),
            count_mse(perm.view(), &perm_targets).unwrap()
        );
        assert_eq!(
            count_accuracy(preds.view(), &targets, 4).unwrap(),
            count_accuracy(perm.view(), &perm_targets, 4).unwrap()
        );
    }

    #[test]
    fn histograms_tally_and_sum_correctly() {
        let preds = array![[2.1, 0.9], [0.6, 1.4], [1.8, 0.2]];
        let targets = vec![
            CountVector(vec![2, 1]),
            CountVector(vec![0, 1]),
            CountVector(vec![2, 0]),
        ];
        let names = vec!["a".to_string(), "b".to_string()];
        let hists = count_histograms(preds.view(), &targets, &names, 2).unwrap();
        assert_eq!(hists.len(), 2);
        // Class a: true 2 seen twice (pred 2 twice), true 0 once (pred 1).
        assert_eq!(hists[0].rows[2], vec![0, 0, 2]);
        assert_eq!(hists[0].rows[0], vec![0, 1, 0]);
        assert_eq!(hists[0].row_sums().iter().sum::<u64>(), 3);
        assert_eq!(hists[1].row_sums().iter().sum::<u64>(), 3);

        let csv = hists[0].to_csv();
        assert!(csv.starts_with("true_count,pred_0,pred_1,pred_2\n"));
        assert!(csv.lines().count() == 4);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let preds = array![[1.0]];
        assert!(matches!(
            count_mse(preds.view(), &[]),
            Err(Error::ShapeMismatch { .. })
        ));
        let empty = ndarray::Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            count_mse(empty.view(), &[]),
            Err(Error::InsufficientSamples(_))
        ));
        let wrong_arity = vec![CountVector(vec![1, 2])];
        assert!(count_mse(preds.view(), &wrong_arity).is_err());
    }
}
