//! Scripted experiment protocols over the training/evaluation stack.
//!
//! Three studies, each a pure function of (dataset, config, seeds) that
//! writes its artifacts — per-epoch metric traces as line-delimited records,
//! per-run evaluation reports, and a summary report in JSON + CSV — under an
//! output directory and returns the summary:
//!
//! * [`transfer`]: hold out count combinations, train on the rest, and
//!   measure how generation quality degrades from seen combinations to
//!   unseen interpolated and extrapolated ones.
//! * [`ablation`]: retrain with single architecture/loss switches flipped
//!   and compare judged count error and feature distance per variant.
//! * [`augment`]: train count predictors on real/synthetic data mixtures
//!   and compare their accuracy on a common held-out real evaluation set.
//!
//! Judged metrics always come from an independent count predictor trained
//! on real images, never from the head that trained alongside the
//! generator; a generator grading itself would hide exactly the failure
//! these experiments look for.
//!
//! Determinism: every stage draws from a stream derived from (seed, tag
//! path), so re-running any study with the same inputs reproduces every
//! trace, report, and image byte for byte. Cells and seeds are independent
//! by construction (no stream is shared across them), which is what allows
//! sharding them across processes; this implementation runs them
//! sequentially and merges in declared order.

pub mod ablation;
pub mod augment;
pub mod plots;
pub mod transfer;

pub use ablation::{run_ablation_sweep, AblationAxis, AblationConfig, AblationReport, AblationRow};
pub use augment::{
    run_augmentation_study, AugmentConfig, AugmentDesign, AugmentMode, AugmentOps,
    AugmentationReport, AugmentationRow,
};
pub use transfer::{run_count_transfer, CountExclusion, TransferConfig, TransferReport};

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::datasets::loader::LoadedDataset;
use crate::datasets::manifest::DatasetManifest;
use crate::datasets::CountVector;
use crate::error::{Error, Result};
use crate::fsio;
use crate::models::{CountPredictorParams, DiscriminatorParams, GeneratorParams};
use crate::rng::{derive_rng, tags};
use crate::training::trainer::{
    train_predictor, PredictorTrainConfig, TrainConfig, Trainer,
};

/// Row indices of `subset`'s items within `full` (matched by file path).
pub(crate) fn manifest_row_indices(
    full: &DatasetManifest,
    subset: &DatasetManifest,
) -> Result<Vec<usize>> {
    let by_file: HashMap<&str, usize> = full
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| (item.file.as_str(), i))
        .collect();
    subset
        .items
        .iter()
        .map(|item| {
            by_file.get(item.file.as_str()).copied().ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "item `{}` is not part of the base manifest",
                    item.file
                ))
            })
        })
        .collect()
}

/// Deterministic stratified train/eval split over row indices.
///
/// Rows are grouped by count combination; within each group a derived
/// stream shuffles the rows and the tail becomes evaluation data. Groups
/// with a single row stay in training. Both halves come back sorted.
pub(crate) fn stratified_eval_split(
    counts: &[CountVector],
    eval_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut groups: std::collections::BTreeMap<&CountVector, Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, c) in counts.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (group_idx, rows) in groups.into_values().enumerate() {
        let mut rows = rows;
        let mut rng = derive_rng(seed, &[tags::SPLIT, group_idx as u64]);
        rows.shuffle(&mut rng);
        let n_eval = ((rows.len() as f64 * eval_fraction).round() as usize)
            .clamp(usize::from(rows.len() > 1), rows.len().saturating_sub(1));
        let split_at = rows.len() - n_eval;
        train.extend_from_slice(&rows[..split_at]);
        eval.extend_from_slice(&rows[split_at..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

/// Train a GAN to completion, writing its per-epoch trace beside the run.
pub(crate) fn train_gan_traced(
    config: TrainConfig,
    dataset: &LoadedDataset,
    trace_path: &Path,
) -> Result<(GeneratorParams<f32>, DiscriminatorParams<f32>)> {
    let mut trainer = Trainer::new(config, dataset)?;
    trainer.run(dataset, |_| {})?;
    fsio::write_jsonl(trace_path, &trainer.history)?;
    Ok((trainer.g, trainer.d))
}

/// Train a count predictor, writing its per-epoch trace beside the run.
pub(crate) fn train_predictor_traced(
    config: &PredictorTrainConfig,
    dataset: &LoadedDataset,
    trace_path: &Path,
) -> Result<CountPredictorParams<f32>> {
    let mut history = Vec::with_capacity(config.epochs as usize);
    let predictor = train_predictor(config, dataset, |stats| history.push(stats.clone()))?;
    fsio::write_jsonl(trace_path, &history)?;
    Ok(predictor)
}

/// Mean of a slice (experiment aggregation; callers guarantee non-empty).
pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_split_is_deterministic_and_exhaustive() {
        let counts: Vec<CountVector> = (0..20)
            .map(|i| CountVector(vec![i % 2, (i / 2) % 2]))
            .collect();
        let (train_a, eval_a) = stratified_eval_split(&counts, 0.25, 7);
        let (train_b, eval_b) = stratified_eval_split(&counts, 0.25, 7);
        assert_eq!(train_a, train_b);
        assert_eq!(eval_a, eval_b);

        let mut all: Vec<usize> = train_a.iter().chain(&eval_a).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>(), "a partition");
        // 4 combinations x 5 rows, 25% eval: at least one eval row per group.
        assert_eq!(eval_a.len(), 4);

        let (train_c, _) = stratified_eval_split(&counts, 0.25, 8);
        assert_ne!(train_a, train_c, "different seed, different split");
    }

    #[test]
    fn singleton_groups_stay_in_training() {
        let counts = vec![CountVector(vec![1]), CountVector(vec![2])];
        let (train, eval) = stratified_eval_split(&counts, 0.5, 0);
        assert_eq!(train, vec![0, 1]);
        assert!(eval.is_empty());
    }
}
