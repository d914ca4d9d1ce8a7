//! Ablation sweep: retrain with one switch flipped, compare like for like.
//!
//! Every variant trains on the same split with the same seeds; the only
//! difference is a single architecture or loss switch. Metrics per variant:
//! judged count MSE and judged accuracy of generated samples, feature
//! distance against held-out real images, and — for variants that train it —
//! the count head's own MSE/accuracy on those held-out real images.
//!
//! The count-loss ablation mirrors its original formulation: the count term
//! is dropped entirely and the discriminator is count-conditioned instead,
//! so the model stays a conditional GAN whose only count pressure is
//! adversarial. Its count head exists but never receives gradient; its
//! `subnet_*` columns are reported honestly and are expected to be noise.

use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datasets::loader::LoadedDataset;
use crate::datasets::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::evaluation::metrics::{count_accuracy, count_mse};
use crate::evaluation::report::{evaluate_generation, GenerationEvalSpec};
use crate::fsio;
use crate::models::{normalized_counts_matrix, Backbone, DiscriminatorParams, LabelMapping};
use crate::rng::{derive_seed, tags};
use crate::training::trainer::{PredictorTrainConfig, TrainConfig};

use super::{mean, stratified_eval_split, train_gan_traced, train_predictor_traced};

/// A single toggle away from the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Drop the count loss; condition the discriminator on counts instead.
    CountLoss,
    /// Give the adversarial and count heads disjoint trunks.
    WeightSharing,
    /// Feed counts only at the generator input, not at every stage.
    LabelMapping,
    /// Replace the densely connected generator blocks with plain stacks.
    Backbone,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [
        AblationAxis::CountLoss,
        AblationAxis::WeightSharing,
        AblationAxis::LabelMapping,
        AblationAxis::Backbone,
    ];

    /// Row label of the ablated variant.
    pub fn variant_name(self) -> &'static str {
        match self {
            AblationAxis::CountLoss => "no_count_loss",
            AblationAxis::WeightSharing => "no_weight_sharing",
            AblationAxis::LabelMapping => "input_only_labels",
            AblationAxis::Backbone => "plain_backbone",
        }
    }

    /// Flip this axis on a copy of the base configuration.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            AblationAxis::CountLoss => {
                cfg.loss.count_loss_enabled = false;
                cfg.model.count_conditioned_disc = true;
            }
            AblationAxis::WeightSharing => cfg.model.weight_sharing = false,
            AblationAxis::LabelMapping => cfg.model.label_mapping = LabelMapping::InputOnly,
            AblationAxis::Backbone => cfg.model.backbone = Backbone::Plain,
        }
        cfg
    }
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            AblationAxis::CountLoss => "count_loss",
            AblationAxis::WeightSharing => "weight_sharing",
            AblationAxis::LabelMapping => "label_mapping",
            AblationAxis::Backbone => "backbone",
        };
        f.write_str(name)
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count_loss" => Ok(AblationAxis::CountLoss),
            "weight_sharing" => Ok(AblationAxis::WeightSharing),
            "label_mapping" => Ok(AblationAxis::LabelMapping),
            "backbone" => Ok(AblationAxis::Backbone),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation axis `{other}` (expected count_loss, weight_sharing, \
                 label_mapping, or backbone)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// The full model; variants are single-switch copies of it.
    pub train: TrainConfig,
    /// Budget for the independent judge (trained once on the train split).
    pub judge: PredictorTrainConfig,
    pub axes: Vec<AblationAxis>,
    pub seeds: Vec<u64>,
    pub samples_per_combination: usize,
    /// Fraction of real rows held out per combination for evaluation.
    pub eval_fraction: f64,
    /// Seed of the train/eval split (shared by all variants and seeds).
    pub split_seed: u64,
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.axes.is_empty() {
            return Err(Error::InvalidConfig(
                "ablation needs at least one axis".into(),
            ));
        }
        let mut seen = self.axes.to_vec();
        seen.sort_by_key(|a| a.variant_name());
        seen.dedup();
        if seen.len() != self.axes.len() {
            return Err(Error::InvalidConfig("duplicate ablation axis".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "ablation needs at least one seed".into(),
            ));
        }
        if self.samples_per_combination == 0 {
            return Err(Error::InvalidConfig(
                "samples_per_combination must be at least 1".into(),
            ));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::InvalidFraction {
                value: self.eval_fraction,
                reason: "eval_fraction must lie strictly between 0 and 1".into(),
            });
        }
        Ok(())
    }
}

/// One (variant, seed) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    /// Judged count MSE of generated samples.
    pub count_mse: f64,
    /// Feature distance between generated samples and held-out real images.
    pub mini_fid: f64,
    /// Judged count accuracy of generated samples.
    pub judged_accuracy: f64,
    /// The model's own count head, scored on held-out real images.
    pub subnet_mse: f64,
    pub subnet_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Variants in declared order (full model first), seeds in declared
    /// order within each variant.
    pub rows: Vec<AblationRow>,
    pub config: serde_json::Value,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report json");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variant,seed,count_mse,mini_fid,judged_accuracy,subnet_mse,subnet_accuracy\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.variant,
                r.seed,
                r.count_mse,
                r.mini_fid,
                r.judged_accuracy,
                r.subnet_mse,
                r.subnet_accuracy
            ));
        }
        out
    }

    /// Per-variant `(name, mean count MSE, mean feature distance)`, in row
    /// order.
    pub fn variant_means(&self) -> Vec<(String, f64, f64)> {
        let mut order: Vec<String> = Vec::new();
        for r in &self.rows {
            if !order.contains(&r.variant) {
                order.push(r.variant.clone());
            }
        }
        order
            .into_iter()
            .map(|name| {
                let (mses, fids): (Vec<f64>, Vec<f64>) = self
                    .rows
                    .iter()
                    .filter(|r| r.variant == name)
                    .map(|r| (r.count_mse, r.mini_fid))
                    .unzip();
                (name, mean(&mses), mean(&fids))
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fsio::atomic_write(&dir.join("ablation_report.json"), self.to_json().as_bytes())?;
        fsio::atomic_write(&dir.join("ablation_report.csv"), self.to_csv().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_slice(&fsio::read_bytes(path)?).map_err(|e| Error::json(path, e))
    }
}

/// Count-head metrics on real images: `(mse, average accuracy)`.
///
/// A count-conditioned discriminator is fed the true counts as conditioning
/// here; that lets its head cheat, which is part of why conditioning is no
/// substitute for the count loss, and the numbers say so either way.
fn subnet_metrics(d: &DiscriminatorParams<f32>, data: &LoadedDataset) -> Result<(f64, f64)> {
    const BATCH: usize = 64;
    let n = data.len();
    let n_classes = data.n_classes();
    let mut preds = Array2::<f64>::zeros((n, n_classes));
    let mut at = 0;
    while at < n {
        let hi = (at + BATCH).min(n);
        let indices: Vec<usize> = (at..hi).collect();
        let (images, counts) = data.batch(&indices);
        let c_norm = d
            .cfg
            .count_conditioned_disc
            .then(|| normalized_counts_matrix::<f32>(&counts, d.cfg.max_count));
        let (out, _) = d.forward_cached(&images, c_norm.as_ref());
        preds
            .slice_mut(ndarray::s![at..hi, ..])
            .assign(&out.counts.mapv(|v| v as f64));
        at = hi;
    }
    Ok((
        count_mse(preds.view(), &data.counts)?,
        count_accuracy(preds.view(), &data.counts, data.max_count)?.average,
    ))
}

/// Train and score the full model plus one variant per axis.
pub fn run_ablation_sweep(
    manifest_path: &Path,
    config: &AblationConfig,
    out_dir: &Path,
) -> Result<AblationReport> {
    config.validate()?;

    let manifest = DatasetManifest::read(manifest_path)?;
    let full_data = LoadedDataset::load(manifest_path)?;
    let (train_rows, eval_rows) =
        stratified_eval_split(&full_data.counts, config.eval_fraction, config.split_seed);
    if eval_rows.is_empty() {
        return Err(Error::InsufficientSamples(
            "ablation evaluation split is empty".into(),
        ));
    }
    let train_data = full_data.select(&train_rows);
    let eval_data = full_data.select(&eval_rows);
    drop(full_data);
    drop(manifest);

    let traces = out_dir.join("traces");
    let reports = out_dir.join("reports");
    let judge =
        train_predictor_traced(&config.judge, &train_data, &traces.join("judge.jsonl"))?;
    let grid = {
        let set: std::collections::BTreeSet<_> = train_data.counts.iter().cloned().collect();
        set.into_iter().collect::<Vec<_>>()
    };

    let mut variants: Vec<(String, TrainConfig)> =
        vec![("full".to_string(), config.train.clone())];
    for axis in &config.axes {
        variants.push((axis.variant_name().to_string(), axis.apply(&config.train)));
    }

    let mut rows = Vec::new();
    for (variant_idx, (name, variant_cfg)) in variants.iter().enumerate() {
        for &seed in &config.seeds {
            let mut cfg = variant_cfg.clone();
            cfg.seed = seed;
            let (g, d) = train_gan_traced(
                cfg,
                &train_data,
                &traces.join(format!("{name}_seed{seed}.jsonl")),
            )?;
            let spec = GenerationEvalSpec {
                grid: grid.clone(),
                samples_per_count: config.samples_per_combination,
                seed: derive_seed(seed, &[tags::EXPERIMENT, variant_idx as u64]),
            };
            let report = evaluate_generation(&g, &d, &judge, &spec, Some(&eval_data.images))?;
            report.write(&reports.join(format!("{name}_seed{seed}.json")))?;
            let (subnet_mse, subnet_accuracy) = subnet_metrics(&d, &eval_data)?;
            rows.push(AblationRow {
                variant: name.clone(),
                seed,
                count_mse: report.count_mse,
                mini_fid: report.fid.expect("reference supplied"),
                judged_accuracy: report.accuracy.average,
                subnet_mse,
                subnet_accuracy,
            });
        }
    }

    let report = AblationReport {
        rows,
        config: serde_json::to_value(config).expect("config json"),
    };
    report.write(out_dir)?;
    Ok(report)
}
