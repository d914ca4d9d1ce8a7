//! Count transfer: does conditioning survive on combinations never trained?
//!
//! Protocol per seed: hold out the excluded (class, count) combinations,
//! train the full model on the remainder, then generate images conditioned
//! on (a) the combinations that stayed in training, (b) the interpolation
//! holdouts, (c) the extrapolation holdouts, and judge each group with a
//! count predictor trained on the *complete* real dataset. The judge must
//! see the held-out combinations — it has to know how to count them — while
//! the generator must not; that asymmetry is the experiment.
//!
//! The summary statistic per group is the judged count MSE, averaged over
//! seeds. A model that merely memorizes (combination → image) pairs shows a
//! cliff between the seen column and the others; a model that learned the
//! count concept degrades gently, interpolation before extrapolation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::loader::LoadedDataset;
use crate::datasets::manifest::DatasetManifest;
use crate::datasets::split::{split_holdout, HoldoutMode};
use crate::error::{Error, Result};
use crate::evaluation::report::{evaluate_generation, GenerationEvalSpec};
use crate::fsio;
use crate::rng::{derive_seed, tags};
use crate::training::trainer::{PredictorTrainConfig, TrainConfig};

use super::{manifest_row_indices, mean, train_gan_traced, train_predictor_traced};

/// One held-out (class, count) pair plus the claim being tested by holding
/// it out: `Interpolation` removes an interior count value, `Extrapolation`
/// the top of the range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountExclusion {
    pub class: usize,
    pub count: u32,
    pub mode: HoldoutMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Template for each per-seed run; its `seed` field is replaced.
    pub train: TrainConfig,
    /// Budget for the independent judge (trained once, on the full set).
    pub judge: PredictorTrainConfig,
    pub samples_per_combination: usize,
    pub seeds: Vec<u64>,
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("transfer needs at least one seed".into()));
        }
        if self.samples_per_combination == 0 {
            return Err(Error::InvalidConfig(
                "samples_per_combination must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Judged generation MSE per combination group, aggregated over seeds.
///
/// A column is `None` (and its per-seed list empty) when no exclusion of
/// that mode was requested; present columns are non-negative and their
/// per-seed lists have one entry per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub mse_seen: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_interpolation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_extrapolation: Option<f64>,
    pub per_seed_seen: Vec<f64>,
    pub per_seed_interpolation: Vec<f64>,
    pub per_seed_extrapolation: Vec<f64>,
    pub exclusions: Vec<CountExclusion>,
    pub config: serde_json::Value,
}

impl TransferReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report json");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let cell = |column: &[f64], i: usize| {
            column.get(i).map(|v| v.to_string()).unwrap_or_default()
        };
        let mut out = String::from("seed,seen,interpolation,extrapolation\n");
        let seeds = self.config["seeds"].as_array().cloned().unwrap_or_default();
        for (i, seed) in seeds.iter().enumerate() {
            out.push_str(&format!(
                "{seed},{},{},{}\n",
                cell(&self.per_seed_seen, i),
                cell(&self.per_seed_interpolation, i),
                cell(&self.per_seed_extrapolation, i),
            ));
        }
        out.push_str(&format!(
            "mean,{},{},{}\n",
            self.mse_seen,
            self.mse_interpolation.map(|v| v.to_string()).unwrap_or_default(),
            self.mse_extrapolation.map(|v| v.to_string()).unwrap_or_default(),
        ));
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fsio::atomic_write(&dir.join("transfer_report.json"), self.to_json().as_bytes())?;
        fsio::atomic_write(&dir.join("transfer_report.csv"), self.to_csv().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_slice(&fsio::read_bytes(path)?).map_err(|e| Error::json(path, e))
    }
}

/// Run the transfer experiment rooted at `manifest_path`, writing traces and
/// per-seed evaluation reports under `out_dir`.
pub fn run_count_transfer(
    manifest_path: &Path,
    exclusions: &[CountExclusion],
    config: &TransferConfig,
    out_dir: &Path,
) -> Result<TransferReport> {
    config.validate()?;
    if exclusions.is_empty() {
        return Err(Error::InvalidConfig(
            "transfer needs at least one excluded (class, count) pair".into(),
        ));
    }

    let full_manifest = DatasetManifest::read(manifest_path)?;
    let interp_pairs: Vec<(usize, u32)> = exclusions
        .iter()
        .filter(|e| e.mode == HoldoutMode::Interpolation)
        .map(|e| (e.class, e.count))
        .collect();
    let extrap_pairs: Vec<(usize, u32)> = exclusions
        .iter()
        .filter(|e| e.mode == HoldoutMode::Extrapolation)
        .map(|e| (e.class, e.count))
        .collect();

    // Peel off the holdouts mode by mode; what survives is the train set.
    let (after_interp, interp_heldout) =
        split_holdout(&full_manifest, &interp_pairs, HoldoutMode::Interpolation)?;
    let (train_manifest, extrap_heldout) =
        split_holdout(&after_interp, &extrap_pairs, HoldoutMode::Extrapolation)?;

    let full_data = LoadedDataset::load(manifest_path)?;
    let train_data = full_data.select(&manifest_row_indices(&full_manifest, &train_manifest)?);

    let traces = out_dir.join("traces");
    let reports = out_dir.join("reports");
    let judge = train_predictor_traced(&config.judge, &full_data, &traces.join("judge.jsonl"))?;

    // (column name, conditioning grid); empty grids are skipped.
    let columns = [
        ("seen", train_manifest.combinations_present()),
        ("interpolation", interp_heldout.combinations_present()),
        ("extrapolation", extrap_heldout.combinations_present()),
    ];

    let mut per_seed: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for &seed in &config.seeds {
        let mut train_cfg = config.train.clone();
        train_cfg.seed = seed;
        let (g, d) = train_gan_traced(
            train_cfg,
            &train_data,
            &traces.join(format!("gan_seed{seed}.jsonl")),
        )?;
        for (column, (name, grid)) in columns.iter().enumerate() {
            if grid.is_empty() {
                continue;
            }
            let spec = GenerationEvalSpec {
                grid: grid.clone(),
                samples_per_count: config.samples_per_combination,
                seed: derive_seed(seed, &[tags::EXPERIMENT, column as u64]),
            };
            let report = evaluate_generation(&g, &d, &judge, &spec, None)?;
            report.write(&reports.join(format!("seed{seed}_{name}.json")))?;
            per_seed[column].push(report.count_mse);
        }
    }

    let [per_seed_seen, per_seed_interpolation, per_seed_extrapolation] = per_seed;
    let column_mean = |v: &[f64]| (!v.is_empty()).then(|| mean(v));
    let report = TransferReport {
        mse_seen: mean(&per_seed_seen),
        mse_interpolation: column_mean(&per_seed_interpolation),
        mse_extrapolation: column_mean(&per_seed_extrapolation),
        per_seed_seen,
        per_seed_interpolation,
        per_seed_extrapolation,
        exclusions: exclusions.to_vec(),
        config: serde_json::to_value(config).expect("config json"),
    };
    report.write(out_dir)?;
    Ok(report)
}
