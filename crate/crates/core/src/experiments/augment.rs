//! Real/synthetic data mixing for count predictors.
//!
//! Can generated images stretch — or replace — real training data for a
//! counting task? Each cell of the study trains an identical count
//! predictor on a different mixture and scores it on one shared held-out
//! real evaluation set:
//!
//! * *additive* mode: real only; real + classically augmented copies
//!   (horizontal flip and small translation, one copy per real image);
//!   real + the same number of generated images.
//! * *replacement* mode: the full-real and full-synthetic anchors, then per
//!   requested fraction `x` a pair of cells — `x` real only, and `x` real
//!   topped back up to full size with synthetic images.
//!
//! Synthetic images take their conditioning counts as labels, trusting the
//! generator; with label verification enabled, a reference predictor
//! re-judges them and the disagreement rate is reported per cell.

use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, Array4, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::loader::LoadedDataset;
use crate::datasets::manifest::DatasetManifest;
use crate::datasets::CountVector;
use crate::error::{Error, Result};
use crate::evaluation::metrics::{count_accuracy, round_count};
use crate::fsio;
use crate::models::{CountPredictorParams, GeneratorParams, LatentSample};
use crate::rng::{derive_rng, derive_seed, tags};
use crate::training::checkpoint::Checkpoint;
use crate::training::trainer::{PredictorTrainConfig, Trainer};

use super::{mean, stratified_eval_split, train_predictor_traced};

// Sub-stream tags under `tags::EXPERIMENT`.
const SUB_SYNTH: u64 = 0xA1;
const SUB_AUG: u64 = 0xA2;
const SUB_CELL: u64 = 0xA3;
const SUB_VERIFY: u64 = 0xA4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Additive,
    Replacement,
}

impl std::fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AugmentMode::Additive => "additive",
            AugmentMode::Replacement => "replacement",
        })
    }
}

impl FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(AugmentMode::Additive),
            "replacement" => Ok(AugmentMode::Replacement),
            other => Err(Error::InvalidConfig(format!(
                "unknown augmentation mode `{other}` (expected additive or replacement)"
            ))),
        }
    }
}

/// Classical augmentation: the minimal set that leaves counts intact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentOps {
    pub horizontal_flip: bool,
    /// Maximum translation, as a fraction of image width (and height).
    pub max_translate_frac: f64,
}

impl Default for AugmentOps {
    fn default() -> Self {
        AugmentOps {
            horizontal_flip: true,
            max_translate_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentDesign {
    pub mode: AugmentMode,
    /// Real-data fractions for replacement pairs; strictly inside (0, 1).
    /// Ignored in additive mode (which has its three fixed rows).
    pub fractions: Vec<f64>,
    pub ops: AugmentOps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Per-cell predictor budget; identical for every cell by construction.
    pub predictor: PredictorTrainConfig,
    pub design: AugmentDesign,
    pub seeds: Vec<u64>,
    /// Fraction of real rows held out per combination for evaluation.
    pub eval_fraction: f64,
    /// Seed of the train/eval split and of the real-subset nesting order.
    pub split_seed: u64,
    /// Re-judge synthetic labels with a reference predictor and report the
    /// disagreement rate.
    pub verify_synthetic_labels: bool,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "augmentation study needs at least one seed".into(),
            ));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::InvalidFraction {
                value: self.eval_fraction,
                reason: "eval_fraction must lie strictly between 0 and 1".into(),
            });
        }
        if !(self.design.ops.max_translate_frac >= 0.0
            && self.design.ops.max_translate_frac < 1.0)
        {
            return Err(Error::InvalidFraction {
                value: self.design.ops.max_translate_frac,
                reason: "max_translate_frac must lie in [0, 1)".into(),
            });
        }
        match self.design.mode {
            AugmentMode::Replacement => {
                if self.design.fractions.is_empty() {
                    return Err(Error::InvalidConfig(
                        "replacement mode needs at least one fraction".into(),
                    ));
                }
                for &x in &self.design.fractions {
                    if !(x > 0.0 && x < 1.0) {
                        return Err(Error::InvalidFraction {
                            value: x,
                            reason: "replacement fractions must lie strictly between 0 and 1; \
                                     the pure-real and pure-synthetic anchor cells are always \
                                     included"
                                .into(),
                        });
                    }
                }
            }
            AugmentMode::Additive => {
                if !self.design.fractions.is_empty() {
                    return Err(Error::InvalidConfig(
                        "additive mode has fixed rows and takes no fractions".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One cell of the study, aggregated over seeds. Fractions are relative to
/// the real training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRow {
    pub label: String,
    pub real_fraction: f64,
    pub synthetic_fraction: f64,
    pub augmented: bool,
    /// Number of training images in this cell.
    pub train_size: usize,
    pub average_accuracy: f64,
    pub per_seed_accuracy: Vec<f64>,
    /// Fraction of synthetic images whose re-judged counts disagree with
    /// their conditioning (only with label verification, only for cells
    /// that contain synthetic images).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_noise: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub rows: Vec<AugmentationRow>,
    pub config: serde_json::Value,
}

impl AugmentationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report json");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,real_fraction,synthetic_fraction,augmented,train_size,average_accuracy,label_noise\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.label,
                r.real_fraction,
                r.synthetic_fraction,
                r.augmented,
                r.train_size,
                r.average_accuracy,
                r.label_noise.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fsio::atomic_write(&dir.join("augment_report.json"), self.to_json().as_bytes())?;
        fsio::atomic_write(&dir.join("augment_report.csv"), self.to_csv().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_slice(&fsio::read_bytes(path)?).map_err(|e| Error::json(path, e))
    }
}

/// Random horizontal flip plus small integer translation; vacated pixels
/// take the background value. Neither op changes what is countable, which
/// is the point: the comparison stays about sample diversity.
pub fn augment_image<R: Rng>(image: ArrayView3<'_, f32>, ops: &AugmentOps, rng: &mut R) -> Array3<f32> {
    let (c, h, w) = image.dim();
    let mut out = image.to_owned();
    if ops.horizontal_flip && rng.random_bool(0.5) {
        out.invert_axis(Axis(2));
    }
    let t = (ops.max_translate_frac * w as f64).floor() as i64;
    let dx = rng.random_range(-t..=t);
    let dy = rng.random_range(-t..=t);
    if dx == 0 && dy == 0 {
        return out;
    }
    let mut shifted = Array3::from_elem((c, h, w), -1.0f32);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (sy, sx) = (y - dy, x - dx);
            if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                for ch in 0..c {
                    shifted[[ch, y as usize, x as usize]] =
                        out[[ch, sy as usize, sx as usize]];
                }
            }
        }
    }
    shifted
}

/// One training cell before materialization.
struct Cell {
    label: String,
    real_fraction: f64,
    synthetic_fraction: f64,
    augmented: bool,
}

fn cells_for(design: &AugmentDesign) -> Vec<Cell> {
    let cell = |label: &str, real: f64, syn: f64, augmented: bool| Cell {
        label: label.to_string(),
        real_fraction: real,
        synthetic_fraction: syn,
        augmented,
    };
    match design.mode {
        AugmentMode::Additive => vec![
            cell("real_only", 1.0, 0.0, false),
            cell("real_plus_augmented", 1.0, 0.0, true),
            cell("real_plus_synthetic", 1.0, 1.0, false),
        ],
        AugmentMode::Replacement => {
            let mut fractions = design.fractions.clone();
            fractions.sort_by(|a, b| a.partial_cmp(b).expect("finite fractions"));
            let mut cells = vec![
                cell("real_only", 1.0, 0.0, false),
                cell("synthetic_only", 0.0, 1.0, false),
            ];
            for x in fractions {
                let pct = (x * 100.0).round() as u32;
                cells.push(cell(&format!("{pct}pct_real_only"), x, 0.0, false));
                cells.push(cell(
                    &format!("{pct}pct_real_{}pct_syn", 100 - pct),
                    x,
                    1.0 - x,
                    false,
                ));
            }
            cells
        }
    }
}

/// Generate `conditioning.len()` images in batches.
fn synthesize(
    g: &GeneratorParams<f32>,
    conditioning: &[CountVector],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Array4<f32> {
    const BATCH: usize = 64;
    let cfg = &g.cfg;
    let n = conditioning.len();
    let side = cfg.resolution as usize;
    let mut out = Array4::zeros((n, cfg.image_channels as usize, side, side));
    let mut at = 0;
    while at < n {
        let hi = (at + BATCH).min(n);
        let latents =
            LatentSample::<f32>::draw(cfg.latent_dim, conditioning[at..hi].to_vec(), rng);
        out.slice_mut(s![at..hi, .., .., ..]).assign(&g.forward(&latents));
        at = hi;
    }
    out
}

/// Batched predictor evaluation.
fn predict_counts(p: &CountPredictorParams<f32>, images: &Array4<f32>) -> Array2<f64> {
    const BATCH: usize = 64;
    let n = images.dim().0;
    let mut preds = Array2::<f64>::zeros((n, p.cfg.n_classes));
    let mut at = 0;
    while at < n {
        let hi = (at + BATCH).min(n);
        let batch = images.slice(s![at..hi, .., .., ..]).to_owned();
        preds
            .slice_mut(s![at..hi, ..])
            .assign(&p.forward_eval(&batch).mapv(|v| v as f64));
        at = hi;
    }
    preds
}

/// Run the study. The generator checkpoint must come from a model trained
/// on the same class/count space as `manifest_path`.
pub fn run_augmentation_study(
    manifest_path: &Path,
    generator_checkpoint: &Path,
    config: &AugmentConfig,
    out_dir: &Path,
) -> Result<AugmentationReport> {
    config.validate()?;

    let manifest = DatasetManifest::read(manifest_path)?;
    let trainer = Trainer::from_checkpoint(&Checkpoint::read(generator_checkpoint)?)?;
    let g = trainer.g;
    let header = &manifest.header;
    if g.cfg.n_classes != header.n_classes()
        || g.cfg.max_count != header.max_count
        || g.cfg.resolution != header.resolution.height
        || g.cfg.resolution != header.resolution.width
        || g.cfg.image_channels != header.resolution.channels
    {
        return Err(Error::InvalidConfig(format!(
            "generator checkpoint ({} classes, max_count {}, {}x{}x{}) does not match the \
             dataset ({} classes, max_count {}, {}x{}x{})",
            g.cfg.n_classes,
            g.cfg.max_count,
            g.cfg.image_channels,
            g.cfg.resolution,
            g.cfg.resolution,
            header.n_classes(),
            header.max_count,
            header.resolution.channels,
            header.resolution.height,
            header.resolution.width,
        )));
    }
    drop(manifest);

    let full_data = LoadedDataset::load(manifest_path)?;
    let (train_rows, eval_rows) =
        stratified_eval_split(&full_data.counts, config.eval_fraction, config.split_seed);
    if eval_rows.is_empty() {
        return Err(Error::InsufficientSamples(
            "augmentation evaluation split is empty".into(),
        ));
    }
    let train_data = full_data.select(&train_rows);
    let eval_data = full_data.select(&eval_rows);
    drop(full_data);
    let n_train = train_data.len();

    // Nested real subsets: one shuffled order per combination, shared by
    // every cell and seed, so 25% real is a subset of 50% real and the
    // "x% real only" cell trains on exactly the real rows of its pair cell.
    let combo_orders: Vec<Vec<usize>> = {
        use rand::seq::SliceRandom;
        let mut groups: std::collections::BTreeMap<&CountVector, Vec<usize>> =
            std::collections::BTreeMap::new();
        for (i, c) in train_data.counts.iter().enumerate() {
            groups.entry(c).or_default().push(i);
        }
        groups
            .into_values()
            .enumerate()
            .map(|(combo_idx, mut rows)| {
                rows.shuffle(&mut derive_rng(
                    config.split_seed,
                    &[tags::EXPERIMENT, SUB_CELL, combo_idx as u64],
                ));
                rows
            })
            .collect()
    };
    let real_rows_for = |fraction: f64| -> Vec<usize> {
        let mut rows: Vec<usize> = combo_orders
            .iter()
            .flat_map(|order| {
                let keep = (order.len() as f64 * fraction).round() as usize;
                order[..keep.min(order.len())].iter().copied()
            })
            .collect();
        rows.sort_unstable();
        rows
    };
    let combos = {
        let set: std::collections::BTreeSet<_> = train_data.counts.iter().cloned().collect();
        set.into_iter().collect::<Vec<_>>()
    };

    let verifier = config
        .verify_synthetic_labels
        .then(|| {
            let mut cfg = config.predictor.clone();
            cfg.seed = derive_seed(config.split_seed, &[tags::EXPERIMENT, SUB_VERIFY]);
            train_predictor_traced(
                &cfg,
                &train_data,
                &out_dir.join("traces").join("verifier.jsonl"),
            )
        })
        .transpose()?;

    let cells = cells_for(&config.design);
    let traces = out_dir.join("traces");
    let mut rows = Vec::with_capacity(cells.len());
    for (cell_idx, cell) in cells.iter().enumerate() {
        let real_rows = real_rows_for(cell.real_fraction);
        let n_real = real_rows.len();
        // Replacement pairs top back up to the full training size; additive
        // cells add one synthetic (or augmented) copy per real image.
        let n_syn = match config.design.mode {
            AugmentMode::Replacement if cell.synthetic_fraction > 0.0 => n_train - n_real,
            AugmentMode::Additive if cell.synthetic_fraction > 0.0 => n_train,
            _ => 0,
        };
        let conditioning: Vec<CountVector> = (0..n_syn)
            .map(|k| combos[k % combos.len()].clone())
            .collect();

        let mut per_seed_accuracy = Vec::with_capacity(config.seeds.len());
        let mut per_seed_noise = Vec::new();
        for &seed in &config.seeds {
            let (real_images, real_counts) = train_data.batch(&real_rows);
            let mut images = real_images;
            let mut counts = real_counts;
            if cell.augmented {
                let mut rng = derive_rng(seed, &[tags::EXPERIMENT, SUB_AUG, cell_idx as u64]);
                let n = images.dim().0;
                let (_, c, h, w) = images.dim();
                let mut all = Array4::zeros((2 * n, c, h, w));
                all.slice_mut(s![..n, .., .., ..]).assign(&images);
                for i in 0..n {
                    let aug =
                        augment_image(images.index_axis(Axis(0), i), &config.design.ops, &mut rng);
                    all.index_axis_mut(Axis(0), n + i).assign(&aug);
                }
                images = all;
                counts.extend_from_slice(&counts.clone());
            }
            if n_syn > 0 {
                let mut rng = derive_rng(seed, &[tags::EXPERIMENT, SUB_SYNTH, cell_idx as u64]);
                let synthetic = synthesize(&g, &conditioning, &mut rng);
                if let Some(verifier) = &verifier {
                    let judged = predict_counts(verifier, &synthetic);
                    let disagreements = judged
                        .axis_iter(Axis(0))
                        .zip(&conditioning)
                        .filter(|(pred, want)| {
                            pred.iter()
                                .zip(&want.0)
                                .any(|(&p, &c)| round_count(p, g.cfg.max_count) != c)
                        })
                        .count();
                    per_seed_noise.push(disagreements as f64 / n_syn as f64);
                }
                let n = images.dim().0;
                let (_, c, h, w) = images.dim();
                let mut all = Array4::zeros((n + n_syn, c, h, w));
                all.slice_mut(s![..n, .., .., ..]).assign(&images);
                all.slice_mut(s![n.., .., .., ..]).assign(&synthetic);
                images = all;
                counts.extend(conditioning.iter().cloned());
            }

            let cell_data = LoadedDataset::from_parts(
                images,
                counts,
                train_data.class_names.clone(),
                train_data.max_count,
            );
            let mut predictor_cfg = config.predictor.clone();
            predictor_cfg.seed = derive_seed(seed, &[tags::EXPERIMENT, SUB_CELL, cell_idx as u64]);
            let predictor = train_predictor_traced(
                &predictor_cfg,
                &cell_data,
                &traces.join(format!("{}_seed{seed}.jsonl", cell.label)),
            )?;
            let preds = predict_counts(&predictor, &eval_data.images);
            let accuracy =
                count_accuracy(preds.view(), &eval_data.counts, eval_data.max_count)?.average;
            per_seed_accuracy.push(accuracy);
        }

        rows.push(AugmentationRow {
            label: cell.label.clone(),
            real_fraction: cell.real_fraction,
            synthetic_fraction: cell.synthetic_fraction,
            augmented: cell.augmented,
            train_size: n_real + n_syn + if cell.augmented { n_real } else { 0 },
            average_accuracy: mean(&per_seed_accuracy),
            per_seed_accuracy,
            label_noise: (!per_seed_noise.is_empty()).then(|| mean(&per_seed_noise)),
        });
    }

    let report = AugmentationReport {
        rows,
        config: serde_json::to_value(config).expect("config json"),
    };
    report.write(out_dir)?;
    Ok(report)
}
