//! Flat key=value run configuration.
//!
//! One document drives every command: dataset generation, training,
//! evaluation, and the experiment studies all read the same key space, so a
//! run is fully described by a single small text file. The grammar is
//! deliberately dumb — `key = value` lines, `#` comments — and the key set
//! is closed: anything unrecognized is an error (with a nearest-key
//! suggestion), because a silently ignored typo in `train.lambda` is a
//! wasted training run.
//!
//! Resolution order is file < command-line overrides; the fully materialized
//! config (every key, defaults included) is written next to a run's outputs
//! with a `config_hash` over its canonical form. Loading a resolved config
//! reproduces the run; editing one without removing the stale hash is caught
//! at load time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::datasets::cropper::CropSpec;
use crate::datasets::multi_mnist::MultiMnistSpec;
use crate::datasets::shapes::{ColorMode, ShapeClass, ShapeCountSpec};
use crate::datasets::split::HoldoutMode;
use crate::error::{Error, Result};
use crate::experiments::ablation::{AblationAxis, AblationConfig};
use crate::experiments::augment::{AugmentConfig, AugmentDesign, AugmentMode, AugmentOps};
use crate::experiments::transfer::{CountExclusion, TransferConfig};
use crate::fsio;
use crate::models::{Backbone, LabelMapping, ModelConfig};
use crate::nn::AdamConfig;
use crate::training::losses::GeneratorLoss;
use crate::training::trainer::{PredictorTrainConfig, TrainConfig};

/// Key carrying the document digest; excluded from the digest itself.
pub const CONFIG_HASH_KEY: &str = "config_hash";

/// An untyped, order-insensitive key=value document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    /// Parse `key = value` lines; `#` starts a comment, blanks are skipped,
    /// duplicate keys are rejected.
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut entries = BTreeMap::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(at) => &raw_line[..at],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected `key = value`, got `{}`",
                    lineno + 1,
                    raw_line.trim()
                )));
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(RawConfig { entries })
    }

    pub fn read(path: &Path) -> Result<RawConfig> {
        RawConfig::parse(&fsio::read_string(path)?)
    }

    /// Set (or override) one key.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Every key the document may contain (besides [`CONFIG_HASH_KEY`]).
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "output_dir",
    "dataset.classes",
    "dataset.max_count",
    "dataset.max_total",
    "dataset.images_per_combination",
    "dataset.side",
    "dataset.scale_min",
    "dataset.scale_max",
    "dataset.retry_budget",
    "dataset.font_variants",
    "shapes.classes",
    "shapes.max_count",
    "shapes.max_total",
    "shapes.images_per_combination",
    "shapes.side",
    "shapes.color_mode",
    "shapes.radius_min",
    "shapes.radius_max",
    "shapes.retry_budget",
    "crop.classes",
    "crop.patch_size",
    "crop.max_count",
    "crop.max_total",
    "crop.target_per_combination",
    "crop.stride",
    "crop.tau",
    "crop.tau_lo",
    "split.exclusions",
    "model.resolution",
    "model.image_channels",
    "model.n_classes",
    "model.max_count",
    "model.latent_dim",
    "model.gen_base",
    "model.gen_growth",
    "model.gen_head",
    "model.backbone",
    "model.label_mapping",
    "model.disc_base",
    "model.weight_sharing",
    "model.count_conditioned_disc",
    "model.pred_base",
    "train.epochs",
    "train.batch_size",
    "train.d_steps_per_g",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.lambda",
    "train.count_loss_enabled",
    "train.fake_count_trains_disc",
    "train.generator_loss",
    "judge.epochs",
    "judge.batch_size",
    "judge.lr",
    "judge.beta1",
    "judge.beta2",
    "eval.samples_per_combination",
    "eval.fraction",
    "experiment.seeds",
    "experiment.exclusions",
    "experiment.axes",
    "experiment.mode",
    "experiment.fractions",
    "experiment.flip",
    "experiment.max_translate",
    "experiment.verify_labels",
];

/// The typed, fully defaulted view of a config document.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed; every stage derives its own streams from it.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,

    // dataset gen-mnist
    pub dataset_classes: Vec<usize>,
    pub dataset_max_count: u32,
    pub dataset_max_total: Option<u32>,
    pub dataset_images_per_combination: usize,
    pub dataset_side: u32,
    pub dataset_scale: (f64, f64),
    pub dataset_retry_budget: usize,
    pub dataset_font_variants: usize,

    // dataset gen-shapes
    pub shapes_classes: Vec<ShapeClass>,
    pub shapes_max_count: u32,
    pub shapes_max_total: Option<u32>,
    pub shapes_images_per_combination: usize,
    pub shapes_side: u32,
    pub shapes_color_mode: ColorMode,
    pub shapes_radius: (f64, f64),
    pub shapes_retry_budget: usize,

    // dataset crop
    pub crop_classes: Vec<String>,
    pub crop_patch_size: u32,
    pub crop_max_count: u32,
    pub crop_max_total: Option<u32>,
    pub crop_target_per_combination: usize,
    pub crop_stride: u32,
    pub crop_tau: f64,
    pub crop_tau_lo: f64,

    // dataset split
    pub split_exclusions: Vec<CountExclusion>,

    pub model: ModelConfig,

    // train
    pub train_epochs: u32,
    pub train_batch_size: usize,
    pub train_d_steps_per_g: u32,
    pub train_adam: AdamConfig,
    pub train_lambda: f64,
    pub train_count_loss_enabled: bool,
    pub train_fake_count_trains_disc: bool,
    pub train_generator_loss: GeneratorLoss,

    // judge / count-predictor training
    pub judge_epochs: u32,
    pub judge_batch_size: usize,
    pub judge_adam: AdamConfig,

    // evaluation
    pub eval_samples_per_combination: usize,
    pub eval_fraction: f64,

    // experiments
    pub experiment_seeds: Vec<u64>,
    pub experiment_exclusions: Vec<CountExclusion>,
    pub experiment_axes: Vec<AblationAxis>,
    pub experiment_mode: AugmentMode,
    pub experiment_fractions: Vec<f64>,
    pub experiment_flip: bool,
    pub experiment_max_translate: f64,
    pub experiment_verify_labels: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            output_dir: None,
            dataset_classes: vec![0, 1, 2, 3],
            dataset_max_count: 2,
            dataset_max_total: Some(2),
            dataset_images_per_combination: 500,
            dataset_side: 32,
            dataset_scale: (0.5, 0.8),
            dataset_retry_budget: 1000,
            dataset_font_variants: 10,
            shapes_classes: vec![ShapeClass::Circle, ShapeClass::Square],
            shapes_max_count: 2,
            shapes_max_total: Some(2),
            shapes_images_per_combination: 500,
            shapes_side: 32,
            shapes_color_mode: ColorMode::FixedPerClass,
            shapes_radius: (3.0, 6.0),
            shapes_retry_budget: 1000,
            crop_classes: vec!["object".to_string()],
            crop_patch_size: 32,
            crop_max_count: 2,
            crop_max_total: Some(2),
            crop_target_per_combination: 500,
            crop_stride: 16,
            crop_tau: 0.5,
            crop_tau_lo: 0.25,
            split_exclusions: Vec::new(),
            model: ModelConfig::small(4, 2),
            train_epochs: 30,
            train_batch_size: 64,
            train_d_steps_per_g: 1,
            train_adam: AdamConfig::default(),
            train_lambda: 0.7,
            train_count_loss_enabled: true,
            train_fake_count_trains_disc: false,
            train_generator_loss: GeneratorLoss::NonSaturating,
            judge_epochs: 20,
            judge_batch_size: 64,
            judge_adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            eval_samples_per_combination: 64,
            eval_fraction: 0.15,
            experiment_seeds: vec![1, 2, 3],
            experiment_exclusions: vec![
                CountExclusion {
                    class: 1,
                    count: 1,
                    mode: HoldoutMode::Interpolation,
                },
                CountExclusion {
                    class: 2,
                    count: 2,
                    mode: HoldoutMode::Extrapolation,
                },
            ],
            experiment_axes: vec![AblationAxis::CountLoss],
            experiment_mode: AugmentMode::Replacement,
            experiment_fractions: vec![0.25, 0.5, 0.75],
            experiment_flip: true,
            experiment_max_translate: 0.1,
            experiment_verify_labels: false,
        }
    }
}

impl RunConfig {
    /// Typed view of a raw document: defaults, then each entry applied.
    /// An embedded `config_hash` is verified against the materialized
    /// content.
    pub fn from_raw(raw: &RawConfig) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (key, value) in raw.iter() {
            if key == CONFIG_HASH_KEY {
                continue;
            }
            cfg.apply(key, value)?;
        }
        if let Some(declared) = raw.get(CONFIG_HASH_KEY) {
            let actual = cfg.hash();
            if declared != actual {
                return Err(Error::InvalidConfig(format!(
                    "config_hash mismatch: document says {declared}, contents hash to \
                     {actual} (stale hash after an edit?)"
                )));
            }
        }
        Ok(cfg)
    }

    /// File (if given) < overrides; `output_dir` from the caller wins last.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut raw = match path {
            Some(p) => RawConfig::read(p)?,
            None => RawConfig::default(),
        };
        // Verify the file hash before overrides touch the document.
        RunConfig::from_raw(&raw)?;
        for (key, value) in overrides {
            if key == CONFIG_HASH_KEY {
                return Err(Error::InvalidConfig(
                    "config_hash cannot be set by hand".into(),
                ));
            }
            raw.set(key.clone(), value.clone());
        }
        raw.entries.remove(CONFIG_HASH_KEY);
        RunConfig::from_raw(&raw)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = p(key, v)?,
            "output_dir" => {
                self.output_dir = (!v.is_empty()).then(|| PathBuf::from(v));
            }
            "dataset.classes" => self.dataset_classes = p_list(key, v)?,
            "dataset.max_count" => self.dataset_max_count = p(key, v)?,
            "dataset.max_total" => self.dataset_max_total = p_opt(key, v)?,
            "dataset.images_per_combination" => {
                self.dataset_images_per_combination = p(key, v)?;
            }
            "dataset.side" => self.dataset_side = p(key, v)?,
            "dataset.scale_min" => self.dataset_scale.0 = p(key, v)?,
            "dataset.scale_max" => self.dataset_scale.1 = p(key, v)?,
            "dataset.retry_budget" => self.dataset_retry_budget = p(key, v)?,
            "dataset.font_variants" => self.dataset_font_variants = p(key, v)?,
            "shapes.classes" => self.shapes_classes = p_list(key, v)?,
            "shapes.max_count" => self.shapes_max_count = p(key, v)?,
            "shapes.max_total" => self.shapes_max_total = p_opt(key, v)?,
            "shapes.images_per_combination" => {
                self.shapes_images_per_combination = p(key, v)?;
            }
            "shapes.side" => self.shapes_side = p(key, v)?,
            "shapes.color_mode" => self.shapes_color_mode = p(key, v)?,
            "shapes.radius_min" => self.shapes_radius.0 = p(key, v)?,
            "shapes.radius_max" => self.shapes_radius.1 = p(key, v)?,
            "shapes.retry_budget" => self.shapes_retry_budget = p(key, v)?,
            "crop.classes" => self.crop_classes = p_list(key, v)?,
            "crop.patch_size" => self.crop_patch_size = p(key, v)?,
            "crop.max_count" => self.crop_max_count = p(key, v)?,
            "crop.max_total" => self.crop_max_total = p_opt(key, v)?,
            "crop.target_per_combination" => self.crop_target_per_combination = p(key, v)?,
            "crop.stride" => self.crop_stride = p(key, v)?,
            "crop.tau" => self.crop_tau = p(key, v)?,
            "crop.tau_lo" => self.crop_tau_lo = p(key, v)?,
            "split.exclusions" => self.split_exclusions = p_exclusions(key, v)?,
            "model.resolution" => self.model.resolution = p(key, v)?,
            "model.image_channels" => self.model.image_channels = p(key, v)?,
            "model.n_classes" => self.model.n_classes = p(key, v)?,
            "model.max_count" => self.model.max_count = p(key, v)?,
            "model.latent_dim" => self.model.latent_dim = p(key, v)?,
            "model.gen_base" => self.model.gen_base = p(key, v)?,
            "model.gen_growth" => self.model.gen_growth = p(key, v)?,
            "model.gen_head" => self.model.gen_head = p(key, v)?,
            "model.backbone" => {
                self.model.backbone = p_choice(key, v, &[("dense", Backbone::Dense), ("plain", Backbone::Plain)])?;
            }
            "model.label_mapping" => {
                self.model.label_mapping = p_choice(
                    key,
                    v,
                    &[
                        ("per_stage", LabelMapping::PerStage),
                        ("input_only", LabelMapping::InputOnly),
                    ],
                )?;
            }
            "model.disc_base" => self.model.disc_base = p(key, v)?,
            "model.weight_sharing" => self.model.weight_sharing = p(key, v)?,
            "model.count_conditioned_disc" => self.model.count_conditioned_disc = p(key, v)?,
            "model.pred_base" => self.model.pred_base = p(key, v)?,
            "train.epochs" => self.train_epochs = p(key, v)?,
            "train.batch_size" => self.train_batch_size = p(key, v)?,
            "train.d_steps_per_g" => self.train_d_steps_per_g = p(key, v)?,
            "train.lr" => self.train_adam.lr = p(key, v)?,
            "train.beta1" => self.train_adam.beta1 = p(key, v)?,
            "train.beta2" => self.train_adam.beta2 = p(key, v)?,
            "train.eps" => self.train_adam.eps = p(key, v)?,
            "train.lambda" => self.train_lambda = p(key, v)?,
            "train.count_loss_enabled" => self.train_count_loss_enabled = p(key, v)?,
            "train.fake_count_trains_disc" => {
                self.train_fake_count_trains_disc = p(key, v)?;
            }
            "train.generator_loss" => {
                self.train_generator_loss = p_choice(
                    key,
                    v,
                    &[
                        ("non_saturating", GeneratorLoss::NonSaturating),
                        ("minimax", GeneratorLoss::Minimax),
                    ],
                )?;
            }
            "judge.epochs" => self.judge_epochs = p(key, v)?,
            "judge.batch_size" => self.judge_batch_size = p(key, v)?,
            "judge.lr" => self.judge_adam.lr = p(key, v)?,
            "judge.beta1" => self.judge_adam.beta1 = p(key, v)?,
            "judge.beta2" => self.judge_adam.beta2 = p(key, v)?,
            "eval.samples_per_combination" => {
                self.eval_samples_per_combination = p(key, v)?;
            }
            "eval.fraction" => self.eval_fraction = p(key, v)?,
            "experiment.seeds" => self.experiment_seeds = p_list(key, v)?,
            "experiment.exclusions" => self.experiment_exclusions = p_exclusions(key, v)?,
            "experiment.axes" => self.experiment_axes = p_list(key, v)?,
            "experiment.mode" => self.experiment_mode = p(key, v)?,
            "experiment.fractions" => self.experiment_fractions = p_list(key, v)?,
            "experiment.flip" => self.experiment_flip = p(key, v)?,
            "experiment.max_translate" => self.experiment_max_translate = p(key, v)?,
            "experiment.verify_labels" => self.experiment_verify_labels = p(key, v)?,
            unknown => {
                return Err(Error::UnknownConfigKey {
                    key: unknown.to_string(),
                    suggestion: suggest(unknown),
                });
            }
        }
        Ok(())
    }

    /// Every key, materialized (defaults included), unsorted.
    pub fn entries(&self) -> Vec<(String, String)> {
        let excl = |list: &[CountExclusion]| {
            list.iter()
                .map(|e| format!("{}:{}:{}", e.class, e.count, e.mode))
                .collect::<Vec<_>>()
                .join(",")
        };
        let opt = |o: Option<u32>| o.map_or("none".to_string(), |v| v.to_string());
        let join = |items: Vec<String>| items.join(",");
        let m = &self.model;
        vec![
            ("seed", self.seed.to_string()),
            (
                "output_dir",
                self.output_dir
                    .as_ref()
                    .map_or(String::new(), |p| p.display().to_string()),
            ),
            ("dataset.classes", join(self.dataset_classes.iter().map(|c| c.to_string()).collect())),
            ("dataset.max_count", self.dataset_max_count.to_string()),
            ("dataset.max_total", opt(self.dataset_max_total)),
            (
                "dataset.images_per_combination",
                self.dataset_images_per_combination.to_string(),
            ),
            ("dataset.side", self.dataset_side.to_string()),
            ("dataset.scale_min", self.dataset_scale.0.to_string()),
            ("dataset.scale_max", self.dataset_scale.1.to_string()),
            ("dataset.retry_budget", self.dataset_retry_budget.to_string()),
            ("dataset.font_variants", self.dataset_font_variants.to_string()),
            ("shapes.classes", join(self.shapes_classes.iter().map(|c| c.to_string()).collect())),
            ("shapes.max_count", self.shapes_max_count.to_string()),
            ("shapes.max_total", opt(self.shapes_max_total)),
            (
                "shapes.images_per_combination",
                self.shapes_images_per_combination.to_string(),
            ),
            ("shapes.side", self.shapes_side.to_string()),
            (
                "shapes.color_mode",
                match self.shapes_color_mode {
                    ColorMode::FixedPerClass => "fixed".to_string(),
                    ColorMode::Random => "random".to_string(),
                },
            ),
            ("shapes.radius_min", self.shapes_radius.0.to_string()),
            ("shapes.radius_max", self.shapes_radius.1.to_string()),
            ("shapes.retry_budget", self.shapes_retry_budget.to_string()),
            ("crop.classes", self.crop_classes.join(",")),
            ("crop.patch_size", self.crop_patch_size.to_string()),
            ("crop.max_count", self.crop_max_count.to_string()),
            ("crop.max_total", opt(self.crop_max_total)),
            (
                "crop.target_per_combination",
                self.crop_target_per_combination.to_string(),
            ),
            ("crop.stride", self.crop_stride.to_string()),
            ("crop.tau", self.crop_tau.to_string()),
            ("crop.tau_lo", self.crop_tau_lo.to_string()),
            ("split.exclusions", excl(&self.split_exclusions)),
            ("model.resolution", m.resolution.to_string()),
            ("model.image_channels", m.image_channels.to_string()),
            ("model.n_classes", m.n_classes.to_string()),
            ("model.max_count", m.max_count.to_string()),
            ("model.latent_dim", m.latent_dim.to_string()),
            ("model.gen_base", m.gen_base.to_string()),
            ("model.gen_growth", m.gen_growth.to_string()),
            ("model.gen_head", m.gen_head.to_string()),
            (
                "model.backbone",
                match m.backbone {
                    Backbone::Dense => "dense".to_string(),
                    Backbone::Plain => "plain".to_string(),
                },
            ),
            (
                "model.label_mapping",
                match m.label_mapping {
                    LabelMapping::PerStage => "per_stage".to_string(),
                    LabelMapping::InputOnly => "input_only".to_string(),
                },
            ),
            ("model.disc_base", m.disc_base.to_string()),
            ("model.weight_sharing", m.weight_sharing.to_string()),
            ("model.count_conditioned_disc", m.count_conditioned_disc.to_string()),
            ("model.pred_base", m.pred_base.to_string()),
            ("train.epochs", self.train_epochs.to_string()),
            ("train.batch_size", self.train_batch_size.to_string()),
            ("train.d_steps_per_g", self.train_d_steps_per_g.to_string()),
            ("train.lr", self.train_adam.lr.to_string()),
            ("train.beta1", self.train_adam.beta1.to_string()),
            ("train.beta2", self.train_adam.beta2.to_string()),
            ("train.eps", self.train_adam.eps.to_string()),
            ("train.lambda", self.train_lambda.to_string()),
            ("train.count_loss_enabled", self.train_count_loss_enabled.to_string()),
            (
                "train.fake_count_trains_disc",
                self.train_fake_count_trains_disc.to_string(),
            ),
            (
                "train.generator_loss",
                match self.train_generator_loss {
                    GeneratorLoss::NonSaturating => "non_saturating".to_string(),
                    GeneratorLoss::Minimax => "minimax".to_string(),
                },
            ),
            ("judge.epochs", self.judge_epochs.to_string()),
            ("judge.batch_size", self.judge_batch_size.to_string()),
            ("judge.lr", self.judge_adam.lr.to_string()),
            ("judge.beta1", self.judge_adam.beta1.to_string()),
            ("judge.beta2", self.judge_adam.beta2.to_string()),
            (
                "eval.samples_per_combination",
                self.eval_samples_per_combination.to_string(),
            ),
            ("eval.fraction", self.eval_fraction.to_string()),
            (
                "experiment.seeds",
                join(self.experiment_seeds.iter().map(|s| s.to_string()).collect()),
            ),
            ("experiment.exclusions", excl(&self.experiment_exclusions)),
            (
                "experiment.axes",
                join(self.experiment_axes.iter().map(|a| a.to_string()).collect()),
            ),
            ("experiment.mode", self.experiment_mode.to_string()),
            (
                "experiment.fractions",
                join(self.experiment_fractions.iter().map(|f| f.to_string()).collect()),
            ),
            ("experiment.flip", self.experiment_flip.to_string()),
            ("experiment.max_translate", self.experiment_max_translate.to_string()),
            ("experiment.verify_labels", self.experiment_verify_labels.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Sorted `key = value` lines, no hash line: the digest input.
    pub fn canonical_text(&self) -> String {
        let mut entries = self.entries();
        entries.sort();
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 of [`Self::canonical_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// The document written beside run outputs: canonical text plus the
    /// hash line.
    pub fn resolved_text(&self) -> String {
        format!("{}{CONFIG_HASH_KEY} = {}\n", self.canonical_text(), self.hash())
    }

    pub fn write_resolved(&self, path: &Path) -> Result<()> {
        fsio::atomic_write(path, self.resolved_text().as_bytes())
    }

    // ---- typed stage views -------------------------------------------------

    pub fn multi_mnist_spec(&self) -> MultiMnistSpec {
        let mut spec = MultiMnistSpec::new(
            self.dataset_classes.clone(),
            self.dataset_max_count,
            self.dataset_side,
            self.seed,
        );
        spec.max_total = self.dataset_max_total;
        spec.images_per_combination = self.dataset_images_per_combination;
        spec.scale_range = self.dataset_scale;
        spec.retry_budget = self.dataset_retry_budget;
        spec
    }

    pub fn shape_spec(&self) -> ShapeCountSpec {
        let mut spec = ShapeCountSpec::new(
            self.shapes_classes.clone(),
            self.shapes_max_count,
            self.shapes_side,
            self.seed,
        );
        spec.max_total = self.shapes_max_total;
        spec.images_per_combination = self.shapes_images_per_combination;
        spec.color_mode = self.shapes_color_mode;
        spec.radius_range = self.shapes_radius;
        spec.retry_budget = self.shapes_retry_budget;
        spec
    }

    pub fn crop_spec(&self) -> CropSpec {
        let mut spec = CropSpec::new(
            self.crop_classes.clone(),
            self.crop_patch_size,
            self.crop_max_count,
            self.seed,
        );
        spec.max_total = self.crop_max_total;
        spec.target_per_combination = self.crop_target_per_combination;
        spec.stride = self.crop_stride;
        spec.tau = self.crop_tau;
        spec.tau_lo = self.crop_tau_lo;
        spec
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.model.clone());
        cfg.adam = self.train_adam;
        cfg.loss.lambda = self.train_lambda;
        cfg.loss.count_loss_enabled = self.train_count_loss_enabled;
        cfg.loss.fake_count_loss_trains_discriminator = self.train_fake_count_trains_disc;
        cfg.loss.generator_loss = self.train_generator_loss;
        cfg.epochs = self.train_epochs;
        cfg.batch_size = self.train_batch_size;
        cfg.seed = self.seed;
        cfg.d_steps_per_g = self.train_d_steps_per_g;
        cfg
    }

    pub fn judge_config(&self) -> PredictorTrainConfig {
        let mut cfg = PredictorTrainConfig::new(self.model.clone());
        cfg.adam = self.judge_adam;
        cfg.epochs = self.judge_epochs;
        cfg.batch_size = self.judge_batch_size;
        cfg.seed = self.seed;
        cfg
    }

    pub fn transfer_config(&self) -> TransferConfig {
        TransferConfig {
            train: self.train_config(),
            judge: self.judge_config(),
            samples_per_combination: self.eval_samples_per_combination,
            seeds: self.experiment_seeds.clone(),
        }
    }

    pub fn ablation_config(&self) -> AblationConfig {
        AblationConfig {
            train: self.train_config(),
            judge: self.judge_config(),
            axes: self.experiment_axes.clone(),
            seeds: self.experiment_seeds.clone(),
            samples_per_combination: self.eval_samples_per_combination,
            eval_fraction: self.eval_fraction,
            split_seed: self.seed,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            predictor: self.judge_config(),
            design: AugmentDesign {
                mode: self.experiment_mode,
                fractions: self.experiment_fractions.clone(),
                ops: AugmentOps {
                    horizontal_flip: self.experiment_flip,
                    max_translate_frac: self.experiment_max_translate,
                },
            },
            seeds: self.experiment_seeds.clone(),
            eval_fraction: self.eval_fraction,
            split_seed: self.seed,
            verify_synthetic_labels: self.experiment_verify_labels,
        }
    }

    /// Make the model geometry match a dataset: class/count support and
    /// image shape always come from the data, never the document.
    pub fn align_model_to(
        &mut self,
        n_classes: usize,
        max_count: u32,
        resolution: crate::datasets::Resolution,
    ) -> Result<()> {
        if resolution.height != resolution.width {
            return Err(Error::InvalidConfig(format!(
                "model needs square images, dataset is {resolution}"
            )));
        }
        self.model.n_classes = n_classes;
        self.model.max_count = max_count;
        self.model.resolution = resolution.height;
        self.model.image_channels = resolution.channels;
        Ok(())
    }
}

/// Parse one scalar via `FromStr`, wrapping failures with the key name.
fn p<T>(key: &str, v: &str) -> Result<T>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| {
        Error::InvalidConfig(format!(
            "key `{key}`: cannot parse `{v}` ({e})"
        ))
    })
}

/// Comma-separated list of `FromStr` items; empty string = empty list.
fn p_list<T>(key: &str, v: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|item| p(key, item.trim())).collect()
}

/// `none` (or empty) clears the option.
fn p_opt(key: &str, v: &str) -> Result<Option<u32>> {
    match v {
        "" | "none" => Ok(None),
        other => Ok(Some(p(key, other)?)),
    }
}

/// Closed-vocabulary value; the error lists what would have been accepted.
fn p_choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == v)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::InvalidConfig(format!(
                "key `{key}`: `{v}` is not one of {}",
                names.join("|")
            ))
        })
}

/// `class:count:mode` triples, comma-separated.
fn p_exclusions(key: &str, v: &str) -> Result<Vec<CountExclusion>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            if parts.len() != 3 {
                return Err(Error::InvalidConfig(format!(
                    "key `{key}`: exclusion `{item}` is not class:count:mode"
                )));
            }
            Ok(CountExclusion {
                class: p(key, parts[0])?,
                count: p(key, parts[1])?,
                mode: p(key, parts[2])?,
            })
        })
        .collect()
}

/// Closest known key within a small edit distance, for typo messages.
fn suggest(unknown: &str) -> Option<String> {
    KNOWN_KEYS
        .iter()
        .map(|k| (strsim::levenshtein(unknown, k), *k))
        .min()
        .filter(|(d, _)| *d <= 3)
        .map(|(_, k)| k.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_document_form() {
        let cfg = RunConfig::default();
        let raw = RawConfig::parse(&cfg.resolved_text()).unwrap();
        let back = RunConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn every_known_key_is_produced_and_accepted() {
        let cfg = RunConfig::default();
        let entries = cfg.entries();
        let mut produced: Vec<&str> = entries.iter().map(|(k, _)| k.as_str()).collect();
        produced.sort_unstable();
        let mut known = KNOWN_KEYS.to_vec();
        known.sort_unstable();
        assert_eq!(produced, known, "entries() and KNOWN_KEYS must agree");

        // And apply() accepts each one back.
        let mut target = RunConfig::default();
        for (k, v) in &entries {
            target.apply(k, v).unwrap();
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_suggestion() {
        let raw = RawConfig::parse("train.lamda = 0.5\n").unwrap();
        match RunConfig::from_raw(&raw) {
            Err(Error::UnknownConfigKey { key, suggestion }) => {
                assert_eq!(key, "train.lamda");
                assert_eq!(suggestion.as_deref(), Some("train.lambda"));
            }
            other => panic!("expected UnknownConfigKey, got {other:?}"),
        }
    }

    #[test]
    fn parser_rejects_garbage_lines_and_duplicates() {
        assert!(RawConfig::parse("just words\n").is_err());
        assert!(RawConfig::parse("a = 1\na = 2\n").is_err());
        let ok = RawConfig::parse("# comment\n\nseed = 5 # trailing\n").unwrap();
        assert_eq!(ok.get("seed"), Some("5"));
    }

    #[test]
    fn overrides_beat_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fsio::atomic_write(&path, b"seed = 3\ntrain.epochs = 9\n").unwrap();
        let cfg = RunConfig::load(
            Some(&path),
            &[("train.epochs".to_string(), "4".to_string())],
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train_epochs, 4);
    }

    #[test]
    fn stale_embedded_hashes_are_caught() {
        let cfg = RunConfig::default();
        let tampered = cfg
            .resolved_text()
            .replace("train.lambda = 0.7", "train.lambda = 0.9");
        let raw = RawConfig::parse(&tampered).unwrap();
        let err = RunConfig::from_raw(&raw).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(ref m) if m.contains("config_hash")), "{err}");
    }

    #[test]
    fn hash_ignores_ordering_and_comments_but_not_values() {
        let a = RunConfig::from_raw(&RawConfig::parse("seed = 1\ntrain.lr = 0.001\n").unwrap())
            .unwrap();
        let b = RunConfig::from_raw(
            &RawConfig::parse("# hi\ntrain.lr = 0.001\nseed = 1\n").unwrap(),
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c =
            RunConfig::from_raw(&RawConfig::parse("seed = 2\ntrain.lr = 0.001\n").unwrap())
                .unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn exclusion_syntax_round_trips() {
        let raw = RawConfig::parse(
            "experiment.exclusions = 1:1:interpolation, 2:2:extrapolation\n",
        )
        .unwrap();
        let cfg = RunConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.experiment_exclusions.len(), 2);
        assert_eq!(cfg.experiment_exclusions[0].class, 1);
        assert_eq!(cfg.experiment_exclusions[1].mode, HoldoutMode::Extrapolation);
        let text = cfg.entries().into_iter().find(|(k, _)| k == "experiment.exclusions");
        assert_eq!(
            text.unwrap().1,
            "1:1:interpolation,2:2:extrapolation"
        );
        assert!(p_exclusions("x", "1:2").is_err());
    }

    #[test]
    fn stage_views_carry_the_master_seed() {
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        assert_eq!(cfg.multi_mnist_spec().seed, 42);
        assert_eq!(cfg.train_config().seed, 42);
        assert_eq!(cfg.judge_config().seed, 42);
        assert_eq!(cfg.ablation_config().split_seed, 42);
        let t = cfg.transfer_config();
        assert_eq!(t.seeds, vec![1, 2, 3]);
        assert_eq!(t.train.batch_size, cfg.train_batch_size);
    }
}
