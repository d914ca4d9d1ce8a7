//! Seeded, resumable adversarial training.
//!
//! Determinism contract: a (config, dataset, seed) triple fixes every byte
//! of the trained parameters. Batch order comes from per-epoch derived
//! streams (so epoch `e`'s shuffle never depends on how much randomness
//! earlier epochs consumed), while latent and conditioning draws come from
//! one sequential loop stream whose state is captured in checkpoints —
//! resuming from a checkpoint is bitwise-identical to having never stopped.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::loader::LoadedDataset;
use crate::datasets::CountVector;
use crate::error::{Error, Result};
use crate::models::{
    init_param_set, init_params, CountPredictorParams, DiscriminatorParams, GeneratorParams,
    LatentSample, ModelConfig,
};
use crate::nn::{Adam, AdamConfig, ParamSet, Real};
use crate::rng::{derive_rng, tags, RngState};

use super::checkpoint::{pack_params, unpack_params, Checkpoint};
use super::losses::{count_loss, count_loss_grad};
use super::step::{discriminator_loss_and_grads, generator_loss_and_grads, LossConfig};

/// Sub-stream tags under [`tags::TRAIN_LOOP`].
const SUB_SHUFFLE: u64 = 1;
const SUB_DROPOUT: u64 = 2;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    /// Discriminator updates per generator update.
    pub d_steps_per_g: u32,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            epochs: 50,
            batch_size: 64,
            seed: 0,
            d_steps_per_g: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.d_steps_per_g == 0 {
            return Err(Error::InvalidConfig(
                "d_steps_per_g must be at least 1".into(),
            ));
        }
        if !(self.loss.lambda.is_finite() && self.loss.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and non-negative, got {}",
                self.loss.lambda
            )));
        }
        Ok(())
    }
}

/// Per-epoch averages of the step losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Count loss of the discriminator's count head on real images.
    pub count_real: f64,
    /// Count loss on generated images (the generator's count term).
    pub count_fake: f64,
    pub d_steps: u32,
    pub g_steps: u32,
}

/// Live training state.
pub struct Trainer {
    pub config: TrainConfig,
    pub g: GeneratorParams<f32>,
    pub d: DiscriminatorParams<f32>,
    adam_g: Adam<f32, GeneratorParams<f32>>,
    adam_d: Adam<f32, DiscriminatorParams<f32>>,
    rng: ChaCha8Rng,
    /// Index of the next epoch to run (== number of completed epochs).
    pub next_epoch: u32,
    pub step: u64,
    /// Empirical conditioning support (distinct count combinations of the
    /// training set); fake batches draw uniformly from it.
    pub combos: Vec<CountVector>,
    pub history: Vec<EpochStats>,
}

/// Checkpoint metadata (everything except the tensors).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainMeta {
    config: TrainConfig,
    next_epoch: u32,
    step: u64,
    rng: RngState,
    adam_g_t: u64,
    adam_d_t: u64,
    combos: Vec<CountVector>,
    history: Vec<EpochStats>,
}

impl Trainer {
    /// Fresh state: seeded parameter init, conditioning support read off the
    /// dataset.
    pub fn new(config: TrainConfig, dataset: &LoadedDataset) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidConfig("dataset is empty".into()));
        }
        if dataset.n_classes() != config.model.n_classes {
            return Err(Error::InvalidConfig(format!(
                "dataset has {} classes, model expects {}",
                dataset.n_classes(),
                config.model.n_classes
            )));
        }
        let (g, d, _) = init_params::<f32>(&config.model, config.seed)?;
        let adam_g = Adam::new(&g, config.adam);
        let adam_d = Adam::new(&d, config.adam);
        let rng = derive_rng(config.seed, &[tags::TRAIN_LOOP]);
        let combos = dataset.combinations();
        Ok(Trainer {
            config,
            g,
            d,
            adam_g,
            adam_d,
            rng,
            next_epoch: 0,
            step: 0,
            combos,
            history: Vec::new(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.next_epoch >= self.config.epochs
    }

    /// Draw a latent batch conditioned on uniformly sampled training
    /// combinations.
    fn draw_latent(&mut self, n: usize) -> LatentSample<f32> {
        let counts: Vec<CountVector> = (0..n)
            .map(|_| self.combos[self.rng.random_range(0..self.combos.len())].clone())
            .collect();
        LatentSample::draw(self.config.model.latent_dim, counts, &mut self.rng)
    }

    /// Run one epoch: a discriminator step per batch, a generator step every
    /// `d_steps_per_g` batches.
    pub fn train_epoch(&mut self, dataset: &LoadedDataset) -> Result<EpochStats> {
        assert!(!self.is_finished(), "training already completed");
        let epoch = self.next_epoch;
        let n = dataset.len();
        let batch_size = self.config.batch_size.min(n);

        let mut indices: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = derive_rng(
            self.config.seed,
            &[tags::TRAIN_LOOP, SUB_SHUFFLE, epoch as u64],
        );
        indices.shuffle(&mut shuffle_rng);

        let mut d_grads = self.d.zeros_like();
        let mut g_grads = self.g.zeros_like();
        let mut stats = EpochStats {
            epoch,
            d_loss: 0.0,
            g_loss: 0.0,
            count_real: 0.0,
            count_fake: 0.0,
            d_steps: 0,
            g_steps: 0,
        };

        for (bi, chunk) in indices.chunks(batch_size).enumerate() {
            let (real, real_counts) = dataset.batch(chunk);
            let fake_in = self.draw_latent(chunk.len());
            d_grads.zero_fill();
            let d_step = discriminator_loss_and_grads(
                &self.g,
                &self.d,
                &real,
                &real_counts,
                &fake_in,
                &self.config.loss,
                &mut d_grads,
            );
            self.adam_d.step(&mut self.d, &d_grads);
            stats.d_loss += d_step.d_loss;
            stats.count_real += d_step.count_real;
            stats.d_steps += 1;

            if (bi as u32 + 1) % self.config.d_steps_per_g == 0 {
                let g_in = self.draw_latent(chunk.len());
                g_grads.zero_fill();
                let g_step = generator_loss_and_grads(
                    &self.g,
                    &self.d,
                    &g_in,
                    &self.config.loss,
                    &mut g_grads,
                );
                self.adam_g.step(&mut self.g, &g_grads);
                stats.g_loss += g_step.g_loss;
                stats.count_fake += g_step.count_fake;
                stats.g_steps += 1;
            }
            self.step += 1;
        }

        stats.d_loss /= stats.d_steps.max(1) as f64;
        stats.count_real /= stats.d_steps.max(1) as f64;
        stats.g_loss /= stats.g_steps.max(1) as f64;
        stats.count_fake /= stats.g_steps.max(1) as f64;
        self.next_epoch += 1;
        self.history.push(stats.clone());
        Ok(stats)
    }

    /// Run all remaining epochs, reporting each to `on_epoch`.
    pub fn run(
        &mut self,
        dataset: &LoadedDataset,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<()> {
        while !self.is_finished() {
            let stats = self.train_epoch(dataset)?;
            on_epoch(&stats);
        }
        Ok(())
    }

    /// Snapshot the complete training state.
    pub fn checkpoint(&self) -> Checkpoint {
        let meta = TrainMeta {
            config: self.config.clone(),
            next_epoch: self.next_epoch,
            step: self.step,
            rng: RngState::capture(&self.rng),
            adam_g_t: self.adam_g.t,
            adam_d_t: self.adam_d.t,
            combos: self.combos.clone(),
            history: self.history.clone(),
        };
        let mut tensors = pack_params("g.", &self.g);
        tensors.extend(pack_params("d.", &self.d));
        tensors.extend(pack_params("adam_g.m.", &self.adam_g.m));
        tensors.extend(pack_params("adam_g.v.", &self.adam_g.v));
        tensors.extend(pack_params("adam_d.m.", &self.adam_d.m));
        tensors.extend(pack_params("adam_d.v.", &self.adam_d.v));
        Checkpoint {
            header: serde_json::to_value(&meta).expect("train meta serializes"),
            tensors,
        }
    }

    /// Rebuild the exact training state a checkpoint captured.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: TrainMeta =
            serde_json::from_value(ck.header.clone()).map_err(|e| Error::BadCheckpoint {
                path: std::path::PathBuf::new(),
                reason: format!("header does not describe a training run: {e}"),
            })?;
        meta.config.validate()?;
        let (mut g, mut d, _) = init_params::<f32>(&meta.config.model, meta.config.seed)?;
        unpack_params("g.", &ck.tensors, &mut g)?;
        unpack_params("d.", &ck.tensors, &mut d)?;
        let mut m_g = g.zeros_like();
        let mut v_g = g.zeros_like();
        unpack_params("adam_g.m.", &ck.tensors, &mut m_g)?;
        unpack_params("adam_g.v.", &ck.tensors, &mut v_g)?;
        let mut m_d = d.zeros_like();
        let mut v_d = d.zeros_like();
        unpack_params("adam_d.m.", &ck.tensors, &mut m_d)?;
        unpack_params("adam_d.v.", &ck.tensors, &mut v_d)?;
        Ok(Trainer {
            g,
            d,
            adam_g: Adam::from_state(meta.config.adam, meta.adam_g_t, m_g, v_g),
            adam_d: Adam::from_state(meta.config.adam, meta.adam_d_t, m_d, v_d),
            rng: meta.rng.restore(),
            next_epoch: meta.next_epoch,
            step: meta.step,
            combos: meta.combos,
            history: meta.history,
            config: meta.config,
        })
    }
}

/// Configuration for training a standalone count predictor (the evaluation
/// judge uses this path on real data only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorTrainConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
}

impl PredictorTrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        PredictorTrainConfig {
            model,
            adam: AdamConfig::default(),
            epochs: 30,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Per-epoch average count loss of the predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorEpochStats {
    pub epoch: u32,
    pub count_loss: f64,
}

/// Train a count predictor by count-loss regression (dropout active).
pub fn train_predictor(
    config: &PredictorTrainConfig,
    dataset: &LoadedDataset,
    mut on_epoch: impl FnMut(&PredictorEpochStats),
) -> Result<CountPredictorParams<f32>> {
    config.model.validate()?;
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "epochs and batch_size must be at least 1".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("dataset is empty".into()));
    }
    let mut p = CountPredictorParams::<f32>::new(config.model.clone());
    init_param_set(&mut p, derive_rng(config.seed, &[tags::MODEL_INIT, 2]));
    let mut adam = Adam::new(&p, config.adam);
    let mut dropout_rng = derive_rng(config.seed, &[tags::TRAIN_LOOP, SUB_DROPOUT]);

    let n = dataset.len();
    let batch_size = config.batch_size.min(n);
    let mut grads = p.zeros_like();
    for epoch in 0..config.epochs {
        let mut indices: Vec<usize> = (0..n).collect();
        let mut shuffle_rng =
            derive_rng(config.seed, &[tags::TRAIN_LOOP, SUB_SHUFFLE, epoch as u64]);
        indices.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut steps = 0u32;
        for chunk in indices.chunks(batch_size) {
            let (images, counts) = dataset.batch(chunk);
            let target = crate::models::counts_matrix::<f32>(&counts);
            let (pred, cache) = p.forward_cached(&images, Some(&mut dropout_rng));
            loss_sum += count_loss(&pred, &target).to_f64();
            let d_pred = count_loss_grad(&pred, &target);
            grads.zero_fill();
            p.backward(&cache, &d_pred, &mut grads);
            adam.step(&mut p, &grads);
            steps += 1;
        }
        on_epoch(&PredictorEpochStats {
            epoch,
            count_loss: loss_sum / steps.max(1) as f64,
        });
    }
    Ok(p)
}
