//! Model definitions: generator, discriminator, count predictor.
//!
//! All three models share a [`ModelConfig`] describing image geometry, the
//! count-vector support, and the architecture switches that the ablation
//! experiments toggle. Parameters are plain structs of [`Conv2d`] /
//! [`Linear`] layers implementing [`ParamSet`], so the optimizer, the
//! checkpoint format, and the gradient checker treat every model uniformly.
//!
//! Conventions, fixed across the crate:
//! - images are `(batch, channels, height, width)` scaled to `[-1, 1]`;
//! - count conditioning enters as counts divided by `max_count` (the "count
//!   channels"), while count *regression targets* stay in raw units;
//! - convolution weights are initialized `N(0, 0.02)`, biases zero;
//! - LeakyReLU slope is 0.2, dropout rate 0.3.

pub mod discriminator;
pub mod generator;
pub mod predictor;

pub use discriminator::{DiscriminatorCache, DiscriminatorOut, DiscriminatorParams};
pub use generator::{GeneratorCache, GeneratorParams, LatentSample};
pub use predictor::{CountPredictorCache, CountPredictorParams};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datasets::CountVector;
use crate::error::{Error, Result};
use crate::nn::{ParamSet, Real};
use crate::rng::{derive_rng, tags};

/// Negative-side slope of every LeakyReLU in the crate.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Dropout rate used by the count predictor during training.
pub const DROPOUT_RATE: f64 = 0.3;
/// Standard deviation of the normal weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Generator feature backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Densely connected stages: each conv sees the concatenation of the
    /// stage input and all previous conv outputs.
    Dense,
    /// Sequential convs without concatenation (ablation variant).
    Plain,
}

/// Where count-conditioning channels are injected into the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMapping {
    /// Counts are concatenated to the latent at the initial projection *and*
    /// tiled as constant channels at the input of every stage.
    PerStage,
    /// Counts only enter through the initial projection (ablation variant).
    InputOnly,
}

/// Shared architecture/geometry description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square image side; must be a multiple of 16 (four stride-2 halvings
    /// in the discriminator) and at least 16.
    pub resolution: u32,
    /// 1 (grayscale) or 3 (RGB).
    pub image_channels: u32,
    pub n_classes: usize,
    /// Largest admissible per-class count; normalizes count channels.
    pub max_count: u32,
    pub latent_dim: usize,
    /// Feature maps after the generator's initial projection.
    pub gen_base: usize,
    /// Growth rate: output channels of each conv inside a generator stage.
    pub gen_growth: usize,
    /// Channels of the penultimate generator conv.
    pub gen_head: usize,
    pub backbone: Backbone,
    pub label_mapping: LabelMapping,
    /// Discriminator feature maps after the first conv (doubling per conv).
    pub disc_base: usize,
    /// One shared trunk for both discriminator heads (vs. a separate trunk
    /// for the count head).
    pub weight_sharing: bool,
    /// Concatenate count channels to the discriminator input. Off in the
    /// full model (the count head supplies the conditioning signal); the
    /// count-loss ablation turns it on so the discriminator still sees
    /// labels.
    pub count_conditioned_disc: bool,
    /// Count-predictor feature maps after the first conv (doubling per
    /// conv).
    pub pred_base: usize,
}

impl ModelConfig {
    /// A small configuration suitable for CPU training at the given support.
    pub fn small(n_classes: usize, max_count: u32) -> Self {
        ModelConfig {
            resolution: 32,
            image_channels: 1,
            n_classes,
            max_count,
            latent_dim: 32,
            gen_base: 16,
            gen_growth: 12,
            gen_head: 16,
            backbone: Backbone::Dense,
            label_mapping: LabelMapping::PerStage,
            disc_base: 16,
            weight_sharing: true,
            count_conditioned_disc: false,
            pred_base: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 16 || self.resolution % 16 != 0 {
            return Err(Error::InvalidConfig(format!(
                "resolution {} must be a positive multiple of 16",
                self.resolution
            )));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "image_channels must be 1 or 3, got {}",
                self.image_channels
            )));
        }
        if self.n_classes == 0 {
            return Err(Error::InvalidConfig("n_classes must be at least 1".into()));
        }
        if self.max_count == 0 {
            return Err(Error::InvalidConfig("max_count must be at least 1".into()));
        }
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("gen_base", self.gen_base),
            ("gen_growth", self.gen_growth),
            ("gen_head", self.gen_head),
            ("disc_base", self.disc_base),
            ("pred_base", self.pred_base),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Spatial side of the generator's initial projection (two 2x upsamples
    /// below the output resolution).
    pub fn initial_side(&self) -> usize {
        self.resolution as usize / 4
    }

    /// Spatial side after the four stride-2 convs of the discriminator /
    /// predictor trunks.
    pub fn trunk_out_side(&self) -> usize {
        self.resolution as usize / 16
    }
}

/// Stack raw count vectors into an `(n_samples, n_classes)` matrix.
pub fn counts_matrix<F: Real>(counts: &[CountVector]) -> Array2<F> {
    let n = counts.len();
    let k = counts.first().map_or(0, CountVector::n_classes);
    let mut m = Array2::zeros((n, k));
    for (i, c) in counts.iter().enumerate() {
        assert_eq!(c.n_classes(), k, "ragged count vectors");
        for (j, &v) in c.as_slice().iter().enumerate() {
            m[[i, j]] = F::from_f64(v as f64);
        }
    }
    m
}

/// Stack normalized count vectors (divided by `max_count`) into a matrix.
pub fn normalized_counts_matrix<F: Real>(counts: &[CountVector], max_count: u32) -> Array2<F> {
    let mut m = counts_matrix::<F>(counts);
    let denom = F::from_f64(max_count.max(1) as f64);
    m.mapv_inplace(|v| v / denom);
    m
}

/// Initialize all three models from one seed.
///
/// Weights draw from `N(0, INIT_STD)` in visit order; biases stay zero. Each
/// model uses its own derived stream, so adding parameters to one model
/// never shifts another model's initialization.
pub fn init_params<F: Real>(
    config: &ModelConfig,
    seed: u64,
) -> Result<(GeneratorParams<F>, DiscriminatorParams<F>, CountPredictorParams<F>)> {
    config.validate()?;
    let mut g = GeneratorParams::new(config.clone());
    let mut d = DiscriminatorParams::new(config.clone());
    let mut p = CountPredictorParams::new(config.clone());
    init_param_set(&mut g, derive_rng(seed, &[tags::MODEL_INIT, 0]));
    init_param_set(&mut d, derive_rng(seed, &[tags::MODEL_INIT, 1]));
    init_param_set(&mut p, derive_rng(seed, &[tags::MODEL_INIT, 2]));
    Ok((g, d, p))
}

/// Fill weight tensors with `N(0, INIT_STD)` draws, leave biases at zero.
pub fn init_param_set<F: Real, P: ParamSet<F>>(params: &mut P, mut rng: rand_chacha::ChaCha8Rng) {
    let std = F::from_f64(INIT_STD);
    for (name, mut t) in params.tensors_mut() {
        if name.ends_with("bias") {
            continue;
        }
        for v in t.iter_mut() {
            *v = F::standard_normal(&mut rng) * std;
        }
    }
}

/// A fixed-length sequence of convolutions (a trunk or a generator stage).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSeq<F> {
    pub convs: Vec<crate::nn::Conv2d<F>>,
}

impl<F: Real> ParamSet<F> for ConvSeq<F> {
    fn visit<'a>(
        &'a self,
        prefix: &str,
        out: &mut Vec<(String, ndarray::ArrayViewD<'a, F>)>,
    ) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&format!("{prefix}conv{i}."), out);
        }
    }

    fn visit_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, ndarray::ArrayViewMutD<'a, F>)>,
    ) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&format!("{prefix}conv{i}."), out);
        }
    }

    fn zeros_like(&self) -> Self {
        ConvSeq {
            convs: self.convs.iter().map(|c| c.zeros_like()).collect(),
        }
    }
}

/// Flatten `(n, c, h, w)` activations to `(n, c*h*w)`.
pub(crate) fn flatten<F: Real>(x: ndarray::Array4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    x.into_shape_with_order((n, c * h * w))
        .expect("activations are standard layout")
}

/// Inverse of [`flatten`].
pub(crate) fn unflatten<F: Real>(
    x: Array2<F>,
    shape: (usize, usize, usize, usize),
) -> ndarray::Array4<F> {
    x.into_shape_with_order(shape)
        .expect("gradient is standard layout")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_catches_bad_geometry() {
        let mut cfg = ModelConfig::small(3, 2);
        assert!(cfg.validate().is_ok());
        cfg.resolution = 24;
        assert!(cfg.validate().is_err());
        cfg.resolution = 32;
        cfg.image_channels = 2;
        assert!(cfg.validate().is_err());
        cfg.image_channels = 3;
        cfg.max_count = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn count_matrices_scale_as_documented() {
        let counts = vec![CountVector(vec![2, 0]), CountVector(vec![1, 3])];
        let raw = counts_matrix::<f32>(&counts);
        assert_eq!(raw[[1, 1]], 3.0);
        let norm = normalized_counts_matrix::<f32>(&counts, 3);
        assert_eq!(norm[[0, 0]], 2.0 / 3.0);
        assert_eq!(norm[[1, 1]], 1.0);
    }

    #[test]
    fn initialization_is_seeded_and_leaves_biases_zero() {
        let cfg = ModelConfig::small(2, 2);
        let (g1, d1, p1) = init_params::<f32>(&cfg, 7).unwrap();
        let (g2, ..) = init_params::<f32>(&cfg, 7).unwrap();
        let (g3, ..) = init_params::<f32>(&cfg, 8).unwrap();
        assert_eq!(g1, g2, "same seed, same parameters");
        assert_ne!(g1, g3, "different seed, different parameters");
        for (name, t) in d1.tensors().iter().chain(p1.tensors().iter()) {
            if name.ends_with("bias") {
                assert!(t.iter().all(|&v| v == 0.0), "{name} must start at zero");
            } else {
                assert!(t.iter().any(|&v| v != 0.0), "{name} must be initialized");
                let max = t.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
                assert!(max < 0.2, "{name} init out of scale: {max}");
            }
        }
    }
}
