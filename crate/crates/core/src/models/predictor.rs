//! Standalone count predictor.
//!
//! Four stride-2 convs with LeakyReLU and dropout, then a single linear
//! layer regressing raw per-class counts. Separately from training it serves
//! two evaluation roles: as the independent judge that re-counts generated
//! images, and as the feature extractor for the Fréchet-distance metric (its
//! flattened penultimate activations).

use ndarray::{Array2, Array4, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use crate::nn::ops;
use crate::nn::{Conv2d, Linear, ParamSet, Real};

use super::{ConvSeq, ModelConfig, DROPOUT_RATE, LEAKY_SLOPE};

/// Trunk depth (stride-2 convs).
const TRUNK_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CountPredictorParams<F> {
    pub cfg: ModelConfig,
    pub trunk: ConvSeq<F>,
    pub fc: Linear<F>,
}

/// Cache of one training-mode forward pass.
#[derive(Debug, Clone)]
pub struct CountPredictorCache<F> {
    x_in: Array4<F>,
    pres: Vec<Array4<F>>,
    /// Post-LeakyReLU, post-dropout activations (conv inputs of the next
    /// layer).
    acts: Vec<Array4<F>>,
    /// Dropout masks (absent in eval mode).
    masks: Vec<Option<Array4<F>>>,
    flat: Array2<F>,
}

impl<F: Real> CountPredictorParams<F> {
    pub fn new(cfg: ModelConfig) -> Self {
        let mut convs = Vec::with_capacity(TRUNK_DEPTH);
        let mut prev = cfg.image_channels as usize;
        for j in 0..TRUNK_DEPTH {
            let out = cfg.pred_base << j;
            convs.push(Conv2d::new(prev, out, 3, 2, 1));
            prev = out;
        }
        let side = cfg.trunk_out_side();
        let flat_dim = prev * side * side;
        CountPredictorParams {
            trunk: ConvSeq { convs },
            fc: Linear::new(flat_dim, cfg.n_classes),
            cfg,
        }
    }

    /// Forward pass. Pass a generator to enable dropout (training mode);
    /// `None` runs deterministically (evaluation mode).
    pub fn forward_cached<R: Rng + ?Sized>(
        &self,
        x: &Array4<F>,
        mut dropout_rng: Option<&mut R>,
    ) -> (Array2<F>, CountPredictorCache<F>) {
        let slope = F::from_f64(LEAKY_SLOPE);
        let mut pres = Vec::with_capacity(TRUNK_DEPTH);
        let mut acts = Vec::with_capacity(TRUNK_DEPTH);
        let mut masks = Vec::with_capacity(TRUNK_DEPTH);
        let mut cur = x.clone();
        for conv in &self.trunk.convs {
            let pre = conv.forward(&cur);
            let act = ops::leaky_relu(&pre, slope);
            let (dropped, mask) = match dropout_rng.as_deref_mut() {
                Some(rng) => {
                    let (d, m) = ops::dropout(&act, DROPOUT_RATE, rng);
                    (d, Some(m))
                }
                None => (act, None),
            };
            pres.push(pre);
            acts.push(dropped.clone());
            masks.push(mask);
            cur = dropped;
        }
        let flat = super::flatten(cur);
        let out = self.fc.forward(&flat);
        let cache = CountPredictorCache {
            x_in: x.clone(),
            pres,
            acts,
            masks,
            flat,
        };
        (out, cache)
    }

    /// Deterministic predictions (dropout off).
    pub fn forward_eval(&self, x: &Array4<F>) -> Array2<F> {
        self.forward_cached::<rand_chacha::ChaCha8Rng>(x, None).0
    }

    /// Penultimate-layer features (flattened final conv activations,
    /// evaluation mode). This is the embedding the Fréchet metric uses.
    pub fn features(&self, x: &Array4<F>) -> Array2<F> {
        let (_, cache) = self.forward_cached::<rand_chacha::ChaCha8Rng>(x, None);
        cache.flat
    }

    /// Accumulate parameter gradients for `d_out` (gradient w.r.t. the
    /// predicted counts).
    pub fn backward(&self, cache: &CountPredictorCache<F>, d_out: &Array2<F>, grads: &mut Self) {
        let slope = F::from_f64(LEAKY_SLOPE);
        let d_flat = self
            .fc
            .backward(&cache.flat, d_out, Some(&mut grads.fc), true)
            .unwrap();
        let last = cache.acts.last().expect("trunk has layers");
        let mut d_act = super::unflatten(d_flat, last.dim());
        for j in (0..TRUNK_DEPTH).rev() {
            if let Some(mask) = &cache.masks[j] {
                d_act = ops::dropout_backward(mask, &d_act);
            }
            let d_pre = ops::leaky_relu_backward(&cache.pres[j], &d_act, slope);
            let cin: &Array4<F> = if j == 0 { &cache.x_in } else { &cache.acts[j - 1] };
            match self.trunk.convs[j].backward(
                cin,
                &d_pre,
                Some(&mut grads.trunk.convs[j]),
                j > 0,
            ) {
                Some(dx) => d_act = dx,
                None => break,
            }
        }
    }
}

impl<F: Real> ParamSet<F> for CountPredictorParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        self.trunk.visit(&format!("{prefix}trunk."), out);
        self.fc.visit(&format!("{prefix}fc."), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        self.trunk.visit_mut(&format!("{prefix}trunk."), out);
        self.fc.visit_mut(&format!("{prefix}fc."), out);
    }

    fn zeros_like(&self) -> Self {
        CountPredictorParams {
            cfg: self.cfg.clone(),
            trunk: self.trunk.zeros_like(),
            fc: self.fc.zeros_like(),
        }
    }
}
