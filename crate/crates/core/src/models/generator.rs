//! Count-conditioned generator.
//!
//! Structure (`S = resolution / 4`, `B = gen_base`, `G = gen_growth`):
//!
//! ```text
//! [z | c/max_count] -> fc -> ReLU -> reshape (B, S, S)
//!   -> stage 1 (3 convs) -> 1x1 conv -> ReLU -> 2x nearest upsample
//!   -> stage 2 (3 convs) -> 1x1 conv -> ReLU -> 2x nearest upsample
//!   -> 3x3 conv -> ReLU -> 3x3 conv -> tanh
//! ```
//!
//! With the dense backbone each stage conv sees the stage input concatenated
//! with every previous conv output (widths `I, I+G, I+2G`, stage output
//! `I+3G`); the plain ablation chains convs at width `B`. With per-stage
//! label mapping the normalized counts are additionally tiled as constant
//! channels onto each stage input, so `I = B + n_classes`; with input-only
//! mapping counts reach the network solely through the initial projection.

use ndarray::{Array2, Array4, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use crate::datasets::CountVector;
use crate::nn::ops;
use crate::nn::{Conv2d, Linear, ParamSet, Real};

use super::{
    counts_matrix, normalized_counts_matrix, Backbone, ConvSeq, LabelMapping, ModelConfig,
};

/// A batch of generator inputs: latent draws plus the requested counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample<F> {
    /// `(batch, latent_dim)` standard-normal draws.
    pub z: Array2<F>,
    /// Requested per-sample object counts (raw, unnormalized).
    pub counts: Vec<CountVector>,
}

impl<F: Real> LatentSample<F> {
    /// Draw latents for the given counts.
    pub fn draw<R: Rng + ?Sized>(
        latent_dim: usize,
        counts: Vec<CountVector>,
        rng: &mut R,
    ) -> Self {
        let z = Array2::from_shape_fn((counts.len(), latent_dim), |_| F::standard_normal(rng));
        LatentSample { z, counts }
    }

    pub fn batch(&self) -> usize {
        self.counts.len()
    }

    /// Raw counts as a `(batch, n_classes)` matrix.
    pub fn counts_matrix(&self) -> Array2<F> {
        counts_matrix(&self.counts)
    }
}

/// Generator parameters (layer hyper-parameters embedded).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<F> {
    pub cfg: ModelConfig,
    pub fc: Linear<F>,
    pub stage1: ConvSeq<F>,
    pub trans1: Conv2d<F>,
    pub stage2: ConvSeq<F>,
    pub trans2: Conv2d<F>,
    pub head1: Conv2d<F>,
    pub head2: Conv2d<F>,
}

/// Convs per generator stage.
const STAGE_DEPTH: usize = 3;

/// Channels entering a stage (base maps plus tiled count channels when
/// per-stage mapping is on).
fn stage_in_channels(cfg: &ModelConfig) -> usize {
    cfg.gen_base
        + match cfg.label_mapping {
            LabelMapping::PerStage => cfg.n_classes,
            LabelMapping::InputOnly => 0,
        }
}

/// Channels leaving a stage.
fn stage_out_channels(cfg: &ModelConfig) -> usize {
    match cfg.backbone {
        Backbone::Dense => stage_in_channels(cfg) + STAGE_DEPTH * cfg.gen_growth,
        Backbone::Plain => cfg.gen_base,
    }
}

impl<F: Real> GeneratorParams<F> {
    pub fn new(cfg: ModelConfig) -> Self {
        let s_in = stage_in_channels(&cfg);
        let s_out = stage_out_channels(&cfg);
        let stage = || -> ConvSeq<F> {
            let convs = match cfg.backbone {
                Backbone::Dense => (0..STAGE_DEPTH)
                    .map(|j| Conv2d::new(s_in + j * cfg.gen_growth, cfg.gen_growth, 3, 1, 1))
                    .collect(),
                Backbone::Plain => (0..STAGE_DEPTH)
                    .map(|j| {
                        let ic = if j == 0 { s_in } else { cfg.gen_base };
                        Conv2d::new(ic, cfg.gen_base, 3, 1, 1)
                    })
                    .collect(),
            };
            ConvSeq { convs }
        };
        let s = cfg.initial_side();
        GeneratorParams {
            fc: Linear::new(cfg.latent_dim + cfg.n_classes, cfg.gen_base * s * s),
            stage1: stage(),
            trans1: Conv2d::new(s_out, cfg.gen_base, 1, 1, 0),
            stage2: stage(),
            trans2: Conv2d::new(s_out, cfg.gen_base, 1, 1, 0),
            head1: Conv2d::new(cfg.gen_base, cfg.gen_head, 3, 1, 1),
            head2: Conv2d::new(cfg.gen_head, cfg.image_channels as usize, 3, 1, 1),
            cfg,
        }
    }

    /// Generate images for a latent batch. Output is `(batch, channels,
    /// resolution, resolution)` in `[-1, 1]`.
    pub fn forward(&self, input: &LatentSample<F>) -> Array4<F> {
        self.forward_cached(input).0
    }

    /// Forward pass that also returns the activation cache needed by
    /// [`GeneratorParams::backward`].
    pub fn forward_cached(&self, input: &LatentSample<F>) -> (Array4<F>, GeneratorCache<F>) {
        let cfg = &self.cfg;
        let n = input.batch();
        assert_eq!(input.z.dim(), (n, cfg.latent_dim), "latent shape mismatch");
        let c_norm = normalized_counts_matrix::<F>(&input.counts, cfg.max_count);
        assert_eq!(c_norm.dim().1, cfg.n_classes, "count arity mismatch");

        let zc = ndarray::concatenate(Axis(1), &[input.z.view(), c_norm.view()])
            .expect("latent/count concat");
        let fc_pre = self.fc.forward(&zc);
        let s = cfg.initial_side();
        let x0 = super::unflatten(ops::relu(&fc_pre), (n, cfg.gen_base, s, s));

        let tile = |x: &Array4<F>| -> Array4<F> {
            match cfg.label_mapping {
                LabelMapping::PerStage => {
                    let (_, _, h, w) = x.dim();
                    let c_maps = ops::tile_as_channels(&c_norm, h, w);
                    ops::concat_channels(&[x.view(), c_maps.view()])
                }
                LabelMapping::InputOnly => x.clone(),
            }
        };

        let sin1 = tile(&x0);
        let stage1 = run_stage(&self.stage1, cfg.backbone, sin1);
        let t1_pre = self.trans1.forward(&stage1.out);
        let up1 = ops::upsample2x(&ops::relu(&t1_pre));

        let sin2 = tile(&up1);
        let stage2 = run_stage(&self.stage2, cfg.backbone, sin2);
        let t2_pre = self.trans2.forward(&stage2.out);
        let up2 = ops::upsample2x(&ops::relu(&t2_pre));

        let h1_pre = self.head1.forward(&up2);
        let h2_in = ops::relu(&h1_pre);
        let h2_pre = self.head2.forward(&h2_in);
        let out = ops::tanh(&h2_pre);

        let cache = GeneratorCache {
            zc,
            fc_pre,
            stage1,
            t1_pre,
            stage2,
            t2_pre,
            up2,
            h1_pre,
            h2_in,

            out: out.clone(),
        };
        (out, cache)
    }

    /// Accumulate parameter gradients for `d_out` (gradient of some scalar
    /// loss w.r.t. the generated images).
    pub fn backward(&self, cache: &GeneratorCache<F>, d_out: &Array4<F>, grads: &mut Self) {
        let cfg = &self.cfg;
        // Head.
        let d_h2_pre = ops::tanh_backward(&cache.out, d_out);
        let d_h2_in = self
            .head2
            .backward(&cache.h2_in, &d_h2_pre, Some(&mut grads.head2), true)
            .unwrap();
        let d_h1_pre = ops::relu_backward(&cache.h1_pre, &d_h2_in);
        let d_up2 = self
            .head1
            .backward(&cache.up2, &d_h1_pre, Some(&mut grads.head1), true)
            .unwrap();

        // Transition 2 + stage 2.
        let d_t2_act = ops::upsample2x_backward(&d_up2);
        let d_t2_pre = ops::relu_backward(&cache.t2_pre, &d_t2_act);
        let d_stage2_out = self
            .trans2
            .backward(&cache.stage2.out, &d_t2_pre, Some(&mut grads.trans2), true)
            .unwrap();
        let d_sin2 = backward_stage(
            &self.stage2,
            cfg.backbone,
            &cache.stage2,
            d_stage2_out,
            &mut grads.stage2,
        );
        let d_up1 = self.strip_count_channels(d_sin2);

        // Transition 1 + stage 1.
        let d_t1_act = ops::upsample2x_backward(&d_up1);
        let d_t1_pre = ops::relu_backward(&cache.t1_pre, &d_t1_act);
        let d_stage1_out = self
            .trans1
            .backward(&cache.stage1.out, &d_t1_pre, Some(&mut grads.trans1), true)
            .unwrap();
        let d_sin1 = backward_stage(
            &self.stage1,
            cfg.backbone,
            &cache.stage1,
            d_stage1_out,
            &mut grads.stage1,
        );
        let d_x0 = self.strip_count_channels(d_sin1);

        // Initial projection. Count/latent gradients are not needed.
        let (n, b, s, s2) = d_x0.dim();
        let d_fc_act = d_x0
            .into_shape_with_order((n, b * s * s2))
            .expect("standard layout");
        let d_fc_pre = ops::relu_backward(&cache.fc_pre, &d_fc_act);
        self.fc
            .backward(&cache.zc, &d_fc_pre, Some(&mut grads.fc), false);
    }

    /// Drop the gradient of the tiled count channels (they are inputs, not
    /// functions of the parameters).
    fn strip_count_channels(&self, d_sin: Array4<F>) -> Array4<F> {
        match self.cfg.label_mapping {
            LabelMapping::PerStage => {
                let parts = ops::split_channels(&d_sin, &[self.cfg.gen_base, self.cfg.n_classes]);
                parts.into_iter().next().unwrap()
            }
            LabelMapping::InputOnly => d_sin,
        }
    }
}

/// Activation cache for one generator stage.
#[derive(Debug, Clone)]
pub struct StageCache<F> {
    /// Stage input after count-channel concatenation.
    pub sin: Array4<F>,
    /// Inputs of convs `1..` (conv 0 reads `sin`). For the dense backbone
    /// these are the growing concatenations; for the plain backbone the
    /// previous activations.
    pub cins: Vec<Array4<F>>,
    /// Pre-activation outputs of every conv.
    pub pres: Vec<Array4<F>>,
    /// Stage output.
    pub out: Array4<F>,
}

fn run_stage<F: Real>(seq: &ConvSeq<F>, backbone: Backbone, sin: Array4<F>) -> StageCache<F> {
    let mut cins = Vec::with_capacity(STAGE_DEPTH - 1);
    let mut pres = Vec::with_capacity(STAGE_DEPTH);
    match backbone {
        Backbone::Dense => {
            // cat after conv j is [sin, y_0, ..., y_j]; conv j+1 reads it.
            let mut cat = sin.clone();
            for (j, conv) in seq.convs.iter().enumerate() {
                let pre = conv.forward(&cat);
                let y = ops::relu(&pre);
                let next = ops::concat_channels(&[cat.view(), y.view()]);
                pres.push(pre);
                if j < STAGE_DEPTH - 1 {
                    cins.push(next.clone());
                }
                cat = next;
            }
            StageCache {
                sin,
                cins,
                pres,
                out: cat,
            }
        }
        Backbone::Plain => {
            let mut x = sin.clone();
            for (j, conv) in seq.convs.iter().enumerate() {
                let pre = conv.forward(&x);
                let y = ops::relu(&pre);
                pres.push(pre);
                if j < STAGE_DEPTH - 1 {
                    cins.push(y.clone());
                }
                x = y;
            }
            StageCache {
                sin,
                cins,
                pres,
                out: x,
            }
        }
    }
}

/// Backward through a stage; returns the gradient at the (possibly
/// count-augmented) stage input.
fn backward_stage<F: Real>(
    seq: &ConvSeq<F>,
    backbone: Backbone,
    cache: &StageCache<F>,
    d_out: Array4<F>,
    grads: &mut ConvSeq<F>,
) -> Array4<F> {
    match backbone {
        Backbone::Dense => {
            let growth = cache.pres[0].dim().1;
            let mut d_cat = d_out;
            for j in (0..STAGE_DEPTH).rev() {
                let cin: &Array4<F> = if j == 0 { &cache.sin } else { &cache.cins[j - 1] };
                let widths = [cin.dim().1, growth];
                let mut parts = ops::split_channels(&d_cat, &widths);
                let d_y = parts.pop().unwrap();
                let d_skip = parts.pop().unwrap();
                let d_pre = ops::relu_backward(&cache.pres[j], &d_y);
                let mut d_cin = seq.convs[j]
                    .backward(cin, &d_pre, Some(&mut grads.convs[j]), true)
                    .unwrap();
                d_cin += &d_skip;
                d_cat = d_cin;
            }
            d_cat
        }
        Backbone::Plain => {
            let mut d_y = d_out;
            for j in (0..STAGE_DEPTH).rev() {
                let cin: &Array4<F> = if j == 0 { &cache.sin } else { &cache.cins[j - 1] };
                let d_pre = ops::relu_backward(&cache.pres[j], &d_y);
                d_y = seq.convs[j]
                    .backward(cin, &d_pre, Some(&mut grads.convs[j]), true)
                    .unwrap();
            }
            d_y
        }
    }
}

/// Activation cache for a full generator forward pass.
#[derive(Debug, Clone)]
pub struct GeneratorCache<F> {
    zc: Array2<F>,
    fc_pre: Array2<F>,
    stage1: StageCache<F>,
    t1_pre: Array4<F>,
    stage2: StageCache<F>,
    t2_pre: Array4<F>,
    up2: Array4<F>,
    h1_pre: Array4<F>,
    h2_in: Array4<F>,
    /// Generated images (the forward output).
    pub out: Array4<F>,
}

impl<F: Real> ParamSet<F> for GeneratorParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        self.fc.visit(&format!("{prefix}fc."), out);
        self.stage1.visit(&format!("{prefix}stage1."), out);
        self.trans1.visit(&format!("{prefix}trans1."), out);
        self.stage2.visit(&format!("{prefix}stage2."), out);
        self.trans2.visit(&format!("{prefix}trans2."), out);
        self.head1.visit(&format!("{prefix}head1."), out);
        self.head2.visit(&format!("{prefix}head2."), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        self.fc.visit_mut(&format!("{prefix}fc."), out);
        self.stage1.visit_mut(&format!("{prefix}stage1."), out);
        self.trans1.visit_mut(&format!("{prefix}trans1."), out);
        self.stage2.visit_mut(&format!("{prefix}stage2."), out);
        self.trans2.visit_mut(&format!("{prefix}trans2."), out);
        self.head1.visit_mut(&format!("{prefix}head1."), out);
        self.head2.visit_mut(&format!("{prefix}head2."), out);
    }

    fn zeros_like(&self) -> Self {
        GeneratorParams {
            cfg: self.cfg.clone(),
            fc: self.fc.zeros_like(),
            stage1: self.stage1.zeros_like(),
            trans1: self.trans1.zeros_like(),
            stage2: self.stage2.zeros_like(),
            trans2: self.trans2.zeros_like(),
            head1: self.head1.zeros_like(),
            head2: self.head2.zeros_like(),
        }
    }
}
