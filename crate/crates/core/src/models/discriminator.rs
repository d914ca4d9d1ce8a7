//! Two-headed discriminator.
//!
//! Four stride-2 convs (LeakyReLU) form the trunk; a linear adversarial head
//! produces one real/fake logit and a linear count head regresses the raw
//! per-class counts. With `weight_sharing` on (the full model) both heads
//! read the same trunk features, so count-regression gradients shape the
//! adversarial features and vice versa; with it off the count head gets its
//! own private trunk of identical shape.
//!
//! `count_conditioned_disc` concatenates normalized counts as constant input
//! channels. The full model leaves this off — conditioning flows through the
//! count loss — but the count-loss ablation re-enables it so the
//! discriminator still observes which counts were requested.

use ndarray::{Array1, Array2, Array4, ArrayViewD, ArrayViewMutD, Axis};

use crate::nn::ops;
use crate::nn::{Conv2d, Linear, ParamSet, Real};

use super::{ConvSeq, ModelConfig, LEAKY_SLOPE};

/// Trunk depth (stride-2 convs).
const TRUNK_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams<F> {
    pub cfg: ModelConfig,
    pub trunk: ConvSeq<F>,
    /// Private trunk for the count head when weight sharing is off.
    pub count_trunk: Option<ConvSeq<F>>,
    pub adv_head: Linear<F>,
    pub count_head: Linear<F>,
}

/// Discriminator outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorOut<F> {
    /// Raw (pre-sigmoid) real/fake logits, one per sample.
    pub adv_logits: Array1<F>,
    /// Predicted raw counts, `(batch, n_classes)`.
    pub counts: Array2<F>,
}

/// Cache of one trunk pass.
#[derive(Debug, Clone)]
struct TrunkCache<F> {
    pres: Vec<Array4<F>>,
    acts: Vec<Array4<F>>,
    flat: Array2<F>,
}

/// Cache of a full discriminator pass.
#[derive(Debug, Clone)]
pub struct DiscriminatorCache<F> {
    /// Input after optional count-channel concatenation.
    x_in: Array4<F>,
    trunk: TrunkCache<F>,
    /// Present when the count head runs its own trunk.
    count_trunk: Option<TrunkCache<F>>,
}

fn trunk_channels(cfg: &ModelConfig) -> Vec<(usize, usize)> {
    let in_ch = cfg.image_channels as usize
        + if cfg.count_conditioned_disc {
            cfg.n_classes
        } else {
            0
        };
    let mut chans = Vec::with_capacity(TRUNK_DEPTH);
    let mut prev = in_ch;
    for j in 0..TRUNK_DEPTH {
        let out = cfg.disc_base << j;
        chans.push((prev, out));
        prev = out;
    }
    chans
}

fn new_trunk<F: Real>(cfg: &ModelConfig) -> ConvSeq<F> {
    ConvSeq {
        convs: trunk_channels(cfg)
            .into_iter()
            .map(|(ic, oc)| Conv2d::new(ic, oc, 3, 2, 1))
            .collect(),
    }
}

impl<F: Real> DiscriminatorParams<F> {
    pub fn new(cfg: ModelConfig) -> Self {
        let side = cfg.trunk_out_side();
        let flat_dim = (cfg.disc_base << (TRUNK_DEPTH - 1)) * side * side;
        DiscriminatorParams {
            trunk: new_trunk(&cfg),
            count_trunk: (!cfg.weight_sharing).then(|| new_trunk(&cfg)),
            adv_head: Linear::new(flat_dim, 1),
            count_head: Linear::new(flat_dim, cfg.n_classes),
            cfg,
        }
    }

    /// Forward pass. `c_norm` (normalized counts, one row per sample) is
    /// required iff the discriminator is input-conditioned.
    pub fn forward_cached(
        &self,
        x: &Array4<F>,
        c_norm: Option<&Array2<F>>,
    ) -> (DiscriminatorOut<F>, DiscriminatorCache<F>) {
        let (n, ch, h, w) = x.dim();
        assert_eq!(ch, self.cfg.image_channels as usize, "image channels");
        assert_eq!(
            (h, w),
            (self.cfg.resolution as usize, self.cfg.resolution as usize),
            "image resolution"
        );
        let x_in = if self.cfg.count_conditioned_disc {
            let c = c_norm.expect("conditioned discriminator needs counts");
            assert_eq!(c.dim(), (n, self.cfg.n_classes), "count matrix shape");
            let maps = ops::tile_as_channels(c, h, w);
            ops::concat_channels(&[x.view(), maps.view()])
        } else {
            x.clone()
        };

        let trunk = run_trunk(&self.trunk, &x_in);
        let adv = self.adv_head.forward(&trunk.flat);
        let count_trunk = self
            .count_trunk
            .as_ref()
            .map(|seq| run_trunk(seq, &x_in));
        let count_feats = count_trunk.as_ref().map_or(&trunk.flat, |t| &t.flat);
        let counts = self.count_head.forward(count_feats);

        let out = DiscriminatorOut {
            adv_logits: adv.index_axis(Axis(1), 0).to_owned(),
            counts,
        };
        let cache = DiscriminatorCache {
            x_in,
            trunk,
            count_trunk,
        };
        (out, cache)
    }

    /// Backward pass from head gradients.
    ///
    /// * `d_adv`: gradient w.r.t. the adversarial logits.
    /// * `d_counts`: gradient w.r.t. the count predictions (skipped when the
    ///   count loss is disabled).
    /// * `grads`: parameter gradient accumulator; `None` when only the input
    ///   gradient is wanted (generator update).
    /// * `need_dx`: return the gradient w.r.t. the *image* (conditioning
    ///   channels stripped).
    pub fn backward(
        &self,
        cache: &DiscriminatorCache<F>,
        d_adv: &Array1<F>,
        d_counts: Option<&Array2<F>>,
        mut grads: Option<&mut Self>,
        need_dx: bool,
    ) -> Option<Array4<F>> {
        let n = d_adv.len();
        let d_adv2 = d_adv
            .view()
            .into_shape_with_order((n, 1))
            .expect("logit gradient");
        let d_flat_adv = self
            .adv_head
            .backward(
                &cache.trunk.flat,
                &d_adv2.to_owned(),
                grads.as_deref_mut().map(|g| &mut g.adv_head),
                true,
            )
            .unwrap();

        let d_flat_count = d_counts.map(|dc| {
            let feats = cache
                .count_trunk
                .as_ref()
                .map_or(&cache.trunk.flat, |t| &t.flat);
            self.count_head
                .backward(
                    feats,
                    dc,
                    grads.as_deref_mut().map(|g| &mut g.count_head),
                    true,
                )
                .unwrap()
        });

        let dx_full = match (&cache.count_trunk, d_flat_count) {
            // Shared trunk: head gradients add at the features.
            (None, Some(dfc)) => {
                let d_flat = d_flat_adv + dfc;
                backward_trunk(
                    &self.trunk,
                    &cache.trunk,
                    &cache.x_in,
                    d_flat,
                    grads.as_deref_mut().map(|g| &mut g.trunk),
                    need_dx,
                )
            }
            (None, None) => backward_trunk(
                &self.trunk,
                &cache.trunk,
                &cache.x_in,
                d_flat_adv,
                grads.as_deref_mut().map(|g| &mut g.trunk),
                need_dx,
            ),
            // Separate trunks: each head backpropagates its own stack and
            // the input gradients add.
            (Some(ct_cache), dfc) => {
                let mut dx = backward_trunk(
                    &self.trunk,
                    &cache.trunk,
                    &cache.x_in,
                    d_flat_adv,
                    grads.as_deref_mut().map(|g| &mut g.trunk),
                    need_dx,
                );
                if let Some(dfc) = dfc {
                    let dx_c = backward_trunk(
                        self.count_trunk.as_ref().unwrap(),
                        ct_cache,
                        &cache.x_in,
                        dfc,
                        grads
                            .as_deref_mut()
                            .and_then(|g| g.count_trunk.as_mut()),
                        need_dx,
                    );
                    if let (Some(a), Some(b)) = (dx.as_mut(), dx_c) {
                        *a += &b;
                    }
                }
                dx
            }
        };

        dx_full.map(|dx| {
            if self.cfg.count_conditioned_disc {
                let img_ch = self.cfg.image_channels as usize;
                ops::split_channels(&dx, &[img_ch, self.cfg.n_classes])
                    .into_iter()
                    .next()
                    .unwrap()
            } else {
                dx
            }
        })
    }
}

fn run_trunk<F: Real>(seq: &ConvSeq<F>, x_in: &Array4<F>) -> TrunkCache<F> {
    let slope = F::from_f64(LEAKY_SLOPE);
    let mut pres = Vec::with_capacity(TRUNK_DEPTH);
    let mut acts = Vec::with_capacity(TRUNK_DEPTH);
    let mut x = x_in.clone();
    for conv in &seq.convs {
        let pre = conv.forward(&x);
        x = ops::leaky_relu(&pre, slope);
        pres.push(pre);
        acts.push(x.clone());
    }
    let flat = super::flatten(x);
    TrunkCache { pres, acts, flat }
}

fn backward_trunk<F: Real>(
    seq: &ConvSeq<F>,
    cache: &TrunkCache<F>,
    x_in: &Array4<F>,
    d_flat: Array2<F>,
    mut grads: Option<&mut ConvSeq<F>>,
    need_dx: bool,
) -> Option<Array4<F>> {
    let slope = F::from_f64(LEAKY_SLOPE);
    let last = cache.acts.last().expect("trunk has layers");
    let mut d_act = super::unflatten(d_flat, last.dim());
    for j in (0..TRUNK_DEPTH).rev() {
        let d_pre = ops::leaky_relu_backward(&cache.pres[j], &d_act, slope);
        let cin: &Array4<F> = if j == 0 { x_in } else { &cache.acts[j - 1] };
        let want_dx = j > 0 || need_dx;
        match seq.convs[j].backward(
            cin,
            &d_pre,
            grads.as_deref_mut().map(|g| &mut g.convs[j]),
            want_dx,
        ) {
            Some(dx) => d_act = dx,
            None => return None,
        }
    }
    Some(d_act)
}

impl<F: Real> ParamSet<F> for DiscriminatorParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        self.trunk.visit(&format!("{prefix}trunk."), out);
        if let Some(ct) = &self.count_trunk {
            ct.visit(&format!("{prefix}count_trunk."), out);
        }
        self.adv_head.visit(&format!("{prefix}adv_head."), out);
        self.count_head.visit(&format!("{prefix}count_head."), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        self.trunk.visit_mut(&format!("{prefix}trunk."), out);
        if let Some(ct) = &mut self.count_trunk {
            ct.visit_mut(&format!("{prefix}count_trunk."), out);
        }
        self.adv_head.visit_mut(&format!("{prefix}adv_head."), out);
        self.count_head.visit_mut(&format!("{prefix}count_head."), out);
    }

    fn zeros_like(&self) -> Self {
        DiscriminatorParams {
            cfg: self.cfg.clone(),
            trunk: self.trunk.zeros_like(),
            count_trunk: self.count_trunk.as_ref().map(|t| t.zeros_like()),
            adv_head: self.adv_head.zeros_like(),
            count_head: self.count_head.zeros_like(),
        }
    }
}
