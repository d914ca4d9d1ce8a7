//! Single-step objectives with analytic gradients.
//!
//! These functions compute the discriminator / generator objectives for one
//! batch and accumulate the corresponding parameter gradients. The training
//! loop wraps them with the optimizer; the gradient-verification tests call
//! them directly and compare against finite differences, so the code path
//! being tested is the code path being trained.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::datasets::CountVector;
use crate::models::{
    normalized_counts_matrix, DiscriminatorParams, GeneratorParams, LatentSample,
};
use crate::nn::Real;

use super::losses::{
    count_loss, count_loss_grad, gan_d_loss, gan_d_loss_grads, gan_g_loss, gan_g_loss_grad,
    GeneratorLoss,
};

/// Loss-shaping switches, copied out of the train config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the count term in the total objective.
    pub lambda: f64,
    /// Master switch for the count loss (the count-loss ablation turns this
    /// off).
    pub count_loss_enabled: bool,
    /// Whether the fake-batch count term also updates the discriminator.
    /// Off by default: predicting requested counts on fake images is the
    /// generator's job; letting it shape the discriminator would reward a
    /// count head that reads conditioning rather than pixels.
    pub fake_count_loss_trains_discriminator: bool,
    pub generator_loss: GeneratorLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.7,
            count_loss_enabled: true,
            fake_count_loss_trains_discriminator: false,
            generator_loss: GeneratorLoss::NonSaturating,
        }
    }
}

/// Scalars produced by one discriminator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorStep {
    /// Adversarial discriminator loss (real + fake terms).
    pub d_loss: f64,
    /// Count loss on the real batch (0 when disabled).
    pub count_real: f64,
    /// Count loss on the fake batch (0 when disabled or not trained on).
    pub count_fake: f64,
}

/// Scalars produced by one generator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorStep {
    /// Adversarial generator loss.
    pub g_loss: f64,
    /// Count loss on the generated batch (0 when disabled).
    pub count_fake: f64,
}

fn conditioning<F: Real>(
    d: &DiscriminatorParams<F>,
    counts: &[CountVector],
) -> Option<Array2<F>> {
    d.cfg
        .count_conditioned_disc
        .then(|| normalized_counts_matrix(counts, d.cfg.max_count))
}

/// Discriminator objective and gradients for one batch.
///
/// The objective is `gan_d_loss(real, fake) + lambda * count_loss(real)`
/// (plus the fake count term when configured). Gradients accumulate into
/// `grads`.
pub fn discriminator_loss_and_grads<F: Real>(
    g: &GeneratorParams<F>,
    d: &DiscriminatorParams<F>,
    real: &Array4<F>,
    real_counts: &[CountVector],
    fake_input: &LatentSample<F>,
    loss_cfg: &LossConfig,
    grads: &mut DiscriminatorParams<F>,
) -> DiscriminatorStep {
    let lambda = F::from_f64(loss_cfg.lambda);
    let fake = g.forward(fake_input);

    let (out_real, cache_real) = d.forward_cached(real, conditioning(d, real_counts).as_ref());
    let (out_fake, cache_fake) =
        d.forward_cached(&fake, conditioning(d, &fake_input.counts).as_ref());

    let d_loss = gan_d_loss(&out_real.adv_logits, &out_fake.adv_logits);
    let (d_adv_real, d_adv_fake) = gan_d_loss_grads(&out_real.adv_logits, &out_fake.adv_logits);

    let mut count_real = F::zero();
    let mut count_fake = F::zero();
    let d_counts_real = loss_cfg.count_loss_enabled.then(|| {
        let target = crate::models::counts_matrix::<F>(real_counts);
        count_real = count_loss(&out_real.counts, &target);
        count_loss_grad(&out_real.counts, &target).mapv(|v| v * lambda)
    });
    let d_counts_fake = (loss_cfg.count_loss_enabled
        && loss_cfg.fake_count_loss_trains_discriminator)
        .then(|| {
            let target = fake_input.counts_matrix();
            count_fake = count_loss(&out_fake.counts, &target);
            count_loss_grad(&out_fake.counts, &target).mapv(|v| v * lambda)
        });

    d.backward(
        &cache_real,
        &d_adv_real,
        d_counts_real.as_ref(),
        Some(grads),
        false,
    );
    d.backward(
        &cache_fake,
        &d_adv_fake,
        d_counts_fake.as_ref(),
        Some(grads),
        false,
    );

    DiscriminatorStep {
        d_loss: d_loss.to_f64(),
        count_real: count_real.to_f64(),
        count_fake: count_fake.to_f64(),
    }
}

/// Generator objective and gradients for one batch.
///
/// The objective is `gan_g_loss(fake) + lambda * count_loss(fake)`: the
/// generator is rewarded both for fooling the adversarial head and for
/// producing images whose predicted counts match the requested
/// conditioning. Gradients accumulate into `grads`; the discriminator's
/// parameters are left untouched.
pub fn generator_loss_and_grads<F: Real>(
    g: &GeneratorParams<F>,
    d: &DiscriminatorParams<F>,
    input: &LatentSample<F>,
    loss_cfg: &LossConfig,
    grads: &mut GeneratorParams<F>,
) -> GeneratorStep {
    let lambda = F::from_f64(loss_cfg.lambda);
    let (fake, g_cache) = g.forward_cached(input);
    let (out, d_cache) = d.forward_cached(&fake, conditioning(d, &input.counts).as_ref());

    let g_loss = gan_g_loss(&out.adv_logits, loss_cfg.generator_loss);
    let d_adv = gan_g_loss_grad(&out.adv_logits, loss_cfg.generator_loss);

    let mut count_fake = F::zero();
    let d_counts = loss_cfg.count_loss_enabled.then(|| {
        let target = input.counts_matrix();
        count_fake = count_loss(&out.counts, &target);
        count_loss_grad(&out.counts, &target).mapv(|v| v * lambda)
    });

    let dx = d
        .backward(&d_cache, &d_adv, d_counts.as_ref(), None, true)
        .expect("input gradient requested");
    g.backward(&g_cache, &dx, grads);

    GeneratorStep {
        g_loss: g_loss.to_f64(),
        count_fake: count_fake.to_f64(),
    }
}
