//! End-to-end analytic-vs-numeric gradient verification.
//!
//! Every objective the training loop optimizes is rebuilt here as a pure
//! function of one model's parameters (everything else held fixed) and its
//! analytic gradients — produced by the same functions the trainer calls —
//! are compared against central finite differences in f64.

use countgan::datasets::CountVector;
use countgan::models::{
    init_params, Backbone, CountPredictorParams, DiscriminatorParams, GeneratorParams,
    LabelMapping, LatentSample, ModelConfig,
};
use countgan::nn::gradcheck;
use countgan::nn::ParamSet;
use countgan::rng::derive_rng;
use countgan::training::losses::{count_loss, gan_d_loss, gan_g_loss, GeneratorLoss};
use countgan::training::step::{
    discriminator_loss_and_grads, generator_loss_and_grads, LossConfig,
};
use ndarray::Array4;
use rand::Rng;

// Step size balances three error sources: truncation (O(h^2)), subtractive
// cancellation (O(eps/h)), and ReLU kinks falling inside the interval
// (probability O(h) per activation, and the blended slope then deviates by
// a chunk of that activation's gradient share). At 3e-5 all three stay well
// below the tolerance at the generic parameter point used here.
const FD_H: f64 = 3e-5;
const REL_TOL: f64 = 1e-3;
const COORDS: usize = 24;

/// Move parameters to a generic point: uniform draws of magnitude ~0.3 give
/// O(1) activations, so pre-activations sit far (relative to the step size)
/// from ReLU kinks and gradients sit far above the difference-quotient noise
/// floor. At the tiny N(0, 0.02) init both failure modes are endemic.
fn randomize<P: ParamSet<f64>>(params: &mut P, seed: u64) {
    let mut rng = derive_rng(seed, &[0xF7]);
    for (_, mut t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        resolution: 16,
        image_channels: 1,
        n_classes: 2,
        max_count: 2,
        latent_dim: 4,
        gen_base: 4,
        gen_growth: 3,
        gen_head: 4,
        backbone: Backbone::Dense,
        label_mapping: LabelMapping::PerStage,
        disc_base: 4,
        weight_sharing: true,
        count_conditioned_disc: false,
        pred_base: 4,
    }
}

fn batch_inputs(
    cfg: &ModelConfig,
    seed: u64,
) -> (Array4<f64>, Vec<CountVector>, LatentSample<f64>) {
    let mut rng = derive_rng(seed, &[0xF0]);
    let n = 3;
    let real = Array4::from_shape_fn(
        (n, cfg.image_channels as usize, cfg.resolution as usize, cfg.resolution as usize),
        |_| rng.random_range(-1.0..1.0),
    );
    let real_counts = vec![
        CountVector(vec![1, 0]),
        CountVector(vec![2, 1]),
        CountVector(vec![0, 2]),
    ];
    let cond = vec![
        CountVector(vec![0, 1]),
        CountVector(vec![1, 1]),
        CountVector(vec![2, 0]),
    ];
    let latent = LatentSample::draw(cfg.latent_dim, cond, &mut rng);
    (real, real_counts, latent)
}

fn check_generator(cfg: ModelConfig, loss_cfg: LossConfig, seed: u64) {
    let (mut g, mut d, _) = init_params::<f64>(&cfg, seed).unwrap();
    randomize(&mut g, seed);
    randomize(&mut d, seed + 1);
    let (_, _, latent) = batch_inputs(&cfg, seed);

    let mut grads = g.zeros_like();
    generator_loss_and_grads(&g, &d, &latent, &loss_cfg, &mut grads);

    let mut loss = |gp: &GeneratorParams<f64>| -> f64 {
        let fake = gp.forward(&latent);
        let cond = d
            .cfg
            .count_conditioned_disc
            .then(|| countgan::models::normalized_counts_matrix(&latent.counts, cfg.max_count));
        let (out, _) = d.forward_cached(&fake, cond.as_ref());
        let mut total = gan_g_loss(&out.adv_logits, loss_cfg.generator_loss);
        if loss_cfg.count_loss_enabled {
            total += loss_cfg.lambda * count_loss(&out.counts, &latent.counts_matrix());
        }
        total
    };

    let mut rng = derive_rng(seed, &[0xF1]);
    let coords = gradcheck::sample_coordinates(&g, COORDS, &mut rng);
    let report = gradcheck::check(&mut g, &grads, &mut loss, &coords, FD_H);
    let worst = report.worst().cloned();
    assert!(
        report.max_rel_err < REL_TOL,
        "generator {:?}/{:?}: max rel err {} at {:?}",
        cfg.backbone,
        cfg.label_mapping,
        report.max_rel_err,
        worst
    );
}

fn check_discriminator(cfg: ModelConfig, loss_cfg: LossConfig, seed: u64) {
    let (mut g, mut d, _) = init_params::<f64>(&cfg, seed).unwrap();
    randomize(&mut g, seed);
    randomize(&mut d, seed + 1);
    let (real, real_counts, latent) = batch_inputs(&cfg, seed);

    let mut grads = d.zeros_like();
    discriminator_loss_and_grads(&g, &d, &real, &real_counts, &latent, &loss_cfg, &mut grads);

    let fake = g.forward(&latent);
    let mut loss = |dp: &DiscriminatorParams<f64>| -> f64 {
        let cond_real = dp
            .cfg
            .count_conditioned_disc
            .then(|| countgan::models::normalized_counts_matrix(&real_counts, cfg.max_count));
        let cond_fake = dp
            .cfg
            .count_conditioned_disc
            .then(|| countgan::models::normalized_counts_matrix(&latent.counts, cfg.max_count));
        let (out_real, _) = dp.forward_cached(&real, cond_real.as_ref());
        let (out_fake, _) = dp.forward_cached(&fake, cond_fake.as_ref());
        let mut total = gan_d_loss(&out_real.adv_logits, &out_fake.adv_logits);
        if loss_cfg.count_loss_enabled {
            total += loss_cfg.lambda
                * count_loss(&out_real.counts, &countgan::models::counts_matrix(&real_counts));
            if loss_cfg.fake_count_loss_trains_discriminator {
                total += loss_cfg.lambda * count_loss(&out_fake.counts, &latent.counts_matrix());
            }
        }
        total
    };

    let mut rng = derive_rng(seed, &[0xF2]);
    let coords = gradcheck::sample_coordinates(&d, COORDS, &mut rng);
    let report = gradcheck::check(&mut d, &grads, &mut loss, &coords, FD_H);
    let worst = report.worst().cloned();
    assert!(
        report.max_rel_err < REL_TOL,
        "discriminator sharing={} cond={}: max rel err {} at {:?}",
        cfg.weight_sharing,
        cfg.count_conditioned_disc,
        report.max_rel_err,
        worst
    );
}

#[test]
fn generator_gradients_dense_per_stage() {
    check_generator(tiny_config(), LossConfig::default(), 41);
}

#[test]
fn generator_gradients_plain_backbone() {
    let cfg = ModelConfig {
        backbone: Backbone::Plain,
        ..tiny_config()
    };
    check_generator(cfg, LossConfig::default(), 42);
}

#[test]
fn generator_gradients_input_only_mapping() {
    let cfg = ModelConfig {
        label_mapping: LabelMapping::InputOnly,
        ..tiny_config()
    };
    check_generator(cfg, LossConfig::default(), 43);
}

#[test]
fn generator_gradients_minimax_loss() {
    let loss_cfg = LossConfig {
        generator_loss: GeneratorLoss::Minimax,
        ..LossConfig::default()
    };
    check_generator(tiny_config(), loss_cfg, 44);
}

#[test]
fn generator_gradients_without_count_loss() {
    let cfg = ModelConfig {
        count_conditioned_disc: true,
        ..tiny_config()
    };
    let loss_cfg = LossConfig {
        count_loss_enabled: false,
        ..LossConfig::default()
    };
    check_generator(cfg, loss_cfg, 45);
}

#[test]
fn discriminator_gradients_shared_trunk() {
    check_discriminator(tiny_config(), LossConfig::default(), 51);
}

#[test]
fn discriminator_gradients_separate_trunks() {
    let cfg = ModelConfig {
        weight_sharing: false,
        ..tiny_config()
    };
    check_discriminator(cfg, LossConfig::default(), 52);
}

#[test]
fn discriminator_gradients_conditioned_no_count_loss() {
    let cfg = ModelConfig {
        count_conditioned_disc: true,
        ..tiny_config()
    };
    let loss_cfg = LossConfig {
        count_loss_enabled: false,
        ..LossConfig::default()
    };
    check_discriminator(cfg, loss_cfg, 53);
}

#[test]
fn discriminator_gradients_with_fake_count_term() {
    let loss_cfg = LossConfig {
        fake_count_loss_trains_discriminator: true,
        ..LossConfig::default()
    };
    check_discriminator(tiny_config(), loss_cfg, 54);
}

#[test]
fn predictor_gradients_with_frozen_dropout() {
    let cfg = tiny_config();
    let (_, _, mut p) = init_params::<f64>(&cfg, 61).unwrap();
    randomize(&mut p, 61);
    let (x, counts, _) = batch_inputs(&cfg, 61);
    let target = countgan::models::counts_matrix::<f64>(&counts);

    // The dropout mask must be identical across loss evaluations for finite
    // differences to be meaningful: re-derive the same stream every call.
    let mask_stream = || derive_rng(61, &[0xF3]);

    let mut grads = p.zeros_like();
    {
        let mut rng = mask_stream();
        let (pred, cache) = p.forward_cached(&x, Some(&mut rng));
        let d_pred = countgan::training::losses::count_loss_grad(&pred, &target);
        p.backward(&cache, &d_pred, &mut grads);
    }
    let mut loss = |pp: &CountPredictorParams<f64>| -> f64 {
        let mut rng = mask_stream();
        let (pred, _) = pp.forward_cached(&x, Some(&mut rng));
        count_loss(&pred, &target)
    };

    let mut rng = derive_rng(61, &[0xF4]);
    let coords = gradcheck::sample_coordinates(&p, COORDS, &mut rng);
    let report = gradcheck::check(&mut p, &grads, &mut loss, &coords, FD_H);
    assert!(
        report.max_rel_err < REL_TOL,
        "predictor: max rel err {} at {:?}",
        report.max_rel_err,
        report.worst()
    );
}

/// The generator objective must leave discriminator gradients untouched and
/// vice versa (parameter isolation between the two updates).
#[test]
fn updates_do_not_cross_contaminate() {
    let cfg = tiny_config();
    let (g, d, _) = init_params::<f64>(&cfg, 71).unwrap();
    let (real, real_counts, latent) = batch_inputs(&cfg, 71);
    let loss_cfg = LossConfig::default();

    let d_before = d.clone();
    let g_before = g.clone();
    let mut g_grads = g.zeros_like();
    generator_loss_and_grads(&g, &d, &latent, &loss_cfg, &mut g_grads);
    let mut d_grads = d.zeros_like();
    discriminator_loss_and_grads(&g, &d, &real, &real_counts, &latent, &loss_cfg, &mut d_grads);

    assert_eq!(d, d_before, "objectives must not mutate parameters");
    assert_eq!(g, g_before, "objectives must not mutate parameters");
    assert!(g_grads.max_abs() > 0.0, "generator must receive gradient");
    assert!(d_grads.max_abs() > 0.0, "discriminator must receive gradient");
}
