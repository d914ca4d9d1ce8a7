//! Behavioral contracts of the three models (f32, as trained).

use countgan::datasets::CountVector;
use countgan::models::{
    counts_matrix, init_params, normalized_counts_matrix, Backbone, LabelMapping, LatentSample,
    ModelConfig,
};
use countgan::nn::ParamSet;
use countgan::rng::derive_rng;
use ndarray::{Array1, Array4};
use rand::Rng;

fn cfg16() -> ModelConfig {
    ModelConfig {
        resolution: 16,
        image_channels: 1,
        n_classes: 3,
        max_count: 2,
        latent_dim: 8,
        gen_base: 6,
        gen_growth: 4,
        gen_head: 6,
        backbone: Backbone::Dense,
        label_mapping: LabelMapping::PerStage,
        disc_base: 6,
        weight_sharing: true,
        count_conditioned_disc: false,
        pred_base: 6,
    }
}

fn some_counts() -> Vec<CountVector> {
    vec![
        CountVector(vec![1, 0, 2]),
        CountVector(vec![0, 0, 0]),
        CountVector(vec![2, 1, 1]),
        CountVector(vec![0, 2, 0]),
    ]
}

#[test]
fn generator_output_has_declared_shape_and_range() {
    for backbone in [Backbone::Dense, Backbone::Plain] {
        for mapping in [LabelMapping::PerStage, LabelMapping::InputOnly] {
            let cfg = ModelConfig {
                backbone,
                label_mapping: mapping,
                ..cfg16()
            };
            let (g, ..) = init_params::<f32>(&cfg, 3).unwrap();
            let mut rng = derive_rng(3, &[1]);
            let input = LatentSample::draw(cfg.latent_dim, some_counts(), &mut rng);
            let out = g.forward(&input);
            assert_eq!(out.dim(), (4, 1, 16, 16));
            assert!(out.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn generator_forward_is_deterministic() {
    let cfg = cfg16();
    let (g, ..) = init_params::<f32>(&cfg, 5).unwrap();
    let mut rng = derive_rng(5, &[2]);
    let input = LatentSample::draw(cfg.latent_dim, some_counts(), &mut rng);
    let a = g.forward(&input);
    let b = g.forward(&input);
    assert_eq!(a, b, "two forwards of the same input must agree bitwise");
}

/// Requested counts must actually influence the generated pixels — under
/// both label mappings, and for the same latent draw.
#[test]
fn generator_conditioning_is_live() {
    for mapping in [LabelMapping::PerStage, LabelMapping::InputOnly] {
        let cfg = ModelConfig {
            label_mapping: mapping,
            ..cfg16()
        };
        let (g, ..) = init_params::<f32>(&cfg, 7).unwrap();
        let mut rng = derive_rng(7, &[3]);
        let a = LatentSample::draw(cfg.latent_dim, vec![CountVector(vec![2, 0, 0])], &mut rng);
        let b = LatentSample {
            z: a.z.clone(),
            counts: vec![CountVector(vec![0, 0, 2])],
        };
        let out_a = g.forward(&a);
        let out_b = g.forward(&b);
        assert_ne!(out_a, out_b, "counts must reach the pixels ({mapping:?})");
    }
}

#[test]
fn discriminator_heads_have_declared_shapes() {
    let cfg = cfg16();
    let (_, d, _) = init_params::<f32>(&cfg, 11).unwrap();
    let mut rng = derive_rng(11, &[4]);
    let x = Array4::from_shape_fn((4, 1, 16, 16), |_| rng.random_range(-1.0f32..1.0));
    let (out, _) = d.forward_cached(&x, None);
    assert_eq!(out.adv_logits.len(), 4);
    assert_eq!(out.counts.dim(), (4, 3));
}

/// With a shared trunk a count-head-only gradient must reach the trunk;
/// with separate trunks it must reach only the private count trunk.
#[test]
fn weight_sharing_controls_where_count_gradients_land() {
    let mut rng = derive_rng(13, &[5]);
    let x = Array4::from_shape_fn((2, 1, 16, 16), |_| rng.random_range(-1.0f32..1.0));
    let d_counts = ndarray::Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0f32..1.0));
    let zero_adv = Array1::zeros(2);

    for sharing in [true, false] {
        let cfg = ModelConfig {
            weight_sharing: sharing,
            ..cfg16()
        };
        let (_, d, _) = init_params::<f32>(&cfg, 13).unwrap();
        assert_eq!(d.count_trunk.is_some(), !sharing);
        let (_, cache) = d.forward_cached(&x, None);
        let mut grads = d.zeros_like();
        d.backward(&cache, &zero_adv, Some(&d_counts), Some(&mut grads), false);
        let trunk_grad: f32 = grads
            .trunk
            .tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v.abs()).sum::<f32>())
            .sum();
        if sharing {
            assert!(trunk_grad > 0.0, "shared trunk must receive count gradient");
        } else {
            assert_eq!(trunk_grad, 0.0, "separate trunks must isolate the heads");
            let ct_grad: f32 = grads
                .count_trunk
                .as_ref()
                .unwrap()
                .tensors()
                .iter()
                .map(|(_, t)| t.iter().map(|v| v.abs()).sum::<f32>())
                .sum();
            assert!(ct_grad > 0.0, "count trunk must receive count gradient");
        }
    }
}

/// Input conditioning must change the discriminator's judgment of the same
/// image, and only when enabled.
#[test]
fn input_conditioning_is_live_only_when_enabled() {
    let mut rng = derive_rng(17, &[6]);
    let x = Array4::from_shape_fn((2, 1, 16, 16), |_| rng.random_range(-1.0f32..1.0));
    let counts_a = normalized_counts_matrix::<f32>(
        &[CountVector(vec![2, 0, 0]), CountVector(vec![0, 1, 0])],
        2,
    );
    let counts_b = normalized_counts_matrix::<f32>(
        &[CountVector(vec![0, 0, 2]), CountVector(vec![1, 0, 1])],
        2,
    );

    let cfg = ModelConfig {
        count_conditioned_disc: true,
        ..cfg16()
    };
    let (_, d, _) = init_params::<f32>(&cfg, 17).unwrap();
    let (out_a, _) = d.forward_cached(&x, Some(&counts_a));
    let (out_b, _) = d.forward_cached(&x, Some(&counts_b));
    assert_ne!(out_a.adv_logits, out_b.adv_logits);

    let (_, d_plain, _) = init_params::<f32>(&cfg16(), 17).unwrap();
    let (out_c, _) = d_plain.forward_cached(&x, Some(&counts_a));
    let (out_d, _) = d_plain.forward_cached(&x, None);
    assert_eq!(
        out_c.adv_logits, out_d.adv_logits,
        "unconditioned discriminator must ignore the count argument"
    );
}

#[test]
#[should_panic(expected = "conditioned discriminator needs counts")]
fn conditioned_discriminator_rejects_missing_counts() {
    let cfg = ModelConfig {
        count_conditioned_disc: true,
        ..cfg16()
    };
    let (_, d, _) = init_params::<f32>(&cfg, 19).unwrap();
    let x = Array4::zeros((1, 1, 16, 16));
    let _ = d.forward_cached(&x, None);
}

#[test]
fn predictor_eval_mode_is_deterministic_and_dropout_mode_is_not_identical() {
    let cfg = cfg16();
    let (.., p) = init_params::<f32>(&cfg, 23).unwrap();
    let mut rng = derive_rng(23, &[7]);
    let x = Array4::from_shape_fn((3, 1, 16, 16), |_| rng.random_range(-1.0f32..1.0));

    let a = p.forward_eval(&x);
    let b = p.forward_eval(&x);
    assert_eq!(a, b);
    assert_eq!(a.dim(), (3, 3));

    let mut rng1 = derive_rng(23, &[8]);
    let mut rng2 = derive_rng(23, &[9]);
    let (t1, _) = p.forward_cached(&x, Some(&mut rng1));
    let (t2, _) = p.forward_cached(&x, Some(&mut rng2));
    assert_ne!(t1, t2, "different dropout streams must differ");

    let mut rng3 = derive_rng(23, &[8]);
    let (t3, _) = p.forward_cached(&x, Some(&mut rng3));
    assert_eq!(t1, t3, "same dropout stream must reproduce bitwise");
}

/// The Fréchet features are the flattened final trunk activations in eval
/// mode: deterministic, and of the documented width.
#[test]
fn predictor_features_have_declared_width() {
    let cfg = cfg16();
    let (.., p) = init_params::<f32>(&cfg, 29).unwrap();
    let mut rng = derive_rng(29, &[10]);
    let x = Array4::from_shape_fn((2, 1, 16, 16), |_| rng.random_range(-1.0f32..1.0));
    let f = p.features(&x);
    let side = cfg.resolution as usize / 16;
    assert_eq!(f.dim(), (2, (cfg.pred_base << 3) * side * side));
    assert_eq!(f, p.features(&x));
}

/// Batch forward must match per-sample forwards (no cross-sample leakage).
#[test]
fn forwards_are_batch_consistent() {
    let cfg = cfg16();
    let (g, d, p) = init_params::<f32>(&cfg, 31).unwrap();
    let mut rng = derive_rng(31, &[11]);
    let input = LatentSample::draw(cfg.latent_dim, some_counts(), &mut rng);
    let batch_out = g.forward(&input);

    for i in 0..input.batch() {
        let single = LatentSample {
            z: input.z.row(i).to_owned().insert_axis(ndarray::Axis(0)),
            counts: vec![input.counts[i].clone()],
        };
        let one = g.forward(&single);
        let got = batch_out.index_axis(ndarray::Axis(0), i);
        let diff = (&one.index_axis_move(ndarray::Axis(0), 0) - &got)
            .iter()
            .fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(diff <= 1e-5, "sample {i} diverges from batch output: {diff}");
    }

    let (d_out, _) = d.forward_cached(&batch_out, None);
    let p_out = p.forward_eval(&batch_out);
    for i in 0..input.batch() {
        let one = batch_out
            .index_axis(ndarray::Axis(0), i)
            .to_owned()
            .insert_axis(ndarray::Axis(0));
        let (d_one, _) = d.forward_cached(&one, None);
        assert!((d_one.adv_logits[0] - d_out.adv_logits[i]).abs() <= 1e-4);
        let p_one = p.forward_eval(&one);
        let pd = (&p_one.row(0) - &p_out.row(i))
            .iter()
            .fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(pd <= 1e-4, "predictor sample {i} diverges: {pd}");
    }
}

#[test]
fn raw_count_targets_and_normalized_conditioning_are_distinct() {
    let counts = vec![CountVector(vec![2, 0, 1])];
    let raw = counts_matrix::<f32>(&counts);
    let norm = normalized_counts_matrix::<f32>(&counts, 2);
    assert_eq!(raw[[0, 0]], 2.0);
    assert_eq!(norm[[0, 0]], 1.0);
    assert_eq!(raw[[0, 2]], 1.0);
    assert_eq!(norm[[0, 2]], 0.5);
}
