//! Digit-scene compositor: exact counts by construction.
//!
//! For every admissible count vector the generator composites
//! `images_per_combination` grayscale scenes by sampling glyphs uniformly
//! from a [`GlyphBank`], jittering their scale, and placing them at uniform
//! random positions until all tight bounding boxes are pairwise disjoint
//! (rejection sampling with a retry budget). The background stays black, so
//! an all-zero count vector yields an all-black image.
//!
//! Determinism: every image draws from its own stream derived from
//! `(seed, item_index)`, so regeneration — serial or parallel — is
//! byte-identical, and changing one image's parameters never shifts
//! another's draws.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::glyphs::{tight_crop, GlyphBank};
use crate::datasets::manifest::{
    DatasetManifest, ItemSource, ManifestHeader, ManifestItem, PlacedBox, SCHEMA_VERSION,
};
use crate::datasets::{enumerate_combinations, CountVector, Resolution};
use crate::error::{Error, Result};
use crate::fsio;
use crate::imageio;
use crate::rng::{derive_rng, tags};

/// Everything that determines a digit-scene dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiMnistSpec {
    /// Glyph-bank classes to draw from, in dataset class order.
    pub class_subset: Vec<usize>,
    /// Largest per-class count.
    pub max_count: u32,
    /// Optional cap on the total object count per image (placement capacity).
    pub max_total: Option<u32>,
    pub images_per_combination: usize,
    /// Square canvas side in pixels; images are grayscale.
    pub side: u32,
    pub seed: u64,
    /// Uniform glyph scale jitter relative to native glyph size.
    pub scale_range: (f64, f64),
    /// Whole-scene placement attempts before giving up on an image.
    pub retry_budget: usize,
}

impl MultiMnistSpec {
    pub fn new(class_subset: Vec<usize>, max_count: u32, side: u32, seed: u64) -> Self {
        MultiMnistSpec {
            class_subset,
            max_count,
            max_total: None,
            images_per_combination: 1,
            side,
            seed,
            scale_range: (0.8, 1.1),
            retry_budget: 1000,
        }
    }

    pub fn validate(&self, bank: &GlyphBank) -> Result<()> {
        if self.class_subset.is_empty() {
            return Err(Error::InvalidConfig("class_subset is empty".into()));
        }
        for &class in &self.class_subset {
            if class >= bank.n_classes() {
                return Err(Error::InvalidConfig(format!(
                    "class {class} out of range: bank has {} classes",
                    bank.n_classes()
                )));
            }
        }
        bank.require_nonempty(&self.class_subset)?;
        if self.images_per_combination == 0 {
            return Err(Error::InvalidConfig("images_per_combination must be >= 1".into()));
        }
        if self.side == 0 {
            return Err(Error::InvalidConfig("canvas side must be positive".into()));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bad scale range [{lo}, {hi}]"
            )));
        }
        if self.retry_budget == 0 {
            return Err(Error::InvalidConfig("retry_budget must be >= 1".into()));
        }
        Ok(())
    }

    fn resolution(&self) -> Resolution {
        Resolution::gray(self.side)
    }
}

/// Generate the dataset under `out_dir` (images in `images/`, manifest at
/// `manifest.jsonl`) and return the manifest.
pub fn generate_multi_mnist(
    bank: &GlyphBank,
    spec: &MultiMnistSpec,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    generate_multi_mnist_with(bank, spec, out_dir, 1)
}

/// [`generate_multi_mnist`] on up to `workers` threads. Items derive their
/// rng from their index, so any worker count produces identical bytes.
pub fn generate_multi_mnist_with(
    bank: &GlyphBank,
    spec: &MultiMnistSpec,
    out_dir: &Path,
    workers: usize,
) -> Result<DatasetManifest> {
    spec.validate(bank)?;
    let combos = enumerate_combinations(spec.class_subset.len(), spec.max_count, spec.max_total);
    fsio::ensure_dir(&out_dir.join("images"))?;

    let total = combos.len() * spec.images_per_combination;
    let items = crate::datasets::run_indexed(total, workers, |item_index| {
        let counts = &combos[item_index / spec.images_per_combination];
        let mut rng = derive_rng(spec.seed, &[tags::DATASET, item_index as u64]);
        let (canvas, boxes) = synthesize_scene(bank, spec, counts, item_index, &mut rng)?;
        let file = format!("images/{item_index:06}.png");
        imageio::write_gray_png(&out_dir.join(&file), canvas.view())?;
        Ok(ManifestItem {
            file,
            counts: counts.clone(),
            source: ItemSource::Synthesized { boxes },
        })
    })?;

    let header = ManifestHeader {
        schema_version: SCHEMA_VERSION,
        kind: "multi_mnist".to_string(),
        class_names: spec
            .class_subset
            .iter()
            .map(|&c| bank.class_names()[c].clone())
            .collect(),
        max_count: spec.max_count,
        max_total: spec.max_total,
        resolution: spec.resolution(),
        seed: spec.seed,
        params: serde_json::json!({
            "class_subset": spec.class_subset,
            "images_per_combination": spec.images_per_combination,
            "scale_range": [spec.scale_range.0, spec.scale_range.1],
            "retry_budget": spec.retry_budget,
        }),
    };
    let manifest = DatasetManifest { header, items };
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Composite one scene: returns the canvas and the placed boxes.
fn synthesize_scene(
    bank: &GlyphBank,
    spec: &MultiMnistSpec,
    counts: &CountVector,
    item_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<u8>, Vec<PlacedBox>)> {
    let side = spec.side as usize;

    // Draw glyph identities and scales first, in class order, so placement
    // retries never change which glyphs appear.
    let mut stamps: Vec<(u32, Array2<u8>)> = Vec::new();
    for (local_class, &bank_class) in spec.class_subset.iter().enumerate() {
        let pool = bank.pool(bank_class);
        for _ in 0..counts.0[local_class] {
            let glyph = &pool[rng.random_range(0..pool.len())];
            let scale = rng.random_range(spec.scale_range.0..=spec.scale_range.1);
            let stamp = resample_bilinear(&glyph.pixels, scale as f32);
            let stamp = tight_crop(&stamp).expect("scaled glyph keeps its ink");
            if stamp.dim().0 > side || stamp.dim().1 > side {
                return Err(placement_infeasible(item_index, counts, 0));
            }
            stamps.push((local_class as u32, stamp));
        }
    }

    let mut boxes: Vec<PlacedBox> = Vec::with_capacity(stamps.len());
    for attempt in 1..=spec.retry_budget {
        boxes.clear();
        let mut ok = true;
        for (class, stamp) in &stamps {
            let (h, w) = stamp.dim();
            let x0 = rng.random_range(0..=(side - w)) as u32;
            let y0 = rng.random_range(0..=(side - h)) as u32;
            let candidate = PlacedBox {
                class: *class,
                x0,
                y0,
                x1: x0 + w as u32,
                y1: y0 + h as u32,
            };
            if boxes.iter().any(|b| b.intersection_area(&candidate) > 0) {
                ok = false;
                break;
            }
            boxes.push(candidate);
        }
        if ok {
            let mut canvas = Array2::<u8>::zeros((side, side));
            for (placed, (_, stamp)) in boxes.iter().zip(&stamps) {
                let mut region = canvas.slice_mut(ndarray::s![
                    placed.y0 as usize..placed.y1 as usize,
                    placed.x0 as usize..placed.x1 as usize
                ]);
                region.zip_mut_with(stamp, |c, &s| *c = (*c).max(s));
            }
            return Ok((canvas, boxes));
        }
        if attempt == spec.retry_budget {
            break;
        }
    }
    Err(placement_infeasible(item_index, counts, spec.retry_budget))
}

fn placement_infeasible(item_index: usize, counts: &CountVector, attempts: usize) -> Error {
    Error::PlacementInfeasible {
        item_index,
        counts: counts.to_string(),
        attempts,
    }
}

/// Resample a u8 bitmap by `scale` with bilinear interpolation, aligning
/// pixel centers.
fn resample_bilinear(src: &Array2<u8>, scale: f32) -> Array2<u8> {
    let (sh, sw) = src.dim();
    let th = ((sh as f32 * scale).round() as usize).max(1);
    let tw = ((sw as f32 * scale).round() as usize).max(1);
    let fy = sh as f32 / th as f32;
    let fx = sw as f32 / tw as f32;
    Array2::from_shape_fn((th, tw), |(ty, tx)| {
        let sy = ((ty as f32 + 0.5) * fy - 0.5).clamp(0.0, (sh - 1) as f32);
        let sx = ((tx as f32 + 0.5) * fx - 0.5).clamp(0.0, (sw - 1) as f32);
        let y0 = sy.floor() as usize;
        let x0 = sx.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let x1 = (x0 + 1).min(sw - 1);
        let wy = sy - y0 as f32;
        let wx = sx - x0 as f32;
        let top = src[[y0, x0]] as f32 * (1.0 - wx) + src[[y0, x1]] as f32 * wx;
        let bot = src[[y1, x0]] as f32 * (1.0 - wx) + src[[y1, x1]] as f32 * wx;
        (top * (1.0 - wy) + bot * wy).round() as u8
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> MultiMnistSpec {
        MultiMnistSpec {
            images_per_combination: 2,
            max_total: Some(2),
            ..MultiMnistSpec::new(vec![0, 1, 2], 2, 40, 11)
        }
    }

    #[test]
    fn scenes_have_exact_counts_and_disjoint_boxes() {
        let bank = GlyphBank::builtin(5, 3);
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_multi_mnist(&bank, &small_spec(), dir.path()).unwrap();

        // 3 classes, per-class <= 2, total <= 2: 1 empty + 3 singles +
        // 3 doubles + 3 pairs = 10 combinations.
        assert_eq!(manifest.items.len(), 10 * 2);
        for item in &manifest.items {
            let ItemSource::Synthesized { boxes } = &item.source else {
                panic!("compositor must record placed boxes");
            };
            // Counts match the placement log exactly.
            let mut recount = CountVector::zeros(3);
            for b in boxes {
                recount.0[b.class as usize] += 1;
            }
            assert_eq!(&recount, &item.counts);
            // Boxes are pairwise disjoint and inside the canvas.
            for (i, a) in boxes.iter().enumerate() {
                assert!(a.x1 <= 40 && a.y1 <= 40 && a.x0 < a.x1 && a.y0 < a.y1);
                for b in &boxes[..i] {
                    assert_eq!(a.intersection_area(b), 0, "overlap in {}", item.file);
                }
            }
        }
    }

    #[test]
    fn rendered_pixels_agree_with_the_placement_log() {
        let bank = GlyphBank::builtin(5, 3);
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_multi_mnist(&bank, &small_spec(), dir.path()).unwrap();

        for item in &manifest.items {
            let img = imageio::read_png(&DatasetManifest::image_path(
                &dir.path().join("manifest.jsonl"),
                item,
            ), 1)
            .unwrap();
            let ItemSource::Synthesized { boxes } = &item.source else {
                unreachable!()
            };
            let mut ink_outside = 0usize;
            let mut per_box_mass = vec![0u64; boxes.len()];
            for ((_, y, x), &v) in img.indexed_iter() {
                let lit = v > -1.0;
                let owner = boxes.iter().position(|b| {
                    (b.x0 as usize..b.x1 as usize).contains(&x)
                        && (b.y0 as usize..b.y1 as usize).contains(&y)
                });
                match owner {
                    Some(i) if lit => per_box_mass[i] += 1,
                    None if lit => ink_outside += 1,
                    _ => {}
                }
            }
            assert_eq!(ink_outside, 0, "ink outside every box in {}", item.file);
            for (i, &mass) in per_box_mass.iter().enumerate() {
                assert!(mass > 0, "box {i} of {} is blank", item.file);
            }
            if item.counts.total() == 0 {
                assert!(per_box_mass.is_empty());
                assert!(img.iter().all(|&v| v == -1.0), "empty scene must be black");
            }
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let bank = GlyphBank::builtin(5, 3);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let a = generate_multi_mnist(&bank, &spec, dir_a.path()).unwrap();
        let b = generate_multi_mnist(&bank, &spec, dir_b.path()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes(), "manifests must match");
        for item in &a.items {
            let pa = fsio::read_bytes(&dir_a.path().join(&item.file)).unwrap();
            let pb = fsio::read_bytes(&dir_b.path().join(&item.file)).unwrap();
            assert_eq!(pa, pb, "png bytes differ for {}", item.file);
        }

        let reread = DatasetManifest::read(&dir_a.path().join("manifest.jsonl")).unwrap();
        assert_eq!(reread.to_bytes(), a.to_bytes());
    }

    #[test]
    fn infeasible_scenes_are_reported_not_looped_forever() {
        let bank = GlyphBank::builtin(5, 2);
        // A 16x16 canvas cannot hold four digits.
        let spec = MultiMnistSpec {
            images_per_combination: 1,
            max_total: None,
            retry_budget: 50,
            ..MultiMnistSpec::new(vec![0, 1], 2, 16, 3)
        };
        let dir = tempfile::tempdir().unwrap();
        let err = generate_multi_mnist(&bank, &spec, dir.path()).unwrap_err();
        assert!(matches!(err, Error::PlacementInfeasible { .. }), "got {err}");
    }

    #[test]
    fn spec_validation_catches_bad_inputs() {
        let bank = GlyphBank::builtin(5, 2);
        let dir = tempfile::tempdir().unwrap();

        let mut spec = small_spec();
        spec.class_subset = vec![12];
        assert!(generate_multi_mnist(&bank, &spec, dir.path()).is_err());

        let mut spec = small_spec();
        spec.images_per_combination = 0;
        assert!(generate_multi_mnist(&bank, &spec, dir.path()).is_err());

        let mut spec = small_spec();
        spec.scale_range = (0.0, 1.0);
        assert!(generate_multi_mnist(&bank, &spec, dir.path()).is_err());
    }

    #[test]
    fn bilinear_resample_preserves_flat_regions() {
        let flat = Array2::from_elem((8, 8), 200u8);
        let up = resample_bilinear(&flat, 1.3);
        assert_eq!(up.dim(), (10, 10));
        assert!(up.iter().all(|&v| v == 200));
        let down = resample_bilinear(&flat, 0.5);
        assert_eq!(down.dim(), (4, 4));
        assert!(down.iter().all(|&v| v == 200));
    }

    #[test]
    fn worker_count_does_not_change_output_bytes() {
        let bank = tiny_bank();
        let spec = small_spec();
        let serial = tempfile::tempdir().unwrap();
        let threaded = tempfile::tempdir().unwrap();
        generate_multi_mnist_with(&bank, &spec, serial.path(), 1).unwrap();
        generate_multi_mnist_with(&bank, &spec, threaded.path(), 3).unwrap();

        let a = crate::fsio::read_bytes(&serial.path().join("manifest.jsonl")).unwrap();
        let b = crate::fsio::read_bytes(&threaded.path().join("manifest.jsonl")).unwrap();
        assert_eq!(a, b, "manifest must not depend on the worker count");
        for item in DatasetManifest::read(&serial.path().join("manifest.jsonl")).unwrap().items {
            assert_eq!(
                crate::fsio::read_bytes(&serial.path().join(&item.file)).unwrap(),
                crate::fsio::read_bytes(&threaded.path().join(&item.file)).unwrap(),
                "image {} must not depend on the worker count",
                item.file
            );
        }
    }
}
