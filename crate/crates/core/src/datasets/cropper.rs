//! Exact-count patch cropping from box-annotated source images.
//!
//! The cropper slides a fixed-size window over every source image on a
//! stride grid, labels each window with [`count_in_window`], throws away
//! windows that cut any box ambiguously (visible fraction strictly between
//! `tau_lo` and `tau`), and keeps up to `target_per_combination` patches per
//! admissible count vector. Candidate windows are shuffled with a seeded
//! generator before quota filling so patches spread across source images
//! instead of clustering in the first one; the shuffle makes the output
//! deterministic per seed, not per thread count.
//!
//! Falling short of a quota is reported, not fatal: real annotation sets
//! simply may not contain a thousand windows with five of everything.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::annotations::{count_in_window, has_ambiguous_cut, BoxAnnotation, Window};
use crate::datasets::manifest::{
    DatasetManifest, ItemSource, ManifestHeader, ManifestItem, SCHEMA_VERSION,
};
use crate::datasets::{enumerate_combinations, CountVector, Resolution};
use crate::error::{Error, Result};
use crate::fsio;
use crate::imageio;
use crate::rng::{derive_rng, tags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub class_names: Vec<String>,
    /// Square window side in pixels.
    pub patch_size: u32,
    /// Largest per-class count a patch may carry; windows over this are
    /// skipped, not errors.
    pub max_count: u32,
    pub max_total: Option<u32>,
    pub target_per_combination: usize,
    /// Window grid step in pixels.
    pub stride: u32,
    /// A box counts when at least this fraction of it is visible.
    pub tau: f64,
    /// Boxes with visible fraction strictly between `tau_lo` and `tau`
    /// poison the window.
    pub tau_lo: f64,
    pub seed: u64,
}

impl CropSpec {
    pub fn new(class_names: Vec<String>, patch_size: u32, max_count: u32, seed: u64) -> Self {
        CropSpec {
            class_names,
            patch_size,
            max_count,
            max_total: None,
            target_per_combination: 1000,
            stride: patch_size / 2,
            tau: 0.5,
            tau_lo: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::InvalidConfig("class_names is empty".into()));
        }
        if self.patch_size == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig("patch_size and stride must be positive".into()));
        }
        if self.target_per_combination == 0 {
            return Err(Error::InvalidConfig("target_per_combination must be >= 1".into()));
        }
        if !(0.0 < self.tau_lo && self.tau_lo <= self.tau && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < tau_lo <= tau <= 1, got tau_lo {} tau {}",
                self.tau_lo, self.tau
            )));
        }
        Ok(())
    }
}

/// Result of a cropping run: the written manifest plus any combinations
/// that ended below target, as `(counts, emitted)` pairs.
#[derive(Debug)]
pub struct CropOutcome {
    pub manifest: DatasetManifest,
    pub shortfalls: Vec<(CountVector, usize)>,
}

/// Crop labeled patches from `images_dir` (expects `<image_id>.png` per
/// annotation) into `out_dir`, returning the manifest and quota shortfalls.
pub fn crop_count_patches(
    annotations: &[BoxAnnotation],
    images_dir: &Path,
    spec: &CropSpec,
    out_dir: &Path,
) -> Result<CropOutcome> {
    spec.validate()?;
    let n_classes = spec.class_names.len();

    // Pass 1: enumerate candidate windows from image headers alone.
    struct Candidate {
        ann_idx: usize,
        x: u32,
        y: u32,
        counts: CountVector,
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    for (ann_idx, ann) in annotations.iter().enumerate() {
        let path = images_dir.join(format!("{}.png", ann.image_id));
        let (width, height) = image::image_dimensions(&path).map_err(|e| Error::DataError {
            path: path.clone(),
            reason: format!("cannot open source image: {e}"),
        })?;
        for b in &ann.boxes {
            if b.class as usize >= n_classes {
                return Err(Error::DataError {
                    path: path.clone(),
                    reason: format!("box class {} out of range on `{}`", b.class, ann.image_id),
                });
            }
            if b.x1 > width || b.y1 > height {
                return Err(Error::DataError {
                    path: path.clone(),
                    reason: format!(
                        "box [{}, {}, {}, {}] exceeds {}x{} image `{}`",
                        b.x0, b.y0, b.x1, b.y1, width, height, ann.image_id
                    ),
                });
            }
        }
        if width < spec.patch_size || height < spec.patch_size {
            return Err(Error::DataError {
                path,
                reason: format!(
                    "image `{}` is {}x{}, smaller than patch size {}",
                    ann.image_id, width, height, spec.patch_size
                ),
            });
        }
        for y in (0..=height - spec.patch_size).step_by(spec.stride as usize) {
            for x in (0..=width - spec.patch_size).step_by(spec.stride as usize) {
                let window = Window::new(x, y, spec.patch_size);
                if has_ambiguous_cut(ann, &window, spec.tau_lo, spec.tau) {
                    continue;
                }
                let counts = count_in_window(ann, &window, spec.tau, n_classes);
                let in_support = counts.0.iter().all(|&c| c <= spec.max_count)
                    && spec.max_total.is_none_or(|cap| counts.total() <= cap);
                if in_support {
                    candidates.push(Candidate { ann_idx, x, y, counts });
                }
            }
        }
    }

    // Shuffle, then fill quotas first-come.
    let mut rng = derive_rng(spec.seed, &[tags::CROP]);
    candidates.shuffle(&mut rng);
    let mut taken: BTreeMap<CountVector, usize> = BTreeMap::new();
    let mut selected: Vec<Candidate> = Vec::new();
    for cand in candidates {
        let slot = taken.entry(cand.counts.clone()).or_insert(0);
        if *slot < spec.target_per_combination {
            *slot += 1;
            selected.push(cand);
        }
    }
    // Manifest order: by source image then window position, so pass 2 loads
    // each source exactly once and output is independent of shuffle order.
    selected.sort_by_key(|c| (c.ann_idx, c.y, c.x));

    // Pass 2: cut pixels.
    fsio::ensure_dir(&out_dir.join("images"))?;
    let mut items = Vec::with_capacity(selected.len());
    let mut current: Option<(usize, Array3<f32>)> = None;
    for (item_index, cand) in selected.iter().enumerate() {
        let ann = &annotations[cand.ann_idx];
        if current.as_ref().map(|(i, _)| *i) != Some(cand.ann_idx) {
            let path = images_dir.join(format!("{}.png", ann.image_id));
            current = Some((cand.ann_idx, imageio::read_png(&path, 3)?));
        }
        let (_, src) = current.as_ref().unwrap();
        let patch = src
            .slice(ndarray::s![
                ..,
                cand.y as usize..(cand.y + spec.patch_size) as usize,
                cand.x as usize..(cand.x + spec.patch_size) as usize
            ])
            .to_owned();
        let file = format!("images/{item_index:06}.png");
        imageio::write_png(&out_dir.join(&file), patch.view())?;
        items.push(ManifestItem {
            file,
            counts: cand.counts.clone(),
            source: ItemSource::Cropped {
                image_id: ann.image_id.clone(),
                x: cand.x,
                y: cand.y,
            },
        });
    }

    let header = ManifestHeader {
        schema_version: SCHEMA_VERSION,
        kind: "cropped".to_string(),
        class_names: spec.class_names.clone(),
        max_count: spec.max_count,
        max_total: spec.max_total,
        resolution: Resolution::rgb(spec.patch_size),
        seed: spec.seed,
        params: serde_json::json!({
            "stride": spec.stride,
            "target_per_combination": spec.target_per_combination,
            "tau": spec.tau,
            "tau_lo": spec.tau_lo,
        }),
    };
    let manifest = DatasetManifest { header, items };
    manifest.write(&out_dir.join("manifest.jsonl"))?;

    let shortfalls = enumerate_combinations(n_classes, spec.max_count, spec.max_total)
        .into_iter()
        .map(|c| {
            let got = taken.get(&c).copied().unwrap_or(0);
            (c, got)
        })
        .filter(|&(_, got)| got < spec.target_per_combination)
        .collect();
    Ok(CropOutcome { manifest, shortfalls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    use crate::datasets::manifest::PlacedBox;

    /// Paint a synthetic source image: gray background with each box filled
    /// in a class-specific shade so crops are visually checkable.
    fn paint_source(dir: &Path, ann: &BoxAnnotation, width: usize, height: usize) {
        let mut img = Array3::from_elem((3, height, width), -0.2f32);
        for b in &ann.boxes {
            let shade = 0.3 + 0.5 * b.class as f32;
            for y in b.y0..b.y1 {
                for x in b.x0..b.x1 {
                    img[[0, y as usize, x as usize]] = shade - 1.0;
                    img[[1, y as usize, x as usize]] = 0.5;
                    img[[2, y as usize, x as usize]] = -0.5;
                }
            }
        }
        imageio::write_png(&dir.join(format!("{}.png", ann.image_id)), img.view()).unwrap();
    }

    fn synthetic_corpus(dir: &Path) -> Vec<BoxAnnotation> {
        let anns = vec![
            BoxAnnotation {
                image_id: "src_a".into(),
                boxes: vec![
                    PlacedBox { class: 0, x0: 4, y0: 4, x1: 12, y1: 12 },
                    PlacedBox { class: 0, x0: 30, y0: 6, x1: 38, y1: 14 },
                    PlacedBox { class: 1, x0: 8, y0: 28, x1: 18, y1: 40 },
                ],
            },
            BoxAnnotation {
                image_id: "src_b".into(),
                boxes: vec![PlacedBox { class: 1, x0: 20, y0: 20, x1: 27, y1: 26 }],
            },
        ];
        for ann in &anns {
            paint_source(dir, ann, 48, 48);
        }
        anns
    }

    fn spec() -> CropSpec {
        CropSpec {
            target_per_combination: 4,
            stride: 4,
            ..CropSpec::new(vec!["car".into(), "person".into()], 24, 2, 13)
        }
    }

    #[test]
    fn emitted_patches_match_window_recounts_and_skip_ambiguity() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let anns = synthetic_corpus(src.path());
        let outcome = crop_count_patches(&anns, src.path(), &spec(), out.path()).unwrap();
        assert!(!outcome.manifest.items.is_empty());

        for item in &outcome.manifest.items {
            let ItemSource::Cropped { image_id, x, y } = &item.source else {
                panic!("cropper must record windows");
            };
            let ann = anns.iter().find(|a| &a.image_id == image_id).unwrap();
            let window = Window::new(*x, *y, 24);
            assert_eq!(
                count_in_window(ann, &window, 0.5, 2),
                item.counts,
                "stored counts must equal a recount of the window"
            );
            assert!(
                !has_ambiguous_cut(ann, &window, 0.25, 0.5),
                "ambiguous window emitted at ({x}, {y}) of {image_id}"
            );
            // The pixels really came from that window.
            let patch_path = out.path().join(&item.file);
            let patch = imageio::read_png(&patch_path, 3).unwrap();
            let full = imageio::read_png(&src.path().join(format!("{image_id}.png")), 3).unwrap();
            let expect = full.slice(ndarray::s![
                ..,
                *y as usize..(*y + 24) as usize,
                *x as usize..(*x + 24) as usize
            ]);
            assert_eq!(patch, expect.to_owned());
        }
    }

    #[test]
    fn quotas_cap_every_combination_and_shortfalls_cover_the_rest() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let anns = synthetic_corpus(src.path());
        let outcome = crop_count_patches(&anns, src.path(), &spec(), out.path()).unwrap();

        let groups = outcome.manifest.group_by_counts();
        for (counts, indices) in &groups {
            assert!(indices.len() <= 4, "{counts} exceeded quota");
        }
        // Every admissible combination appears either at quota or in the
        // shortfall list.
        for combo in enumerate_combinations(2, 2, None) {
            let got = groups.get(&combo).map_or(0, |v| v.len());
            let reported = outcome
                .shortfalls
                .iter()
                .find(|(c, _)| *c == combo)
                .map(|&(_, n)| n);
            if got < 4 {
                assert_eq!(reported, Some(got), "missing shortfall for {combo}");
            } else {
                assert_eq!(reported, None);
            }
        }
        // This tiny corpus cannot contain e.g. [2, 2] windows.
        assert!(outcome.shortfalls.iter().any(|(c, n)| c.total() == 4 && *n == 0));
    }

    #[test]
    fn reruns_are_byte_identical_and_seeds_differ() {
        let src = tempfile::tempdir().unwrap();
        let anns = synthetic_corpus(src.path());
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let a = crop_count_patches(&anns, src.path(), &spec(), out_a.path()).unwrap();
        let b = crop_count_patches(&anns, src.path(), &spec(), out_b.path()).unwrap();
        assert_eq!(a.manifest.to_bytes(), b.manifest.to_bytes());
        for item in &a.manifest.items {
            assert_eq!(
                fsio::read_bytes(&out_a.path().join(&item.file)).unwrap(),
                fsio::read_bytes(&out_b.path().join(&item.file)).unwrap()
            );
        }

        let mut other = spec();
        other.seed = 14;
        let out_c = tempfile::tempdir().unwrap();
        let c = crop_count_patches(&anns, src.path(), &other, out_c.path()).unwrap();
        assert_ne!(
            a.manifest.to_bytes(),
            c.manifest.to_bytes(),
            "different seeds should select different windows"
        );
    }

    #[test]
    fn missing_images_and_bad_boxes_are_reported() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let anns = vec![BoxAnnotation {
            image_id: "ghost".into(),
            boxes: vec![],
        }];
        let err = crop_count_patches(&anns, src.path(), &spec(), out.path()).unwrap_err();
        assert!(err.to_string().contains("cannot open source image"), "got {err}");

        let anns = synthetic_corpus(src.path());
        let mut oversized = anns.clone();
        oversized[0].boxes[0].x1 = 500;
        let err = crop_count_patches(&oversized, src.path(), &spec(), out.path()).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "got {err}");

        let mut bad = spec();
        bad.tau_lo = 0.9;
        assert!(crop_count_patches(&anns, src.path(), &bad, out.path()).is_err());
    }
}
