//! In-memory dataset as consumed by training and evaluation.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array4, Axis};

use crate::error::{Error, Result};
use crate::imageio;

use super::manifest::DatasetManifest;
use super::CountVector;

/// A fully materialized dataset: images in `[-1, 1]` plus their counts.
///
/// All datasets in this crate are small enough to hold in memory (a desk-
/// scale 32x32 grayscale set of 10k images is ~40 MB as f32), which keeps
/// the training loop free of I/O-ordering effects.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    /// `(n, channels, resolution, resolution)`, scaled to `[-1, 1]`.
    pub images: Array4<f32>,
    /// Raw per-class counts, one per image.
    pub counts: Vec<CountVector>,
    pub class_names: Vec<String>,
    pub max_count: u32,
}

impl LoadedDataset {
    /// Read every item of a manifest into memory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(manifest_path)?;
        let header = &manifest.header;
        let (h, w) = (
            header.resolution.height as usize,
            header.resolution.width as usize,
        );
        let channels = header.resolution.channels as usize;
        let n = manifest.items.len();

        let mut images = Array4::zeros((n, channels, h, w));
        let mut counts = Vec::with_capacity(n);
        for (i, item) in manifest.items.iter().enumerate() {
            let path = DatasetManifest::image_path(manifest_path, item);
            let img = imageio::read_png(&path, channels)?;
            if img.dim() != (channels, h, w) {
                return Err(Error::DataError {
                    path,
                    reason: format!(
                        "image is {:?}, manifest declares ({channels}, {h}, {w})",
                        img.dim()
                    ),
                });
            }
            images.index_axis_mut(Axis(0), i).assign(&img);
            counts.push(item.counts.clone());
        }
        Ok(LoadedDataset {
            images,
            counts,
            class_names: header.class_names.clone(),
            max_count: header.max_count,
        })
    }

    /// Assemble from already-materialized parts (tests, synthetic data).
    pub fn from_parts(
        images: Array4<f32>,
        counts: Vec<CountVector>,
        class_names: Vec<String>,
        max_count: u32,
    ) -> Self {
        assert_eq!(images.dim().0, counts.len(), "one count vector per image");
        LoadedDataset {
            images,
            counts,
            class_names,
            max_count,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Distinct count combinations present, in sorted order. This is the
    /// empirical support that conditioning draws from during training.
    pub fn combinations(&self) -> Vec<CountVector> {
        let set: BTreeSet<&CountVector> = self.counts.iter().collect();
        set.into_iter().cloned().collect()
    }

    /// A new dataset holding the given rows (in the given order).
    pub fn select(&self, indices: &[usize]) -> LoadedDataset {
        let (images, counts) = self.batch(indices);
        LoadedDataset {
            images,
            counts,
            class_names: self.class_names.clone(),
            max_count: self.max_count,
        }
    }

    /// Gather a batch by index.
    pub fn batch(&self, indices: &[usize]) -> (Array4<f32>, Vec<CountVector>) {
        let (_, c, h, w) = self.images.dim();
        let mut images = Array4::zeros((indices.len(), c, h, w));
        let mut counts = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            images
                .index_axis_mut(Axis(0), row)
                .assign(&self.images.index_axis(Axis(0), i));
            counts.push(self.counts[i].clone());
        }
        (images, counts)
    }
}
