//! Line-delimited JSON dataset manifests.
//!
//! A manifest file has one JSON object per line: the first line is the
//! [`ManifestHeader`] (schema version, class names, count support, image
//! geometry, seed), every following line is a [`ManifestItem`] pointing at an
//! image file (relative to the manifest's directory) with its ground-truth
//! counts and provenance.
//!
//! Serialization is deterministic: identical inputs produce byte-identical
//! manifest files, which the reproducibility tests rely on.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{CountVector, Resolution};
use crate::error::{Error, Result};
use crate::fsio;

/// Bumped on any incompatible change to the line format.
pub const SCHEMA_VERSION: u32 = 1;

/// First line of a manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    /// Which generator produced this dataset (`multi_mnist`, `shapecount`,
    /// `cropped`, ...).
    pub kind: String,
    /// Display names, one per class; length defines the class count.
    pub class_names: Vec<String>,
    /// Largest admissible per-class count.
    pub max_count: u32,
    /// Optional cap on the total object count per image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_total: Option<u32>,
    pub resolution: Resolution,
    /// Seed the dataset was generated from.
    pub seed: u64,
    /// Generator-specific parameters, recorded for provenance.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
}

impl ManifestHeader {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Axis-aligned half-open pixel box `[x0, x1) x [y0, y1)` with a class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedBox {
    pub class: u32,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PlacedBox {
    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// Area of the intersection with another box.
    pub fn intersection_area(&self, other: &PlacedBox) -> u64 {
        let x0 = self.x0.max(other.x0);
        let x1 = self.x1.min(other.x1);
        let y0 = self.y0.max(other.y0);
        let y1 = self.y1.min(other.y1);
        if x1 > x0 && y1 > y0 {
            (x1 - x0) as u64 * (y1 - y0) as u64
        } else {
            0
        }
    }
}

/// Where an image came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ItemSource {
    /// Composited from scratch; `boxes` are the placed object boxes, from
    /// which the counts can be re-derived.
    Synthesized { boxes: Vec<PlacedBox> },
    /// Cut from a larger annotated image at window origin `(x, y)`.
    Cropped { image_id: String, x: u32, y: u32 },
}

/// One image entry in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    /// Image path relative to the manifest file's directory.
    pub file: String,
    pub counts: CountVector,
    pub source: ItemSource,
}

/// A parsed manifest: header plus all items, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    /// Serialize to the line-delimited format (header first, one item per
    /// line, trailing newline).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        // Struct serialization follows field declaration order, so the
        // output is deterministic for identical inputs.
        out.extend_from_slice(serde_json::to_string(&self.header).expect("header json").as_bytes());
        out.push(b'\n');
        for item in &self.items {
            out.extend_from_slice(serde_json::to_string(item).expect("item json").as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsio::atomic_write(path, &self.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::DataError {
            path: origin.to_path_buf(),
            reason: format!("manifest is not utf-8: {e}"),
        })?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header_line) = lines.next().ok_or_else(|| Error::DataError {
            path: origin.to_path_buf(),
            reason: "empty manifest".to_string(),
        })?;
        let header: ManifestHeader =
            serde_json::from_str(header_line).map_err(|e| Error::json(origin, e))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::DataError {
                path: origin.to_path_buf(),
                reason: format!(
                    "unsupported manifest schema {} (expected {SCHEMA_VERSION})",
                    header.schema_version
                ),
            });
        }
        let mut items = Vec::new();
        for (lineno, line) in lines {
            let item: ManifestItem =
                serde_json::from_str(line).map_err(|e| Error::DataError {
                    path: origin.to_path_buf(),
                    reason: format!("line {}: {e}", lineno + 1),
                })?;
            if item.counts.n_classes() != header.n_classes() {
                return Err(Error::DataError {
                    path: origin.to_path_buf(),
                    reason: format!(
                        "line {}: item has {} classes, header declares {}",
                        lineno + 1,
                        item.counts.n_classes(),
                        header.n_classes()
                    ),
                });
            }
            items.push(item);
        }
        Ok(DatasetManifest { header, items })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsio::read_bytes(path)?, path)
    }

    /// Absolute path of an item's image, given the manifest's path.
    pub fn image_path(manifest_path: &Path, item: &ManifestItem) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&item.file)
    }

    /// Item indices grouped by count vector, in sorted vector order.
    pub fn group_by_counts(&self) -> BTreeMap<CountVector, Vec<usize>> {
        let mut groups: BTreeMap<CountVector, Vec<usize>> = BTreeMap::new();
        for (i, item) in self.items.iter().enumerate() {
            groups.entry(item.counts.clone()).or_default().push(i);
        }
        groups
    }

    /// The distinct count vectors present, sorted.
    pub fn combinations_present(&self) -> Vec<CountVector> {
        self.group_by_counts().into_keys().collect()
    }
}
