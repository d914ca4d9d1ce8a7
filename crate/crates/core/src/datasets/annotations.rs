//! Bounding-box annotations and window counting.
//!
//! Annotations arrive as line-delimited JSON, one source image per line:
//! `{"image_id": "frame_000", "boxes": [[class, x0, y0, x1, y1], ...]}` with
//! half-open pixel boxes. [`count_in_window`] turns a window of a source
//! image into a count vector: a box counts toward its class iff at least a
//! fraction `tau` of its area is inside the window. The companion
//! [`has_ambiguous_cut`] flags windows where some box is *partially*
//! visible — more than `tau_lo` but less than `tau` — which the patch
//! cropper rejects outright so no label is debatable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::manifest::PlacedBox;
use crate::datasets::CountVector;
use crate::error::{Error, Result};
use crate::fsio;

/// All boxes of one source image.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxAnnotation {
    pub image_id: String,
    pub boxes: Vec<PlacedBox>,
}

/// Axis-aligned half-open window `[x0, x1) x [y0, y1)` in source pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Window {
    pub fn new(x0: u32, y0: u32, size: u32) -> Self {
        Window {
            x0,
            y0,
            x1: x0 + size,
            y1: y0 + size,
        }
    }

    fn intersection_area(&self, b: &PlacedBox) -> u64 {
        let x0 = self.x0.max(b.x0);
        let x1 = self.x1.min(b.x1);
        let y0 = self.y0.max(b.y0);
        let y1 = self.y1.min(b.y1);
        if x1 > x0 && y1 > y0 {
            (x1 - x0) as u64 * (y1 - y0) as u64
        } else {
            0
        }
    }
}

/// Fraction of the box's area that lies inside the window, in `[0, 1]`.
pub fn visible_fraction(b: &PlacedBox, window: &Window) -> f64 {
    window.intersection_area(b) as f64 / b.area() as f64
}

/// Count, per class, the boxes with visible fraction `>= tau`.
///
/// Pure: no randomness, no I/O. Boxes with classes outside `0..n_classes`
/// must be rejected upstream (see [`read_annotations`]).
pub fn count_in_window(
    annotation: &BoxAnnotation,
    window: &Window,
    tau: f64,
    n_classes: usize,
) -> CountVector {
    let mut counts = CountVector::zeros(n_classes);
    for b in &annotation.boxes {
        debug_assert!((b.class as usize) < n_classes, "unvalidated box class");
        if visible_fraction(b, window) >= tau {
            counts.0[b.class as usize] += 1;
        }
    }
    counts
}

/// True when any box's visible fraction falls strictly inside
/// `(tau_lo, tau)` — the window cuts an object ambiguously.
pub fn has_ambiguous_cut(
    annotation: &BoxAnnotation,
    window: &Window,
    tau_lo: f64,
    tau: f64,
) -> bool {
    annotation.boxes.iter().any(|b| {
        let f = visible_fraction(b, window);
        f > tau_lo && f < tau
    })
}

/// On-disk form of one annotation line.
#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    image_id: String,
    boxes: Vec<(u32, u32, u32, u32, u32)>,
}

/// Read line-delimited annotations, validating every box: positive area and
/// class within `0..n_classes`.
pub fn read_annotations(path: &Path, n_classes: usize) -> Result<Vec<BoxAnnotation>> {
    let text = fsio::read_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAnnotation = serde_json::from_str(line).map_err(|e| Error::DataError {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        let mut boxes = Vec::with_capacity(raw.boxes.len());
        for &(class, x0, y0, x1, y1) in &raw.boxes {
            if x0 >= x1 || y0 >= y1 {
                return Err(Error::DataError {
                    path: path.to_path_buf(),
                    reason: format!(
                        "line {}: degenerate box [{x0}, {y0}, {x1}, {y1}] on `{}`",
                        lineno + 1,
                        raw.image_id
                    ),
                });
            }
            if class as usize >= n_classes {
                return Err(Error::DataError {
                    path: path.to_path_buf(),
                    reason: format!(
                        "line {}: box class {class} out of range (dataset has {n_classes})",
                        lineno + 1
                    ),
                });
            }
            boxes.push(PlacedBox { class, x0, y0, x1, y1 });
        }
        out.push(BoxAnnotation {
            image_id: raw.image_id,
            boxes,
        });
    }
    Ok(out)
}

/// Write annotations in the line-delimited format. Deterministic for
/// identical inputs.
pub fn write_annotations(path: &Path, annotations: &[BoxAnnotation]) -> Result<()> {
    let mut bytes = Vec::new();
    for ann in annotations {
        let raw = RawAnnotation {
            image_id: ann.image_id.clone(),
            boxes: ann
                .boxes
                .iter()
                .map(|b| (b.class, b.x0, b.y0, b.x1, b.y1))
                .collect(),
        };
        bytes.extend_from_slice(serde_json::to_string(&raw).expect("annotation json").as_bytes());
        bytes.push(b'\n');
    }
    fsio::atomic_write(path, &bytes)
}
