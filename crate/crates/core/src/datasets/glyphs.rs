//! Digit glyph sources for the compositor.
//!
//! Glyphs come from one of two places: a standard IDX image/label archive
//! pair (the classic handwritten-digit distribution format), or the builtin
//! procedural font below, which needs no external data. Either way the
//! compositor sees a [`GlyphBank`]: per-class pools of tightly cropped
//! grayscale bitmaps with nonzero ink.
//!
//! The builtin font renders each digit from a seven-segment skeleton with
//! per-glyph jitter (stroke thickness, slant, corner displacement, ink
//! level), anti-aliased with a one-pixel ramp. The jitter gives the pools
//! enough variety that downstream models cannot memorize a single bitmap
//! per class.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fsio;
use crate::rng::{derive_rng, tags};

/// One grayscale glyph: `(height, width)` bitmap, 0 = background.
///
/// Bitmaps are tightly cropped — the first and last row and column each
/// contain at least one inked pixel — so a glyph's own bounds double as its
/// bounding box when placed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    pub class: u32,
    pub pixels: Array2<u8>,
}

impl Glyph {
    pub fn height(&self) -> u32 {
        self.pixels.dim().0 as u32
    }

    pub fn width(&self) -> u32 {
        self.pixels.dim().1 as u32
    }

    /// Total ink; always nonzero for glyphs stored in a bank.
    pub fn mass(&self) -> u64 {
        self.pixels.iter().map(|&v| v as u64).sum()
    }
}

/// Crop to the smallest rectangle containing every nonzero pixel.
///
/// Returns `None` for an all-background bitmap.
pub fn tight_crop(bitmap: &Array2<u8>) -> Option<Array2<u8>> {
    let (h, w) = bitmap.dim();
    let mut y0 = h;
    let mut y1 = 0;
    let mut x0 = w;
    let mut x1 = 0;
    for ((y, x), &v) in bitmap.indexed_iter() {
        if v > 0 {
            y0 = y0.min(y);
            y1 = y1.max(y + 1);
            x0 = x0.min(x);
            x1 = x1.max(x + 1);
        }
    }
    if y0 >= y1 {
        return None;
    }
    Some(bitmap.slice(ndarray::s![y0..y1, x0..x1]).to_owned())
}

/// Per-class pools of glyphs the compositor samples from uniformly.
#[derive(Debug, Clone)]
pub struct GlyphBank {
    class_names: Vec<String>,
    pools: Vec<Vec<Glyph>>,
}

impl GlyphBank {
    pub fn new(class_names: Vec<String>) -> Self {
        let pools = vec![Vec::new(); class_names.len()];
        GlyphBank { class_names, pools }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn pool(&self, class: usize) -> &[Glyph] {
        &self.pools[class]
    }

    /// Add a glyph to its class pool. Blank glyphs are silently dropped so
    /// every stored glyph keeps the nonzero-mass invariant.
    pub fn push(&mut self, glyph: Glyph) {
        assert!(
            (glyph.class as usize) < self.pools.len(),
            "glyph class {} out of range for {} classes",
            glyph.class,
            self.pools.len()
        );
        if glyph.mass() > 0 {
            self.pools[glyph.class as usize].push(glyph);
        }
    }

    /// Error if any of the requested classes has an empty pool.
    pub fn require_nonempty(&self, classes: &[usize]) -> Result<()> {
        for &class in classes {
            if class >= self.pools.len() || self.pools[class].is_empty() {
                return Err(Error::EmptyGlyphClass { class });
            }
        }
        Ok(())
    }

    /// Load a bank from an IDX image archive and its label archive.
    ///
    /// Every bitmap is tightly cropped; blank bitmaps are dropped. Class
    /// names are the digit labels rendered as strings, `0` through the
    /// largest label present.
    pub fn from_idx(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = read_idx_images(images_path)?;
        let labels = read_idx_labels(labels_path)?;
        if images.len() != labels.len() {
            return Err(Error::DataError {
                path: labels_path.to_path_buf(),
                reason: format!(
                    "label count {} does not match image count {}",
                    labels.len(),
                    images.len()
                ),
            });
        }
        let n_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
        let class_names = (0..n_classes).map(|c| c.to_string()).collect();
        let mut bank = GlyphBank::new(class_names);
        for (bitmap, &label) in images.iter().zip(&labels) {
            if let Some(pixels) = tight_crop(bitmap) {
                bank.push(Glyph {
                    class: label as u32,
                    pixels,
                });
            }
        }
        Ok(bank)
    }

    /// Builtin procedural digit font: classes `"0"`..`"9"`, `variants`
    /// jittered glyphs per digit, fully determined by `seed`.
    pub fn builtin(seed: u64, variants: usize) -> Self {
        let class_names = (0..10).map(|c| c.to_string()).collect();
        let mut bank = GlyphBank::new(class_names);
        for digit in 0..10u32 {
            for variant in 0..variants {
                let mut rng = derive_rng(seed, &[tags::FONT, digit as u64, variant as u64]);
                bank.push(render_digit(digit, &mut rng));
            }
        }
        bank
    }
}

// Seven-segment skeleton in design coordinates: the frame is W x H with the
// middle bar at H/2. Corner order: top-left, top-right, mid-left, mid-right,
// bottom-left, bottom-right.
const FRAME_W: f32 = 7.0;
const FRAME_H: f32 = 12.0;

/// Segment endpoints as corner indices: A top, B upper-right, C lower-right,
/// D bottom, E lower-left, F upper-left, G middle.
const SEGMENTS: [(usize, usize); 7] = [
    (0, 1), // A
    (1, 3), // B
    (3, 5), // C
    (4, 5), // D
    (2, 4), // E
    (0, 2), // F
    (2, 3), // G
];

/// Active segments per digit, bit i = segment i in `SEGMENTS` order.
const DIGIT_SEGMENTS: [u8; 10] = [
    0b0111111, // 0: ABCDEF
    0b0000110, // 1: BC
    0b1011011, // 2: ABDEG
    0b1001111, // 3: ABCDG
    0b1100110, // 4: BCFG
    0b1101101, // 5: ACDFG
    0b1111101, // 6: ACDEFG
    0b0000111, // 7: ABC
    0b1111111, // 8: all
    0b1101111, // 9: ABCDFG
];

/// Render one jittered instance of `digit`.
fn render_digit(digit: u32, rng: &mut ChaCha8Rng) -> Glyph {
    let thickness: f32 = rng.random_range(1.6..2.6);
    let slant: f32 = rng.random_range(-0.25..0.25);
    let ink: f32 = rng.random_range(210.0..255.0);

    // Jitter the six shared corner points, then shear about the vertical
    // midline. Segments share corners, so strokes stay connected.
    let base = [
        (0.0, 0.0),
        (FRAME_W, 0.0),
        (0.0, FRAME_H / 2.0),
        (FRAME_W, FRAME_H / 2.0),
        (0.0, FRAME_H),
        (FRAME_W, FRAME_H),
    ];
    let corners: Vec<(f32, f32)> = base
        .iter()
        .map(|&(x, y)| {
            let jx: f32 = rng.random_range(-0.5..0.5);
            let jy: f32 = rng.random_range(-0.5..0.5);
            let y = y + jy;
            (x + jx + slant * (FRAME_H / 2.0 - y), y)
        })
        .collect();

    let mask = DIGIT_SEGMENTS[digit as usize];
    let strokes: Vec<((f32, f32), (f32, f32))> = SEGMENTS
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, &(a, b))| (corners[a], corners[b]))
        .collect();

    // Canvas bounds: stroke extents plus half the thickness plus the
    // anti-alias ramp.
    let pad = thickness / 2.0 + 1.0;
    let min_x = strokes.iter().flat_map(|s| [s.0 .0, s.1 .0]).fold(f32::MAX, f32::min) - pad;
    let max_x = strokes.iter().flat_map(|s| [s.0 .0, s.1 .0]).fold(f32::MIN, f32::max) + pad;
    let min_y = strokes.iter().flat_map(|s| [s.0 .1, s.1 .1]).fold(f32::MAX, f32::min) - pad;
    let max_y = strokes.iter().flat_map(|s| [s.0 .1, s.1 .1]).fold(f32::MIN, f32::max) + pad;
    let w = (max_x - min_x).ceil() as usize;
    let h = (max_y - min_y).ceil() as usize;

    let mut canvas = Array2::zeros((h, w));
    for ((y, x), px) in canvas.indexed_iter_mut() {
        let p = (x as f32 + 0.5 + min_x, y as f32 + 0.5 + min_y);
        let d = strokes
            .iter()
            .map(|&(a, b)| segment_distance(p, a, b))
            .fold(f32::MAX, f32::min);
        // Full ink inside the stroke, one-pixel linear falloff at the edge.
        let coverage = (thickness / 2.0 + 0.5 - d).clamp(0.0, 1.0);
        *px = (coverage * ink).round() as u8;
    }

    let pixels = tight_crop(&canvas).expect("digit stroke set is never blank");
    Glyph {
        class: digit,
        pixels,
    }
}

/// Distance from point `p` to the segment `a`-`b` (round caps).
fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (px, py) = (p.0 - a.0, p.1 - a.1);
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((px * vx + py * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (px - t * vx, py - t * vy);
    (dx * dx + dy * dy).sqrt()
}

// --- IDX archive format -------------------------------------------------
//
// Layout: magic [0, 0, dtype, ndim], then `ndim` big-endian u32 dimensions,
// then row-major u8 data. Image archives are 3-D (count, rows, cols), label
// archives 1-D.

const IDX_U8: u8 = 0x08;

fn idx_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::DataError {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_idx_header(path: &Path, bytes: &[u8], want_ndim: u8) -> Result<Vec<usize>> {
    if bytes.len() < 4 {
        return Err(idx_error(path, "idx file shorter than its magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(idx_error(path, "bad idx magic"));
    }
    if bytes[2] != IDX_U8 {
        return Err(idx_error(
            path,
            format!("unsupported idx element type 0x{:02x} (only u8)", bytes[2]),
        ));
    }
    if bytes[3] != want_ndim {
        return Err(idx_error(
            path,
            format!("expected {want_ndim}-d idx archive, got {}-d", bytes[3]),
        ));
    }
    let ndim = want_ndim as usize;
    if bytes.len() < 4 + 4 * ndim {
        return Err(idx_error(path, "idx header truncated"));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let at = 4 + 4 * i;
        let dim = u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap());
        dims.push(dim as usize);
    }
    let expected: usize = dims.iter().product::<usize>() + 4 + 4 * ndim;
    if bytes.len() != expected {
        return Err(idx_error(
            path,
            format!("idx payload is {} bytes, dims require {expected}", bytes.len()),
        ));
    }
    Ok(dims)
}

/// Read a 3-D IDX u8 image archive.
pub fn read_idx_images(path: &Path) -> Result<Vec<Array2<u8>>> {
    let bytes = fsio::read_bytes(path)?;
    let dims = read_idx_header(path, &bytes, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let data = &bytes[4 + 12..];
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let start = i * h * w;
        let img = Array2::from_shape_vec((h, w), data[start..start + h * w].to_vec())
            .expect("length checked against dims");
        images.push(img);
    }
    Ok(images)
}

/// Read a 1-D IDX u8 label archive.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fsio::read_bytes(path)?;
    let dims = read_idx_header(path, &bytes, 1)?;
    Ok(bytes[4 + 4..4 + 4 + dims[0]].to_vec())
}

/// Write a 3-D IDX u8 image archive. All images must share one shape.
pub fn write_idx_images(path: &Path, images: &[Array2<u8>]) -> Result<()> {
    let (h, w) = images.first().map_or((0, 0), |i| i.dim());
    for img in images {
        if img.dim() != (h, w) {
            return Err(Error::InvalidConfig(format!(
                "idx archives need uniform image shapes: {:?} vs {:?}",
                img.dim(),
                (h, w)
            )));
        }
    }
    let mut bytes = vec![0, 0, IDX_U8, 3];
    for dim in [images.len(), h, w] {
        bytes.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    for img in images {
        bytes.extend(img.iter());
    }
    fsio::atomic_write(path, &bytes)
}

/// Write a 1-D IDX u8 label archive.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = vec![0, 0, IDX_U8, 1];
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fsio::atomic_write(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_font_is_deterministic_and_tight() {
        let a = GlyphBank::builtin(3, 4);
        let b = GlyphBank::builtin(3, 4);
        assert_eq!(a.n_classes(), 10);
        for class in 0..10 {
            assert_eq!(a.pool(class).len(), 4);
            for (ga, gb) in a.pool(class).iter().zip(b.pool(class)) {
                assert_eq!(ga, gb, "same seed must reproduce glyph bytes");
            }
            for g in a.pool(class) {
                assert!(g.mass() > 0);
                // Tight crop: ink touches every border of the bitmap.
                let (h, w) = g.pixels.dim();
                assert!((0..w).any(|x| g.pixels[[0, x]] > 0), "top row blank");
                assert!((0..w).any(|x| g.pixels[[h - 1, x]] > 0), "bottom row blank");
                assert!((0..h).any(|y| g.pixels[[y, 0]] > 0), "left col blank");
                assert!((0..h).any(|y| g.pixels[[y, w - 1]] > 0), "right col blank");
            }
        }
    }

    #[test]
    fn builtin_variants_differ_and_seeds_differ() {
        let bank = GlyphBank::builtin(3, 3);
        assert_ne!(
            bank.pool(8)[0].pixels,
            bank.pool(8)[1].pixels,
            "jitter must vary glyphs within a class"
        );
        let other = GlyphBank::builtin(4, 3);
        assert_ne!(bank.pool(8)[0].pixels, other.pool(8)[0].pixels);
    }

    #[test]
    fn tight_crop_finds_the_ink_box() {
        let mut bitmap = Array2::zeros((6, 7));
        bitmap[[2, 3]] = 10;
        bitmap[[4, 5]] = 20;
        let cropped = tight_crop(&bitmap).unwrap();
        assert_eq!(cropped.dim(), (3, 3));
        assert_eq!(cropped[[0, 0]], 10);
        assert_eq!(cropped[[2, 2]], 20);
        assert!(tight_crop(&Array2::zeros((4, 4))).is_none());
    }

    #[test]
    fn idx_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let images: Vec<Array2<u8>> = (0..3)
            .map(|i| Array2::from_shape_fn((5, 4), |(y, x)| (i * 40 + y * 4 + x) as u8))
            .collect();
        let labels = vec![1u8, 0, 7];
        let img_path = dir.path().join("imgs.idx");
        let lbl_path = dir.path().join("lbls.idx");
        write_idx_images(&img_path, &images).unwrap();
        write_idx_labels(&lbl_path, &labels).unwrap();
        assert_eq!(read_idx_images(&img_path).unwrap(), images);
        assert_eq!(read_idx_labels(&lbl_path).unwrap(), labels);
    }

    #[test]
    fn idx_rejects_malformed_archives() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx");

        fsio::atomic_write(&path, &[9, 9, 9]).unwrap();
        assert!(read_idx_labels(&path).is_err(), "short magic");

        fsio::atomic_write(&path, &[1, 0, IDX_U8, 1, 0, 0, 0, 0]).unwrap();
        assert!(read_idx_labels(&path).is_err(), "bad magic");

        fsio::atomic_write(&path, &[0, 0, IDX_U8, 1, 0, 0, 0, 5, 1, 2]).unwrap();
        assert!(read_idx_labels(&path).is_err(), "payload shorter than dims");

        fsio::atomic_write(&path, &[0, 0, IDX_U8, 3, 0, 0, 0, 1]).unwrap();
        assert!(read_idx_images(&path).is_err(), "missing dims");
    }

    #[test]
    fn from_idx_groups_crops_and_drops_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let mut inked = Array2::zeros((6, 6));
        inked[[2, 2]] = 200;
        inked[[3, 4]] = 100;
        let blank = Array2::zeros((6, 6));
        let img_path = dir.path().join("imgs.idx");
        let lbl_path = dir.path().join("lbls.idx");
        write_idx_images(&img_path, &[inked.clone(), blank, inked]).unwrap();
        write_idx_labels(&lbl_path, &[2, 0, 2]).unwrap();

        let bank = GlyphBank::from_idx(&img_path, &lbl_path).unwrap();
        assert_eq!(bank.n_classes(), 3);
        assert_eq!(bank.class_names(), ["0", "1", "2"]);
        assert_eq!(bank.pool(2).len(), 2);
        assert_eq!(bank.pool(2)[0].pixels.dim(), (2, 3), "tight crop applied");
        assert!(bank.pool(0).is_empty(), "blank bitmap dropped");
        assert!(matches!(
            bank.require_nonempty(&[0]),
            Err(Error::EmptyGlyphClass { class: 0 })
        ));
        assert!(bank.require_nonempty(&[2]).is_ok());

        write_idx_labels(&lbl_path, &[2, 0]).unwrap();
        assert!(GlyphBank::from_idx(&img_path, &lbl_path).is_err(), "count mismatch");
    }
}
