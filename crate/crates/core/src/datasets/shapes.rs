//! Shape-scene generator: colored geometric primitives on black.
//!
//! Same contract as the digit compositor — exact counts by construction,
//! pairwise-disjoint tight boxes, per-item derived seeds — but the objects
//! are anti-aliased rasterized primitives (circle, square, triangle) in RGB.
//! Under [`ColorMode::FixedPerClass`] every instance of a shape kind gets
//! one fixed color across the whole dataset; under [`ColorMode::Random`]
//! each instance draws a fresh saturated hue.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::manifest::{
    DatasetManifest, ItemSource, ManifestHeader, ManifestItem, PlacedBox, SCHEMA_VERSION,
};
use crate::datasets::{enumerate_combinations, CountVector, Resolution};
use crate::error::{Error, Result};
use crate::fsio;
use crate::imageio;
use crate::rng::{derive_rng, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Circle,
    Square,
    Triangle,
}

impl ShapeClass {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeClass::Circle => "circle",
            ShapeClass::Square => "square",
            ShapeClass::Triangle => "triangle",
        }
    }

    /// Fixed display color under [`ColorMode::FixedPerClass`].
    fn fixed_color(&self) -> [u8; 3] {
        match self {
            ShapeClass::Circle => [230, 55, 45],
            ShapeClass::Square => [50, 200, 80],
            ShapeClass::Triangle => [60, 100, 235],
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(ShapeClass::Circle),
            "square" => Ok(ShapeClass::Square),
            "triangle" => Ok(ShapeClass::Triangle),
            other => Err(Error::InvalidConfig(format!(
                "unknown shape class `{other}` (expected circle, square, or triangle)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    FixedPerClass,
    Random,
}

impl FromStr for ColorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" | "fixed_per_class" => Ok(ColorMode::FixedPerClass),
            "random" => Ok(ColorMode::Random),
            other => Err(Error::InvalidConfig(format!(
                "unknown color mode `{other}` (expected fixed or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCountSpec {
    /// Shape kinds, in dataset class order; duplicates are rejected.
    pub shapes: Vec<ShapeClass>,
    pub max_count: u32,
    pub max_total: Option<u32>,
    pub images_per_combination: usize,
    /// Square RGB canvas side in pixels.
    pub side: u32,
    pub color_mode: ColorMode,
    /// Uniform radius range, pixels (half-extent for squares/triangles).
    pub radius_range: (f64, f64),
    pub seed: u64,
    pub retry_budget: usize,
}

impl ShapeCountSpec {
    pub fn new(shapes: Vec<ShapeClass>, max_count: u32, side: u32, seed: u64) -> Self {
        ShapeCountSpec {
            shapes,
            max_count,
            max_total: None,
            images_per_combination: 1,
            side,
            color_mode: ColorMode::FixedPerClass,
            radius_range: (3.0, 6.0),
            seed,
            retry_budget: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::InvalidConfig("shape list is empty".into()));
        }
        for (i, a) in self.shapes.iter().enumerate() {
            if self.shapes[..i].contains(a) {
                return Err(Error::InvalidConfig(format!("duplicate shape class `{a}`")));
            }
        }
        if self.images_per_combination == 0 {
            return Err(Error::InvalidConfig("images_per_combination must be >= 1".into()));
        }
        let (lo, hi) = self.radius_range;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad radius range [{lo}, {hi}]")));
        }
        // A shape tile is about 2r + 1 pixel of anti-aliasing on each side.
        if (hi * 2.0 + 2.0) > self.side as f64 {
            return Err(Error::InvalidConfig(format!(
                "radius {hi} cannot fit a {0}x{0} canvas",
                self.side
            )));
        }
        if self.retry_budget == 0 {
            return Err(Error::InvalidConfig("retry_budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// Generate the dataset under `out_dir` and return the manifest.
pub fn generate_shapecount(spec: &ShapeCountSpec, out_dir: &Path) -> Result<DatasetManifest> {
    generate_shapecount_with(spec, out_dir, 1)
}

/// [`generate_shapecount`] on up to `workers` threads; output bytes do not
/// depend on the worker count (per-item derived rng).
pub fn generate_shapecount_with(
    spec: &ShapeCountSpec,
    out_dir: &Path,
    workers: usize,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let combos = enumerate_combinations(spec.shapes.len(), spec.max_count, spec.max_total);
    fsio::ensure_dir(&out_dir.join("images"))?;

    let total = combos.len() * spec.images_per_combination;
    let items = crate::datasets::run_indexed(total, workers, |item_index| {
        let counts = &combos[item_index / spec.images_per_combination];
        let mut rng = derive_rng(spec.seed, &[tags::DATASET, item_index as u64]);
        let (canvas, boxes) = synthesize_scene(spec, counts, item_index, &mut rng)?;
        let file = format!("images/{item_index:06}.png");
        imageio::write_rgb_png(&out_dir.join(&file), canvas.view())?;
        Ok(ManifestItem {
            file,
            counts: counts.clone(),
            source: ItemSource::Synthesized { boxes },
        })
    })?;

    let header = ManifestHeader {
        schema_version: SCHEMA_VERSION,
        kind: "shapecount".to_string(),
        class_names: spec.shapes.iter().map(|s| s.name().to_string()).collect(),
        max_count: spec.max_count,
        max_total: spec.max_total,
        resolution: Resolution::rgb(spec.side),
        seed: spec.seed,
        params: serde_json::json!({
            "color_mode": spec.color_mode,
            "images_per_combination": spec.images_per_combination,
            "radius_range": [spec.radius_range.0, spec.radius_range.1],
            "retry_budget": spec.retry_budget,
        }),
    };
    let manifest = DatasetManifest { header, items };
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

fn synthesize_scene(
    spec: &ShapeCountSpec,
    counts: &CountVector,
    item_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Array3<u8>, Vec<PlacedBox>)> {
    let side = spec.side as usize;

    // Stamp = per-pixel coverage tile plus a color; drawn before placement
    // so retries never change the shapes themselves.
    let mut stamps: Vec<(u32, Array2<f32>, [u8; 3])> = Vec::new();
    for (class, &shape) in spec.shapes.iter().enumerate() {
        for _ in 0..counts.0[class] {
            let radius = rng.random_range(spec.radius_range.0..=spec.radius_range.1) as f32;
            let color = match spec.color_mode {
                ColorMode::FixedPerClass => shape.fixed_color(),
                ColorMode::Random => random_color(rng),
            };
            let tile = rasterize(shape, radius);
            stamps.push((class as u32, tile, color));
        }
    }

    let mut boxes: Vec<PlacedBox> = Vec::with_capacity(stamps.len());
    for attempt in 1..=spec.retry_budget {
        boxes.clear();
        let mut ok = true;
        for (class, tile, _) in &stamps {
            let (h, w) = tile.dim();
            if h > side || w > side {
                return Err(placement_infeasible(item_index, counts, 0));
            }
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
            let mut canvas = Array3::<u8>::zeros((3, side, side));
            for (placed, (_, tile, color)) in boxes.iter().zip(&stamps) {
                for ((y, x), &coverage) in tile.indexed_iter() {
                    if coverage <= 0.0 {
                        continue;
                    }
                    let (cy, cx) = (placed.y0 as usize + y, placed.x0 as usize + x);
                    for (ch, &level) in color.iter().enumerate() {
                        let v = (coverage * level as f32).round() as u8;
                        canvas[[ch, cy, cx]] = canvas[[ch, cy, cx]].max(v);
                    }
                }
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

/// Per-pixel coverage of one shape on a tight square tile, anti-aliased
/// with a one-pixel ramp.
fn rasterize(shape: ShapeClass, radius: f32) -> Array2<f32> {
    let tile = (radius.ceil() as usize) * 2 + 2;
    let center = tile as f32 / 2.0;
    Array2::from_shape_fn((tile, tile), |(y, x)| {
        let dx = x as f32 + 0.5 - center;
        let dy = y as f32 + 0.5 - center;
        let signed = match shape {
            ShapeClass::Circle => (dx * dx + dy * dy).sqrt() - radius,
            ShapeClass::Square => dx.abs().max(dy.abs()) - radius,
            ShapeClass::Triangle => triangle_sdf(dx, dy, radius),
        };
        (0.5 - signed).clamp(0.0, 1.0)
    })
}

/// Signed distance to an equilateral triangle pointing up, circumradius `r`,
/// centered at the origin. Positive outside.
fn triangle_sdf(x: f32, y: f32, r: f32) -> f32 {
    // Vertices at angles 90, 210, 330 degrees (y axis points down in image
    // space, so "up" is negative y).
    let verts = [
        (0.0, -r),
        (-r * 0.8660254, r * 0.5),
        (r * 0.8660254, r * 0.5),
    ];
    let mut sd = f32::MIN;
    for i in 0..3 {
        let (ax, ay) = verts[i];
        let (bx, by) = verts[(i + 1) % 3];
        // Outward normal of edge a->b for this vertex order in image space
        // (y grows downward).
        let (ex, ey) = (bx - ax, by - ay);
        let len = (ex * ex + ey * ey).sqrt();
        let (nx, ny) = (-ey / len, ex / len);
        sd = sd.max((x - ax) * nx + (y - ay) * ny);
    }
    sd
}

fn random_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    let hue: f32 = rng.random_range(0.0..360.0);
    hsv_to_rgb(hue, 0.85, 1.0)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}
