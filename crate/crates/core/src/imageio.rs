//! PNG encode/decode for `[-1, 1]`-scaled image tensors.
//!
//! Images live in memory as `(channels, height, width)` f32 arrays in
//! `[-1, 1]` (the generator's output range). On disk they are ordinary 8-bit
//! grayscale or RGB PNGs. Files are written atomically (encode to memory,
//! then write-and-rename) so interrupted runs never leave half-written
//! images behind.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, ImageReader, RgbImage};
use ndarray::{Array3, Array4, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::fsio;

/// Map one `[-1, 1]` sample to an 8-bit level.
fn to_u8(v: f32) -> u8 {
    (((v + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Map an 8-bit level back to `[-1, 1]`.
fn to_f32(v: u8) -> f32 {
    (v as f32 / 255.0) * 2.0 - 1.0
}

/// Convert a `(channels, h, w)` tensor to an 8-bit image. One channel maps
/// to grayscale, three to RGB.
pub fn array_to_image(x: ArrayView3<'_, f32>) -> DynamicImage {
    let (c, h, w) = x.dim();
    match c {
        1 => {
            let mut img = GrayImage::new(w as u32, h as u32);
            for (p, px) in img.pixels_mut().enumerate() {
                px.0 = [to_u8(x[[0, p / w, p % w]])];
            }
            DynamicImage::ImageLuma8(img)
        }
        3 => {
            let mut img = RgbImage::new(w as u32, h as u32);
            for (p, px) in img.pixels_mut().enumerate() {
                let (i, j) = (p / w, p % w);
                px.0 = [
                    to_u8(x[[0, i, j]]),
                    to_u8(x[[1, i, j]]),
                    to_u8(x[[2, i, j]]),
                ];
            }
            DynamicImage::ImageRgb8(img)
        }
        other => panic!("unsupported channel count {other} (must be 1 or 3)"),
    }
}

/// Convert a decoded image to a `(channels, h, w)` tensor in `[-1, 1]`.
/// `channels` selects the in-memory representation (1 or 3) regardless of
/// how the file was stored.
pub fn image_to_array(img: &DynamicImage, channels: usize) -> Array3<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let gray = img.to_luma8();
            let mut x = Array3::zeros((1, h, w));
            for (p, px) in gray.pixels().enumerate() {
                x[[0, p / w, p % w]] = to_f32(px.0[0]);
            }
            x
        }
        3 => {
            let rgb = img.to_rgb8();
            let mut x = Array3::zeros((3, h, w));
            for (p, px) in rgb.pixels().enumerate() {
                let (i, j) = (p / w, p % w);
                for c in 0..3 {
                    x[[c, i, j]] = to_f32(px.0[c]);
                }
            }
            x
        }
        other => panic!("unsupported channel count {other} (must be 1 or 3)"),
    }
}

/// Encode to PNG and write atomically.
pub fn write_png(path: &Path, x: ArrayView3<'_, f32>) -> Result<()> {
    let img = array_to_image(x);
    write_image_png(path, &img)
}

/// Write an already 8-bit grayscale `(h, w)` bitmap as PNG, bypassing the
/// float scaling so generator outputs and composited canvases stay
/// byte-exact.
pub fn write_gray_png(path: &Path, pixels: ArrayView2<'_, u8>) -> Result<()> {
    let (h, w) = pixels.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for ((y, x), &v) in pixels.indexed_iter() {
        img.put_pixel(x as u32, y as u32, image::Luma([v]));
    }
    write_image_png(path, &DynamicImage::ImageLuma8(img))
}

/// Write an 8-bit `(3, h, w)` tensor as an RGB PNG.
pub fn write_rgb_png(path: &Path, pixels: ArrayView3<'_, u8>) -> Result<()> {
    let (c, h, w) = pixels.dim();
    assert_eq!(c, 3, "rgb png needs exactly 3 channels");
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = image::Rgb([pixels[[0, y, x]], pixels[[1, y, x]], pixels[[2, y, x]]]);
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    write_image_png(path, &DynamicImage::ImageRgb8(img))
}

fn write_image_png(path: &Path, img: &DynamicImage) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    fsio::atomic_write(path, buf.get_ref())
}

/// Read a PNG into a `(channels, h, w)` tensor in `[-1, 1]`.
pub fn read_png(path: &Path, channels: usize) -> Result<Array3<f32>> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok(image_to_array(&img, channels))
}

/// Tile a batch `(n, c, h, w)` into one `(c, H, W)` montage, row-major with
/// `cols` images per row and a 2-pixel separator at the background level.
pub fn contact_sheet(images: &Array4<f32>, cols: usize) -> Array3<f32> {
    let (n, c, h, w) = images.dim();
    assert!(n > 0 && cols > 0, "empty contact sheet");
    let cols = cols.min(n);
    let rows = n.div_ceil(cols);
    const PAD: usize = 2;
    let height = rows * h + (rows + 1) * PAD;
    let width = cols * w + (cols + 1) * PAD;
    let mut sheet = Array3::from_elem((c, height, width), -1.0f32);
    for i in 0..n {
        let (r, q) = (i / cols, i % cols);
        let y0 = PAD + r * (h + PAD);
        let x0 = PAD + q * (w + PAD);
        sheet
            .slice_mut(ndarray::s![.., y0..y0 + h, x0..x0 + w])
            .assign(&images.index_axis(Axis(0), i));
    }
    sheet
}
