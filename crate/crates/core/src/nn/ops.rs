//! Elementwise and structural ops with explicit backward passes.
//!
//! Backward functions take whatever the matching forward needed to cache
//! (the input for ReLU-family ops, the output for tanh, the mask for
//! dropout) and the upstream gradient, returning the downstream gradient.

use ndarray::{Array, Array2, Array4, ArrayView4, Axis, Dimension, Zip};
use rand::Rng;

use super::Real;

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

pub fn relu<F: Real, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu_backward<F: Real, D: Dimension>(x: &Array<F, D>, dy: &Array<F, D>) -> Array<F, D> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

pub fn leaky_relu<F: Real, D: Dimension>(x: &Array<F, D>, slope: F) -> Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<F: Real, D: Dimension>(
    x: &Array<F, D>,
    dy: &Array<F, D>,
    slope: F,
) -> Array<F, D> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= F::zero() {
            *d = *d * slope;
        }
    });
    dx
}

pub fn tanh<F: Real, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| v.tanh())
}

/// Backward for tanh given the *output* `y = tanh(x)`.
pub fn tanh_backward<F: Real, D: Dimension>(y: &Array<F, D>, dy: &Array<F, D>) -> Array<F, D> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(y).for_each(|d, &t| {
        *d = *d * (F::one() - t * t);
    });
    dx
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

// ---------------------------------------------------------------------------
// Spatial ops
// ---------------------------------------------------------------------------

/// Nearest-neighbor 2x upsampling.
pub fn upsample2x<F: Real>(x: &Array4<F>) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let mut y = Array4::zeros((n, c, 2 * h, 2 * w));
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice_mut().unwrap();
    for plane in 0..n * c {
        let src = &xs[plane * h * w..][..h * w];
        let dst = &mut ys[plane * 4 * h * w..][..4 * h * w];
        for p in 0..h {
            for q in 0..w {
                let v = src[p * w + q];
                let base = 2 * p * 2 * w + 2 * q;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + 2 * w] = v;
                dst[base + 2 * w + 1] = v;
            }
        }
    }
    y
}

/// Backward of [`upsample2x`]: each input cell collects its 2x2 output block.
pub fn upsample2x_backward<F: Real>(dy: &Array4<F>) -> Array4<F> {
    let (n, c, h2, w2) = dy.dim();
    assert!(h2 % 2 == 0 && w2 % 2 == 0, "output dims must be even");
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array4::zeros((n, c, h, w));
    let dys = dy.as_standard_layout();
    let dys = dys.as_slice().unwrap();
    let dxs = dx.as_slice_mut().unwrap();
    for plane in 0..n * c {
        let src = &dys[plane * h2 * w2..][..h2 * w2];
        let dst = &mut dxs[plane * h * w..][..h * w];
        for p in 0..h {
            for q in 0..w {
                let base = 2 * p * w2 + 2 * q;
                dst[p * w + q] = src[base] + src[base + 1] + src[base + w2] + src[base + w2 + 1];
            }
        }
    }
    dx
}

/// Concatenate along the channel axis. Built by explicit assignment so the
/// result is standard layout (which the conv lowering requires);
/// `ndarray::concatenate` along an inner axis does not guarantee that.
pub fn concat_channels<F: Real>(parts: &[ArrayView4<'_, F>]) -> Array4<F> {
    let (n, _, h, w) = parts[0].dim();
    let total: usize = parts.iter().map(|p| p.dim().1).sum();
    let mut y = Array4::zeros((n, total, h, w));
    let mut start = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dim();
        assert_eq!((pn, ph, pw), (n, h, w), "channel concat: shape mismatch");
        y.slice_mut(ndarray::s![.., start..start + pc, .., ..])
            .assign(p);
        start += pc;
    }
    y
}

/// Split a channel-concatenated gradient back into per-part gradients.
pub fn split_channels<F: Real>(dy: &Array4<F>, widths: &[usize]) -> Vec<Array4<F>> {
    let total: usize = widths.iter().sum();
    assert_eq!(dy.dim().1, total, "channel split widths must cover dy");
    let mut out = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &wd in widths {
        out.push(
            dy.slice_axis(Axis(1), ndarray::Slice::from(start..start + wd))
                .to_owned(),
        );
        start += wd;
    }
    out
}

/// Broadcast per-sample vectors `(batch, k)` to constant feature maps
/// `(batch, k, h, w)`.
pub fn tile_as_channels<F: Real>(v: &Array2<F>, h: usize, w: usize) -> Array4<F> {
    let (n, k) = v.dim();
    let mut y = Array4::zeros((n, k, h, w));
    for i in 0..n {
        for c in 0..k {
            y.slice_mut(ndarray::s![i, c, .., ..]).fill(v[[i, c]]);
        }
    }
    y
}

/// Backward of [`tile_as_channels`]: sum each constant map.
pub fn tile_as_channels_backward<F: Real>(dy: &Array4<F>) -> Array2<F> {
    let (n, k, _, _) = dy.dim();
    let mut dv = Array2::zeros((n, k));
    for i in 0..n {
        for c in 0..k {
            dv[[i, c]] = dy.slice(ndarray::s![i, c, .., ..]).sum();
        }
    }
    dv
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` so the
/// expected activation is unchanged; evaluation then simply skips the op.
/// Returns `(output, mask)`; the mask holds the applied scale factors and is
/// what the backward pass needs.
pub fn dropout<F: Real, D: Dimension, R: Rng + ?Sized>(
    x: &Array<F, D>,
    rate: f64,
    rng: &mut R,
) -> (Array<F, D>, Array<F, D>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    let keep_scale = F::from_f64(1.0 / (1.0 - rate));
    let mut mask = Array::zeros(x.raw_dim());
    for m in mask.iter_mut() {
        // One draw per unit in iteration order keeps this deterministic for
        // a given generator state.
        if rng.random::<f64>() >= rate {
            *m = keep_scale;
        }
    }
    (x * &mask, mask)
}

pub fn dropout_backward<F: Real, D: Dimension>(
    mask: &Array<F, D>,
    dy: &Array<F, D>,
) -> Array<F, D> {
    dy * mask
}
