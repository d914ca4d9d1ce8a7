//! 2-D convolution via im2col + GEMM.
//!
//! Activations are `(batch, channels, height, width)` in standard layout.
//! The forward pass lowers each batch chunk to a `(K, M)` patch matrix
//! (`K = in_c * kh * kw`, `M = chunk * out_h * out_w`) and multiplies by the
//! `(out_c, K)` weight matrix, which routes the heavy lifting through the
//! BLAS-style matmul underneath `ndarray`. The backward pass rebuilds the
//! same patch matrix instead of caching it; the rebuild is cheap next to the
//! two GEMMs it feeds.

use ndarray::{s, Array1, Array2, Array4, ArrayViewD, ArrayViewMutD, Axis};

use super::{ParamSet, Real};

/// Cap on floats per patch matrix (~16 MiB in f32) to bound peak memory.
const CHUNK_FLOAT_BUDGET: usize = 1 << 22;

/// A convolution layer: weights `(out_c, in_c, kh, kw)`, one bias per output
/// channel, symmetric zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Real> Conv2d<F> {
    pub fn new(in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        assert!(kernel > 0 && stride > 0, "kernel and stride must be positive");
        Conv2d {
            weight: Array4::zeros((out_c, in_c, kernel, kernel)),
            bias: Array1::zeros(out_c),
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    /// Output spatial size for an input of `(h, w)`.
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        assert!(
            h + 2 * self.pad >= k && w + 2 * self.pad >= k,
            "input {h}x{w} too small for kernel {k} with pad {}",
            self.pad
        );
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (n, ic, h, w) = x.dim();
        assert_eq!(ic, self.in_channels(), "input channel mismatch");
        let oc = self.out_channels();
        let (oh, ow) = self.out_hw(h, w);
        let k_len = ic * self.kernel() * self.kernel();
        let m_img = oh * ow;

        let w2 = self
            .weight
            .view()
            .into_shape_with_order((oc, k_len))
            .expect("weight is standard layout");
        let mut y = Array4::zeros((n, oc, oh, ow));
        let y_slice = y.as_slice_mut().expect("freshly allocated");
        let bias = self.bias.as_slice().expect("contiguous bias");

        for (i0, i1) in chunks(n, k_len, m_img) {
            let cn = i1 - i0;
            let m = cn * m_img;
            let mut cols_t = Array2::zeros((k_len, m));
            self.im2col_t(x, i0, i1, oh, ow, cols_t.as_slice_mut().unwrap());
            let yt = super::matmul(w2, cols_t.view()); // (oc, M)
            let yt_slice = yt.as_slice().unwrap();
            for o in 0..oc {
                let b = bias[o];
                for i in 0..cn {
                    let src = &yt_slice[o * m + i * m_img..][..m_img];
                    let dst = &mut y_slice[((i0 + i) * oc + o) * m_img..][..m_img];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = s + b;
                    }
                }
            }
        }
        y
    }

    /// Accumulate parameter gradients into `grads` (if given) and return the
    /// input gradient (if `need_dx`).
    ///
    /// `x` must be the same input that produced `dy` via [`Conv2d::forward`].
    pub fn backward(
        &self,
        x: &Array4<F>,
        dy: &Array4<F>,
        mut grads: Option<&mut Conv2d<F>>,
        need_dx: bool,
    ) -> Option<Array4<F>> {
        let (n, ic, h, w) = x.dim();
        let oc = self.out_channels();
        let (oh, ow) = self.out_hw(h, w);
        assert_eq!(dy.dim(), (n, oc, oh, ow), "dy shape mismatch");
        let k_len = ic * self.kernel() * self.kernel();
        let m_img = oh * ow;

        let dy = dy.as_standard_layout();
        let dy_slice = dy.as_slice().unwrap();
        let w2 = self
            .weight
            .view()
            .into_shape_with_order((oc, k_len))
            .expect("weight is standard layout");

        let mut dx = need_dx.then(|| Array4::zeros((n, ic, h, w)));

        for (i0, i1) in chunks(n, k_len, m_img) {
            let cn = i1 - i0;
            let m = cn * m_img;

            // Gather dy for this chunk as (oc, M).
            let mut dyt = Array2::zeros((oc, m));
            {
                let dyt_slice = dyt.as_slice_mut().unwrap();
                for o in 0..oc {
                    for i in 0..cn {
                        let src = &dy_slice[((i0 + i) * oc + o) * m_img..][..m_img];
                        dyt_slice[o * m + i * m_img..][..m_img].copy_from_slice(src);
                    }
                }
            }

            if let Some(g) = grads.as_deref_mut() {
                let mut cols_t = Array2::zeros((k_len, m));
                self.im2col_t(x, i0, i1, oh, ow, cols_t.as_slice_mut().unwrap());
                let dw2 = dyt.dot(&cols_t.t()); // (oc, K)
                let mut gw2 = g
                    .weight
                    .view_mut()
                    .into_shape_with_order((oc, k_len))
                    .expect("grad weight is standard layout");
                gw2 += &dw2;
                g.bias += &dyt.sum_axis(Axis(1));
            }

            if let Some(dx) = dx.as_mut() {
                let dcols_t = super::matmul(w2.t(), dyt.view()); // (K, M)
                self.col2im_add(dx, i0, i1, oh, ow, dcols_t.as_slice().unwrap());
            }
        }
        dx
    }

    /// Lower images `[i0, i1)` of `x` into a `(K, M)` patch matrix stored in
    /// `cols_t` (row-major slice of length `K * M`), zero-padding outside the
    /// input. Row `r = (c * kh + u) * kw + v`, column `m = i * oh * ow + p *
    /// ow + q` holds input pixel `(i0 + i, c, p * stride + u - pad, q *
    /// stride + v - pad)`.
    fn im2col_t(
        &self,
        x: &Array4<F>,
        i0: usize,
        i1: usize,
        oh: usize,
        ow: usize,
        cols_t: &mut [F],
    ) {
        let (_, ic, h, w) = x.dim();
        let k = self.kernel();
        let pad = self.pad as isize;
        let stride = self.stride;
        let cn = i1 - i0;
        let m = cn * oh * ow;
        let m_img = oh * ow;
        let x_view = x.slice(s![i0..i1, .., .., ..]);
        let xs = x_view.as_slice().expect("x is standard layout");

        for c in 0..ic {
            for u in 0..k {
                for v in 0..k {
                    let r = (c * k + u) * k + v;
                    let row = &mut cols_t[r * m..][..m];
                    for i in 0..cn {
                        let x_img = &xs[(i * ic + c) * h * w..][..h * w];
                        let dst_img = &mut row[i * m_img..][..m_img];
                        if stride == 1 {
                            // Contiguous q-runs: sx = q + v - pad walks with q.
                            let q_lo = (pad - v as isize).max(0) as usize;
                            let q_hi = (w as isize + pad - v as isize).clamp(0, ow as isize) as usize;
                            for p in 0..oh {
                                let sy = p as isize + u as isize - pad;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let sx0 = (q_lo as isize + v as isize - pad) as usize;
                                let src = &x_img[sy as usize * w + sx0..][..q_hi - q_lo];
                                dst_img[p * ow + q_lo..][..q_hi - q_lo].copy_from_slice(src);
                            }
                        } else {
                            for p in 0..oh {
                                let sy = (p * stride) as isize + u as isize - pad;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let x_row = &x_img[sy as usize * w..][..w];
                                let dst_row = &mut dst_img[p * ow..][..ow];
                                for (q, d) in dst_row.iter_mut().enumerate() {
                                    let sx = (q * stride) as isize + v as isize - pad;
                                    if sx >= 0 && sx < w as isize {
                                        *d = x_row[sx as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Conv2d::im2col_t`]: scatter-add patch-matrix gradients
    /// back onto the input gradient. Overlapping patches accumulate.
    fn col2im_add(
        &self,
        dx: &mut Array4<F>,
        i0: usize,
        i1: usize,
        oh: usize,
        ow: usize,
        dcols_t: &[F],
    ) {
        let (_, ic, h, w) = dx.dim();
        let k = self.kernel();
        let pad = self.pad as isize;
        let stride = self.stride;
        let cn = i1 - i0;
        let m = cn * oh * ow;
        let m_img = oh * ow;
        let mut dx_view = dx.slice_mut(s![i0..i1, .., .., ..]);
        let dxs = dx_view.as_slice_mut().expect("dx is standard layout");

        for c in 0..ic {
            for u in 0..k {
                for v in 0..k {
                    let r = (c * k + u) * k + v;
                    let row = &dcols_t[r * m..][..m];
                    for i in 0..cn {
                        let dx_img = &mut dxs[(i * ic + c) * h * w..][..h * w];
                        let src_img = &row[i * m_img..][..m_img];
                        for p in 0..oh {
                            let sy = (p * stride) as isize + u as isize - pad;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let src_row = &src_img[p * ow..][..ow];
                            let dx_row = &mut dx_img[sy as usize * w..][..w];
                            for (q, &g) in src_row.iter().enumerate() {
                                let sx = (q * stride) as isize + v as isize - pad;
                                if sx >= 0 && sx < w as isize {
                                    dx_row[sx as usize] = dx_row[sx as usize] + g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<F: Real> ParamSet<F> for Conv2d<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        out.push((format!("{prefix}weight"), self.weight.view().into_dyn()));
        out.push((format!("{prefix}bias"), self.bias.view().into_dyn()));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        out.push((format!("{prefix}weight"), self.weight.view_mut().into_dyn()));
        out.push((format!("{prefix}bias"), self.bias.view_mut().into_dyn()));
    }

    fn zeros_like(&self) -> Self {
        Conv2d {
            weight: Array4::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.dim()),
            stride: self.stride,
            pad: self.pad,
        }
    }
}

/// Split `n` images into chunks whose patch matrices stay under the float
/// budget.
fn chunks(n: usize, k_len: usize, m_img: usize) -> Vec<(usize, usize)> {
    let per_image = k_len * m_img;
    let chunk = (CHUNK_FLOAT_BUDGET / per_image.max(1)).clamp(1, n.max(1));
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        out.push((start, end));
        start = end;
    }
    out
}
