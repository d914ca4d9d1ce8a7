//! Minimal neural-network substrate with explicit gradients.
//!
//! The models in this crate are small enough that a general autodiff engine
//! would be more code than the math itself, so every layer implements an
//! explicit `forward` and `backward` pair. Backward passes *accumulate* into
//! a parameter-shaped gradient buffer (obtained via
//! [`ParamSet::zeros_like`]), which makes multi-branch architectures and
//! multiple loss terms compose by simple repeated calls.
//!
//! Everything is generic over [`Real`] so the exact same code runs in `f32`
//! for training and in `f64` for finite-difference gradient verification.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod ops;

pub use adam::{Adam, AdamConfig};
pub use conv::Conv2d;
pub use linear::Linear;

use ndarray::{Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

/// `a · b` into a freshly allocated row-major array.
///
/// `ndarray`'s `dot` picks the output layout from the operand layouts and can
/// return a column-major result (e.g. for transposed or single-column
/// operands). The reshape and scatter seams in this crate require row-major
/// buffers, so every hot-path GEMM goes through here.
pub(crate) fn matmul<F: Real>(a: ArrayView2<'_, F>, b: ArrayView2<'_, F>) -> Array2<F> {
    let mut c = Array2::zeros((a.dim().0, b.dim().1));
    ndarray::linalg::general_mat_mul(F::one(), &a, &b, F::zero(), &mut c);
    c
}

/// Scalar type the substrate is generic over (implemented for `f32`/`f64`).
pub trait Real: ndarray::NdFloat + std::iter::Sum + for<'a> std::iter::Sum<&'a Self> {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// One draw from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample::<f32, _>(rand_distr::StandardNormal)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    }
}

/// A collection of named parameter tensors.
///
/// The visit order is fixed by the implementation, which gives every tensor a
/// stable name and position; the optimizer, checkpoint format, and gradient
/// checker all rely on that ordering. Gradient buffers reuse the same struct
/// (via [`ParamSet::zeros_like`]), so a "parameter set" is sometimes actually
/// a set of accumulated gradients of that shape.
pub trait ParamSet<F: Real>: Sized {
    /// Push `(name, view)` pairs for every tensor, names prefixed by
    /// `prefix`.
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>);

    /// Mutable form of [`ParamSet::visit`]; must produce the same names in
    /// the same order.
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>);

    /// A zero-filled copy with identical shapes (and hyper-parameters).
    fn zeros_like(&self) -> Self;

    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        out
    }

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Set every tensor to zero (reuse a gradient buffer between steps).
    fn zero_fill(&mut self) {
        for (_, mut t) in self.tensors_mut() {
            t.fill(F::zero());
        }
    }

    /// `self += other`, tensor by tensor.
    fn add_assign(&mut self, other: &Self) {
        let theirs = other.tensors();
        for ((_, mut mine), (_, t)) in self.tensors_mut().into_iter().zip(theirs) {
            mine.zip_mut_with(&t, |a, &b| *a = *a + b);
        }
    }

    /// Largest absolute entry across all tensors (diagnostics).
    fn max_abs(&self) -> F {
        let mut worst = F::zero();
        for (_, t) in self.tensors() {
            for &v in t.iter() {
                if v.abs() > worst {
                    worst = v.abs();
                }
            }
        }
        worst
    }
}
