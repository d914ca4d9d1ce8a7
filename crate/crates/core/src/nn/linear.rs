//! Fully connected layer.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};

use super::{ParamSet, Real};

/// `y = x . weight + bias`, with `x: (batch, in)`, `weight: (in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Linear<F> {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Array2::zeros((in_dim, out_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dim().0
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim().1
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        assert_eq!(x.dim().1, self.in_dim(), "input width mismatch");
        let mut y = super::matmul(x.view(), self.weight.view());
        y += &self.bias;
        y
    }

    /// Accumulate parameter gradients into `grads` (if given) and return the
    /// input gradient (if `need_dx`). `x` must be the forward input.
    pub fn backward(
        &self,
        x: &Array2<F>,
        dy: &Array2<F>,
        grads: Option<&mut Linear<F>>,
        need_dx: bool,
    ) -> Option<Array2<F>> {
        assert_eq!(dy.dim(), (x.dim().0, self.out_dim()), "dy shape mismatch");
        if let Some(g) = grads {
            g.weight += &x.t().dot(dy);
            g.bias += &dy.sum_axis(Axis(0));
        }
        need_dx.then(|| super::matmul(dy.view(), self.weight.t()))
    }
}

impl<F: Real> ParamSet<F> for Linear<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        out.push((format!("{prefix}weight"), self.weight.view().into_dyn()));
        out.push((format!("{prefix}bias"), self.bias.view().into_dyn()));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        out.push((format!("{prefix}weight"), self.weight.view_mut().into_dyn()));
        out.push((format!("{prefix}bias"), self.bias.view_mut().into_dyn()));
    }

    fn zeros_like(&self) -> Self {
        Linear {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.dim()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forward_and_backward_agree_with_hand_computation() {
        let mut layer = Linear::<f64>::new(2, 2);
        layer.weight = array![[1.0, 2.0], [3.0, 4.0]];
        layer.bias = array![0.5, -0.5];
        let x = array![[1.0, 1.0], [2.0, 0.0]];
        let y = layer.forward(&x);
        assert_eq!(y, array![[4.5, 5.5], [2.5, 3.5]]);

        let dy = array![[1.0, 0.0], [0.0, 1.0]];
        let mut grads = layer.zeros_like();
        let dx = layer.backward(&x, &dy, Some(&mut grads), true).unwrap();
        // dW = x^T . dy, db = column sums of dy, dx = dy . W^T.
        assert_eq!(grads.weight, array![[1.0, 2.0], [1.0, 0.0]]);
        assert_eq!(grads.bias, array![1.0, 1.0]);
        assert_eq!(dx, array![[1.0, 3.0], [2.0, 4.0]]);
    }
}
