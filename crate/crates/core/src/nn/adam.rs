//! Adam optimizer over a [`ParamSet`].

use ndarray::Zip;

use super::{ParamSet, Real};

/// Adam hyper-parameters. The defaults (`lr = 1e-4`, `beta1 = 0.5`) are the
/// usual GAN settings; `beta1 = 0.5` damps the momentum oscillations the
/// adversarial game otherwise excites.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: first/second moment estimates shaped like the parameters
/// plus the step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F: Real, P: ParamSet<F>> {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: P,
    pub v: P,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Real, P: ParamSet<F>> Adam<F, P> {
    pub fn new(params: &P, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            _marker: std::marker::PhantomData,
        }
    }

    /// Rebuild optimizer state from checkpointed moments.
    pub fn from_state(cfg: AdamConfig, t: u64, m: P, v: P) -> Self {
        Adam {
            cfg,
            t,
            m,
            v,
            _marker: std::marker::PhantomData,
        }
    }

    /// One update step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let one = F::one();
        let lr = F::from_f64(self.cfg.lr);
        let eps = F::from_f64(self.cfg.eps);
        // Bias corrections computed in f64: beta^t underflows f32 late in
        // long runs.
        let bc1 = F::from_f64(1.0 - self.cfg.beta1.powi(self.t as i32));
        let bc2 = F::from_f64(1.0 - self.cfg.beta2.powi(self.t as i32));

        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        let ps = params.tensors_mut();
        assert_eq!(gs.len(), ps.len(), "grads must mirror params");
        for ((((pn, mut p), (gn, g)), (_, mut m)), (_, mut v)) in
            ps.into_iter().zip(gs).zip(ms).zip(vs)
        {
            debug_assert_eq!(pn, gn, "param/grad visit order must agree");
            Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(
                |p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                },
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    /// First Adam step: m_hat = g, v_hat = g^2, so each parameter moves by
    /// exactly -lr * g / (|g| + eps) ~= -lr * sign(g).
    #[test]
    fn first_step_moves_by_signed_learning_rate() {
        let mut p = Linear::<f64>::new(1, 2);
        p.weight = array![[1.0, -1.0]];
        let mut g = p.zeros_like();
        g.weight = array![[0.3, -0.7]];
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(&p, cfg);
        adam.step(&mut p, &g);
        assert!((p.weight[[0, 0]] - (1.0 - 0.01 * 0.3 / (0.3 + 1e-8))).abs() < 1e-12);
        assert!((p.weight[[0, 1]] - (-1.0 + 0.01 * 0.7 / (0.7 + 1e-8))).abs() < 1e-12);
        // Zero-gradient parameters stay put.
        assert_eq!(p.bias, array![0.0, 0.0]);
        assert_eq!(adam.t, 1);
    }

    /// Adam on a convex quadratic must drive the parameter to the minimum.
    #[test]
    fn converges_on_quadratic() {
        let mut p = Linear::<f64>::new(1, 1);
        p.weight = array![[5.0]];
        let mut adam = Adam::new(
            &p,
            AdamConfig {
                lr: 0.05,
                beta1: 0.9,
                ..AdamConfig::default()
            },
        );
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            g.weight = array![[2.0 * (p.weight[[0, 0]] - 1.5)]];
            adam.step(&mut p, &g);
        }
        assert!(
            (p.weight[[0, 0]] - 1.5).abs() < 1e-3,
            "got {}",
            p.weight[[0, 0]]
        );
    }
}
