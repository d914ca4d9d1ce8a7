//! Adversarial and count losses with analytic gradients.
//!
//! The adversarial game is the classic saturating objective
//!
//! ```text
//! L_D = -E[ln D(x)] - E[ln(1 - D(G(z|c)))]
//! ```
//!
//! with two generator variants: the literal minimax loss `E[ln(1 - D(G))]`
//! and the non-saturating default `-E[ln D(G)]` (same fixed points, usable
//! gradients early in training when the discriminator wins easily).
//!
//! The count loss is the mean per-sample *Euclidean norm* of the count
//! error, `E[ ||C(x) - c||_2 ]` — note: the norm itself, not its square.
//! Targets are raw counts.
//!
//! Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log;
//! in the clamped region the loss is constant, so the matching gradients are
//! zero there (the finite-difference checks verify exactly this behavior).

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::nn::ops::sigmoid;
use crate::nn::Real;

/// Probability clamp applied before every logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Which generator objective to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    /// `-E[ln D(G(z|c))]` (default).
    NonSaturating,
    /// `E[ln(1 - D(G(z|c)))]`, the literal minimax form.
    Minimax,
}

/// Both sides of the adversarial objective for one batch of logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses<F> {
    pub d_loss: F,
    pub g_loss: F,
}

fn clamped<F: Real>(p: F) -> F {
    let eps = F::from_f64(PROB_EPS);
    p.max(eps).min(F::one() - eps)
}

fn is_clamped<F: Real>(p: F) -> bool {
    let eps = F::from_f64(PROB_EPS);
    p <= eps || p >= F::one() - eps
}

/// Discriminator loss: `-mean ln D(real) - mean ln(1 - D(fake))`.
pub fn gan_d_loss<F: Real>(real_logits: &Array1<F>, fake_logits: &Array1<F>) -> F {
    let nr = F::from_f64(real_logits.len() as f64);
    let nf = F::from_f64(fake_logits.len() as f64);
    let real_term: F = real_logits
        .iter()
        .map(|&l| -clamped(sigmoid(l)).ln())
        .sum::<F>()
        / nr;
    let fake_term: F = fake_logits
        .iter()
        .map(|&l| -(F::one() - clamped(sigmoid(l))).ln())
        .sum::<F>()
        / nf;
    real_term + fake_term
}

/// Gradients of [`gan_d_loss`] w.r.t. the real and fake logits.
pub fn gan_d_loss_grads<F: Real>(
    real_logits: &Array1<F>,
    fake_logits: &Array1<F>,
) -> (Array1<F>, Array1<F>) {
    let nr = F::from_f64(real_logits.len() as f64);
    let nf = F::from_f64(fake_logits.len() as f64);
    let d_real = real_logits.mapv(|l| {
        let p = sigmoid(l);
        if is_clamped(p) {
            F::zero()
        } else {
            -(F::one() - p) / nr
        }
    });
    let d_fake = fake_logits.mapv(|l| {
        let p = sigmoid(l);
        if is_clamped(p) {
            F::zero()
        } else {
            p / nf
        }
    });
    (d_real, d_fake)
}

/// Generator adversarial loss on fake logits.
pub fn gan_g_loss<F: Real>(fake_logits: &Array1<F>, mode: GeneratorLoss) -> F {
    let n = F::from_f64(fake_logits.len() as f64);
    let sum: F = fake_logits
        .iter()
        .map(|&l| {
            let q = clamped(sigmoid(l));
            match mode {
                GeneratorLoss::NonSaturating => -q.ln(),
                GeneratorLoss::Minimax => (F::one() - q).ln(),
            }
        })
        .sum();
    sum / n
}

/// Gradient of [`gan_g_loss`] w.r.t. the fake logits.
pub fn gan_g_loss_grad<F: Real>(fake_logits: &Array1<F>, mode: GeneratorLoss) -> Array1<F> {
    let n = F::from_f64(fake_logits.len() as f64);
    fake_logits.mapv(|l| {
        let p = sigmoid(l);
        if is_clamped(p) {
            return F::zero();
        }
        match mode {
            GeneratorLoss::NonSaturating => -(F::one() - p) / n,
            GeneratorLoss::Minimax => -p / n,
        }
    })
}

/// Both adversarial losses at once (reporting convenience).
pub fn gan_loss<F: Real>(
    real_logits: &Array1<F>,
    fake_logits: &Array1<F>,
    mode: GeneratorLoss,
) -> GanLosses<F> {
    GanLosses {
        d_loss: gan_d_loss(real_logits, fake_logits),
        g_loss: gan_g_loss(fake_logits, mode),
    }
}

/// Count loss: mean over the batch of per-sample Euclidean error norms.
pub fn count_loss<F: Real>(predicted: &Array2<F>, target: &Array2<F>) -> F {
    assert_eq!(predicted.dim(), target.dim(), "count loss shape mismatch");
    let n = F::from_f64(predicted.dim().0 as f64);
    let mut total = F::zero();
    for (p_row, t_row) in predicted.rows().into_iter().zip(target.rows()) {
        let sq: F = p_row
            .iter()
            .zip(t_row.iter())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        total = total + sq.sqrt();
    }
    total / n
}

/// Gradient of [`count_loss`] w.r.t. the predictions: `u / (N ||u||)` per
/// row, with the subgradient 0 at `u = 0`.
pub fn count_loss_grad<F: Real>(predicted: &Array2<F>, target: &Array2<F>) -> Array2<F> {
    assert_eq!(predicted.dim(), target.dim(), "count loss shape mismatch");
    let n = F::from_f64(predicted.dim().0 as f64);
    let mut grad = predicted - target;
    for mut row in grad.rows_mut() {
        let norm: F = row.iter().map(|&u| u * u).sum::<F>().sqrt();
        if norm > F::zero() {
            let scale = F::one() / (n * norm);
            row.mapv_inplace(|u| u * scale);
        }
    }
    grad
}

/// Combined objective: adversarial part plus `lambda` times the count part.
pub fn total_loss<F: Real>(gan: F, count: F, lambda: F) -> F {
    gan + lambda * count
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    const TOL: f64 = 1e-6;

    /// Frozen closed-form values; these are the contract of the loss
    /// implementations.
    #[test]
    fn loss_values_at_reference_points() {
        // Zero logits: both probabilities 1/2.
        let zeros = Array1::from_elem(4, 0.0f64);
        let l = gan_loss(&zeros, &zeros, GeneratorLoss::NonSaturating);
        assert!((l.d_loss - 2.0 * std::f64::consts::LN_2).abs() < TOL);
        assert!((l.g_loss - std::f64::consts::LN_2).abs() < TOL);
        let mm = gan_g_loss(&zeros, GeneratorLoss::Minimax);
        assert!((mm + std::f64::consts::LN_2).abs() < TOL);

        // Unit error in 3 coordinates (1, -1, 2): norm sqrt(6).
        let pred = array![[1.0, 1.0, 3.0]];
        let tgt = array![[0.0, 2.0, 1.0]];
        assert!((count_loss(&pred, &tgt) - 6.0f64.sqrt()).abs() < TOL);

        // Total loss is affine in the count term.
        let total = total_loss(2.0 * std::f64::consts::LN_2, 6.0f64.sqrt(), 0.7);
        assert!((total - (2.0 * std::f64::consts::LN_2 + 0.7 * 6.0f64.sqrt())).abs() < TOL);

        // The clamp pins the worst-case generator loss at -ln(eps).
        let hopeless = Array1::from_elem(1, -100.0f64);
        let worst = gan_g_loss(&hopeless, GeneratorLoss::NonSaturating);
        assert!((worst + PROB_EPS.ln()).abs() < TOL, "got {worst}");
    }

    /// Analytic gradients against central differences, including inside the
    /// clamped region where the gradient must vanish.
    #[test]
    fn loss_gradients_match_finite_differences() {
        let h = 1e-6;
        let real = array![0.3f64, -1.1, 45.0];
        let fake = array![-0.4f64, 2.2, -45.0];
        let (g_real, g_fake) = gan_d_loss_grads(&real, &fake);
        for i in 0..3 {
            for (logits, grads, which) in
                [(&real, &g_real, "real"), (&fake, &g_fake, "fake")]
            {
                let mut plus = logits.clone();
                plus[i] += h;
                let mut minus = logits.clone();
                minus[i] -= h;
                let (fd_p, fd_m) = if which == "real" {
                    (gan_d_loss(&plus, &fake), gan_d_loss(&minus, &fake))
                } else {
                    (gan_d_loss(&real, &plus), gan_d_loss(&real, &minus))
                };
                let fd = (fd_p - fd_m) / (2.0 * h);
                assert!(
                    (grads[i] - fd).abs() < 1e-6,
                    "{which}[{i}]: analytic {} vs fd {fd}",
                    grads[i]
                );
            }
        }
        // Saturated logits (+-45) sit in the clamp: gradient must be zero.
        assert_eq!(g_real[2], 0.0);
        assert_eq!(g_fake[2], 0.0);

        for mode in [GeneratorLoss::NonSaturating, GeneratorLoss::Minimax] {
            let g = gan_g_loss_grad(&fake, mode);
            for i in 0..2 {
                let mut plus = fake.clone();
                plus[i] += h;
                let mut minus = fake.clone();
                minus[i] -= h;
                let fd = (gan_g_loss(&plus, mode) - gan_g_loss(&minus, mode)) / (2.0 * h);
                assert!((g[i] - fd).abs() < 1e-6, "{mode:?}[{i}]");
            }
        }

        let pred = array![[0.7f64, 2.3], [1.1, 0.2]];
        let tgt = array![[1.0f64, 2.0], [1.0, 0.0]];
        let g = count_loss_grad(&pred, &tgt);
        for r in 0..2 {
            for c in 0..2 {
                let mut plus = pred.clone();
                plus[[r, c]] += h;
                let mut minus = pred.clone();
                minus[[r, c]] -= h;
                let fd = (count_loss(&plus, &tgt) - count_loss(&minus, &tgt)) / (2.0 * h);
                assert!((g[[r, c]] - fd).abs() < 1e-6);
            }
        }
    }

    /// Exact-match predictions contribute zero loss and zero gradient.
    #[test]
    fn count_loss_at_zero_error() {
        let pred = array![[1.0f64, 2.0]];
        assert_eq!(count_loss(&pred, &pred), 0.0);
        let g = count_loss_grad(&pred, &pred);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    /// The minimax and non-saturating objectives share fixed points but not
    /// gradient signs: both push fake logits up.
    #[test]
    fn both_generator_losses_push_logits_up() {
        let fake = array![0.5f64, -0.5];
        for mode in [GeneratorLoss::NonSaturating, GeneratorLoss::Minimax] {
            let g = gan_g_loss_grad(&fake, mode);
            assert!(g.iter().all(|&v| v < 0.0), "{mode:?} must decrease loss by raising logits");
        }
    }

}
