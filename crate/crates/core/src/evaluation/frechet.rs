//! Fréchet distance between Gaussian feature statistics.
//!
//! `d² = ‖μ₁−μ₂‖² + Tr(Σ₁) + Tr(Σ₂) − 2·Tr((Σ₁Σ₂)^{1/2})`, with the product
//! square-root term computed through a symmetric reformulation:
//! `Tr((Σ₁Σ₂)^{1/2}) = Tr((Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2})`, so only symmetric
//! PSD square roots are ever taken. Eigendecompositions use a hand-rolled
//! cyclic Jacobi solver (dimensions here stay small — feature widths of a
//! few hundred at most), eigenvalues are clipped at zero, every square root
//! is residual-checked, and one diagonal-jitter retry covers ill-conditioned
//! inputs before giving up.
//!
//! [`mini_fid`] is the desk-scale stand-in for the usual Inception-based
//! score: the featurizer is a locally trained count predictor's penultimate
//! layer. Absolute values are not comparable across featurizers; only
//! orderings carry meaning.

use ndarray::{Array1, Array2, Array4, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::models::CountPredictorParams;
use crate::nn;

/// Residual bound for accepting a computed square root.
const SQRT_RESIDUAL_TOL: f64 = 1e-3;

/// Gaussian summary of a feature cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Array1<f64>,
    /// Symmetric PSD (up to float dust) covariance, unbiased (n−1) estimate.
    pub cov: Array2<f64>,
    pub sample_count: usize,
}

impl FeatureStats {
    /// Estimate from an `(n_samples, d)` feature matrix.
    pub fn from_samples(features: ArrayView2<'_, f64>) -> Result<Self> {
        let (n, d) = features.dim();
        if n < 2 {
            return Err(Error::InsufficientSamples(format!(
                "covariance needs at least 2 samples, got {n}"
            )));
        }
        let mean = features.mean_axis(Axis(0)).expect("n >= 2");
        let centered = &features - &mean;
        let mut cov = nn::matmul(centered.t(), centered.view());
        cov /= (n - 1) as f64;
        // Symmetrize away accumulation dust so downstream eigensolves see a
        // genuinely symmetric matrix.
        let cov = (&cov + &cov.t()) / 2.0;
        let _ = d;
        Ok(FeatureStats {
            mean,
            cov,
            sample_count: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns, so
/// `a ≈ V · diag(λ) · Vᵀ`. Converges quadratically; the sweep cap is far
/// beyond what symmetric matrices of this size ever need.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let d = a.dim().0;
    assert_eq!(a.dim(), (d, d), "square matrix required");
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(d);
    let frobenius = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frobenius == 0.0 || d < 2 {
        return (m.diag().to_owned(), v);
    }
    let tol = 1e-14 * frobenius;
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| ((p + 1)..d).map(move |q| (p, q)))
            .map(|(p, q)| m[[p, q] ] * m[[p, q]])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..d - 1 {
            for q in p + 1..d {
                let apq = m[[p, q]];
                if apq.abs() <= tol / (d as f64) {
                    continue;
                }
                // Rotation angle that zeroes m[p][q].
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    (m.diag().to_owned(), v)
}

/// Symmetric PSD square root with eigenvalue clipping.
///
/// Returns the root and its relative residual `‖S·S − A‖_F / ‖A‖_F`.
fn psd_sqrt(a: &Array2<f64>) -> (Array2<f64>, f64) {
    let (eigenvalues, v) = symmetric_eigen(a);
    let sqrt_diag = Array2::from_diag(&eigenvalues.mapv(|l| l.max(0.0).sqrt()));
    let s = nn::matmul(nn::matmul(v.view(), sqrt_diag.view()).view(), v.t());
    let s = (&s + &s.t()) / 2.0;
    let back = nn::matmul(s.view(), s.view());
    let num = (&back - a).iter().map(|x| x * x).sum::<f64>().sqrt();
    let den = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let residual = if den > 0.0 { num / den } else { num };
    (s, residual)
}

/// Squared Fréchet distance between two Gaussians.
pub fn gaussian_frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            context: "frechet distance".into(),
            expected: format!("{}-d stats", a.dim()),
            got: b.dim().to_string(),
        });
    }
    let d = a.dim();
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let trace_a: f64 = a.cov.diag().sum();
    let trace_b: f64 = b.cov.diag().sum();

    // Tr((Σ₁Σ₂)^{1/2}) via the symmetrized product, with one jitter retry.
    let jitter = 1e-6 * trace_a.max(trace_b).max(1e-6);
    let mut trace_sqrt = None;
    for attempt in 0..2 {
        let (cov_a, cov_b) = if attempt == 0 {
            (a.cov.clone(), b.cov.clone())
        } else {
            let eye = Array2::<f64>::eye(d) * jitter;
            (&a.cov + &eye, &b.cov + &eye)
        };
        let (root_a, res_a) = psd_sqrt(&cov_a);
        if res_a > SQRT_RESIDUAL_TOL {
            continue;
        }
        let product = nn::matmul(nn::matmul(root_a.view(), cov_b.view()).view(), root_a.view());
        let product = (&product + &product.t()) / 2.0;
        let (root_m, res_m) = psd_sqrt(&product);
        if res_m <= SQRT_RESIDUAL_TOL {
            trace_sqrt = Some(root_m.diag().sum());
            break;
        }
    }
    let Some(trace_sqrt) = trace_sqrt else {
        return Err(Error::Numerical {
            context: "frechet distance".into(),
            reason: format!(
                "matrix square root residual above {SQRT_RESIDUAL_TOL} even after diagonal jitter"
            ),
        });
    };

    let d2 = mean_term + trace_a + trace_b - 2.0 * trace_sqrt;
    // Exactly-equal inputs can land a hair below zero; anything further
    // negative would have tripped the residual check.
    Ok(d2.max(0.0))
}

/// Fréchet distance between real and generated images in the feature space
/// of a count predictor's penultimate layer.
pub fn mini_fid(
    featurizer: &CountPredictorParams<f32>,
    real: &Array4<f32>,
    fake: &Array4<f32>,
) -> Result<f64> {
    let stats_real = image_feature_stats(featurizer, real)?;
    let stats_fake = image_feature_stats(featurizer, fake)?;
    gaussian_frechet_distance(&stats_real, &stats_fake)
}

/// Featurize a batch of images and summarize; errors when the sample count
/// cannot support a full-rank covariance.
pub fn image_feature_stats(
    featurizer: &CountPredictorParams<f32>,
    images: &Array4<f32>,
) -> Result<FeatureStats> {
    let n = images.dim().0;
    let mut rows: Option<Array2<f64>> = None;
    // Featurize in slabs to keep the conv workspace bounded.
    const SLAB: usize = 128;
    let mut at = 0;
    while at < n {
        let hi = (at + SLAB).min(n);
        let slab = images.slice(ndarray::s![at..hi, .., .., ..]).to_owned();
        let feats = featurizer.features(&slab).mapv(|v| v as f64);
        let rows = rows.get_or_insert_with(|| Array2::zeros((n, feats.dim().1)));
        rows.slice_mut(ndarray::s![at..hi, ..]).assign(&feats);
        at = hi;
    }
    let rows = rows.ok_or_else(|| {
        Error::InsufficientSamples("feature statistics of an empty image set".into())
    })?;
    let d = rows.dim().1;
    if n < d + 1 {
        return Err(Error::InsufficientSamples(format!(
            "{n} images cannot support a full-rank {d}-d covariance (need at least {})",
            d + 1
        )));
    }
    FeatureStats::from_samples(rows.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    use crate::models::{Backbone, LabelMapping, ModelConfig};
    use crate::rng::derive_rng;

    fn random_symmetric(d: usize, seed: u64) -> Array2<f64> {
        let mut rng = derive_rng(seed, &[0xB1]);
        let raw = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
        (&raw + &raw.t()) / 2.0
    }

    fn stats(mean: Vec<f64>, cov: Array2<f64>) -> FeatureStats {
        FeatureStats {
            mean: Array1::from(mean),
            cov,
            sample_count: 100,
        }
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric_matrices() {
        for (d, seed) in [(2, 1u64), (5, 2), (16, 3)] {
            let a = random_symmetric(d, seed);
            let (l, v) = symmetric_eigen(&a);
            let recon = nn::matmul(
                nn::matmul(v.view(), Array2::from_diag(&l).view()).view(),
                v.t(),
            );
            let err = (&recon - &a).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(err < 1e-10, "d={d}: reconstruction error {err}");
            // Columns orthonormal.
            let gram = nn::matmul(v.t(), v.view());
            let eye_err = (&gram - &Array2::<f64>::eye(d))
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            assert!(eye_err < 1e-10, "d={d}: orthonormality error {eye_err}");
        }
    }

    #[test]
    fn one_dimensional_closed_forms() {
        // (μ₁−μ₂)² + (σ₁−σ₂)² in 1-D.
        let a = stats(vec![0.0], array![[1.0]]);
        let b = stats(vec![1.0], array![[1.0]]);
        assert!((gaussian_frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-9);

        let c = stats(vec![0.0], array![[4.0]]);
        assert!((gaussian_frechet_distance(&a, &c).unwrap() - 1.0).abs() < 1e-9);

        assert!(gaussian_frechet_distance(&a, &a).unwrap() < 1e-6);
    }

    #[test]
    fn commuting_diagonal_case_matches_closed_form() {
        // For diagonal covariances: Σ(σ1 + σ2 − 2√(σ1·σ2)) per coordinate.
        let a = stats(vec![0.0, 0.0], array![[1.0, 0.0], [0.0, 4.0]]);
        let b = stats(vec![0.0, 0.0], array![[9.0, 0.0], [0.0, 16.0]]);
        let expect = (1.0 + 9.0 - 6.0) + (4.0 + 16.0 - 16.0);
        assert!((gaussian_frechet_distance(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn distance_is_symmetric_and_handles_singular_covariances() {
        let a = stats(vec![0.3, -0.7, 0.1], random_symmetric_psd(3, 5));
        let b = stats(vec![0.1, 0.2, -0.4], random_symmetric_psd(3, 6));
        let ab = gaussian_frechet_distance(&a, &b).unwrap();
        let ba = gaussian_frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-6, "asymmetry {ab} vs {ba}");

        // Zero covariance on both sides: distance reduces to the mean term.
        let za = stats(vec![1.0, 2.0], Array2::zeros((2, 2)));
        let zb = stats(vec![0.0, 0.0], Array2::zeros((2, 2)));
        assert!((gaussian_frechet_distance(&za, &zb).unwrap() - 5.0).abs() < 1e-9);

        // Rank-deficient PSD is fine too.
        let rank1 = array![[1.0, 1.0], [1.0, 1.0]];
        let ra = stats(vec![0.0, 0.0], rank1.clone());
        let rb = stats(vec![0.0, 0.0], rank1);
        assert!(gaussian_frechet_distance(&ra, &rb).unwrap() < 1e-6);
    }

    fn random_symmetric_psd(d: usize, seed: u64) -> Array2<f64> {
        let mut rng = derive_rng(seed, &[0xB2]);
        let raw = Array2::from_shape_fn((d, d + 2), |_| rng.random_range(-1.0..1.0));
        nn::matmul(raw.view(), raw.t()) / d as f64
    }

    #[test]
    fn feature_stats_match_hand_covariance() {
        let x = array![[1.0, 0.0], [3.0, 2.0], [5.0, 4.0]];
        let s = FeatureStats::from_samples(x.view()).unwrap();
        assert_eq!(s.sample_count, 3);
        assert_eq!(s.mean, Array1::from(vec![3.0, 2.0]));
        // Centered columns are [-2, 0, 2] both; cov = 8/2 = 4 everywhere.
        assert_eq!(s.cov, array![[4.0, 4.0], [4.0, 4.0]]);

        let tiny = array![[1.0, 2.0]];
        assert!(matches!(
            FeatureStats::from_samples(tiny.view()),
            Err(Error::InsufficientSamples(_))
        ));
    }

    fn tiny_featurizer() -> CountPredictorParams<f32> {
        let cfg = ModelConfig {
            resolution: 16,
            image_channels: 1,
            n_classes: 2,
            max_count: 2,
            latent_dim: 4,
            gen_base: 4,
            gen_growth: 3,
            gen_head: 4,
            backbone: Backbone::Dense,
            label_mapping: LabelMapping::PerStage,
            disc_base: 4,
            weight_sharing: true,
            count_conditioned_disc: false,
            pred_base: 2,
        };
        let (_, _, p) = crate::models::init_params::<f32>(&cfg, 77).unwrap();
        p
    }

    #[test]
    fn mini_fid_is_zero_on_identical_sets_and_grows_with_noise() {
        let p = tiny_featurizer();
        // Feature dim: pred_base·8 channels x 1x1 spatial = 16; need 17+.
        let mut rng = derive_rng(8, &[0xB3]);
        let images = Array4::from_shape_fn((24, 1, 16, 16), |_| rng.random_range(-1.0..1.0f32));
        assert!(mini_fid(&p, &images, &images).unwrap() <= 1e-3);

        let mut last = 0.0;
        for sigma in [0.05f32, 0.1, 0.2] {
            let noisy = &images
                + &Array4::from_shape_fn(images.dim(), |_| {
                    use crate::nn::Real;
                    f32::standard_normal(&mut rng) * sigma
                });
            let fid = mini_fid(&p, &images, &noisy).unwrap();
            assert!(fid > last, "fid {fid} not above {last} at sigma {sigma}");
            last = fid;
        }
    }

    #[test]
    fn mini_fid_rejects_undersized_sets() {
        let p = tiny_featurizer();
        let images = Array4::zeros((8, 1, 16, 16));
        assert!(matches!(
            mini_fid(&p, &images, &images),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let a = stats(vec![0.0], array![[1.0]]);
        let b = stats(vec![0.0, 0.0], Array2::eye(2));
        assert!(matches!(
            gaussian_frechet_distance(&a, &b),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
