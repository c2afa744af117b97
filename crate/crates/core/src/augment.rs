//! Two-view augmentation for feature vectors.
//!
//! Each sample is augmented into two views per batch, the contract the
//! contrastive losses rely on. A view applies, in order: a global scale drawn
//! uniformly from `scale_jitter`, additive Gaussian noise with standard
//! deviation `gaussian_sigma`, and independent coordinate dropout with
//! probability `feature_dropout_p`. The draw order is fixed regardless of the
//! configuration values, so a given RNG state always yields the same pair.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    pub gaussian_sigma: f64,
    pub feature_dropout_p: f64,
    pub scale_jitter: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.05,
            feature_dropout_p: 0.1,
            scale_jitter: (0.8, 1.2),
        }
    }
}

impl AugmentationConfig {
    /// Identity augmentation: both views equal the input.
    pub fn identity() -> Self {
        Self {
            gaussian_sigma: 0.0,
            feature_dropout_p: 0.0,
            scale_jitter: (1.0, 1.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.gaussian_sigma >= 0.0
            && self.gaussian_sigma.is_finite()
            && (0.0..=1.0).contains(&self.feature_dropout_p)
            && self.scale_jitter.0 > 0.0
            && self.scale_jitter.0 <= self.scale_jitter.1
            && self.scale_jitter.1.is_finite()
    }
}

fn one_view(sample: &[f64], aug: &AugmentationConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (lo, hi) = aug.scale_jitter;
    let scale: f64 = rng.random_range(lo..=hi);
    let mut view: Vec<f64> = sample
        .iter()
        .map(|&x| {
            let noise: f64 = rng.sample(StandardNormal);
            scale * x + aug.gaussian_sigma * noise
        })
        .collect();
    for v in view.iter_mut() {
        let u: f64 = rng.random_range(0.0..1.0);
        if u < aug.feature_dropout_p {
            *v = 0.0;
        }
    }
    view
}

/// Two independently augmented copies of one sample.
pub fn two_views(
    sample: &[f64],
    aug: &AugmentationConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let a = one_view(sample, aug, rng);
    let b = one_view(sample, aug, rng);
    (a, b)
}
