//! Synthetic hierarchical corpus generator.
//!
//! Stands in for a metadata-annotated image collection at desk scale. Every
//! (modality, anatomy) cell is a Gaussian whose mean is the sum of a modality
//! direction and an anatomy direction, so cells sharing an attribute are
//! closer than cells sharing none — the structure the metadata losses are
//! meant to exploit. The downstream task lives inside one designated cell:
//! its binary label thresholds the sample's latent coordinate along the
//! direction toward a neighboring cell, a direction metadata pretraining
//! plausibly preserves.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::label::{LabelError, MetadataVocabulary, MultiHotLabel};
use crate::mat::{axpy, l2_norm};
use crate::seed::stream_rng;
use crate::train::{LabeledDataset, PretrainDataset, TrainError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad synth config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub vocab: MetadataVocabulary,
    pub n_per_cell: usize,
    pub latent_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Number of downstream task samples drawn from the designated cell.
    pub downstream_n: usize,
    /// (modality index, anatomy index) of the cell hosting the task.
    pub designated_cell: (usize, usize),
}

impl SynthConfig {
    pub fn new(vocab: MetadataVocabulary, n_per_cell: usize, seed: u64) -> Self {
        Self {
            vocab,
            n_per_cell,
            latent_dim: 16,
            noise_sigma: 0.3,
            seed,
            downstream_n: 200,
            designated_cell: (0, 0),
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.n_per_cell == 0 {
            return Err(SynthError::BadConfig("n_per_cell must be >= 1".into()));
        }
        if self.latent_dim < 2 {
            return Err(SynthError::BadConfig("latent_dim must be >= 2".into()));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(SynthError::BadConfig(
                "noise_sigma must be finite and >= 0".into(),
            ));
        }
        if self.downstream_n == 0 {
            return Err(SynthError::BadConfig("downstream_n must be >= 1".into()));
        }
        let (m, a) = self.designated_cell;
        if m >= self.vocab.modalities().len() || a >= self.vocab.anatomies().len() {
            return Err(SynthError::BadConfig(format!(
                "designated cell ({m}, {a}) outside the vocabulary"
            )));
        }
        if self.vocab.dim() < 3 {
            return Err(SynthError::BadConfig(
                "need at least two cells (more than one modality or anatomy)".into(),
            ));
        }
        Ok(())
    }
}

/// Generated pretraining corpus plus the downstream task.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub pretrain: PretrainDataset,
    pub downstream: LabeledDataset,
    pub vocab: MetadataVocabulary,
    /// Cell index (modality-major) of every pretraining sample.
    pub cell_of: Vec<usize>,
    /// Mean vector of every cell, modality-major.
    pub cell_means: Vec<Vec<f64>>,
    /// (modality index, anatomy index) of the cell hosting the task.
    pub designated_cell: (usize, usize),
}

pub fn generate_hierarchical_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus, SynthError> {
    cfg.validate()?;
    let n_mod = cfg.vocab.modalities().len();
    let n_anat = cfg.vocab.anatomies().len();
    let d = cfg.latent_dim;

    // Unit directions per attribute value, one shared stream.
    let mut dir_rng = stream_rng(cfg.seed, "directions", 0);
    let mut draw_unit = || -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| dir_rng.sample(StandardNormal)).collect();
        let norm = l2_norm(&v).max(1e-12);
        for x in &mut v {
            *x /= norm;
        }
        v
    };
    let modality_dirs: Vec<Vec<f64>> = (0..n_mod).map(|_| draw_unit()).collect();
    let anatomy_dirs: Vec<Vec<f64>> = (0..n_anat).map(|_| draw_unit()).collect();

    let mut cell_means = Vec::with_capacity(n_mod * n_anat);
    for md in &modality_dirs {
        for ad in &anatomy_dirs {
            let mut mean = md.clone();
            axpy(&mut mean, 1.0, ad);
            cell_means.push(mean);
        }
    }
    let mut min_dist = f64::INFINITY;
    for i in 0..cell_means.len() {
        for j in i + 1..cell_means.len() {
            let dist: f64 = cell_means[i]
                .iter()
                .zip(&cell_means[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(dist);
        }
    }
    if min_dist <= 0.0 || min_dist.is_nan() {
        return Err(SynthError::BadConfig(
            "degenerate direction draw: coincident cell means".into(),
        ));
    }

    let mut features = Vec::with_capacity(n_mod * n_anat * cfg.n_per_cell);
    let mut labels = Vec::with_capacity(features.capacity());
    let mut class_ids = Vec::with_capacity(features.capacity());
    let mut cell_of = Vec::with_capacity(features.capacity());
    for (mi, modality) in cfg.vocab.modalities().iter().enumerate() {
        for (ai, anatomy) in cfg.vocab.anatomies().iter().enumerate() {
            let cell = mi * n_anat + ai;
            let label = MultiHotLabel::encode(modality, anatomy, &cfg.vocab)?;
            let mut rng = stream_rng(cfg.seed, "cell", cell as u64);
            for _ in 0..cfg.n_per_cell {
                let mut x = cell_means[cell].clone();
                for v in &mut x {
                    let noise: f64 = rng.sample(StandardNormal);
                    *v += cfg.noise_sigma * noise;
                }
                features.push(x);
                labels.push(label.clone());
                class_ids.push(cell);
                cell_of.push(cell);
            }
        }
    }
    let pretrain = PretrainDataset::new(features, Some(labels), Some(class_ids))?;

    // Downstream task: fresh draws from the designated cell, labeled by the
    // sign of the latent coordinate along the direction toward a neighboring
    // cell (next anatomy if one exists, otherwise next modality).
    let (dm, da) = cfg.designated_cell;
    let task_dir = if n_anat > 1 {
        let other = (da + 1) % n_anat;
        unit_diff(&anatomy_dirs[other], &anatomy_dirs[da])
    } else {
        let other = (dm + 1) % n_mod;
        unit_diff(&modality_dirs[other], &modality_dirs[dm])
    };
    let cell = dm * n_anat + da;
    let mut rng = stream_rng(cfg.seed, "downstream", 0);
    let mut task_features = Vec::with_capacity(cfg.downstream_n);
    let mut task_labels = Vec::with_capacity(cfg.downstream_n);
    for _ in 0..cfg.downstream_n {
        let mut x = cell_means[cell].clone();
        let mut latent = 0.0;
        for (v, t) in x.iter_mut().zip(&task_dir) {
            let noise: f64 = rng.sample(StandardNormal);
            let delta = cfg.noise_sigma * noise;
            *v += delta;
            latent += delta * t;
        }
        task_features.push(x);
        task_labels.push(u8::from(latent > 0.0));
    }
    let downstream = LabeledDataset::new(task_features, task_labels)?;

    Ok(SyntheticCorpus {
        pretrain,
        downstream,
        vocab: cfg.vocab.clone(),
        cell_of,
        cell_means,
        designated_cell: cfg.designated_cell,
    })
}

fn unit_diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let norm = l2_norm(&v).max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Nearest-centroid cell accuracy on raw features; test oracle for the
/// generator's separability.
pub fn nearest_centroid_accuracy(corpus: &SyntheticCorpus) -> f64 {
    let mut correct = 0usize;
    for (x, &cell) in corpus
        .pretrain
        .features()
        .iter()
        .zip(corpus.cell_of.iter())
    {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, mean) in corpus.cell_means.iter().enumerate() {
            let d2: f64 = x
                .iter()
                .zip(mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            if d2 < best_d {
                best_d = d2;
                best = c;
            }
        }
        if best == cell {
            correct += 1;
        }
    }
    correct as f64 / corpus.pretrain.len() as f64
}

/// Retain at most `cap` uniformly sampled members of each class, preserving
/// the original row order; classes under the cap keep every row.
pub fn cap_per_class(class_ids: &[usize], cap: usize, seed: u64) -> Vec<usize> {
    let mut classes: Vec<usize> = class_ids.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut keep = vec![false; class_ids.len()];
    for class in classes {
        let members: Vec<usize> = (0..class_ids.len())
            .filter(|&i| class_ids[i] == class)
            .collect();
        if members.len() <= cap {
            for &i in &members {
                keep[i] = true;
            }
        } else {
            use rand::seq::SliceRandom;
            let mut shuffled = members.clone();
            let mut rng = stream_rng(seed, "cap", class as u64);
            shuffled.shuffle(&mut rng);
            for &i in &shuffled[..cap] {
                keep[i] = true;
            }
        }
    }
    (0..class_ids.len()).filter(|&i| keep[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_vocab(m: usize, a: usize) -> MetadataVocabulary {
        let mods: Vec<String> = (0..m).map(|i| format!("mod{i}")).collect();
        let anats: Vec<String> = (0..a).map(|i| format!("anat{i}")).collect();
        MetadataVocabulary::new(mods, anats).unwrap()
    }

    #[test]
    fn zero_noise_collapses_cells_to_means() {
        let mut cfg = SynthConfig::new(test_vocab(2, 2), 3, 1);
        cfg.noise_sigma = 0.0;
        let corpus = generate_hierarchical_corpus(&cfg).unwrap();
        for (x, &cell) in corpus
            .pretrain
            .features()
            .iter()
            .zip(corpus.cell_of.iter())
        {
            assert_eq!(x, &corpus.cell_means[cell]);
        }
    }

    #[test]
    fn cell_means_are_pairwise_distinct() {
        let cfg = SynthConfig::new(test_vocab(3, 3), 2, 5);
        let corpus = generate_hierarchical_corpus(&cfg).unwrap();
        for i in 0..corpus.cell_means.len() {
            for j in i + 1..corpus.cell_means.len() {
                let d: f64 = corpus.cell_means[i]
                    .iter()
                    .zip(&corpus.cell_means[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!(d > 0.0, "cells {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn nearest_centroid_recovers_cells() {
        // 3x3 vocabulary, 50 per cell, sigma 0.3, seed 11.
        let mut cfg = SynthConfig::new(test_vocab(3, 3), 50, 11);
        cfg.noise_sigma = 0.3;
        cfg.latent_dim = 16;
        let corpus = generate_hierarchical_corpus(&cfg).unwrap();
        let acc = nearest_centroid_accuracy(&corpus);
        assert!(acc > 0.9, "nearest-centroid accuracy {acc}");
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::new(test_vocab(2, 3), 4, 9);
        let a = generate_hierarchical_corpus(&cfg).unwrap();
        let b = generate_hierarchical_corpus(&cfg).unwrap();
        assert_eq!(a.pretrain.features(), b.pretrain.features());
        assert_eq!(a.downstream.features(), b.downstream.features());
        assert_eq!(a.downstream.labels(), b.downstream.labels());
    }

    #[test]
    fn downstream_task_has_both_classes() {
        let cfg = SynthConfig::new(test_vocab(3, 3), 5, 11);
        let corpus = generate_hierarchical_corpus(&cfg).unwrap();
        let pos = corpus.downstream.labels().iter().filter(|&&l| l == 1).count();
        assert!((50..=150).contains(&pos), "{pos} positives of 200");
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = SynthConfig::new(test_vocab(2, 2), 0, 1);
        assert!(matches!(
            generate_hierarchical_corpus(&cfg),
            Err(SynthError::BadConfig(_))
        ));
        cfg.n_per_cell = 2;
        cfg.designated_cell = (5, 0);
        assert!(matches!(
            generate_hierarchical_corpus(&cfg),
            Err(SynthError::BadConfig(_))
        ));
    }

    #[test]
    fn cap_keeps_small_classes_and_trims_large_ones() {
        let mut ids = vec![0usize; 40];
        ids.extend(vec![1usize; 250]);
        let kept = cap_per_class(&ids, 100, 7);
        let kept0 = kept.iter().filter(|&&i| ids[i] == 0).count();
        let kept1 = kept.iter().filter(|&&i| ids[i] == 1).count();
        assert_eq!(kept0, 40);
        assert_eq!(kept1, 100);
        // Original order preserved.
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cap_is_deterministic() {
        let ids: Vec<usize> = (0..500).map(|i| i % 3).collect();
        assert_eq!(cap_per_class(&ids, 50, 3), cap_per_class(&ids, 50, 3));
        assert_ne!(cap_per_class(&ids, 50, 3), cap_per_class(&ids, 50, 4));
    }
}
