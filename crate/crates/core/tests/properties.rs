//! Property tests for the library invariants: label similarity, loss
//! symmetries, AUC identities, Wilcoxon invariances, and manifest round
//! trips.

use proptest::collection::{hash_map, hash_set, vec};
use proptest::prelude::*;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mulsupcon::label::{MetadataVocabulary, MultiHotLabel};
use mulsupcon::loss::{
    info_nce, jaccard_weights, mulsupcon, positive_mask, supcon, EmbeddingBatch, LossConfig,
};
use mulsupcon::manifest::{Manifest, ManifestRow};
use mulsupcon::mat::Mat;
use mulsupcon::stats::{auc, wilcoxon_signed_rank};

fn label_strategy() -> impl Strategy<Value = MultiHotLabel> {
    (vec(any::<bool>(), 1..12), any::<prop::sample::Index>()).prop_map(|(mut bits, idx)| {
        let i = idx.index(bits.len());
        bits[i] = true;
        MultiHotLabel::new(bits).unwrap()
    })
}

proptest! {
    #[test]
    fn jaccard_is_symmetric_and_bounded(a in label_strategy(), b in label_strategy()) {
        let ab = a.jaccard(&b);
        let ba = b.jaccard(&a);
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        // Equality with 1 exactly when the active sets coincide.
        prop_assert_eq!(ab == 1.0, a.active_set() == b.active_set());
    }

    #[test]
    fn encode_pairs_have_three_possible_weights(
        m1 in 0..3usize, a1 in 0..3usize, m2 in 0..3usize, a2 in 0..3usize
    ) {
        let vocab = MetadataVocabulary::new(
            vec!["m0", "m1", "m2"],
            vec!["a0", "a1", "a2"],
        ).unwrap();
        let la = MultiHotLabel::encode(&format!("m{m1}"), &format!("a{a1}"), &vocab).unwrap();
        let lb = MultiHotLabel::encode(&format!("m{m2}"), &format!("a{a2}"), &vocab).unwrap();
        let w = la.jaccard(&lb);
        let shared = usize::from(m1 == m2) + usize::from(a1 == a2);
        let expected = match shared {
            0 => 0.0,
            1 => 1.0 / 3.0,
            _ => 1.0,
        };
        prop_assert_eq!(w, expected);
    }

    #[test]
    fn auc_complement_without_ties(
        entries in hash_map(any::<i16>(), any::<bool>(), 5..40)
    ) {
        let scores: Vec<f64> = entries.keys().map(|&k| f64::from(k)).collect();
        let mut labels: Vec<u8> = entries.values().map(|&v| u8::from(v)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let neg: Vec<f64> = scores.iter().map(|&s| -s).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&neg, &labels).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn auc_invariant_under_increasing_transform(
        raw in vec((-1000..1000i32, any::<bool>()), 5..40)
    ) {
        let scores: Vec<f64> = raw.iter().map(|&(s, _)| f64::from(s)).collect();
        let mut labels: Vec<u8> = raw.iter().map(|&(_, l)| u8::from(l)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // 2x + 10 is exact on these integer-valued floats: strictly
        // increasing and tie-preserving.
        let transformed: Vec<f64> = scores.iter().map(|&s| 2.0 * s + 10.0).collect();
        prop_assert_eq!(
            auc(&scores, &labels).unwrap(),
            auc(&transformed, &labels).unwrap()
        );
    }

    #[test]
    fn wilcoxon_invariant_under_positive_affine_differences(
        pairs in vec((-100..100i32, -100..100i32), 4..15)
    ) {
        let x: Vec<f64> = pairs.iter().map(|&(a, _)| f64::from(a)).collect();
        let y: Vec<f64> = pairs.iter().map(|&(_, b)| f64::from(b)).collect();
        // Scaling both samples by 4 scales every difference by 4 exactly:
        // signs and rank order are unchanged.
        let xs: Vec<f64> = x.iter().map(|&v| 4.0 * v).collect();
        let ys: Vec<f64> = y.iter().map(|&v| 4.0 * v).collect();
        let t1 = wilcoxon_signed_rank(&x, &y).unwrap();
        let t2 = wilcoxon_signed_rank(&xs, &ys).unwrap();
        prop_assert_eq!(t1.p_value, t2.p_value);
        prop_assert_eq!(t1.n_effective, t2.n_effective);
        prop_assert_eq!(t1.w_plus, t2.w_plus);
    }

    #[test]
    fn positive_mask_at_zero_threshold_is_everything(
        n_images in 1..5usize,
        cells in vec((0..2usize, 0..2usize), 5)
    ) {
        let vocab = MetadataVocabulary::new(vec!["m0", "m1"], vec!["a0", "a1"]).unwrap();
        let labels: Vec<MultiHotLabel> = (0..n_images)
            .map(|i| {
                let (m, a) = cells[i % cells.len()];
                MultiHotLabel::encode(&format!("m{m}"), &format!("a{a}"), &vocab).unwrap()
            })
            .collect();
        let image_of: Vec<usize> = (0..2 * n_images).map(|v| v / 2).collect();
        let w = jaccard_weights(&labels, &image_of).unwrap();
        let mask = positive_mask(&w, 0.0);
        for a in 0..2 * n_images {
            prop_assert_eq!(mask.positives_of(a), 2 * n_images - 1);
        }
    }

    #[test]
    fn kfold_sizes_and_strata_are_balanced(
        labels in vec(0..2u8, 10..80),
        k in 2..6usize,
        seed in any::<u64>()
    ) {
        prop_assume!(labels.len() >= k);
        let partition = mulsupcon::stats::kfold_split(&labels, k, seed).unwrap();
        let sizes: Vec<usize> = (0..k).map(|f| partition.fold_indices(f).len()).collect();
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(max - min <= 1, "fold sizes {sizes:?}");
        for class in [0u8, 1] {
            let counts: Vec<usize> = (0..k)
                .map(|f| {
                    partition
                        .fold_indices(f)
                        .iter()
                        .filter(|&&i| labels[i] == class)
                        .count()
                })
                .collect();
            let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(max - min <= 1, "class {class} counts {counts:?}");
        }
        // Every sample lands in exactly one fold.
        let total: usize = sizes.iter().sum();
        prop_assert_eq!(total, labels.len());
    }

    #[test]
    fn manifest_round_trip(
        ids in hash_set("[a-z][a-z0-9]{0,6}", 1..8),
        dim in 1..5usize,
        raw in vec((any::<i64>(), 0..2u8, 0..2u8, any::<bool>(), any::<bool>()), 8)
    ) {
        let vocab = MetadataVocabulary::new(vec!["ct", "mr"], vec!["knee", "chest"]).unwrap();
        let rows: Vec<ManifestRow> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let (bits, m, a, has_class, has_label) = raw[i % raw.len()];
                let features: Vec<f64> = (0..dim)
                    .map(|j| {
                        let v = f64::from_bits((bits as u64).rotate_left(j as u32 * 7));
                        if v.is_finite() { v } else { j as f64 * 0.25 }
                    })
                    .collect();
                ManifestRow {
                    id: id.clone(),
                    modality: ["ct", "mr"][m as usize].to_string(),
                    anatomy: ["knee", "chest"][a as usize].to_string(),
                    class_id: has_class.then_some(i),
                    task_label: has_label.then_some((i % 2) as u8),
                    features,
                }
            })
            .collect();
        let manifest = Manifest::new(vocab, rows).unwrap();
        let reparsed = Manifest::parse(&manifest.render(), None).unwrap();
        prop_assert_eq!(manifest, reparsed);
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = mulsupcon::mat::l2_norm(&v).max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

fn random_batch(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
) -> (Vec<Vec<f64>>, Vec<usize>, Vec<MultiHotLabel>) {
    let vocab = MetadataVocabulary::new(vec!["m0", "m1"], vec!["a0", "a1"]).unwrap();
    let views: Vec<Vec<f64>> = (0..2 * n).map(|_| random_unit(rng, d)).collect();
    let image_of: Vec<usize> = (0..2 * n).map(|v| v / 2).collect();
    let labels: Vec<MultiHotLabel> = (0..n)
        .map(|_| {
            let m = rng.random_range(0..2usize);
            let a = rng.random_range(0..2usize);
            MultiHotLabel::encode(&format!("m{m}"), &format!("a{a}"), &vocab).unwrap()
        })
        .collect();
    (views, image_of, labels)
}

/// Permuting image order (labels moved consistently) must not change any of
/// the loss values.
#[test]
fn losses_are_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for trial in 0..20 {
        let n = 2 + trial % 3;
        let (views, image_of, labels) = random_batch(&mut rng, n, 4);
        let batch = EmbeddingBatch::new(Mat::from_rows(&views), image_of).unwrap();
        let cfg = LossConfig {
            temperature: 0.2,
            threshold: 0.3,
        };
        let classes: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let v_nce = info_nce(&batch, 0.2).unwrap().value;
        let v_sup = supcon(&batch, &classes, 0.2).unwrap().value;
        let v_mul = mulsupcon(&batch, &labels, &cfg).unwrap().value;

        // Rotate image order by one; views follow their images.
        let perm: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
        let mut p_views = vec![Vec::new(); 2 * n];
        for img in 0..n {
            p_views[2 * perm[img]] = views[2 * img].clone();
            p_views[2 * perm[img] + 1] = views[2 * img + 1].clone();
        }
        let mut p_labels = labels.clone();
        let mut p_classes = classes.clone();
        for img in 0..n {
            p_labels[perm[img]] = labels[img].clone();
            p_classes[perm[img]] = classes[img];
        }
        let p_image_of: Vec<usize> = (0..2 * n).map(|v| v / 2).collect();
        let p_batch = EmbeddingBatch::new(Mat::from_rows(&p_views), p_image_of).unwrap();

        assert!((info_nce(&p_batch, 0.2).unwrap().value - v_nce).abs() < 1e-9);
        assert!((supcon(&p_batch, &p_classes, 0.2).unwrap().value - v_sup).abs() < 1e-9);
        assert!((mulsupcon(&p_batch, &p_labels, &cfg).unwrap().value - v_mul).abs() < 1e-9);
    }
}

/// Rotating every embedding by one orthogonal matrix preserves all dot
/// products, so the loss values must be unchanged.
#[test]
fn losses_are_rotation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    for trial in 0..10 {
        let n = 2 + trial % 3;
        let d = 5;
        let (views, image_of, labels) = random_batch(&mut rng, n, d);
        let cfg = LossConfig {
            temperature: 0.07,
            threshold: 0.3,
        };
        let batch = EmbeddingBatch::new(Mat::from_rows(&views), image_of.clone()).unwrap();
        let before = mulsupcon(&batch, &labels, &cfg).unwrap().value;

        // Random orthogonal map as a product of Givens rotations.
        let mut rotated = views.clone();
        for _ in 0..2 * d {
            let i = rng.random_range(0..d);
            let mut j = rng.random_range(0..d - 1);
            if j >= i {
                j += 1;
            }
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (s, c) = theta.sin_cos();
            for row in &mut rotated {
                let (xi, xj) = (row[i], row[j]);
                row[i] = c * xi - s * xj;
                row[j] = s * xi + c * xj;
            }
        }
        let r_batch = EmbeddingBatch::new(Mat::from_rows(&rotated), image_of).unwrap();
        let after = mulsupcon(&r_batch, &labels, &cfg).unwrap().value;
        assert!(
            (before - after).abs() < 1e-7,
            "trial {trial}: {before} vs {after}"
        );
    }
}

/// One SGD step along the negative gradient must strictly decrease the local
/// linearization of the loss, and (for a small rate) the actual loss.
#[test]
fn sgd_step_descends() {
    use mulsupcon::encoder::{EncoderConfig, EncoderModel};
    use mulsupcon::optim::Sgd;

    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let arch = EncoderConfig {
        layer_dims: vec![4, 6, 3],
        head_dims: None,
    };
    let model = EncoderModel::new(&arch, 5).unwrap();
    let n = 3;
    let inputs: Vec<Vec<f64>> = (0..2 * n)
        .map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let image_of: Vec<usize> = (0..2 * n).map(|v| v / 2).collect();

    let loss_of = |m: &EncoderModel| -> f64 {
        let mut rows = Mat::zeros(2 * n, m.output_dim());
        for (v, x) in inputs.iter().enumerate() {
            rows.row_mut(v).copy_from_slice(&m.embed(x).unwrap());
        }
        let b = EmbeddingBatch::new(rows, image_of.clone()).unwrap();
        info_nce(&b, 0.2).unwrap().value
    };

    // Analytic parameter gradient.
    let mut rows = Mat::zeros(2 * n, model.output_dim());
    let mut caches = Vec::new();
    for (v, x) in inputs.iter().enumerate() {
        let (z, cache) = model.forward(x).unwrap();
        rows.row_mut(v).copy_from_slice(&z);
        caches.push(cache);
    }
    let batch = EmbeddingBatch::new(rows, image_of.clone()).unwrap();
    let result = info_nce(&batch, 0.2).unwrap();
    let mut grads = vec![0.0; model.num_params()];
    for (v, cache) in caches.iter().enumerate() {
        let g = model.backward(cache, result.grad.row(v)).unwrap();
        for (acc, gi) in grads.iter_mut().zip(&g.params) {
            *acc += gi;
        }
    }
    let grad_norm2: f64 = grads.iter().map(|g| g * g).sum();
    assert!(grad_norm2 > 0.0, "need a nonzero gradient");

    let before = loss_of(&model);
    let mut params = model.flat_params();
    let mut opt = Sgd::new(1e-3, 0.0, 0.0, params.len());
    opt.step(&mut params, &grads).unwrap();

    // Directional derivative of the linearized loss along the step.
    let step: Vec<f64> = params
        .iter()
        .zip(model.flat_params())
        .map(|(&p_new, p_old)| p_new - p_old)
        .collect();
    let directional: f64 = step.iter().zip(&grads).map(|(s, g)| s * g).sum();
    assert!(directional < 0.0, "step must oppose the gradient");

    let mut stepped = model.clone();
    stepped.set_flat_params(&params).unwrap();
    let after = loss_of(&stepped);
    assert!(after < before, "loss must decrease: {before} -> {after}");
}

/// Downstream training is bit-deterministic in its seed.
#[test]
fn downstream_training_is_deterministic() {
    use mulsupcon::train::{
        finetune, linear_probe, pretrain, DownstreamConfig, EncoderArch, Initialization,
        LabeledDataset, PretrainConfig, PretrainDataset, PretrainMethod, Regime,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let features: Vec<Vec<f64>> = (0..24)
        .map(|_| (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let corpus = PretrainDataset::new(features.clone(), None, None).unwrap();
    let mut pcfg = PretrainConfig::new(PretrainMethod::InfoNce, 2, 9);
    pcfg.batch_size = 8;
    pcfg.arch = EncoderArch {
        hidden_dims: vec![8],
        embed_dim: 4,
        projection_head: true,
    };
    let (ckpt, _) = pretrain(&corpus, &pcfg).unwrap();

    let labels: Vec<u8> = (0..24).map(|i| (i % 2) as u8).collect();
    let task = LabeledDataset::new(features, labels).unwrap();
    let dcfg = DownstreamConfig::new(Regime::Finetune, 31);

    let (m1, h1) = finetune(Initialization::Pretrained(&ckpt), &task, &dcfg).unwrap();
    let (m2, h2) = finetune(Initialization::Pretrained(&ckpt), &task, &dcfg).unwrap();
    assert_eq!(m1.flat_params(), m2.flat_params());
    assert_eq!(h1, h2);

    let pcfg2 = DownstreamConfig::new(Regime::LinearProbe, 31);
    let p1 = linear_probe(&ckpt, &task, &pcfg2).unwrap();
    let p2 = linear_probe(&ckpt, &task, &pcfg2).unwrap();
    assert_eq!(p1, p2);
}
