//! Multi-hot metadata labels and set-based label similarity.
//!
//! An image's (modality, anatomy) pair is encoded against an ordered
//! vocabulary as a binary vector: the modality one-hot block followed by the
//! anatomy one-hot block. Pair similarity is the Jaccard index of the active
//! bit sets, computed in integer arithmetic before a single division so that
//! threshold comparisons are exact.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("{0} vocabulary is empty")]
    EmptyVocabulary(&'static str),
    #[error("duplicate {kind} name `{name}` in vocabulary")]
    DuplicateName { kind: &'static str, name: String },
    #[error("unknown {kind} name `{name}`")]
    UnknownName { kind: &'static str, name: String },
    #[error("label has no active bits")]
    EmptyLabel,
}

/// Ordered modality and anatomy name lists; label dimension is their total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetadataVocabulary {
    modalities: Vec<String>,
    anatomies: Vec<String>,
}

impl MetadataVocabulary {
    pub fn new<S: Into<String>>(
        modalities: Vec<S>,
        anatomies: Vec<S>,
    ) -> Result<Self, LabelError> {
        let modalities: Vec<String> = modalities.into_iter().map(Into::into).collect();
        let anatomies: Vec<String> = anatomies.into_iter().map(Into::into).collect();
        if modalities.is_empty() {
            return Err(LabelError::EmptyVocabulary("modality"));
        }
        if anatomies.is_empty() {
            return Err(LabelError::EmptyVocabulary("anatomy"));
        }
        check_distinct("modality", &modalities)?;
        check_distinct("anatomy", &anatomies)?;
        Ok(Self {
            modalities,
            anatomies,
        })
    }

    pub fn modalities(&self) -> &[String] {
        &self.modalities
    }

    pub fn anatomies(&self) -> &[String] {
        &self.anatomies
    }

    /// Total label dimension `k`.
    pub fn dim(&self) -> usize {
        self.modalities.len() + self.anatomies.len()
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m == name)
    }

    pub fn anatomy_index(&self, name: &str) -> Option<usize> {
        self.anatomies.iter().position(|a| a == name)
    }
}

fn check_distinct(kind: &'static str, names: &[String]) -> Result<(), LabelError> {
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(LabelError::DuplicateName {
                kind,
                name: n.clone(),
            });
        }
    }
    Ok(())
}

/// Dense binary label vector with at least one active bit.
///
/// `encode` produces exactly one active bit per block; general multi-hot
/// vectors (any number of active bits) are accepted by the constructor so the
/// losses work for arbitrary binary targets. The all-zeros vector is rejected
/// here, which keeps the Jaccard similarity total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHotLabel {
    bits: Vec<bool>,
}

impl MultiHotLabel {
    pub fn new(bits: Vec<bool>) -> Result<Self, LabelError> {
        if !bits.iter().any(|&b| b) {
            return Err(LabelError::EmptyLabel);
        }
        Ok(Self { bits })
    }

    /// One-hot-per-block encoding of a (modality, anatomy) pair.
    pub fn encode(
        modality: &str,
        anatomy: &str,
        vocab: &MetadataVocabulary,
    ) -> Result<Self, LabelError> {
        let mi = vocab
            .modality_index(modality)
            .ok_or_else(|| LabelError::UnknownName {
                kind: "modality",
                name: modality.to_string(),
            })?;
        let ai = vocab
            .anatomy_index(anatomy)
            .ok_or_else(|| LabelError::UnknownName {
                kind: "anatomy",
                name: anatomy.to_string(),
            })?;
        let mut bits = vec![false; vocab.dim()];
        bits[mi] = true;
        bits[vocab.modalities().len() + ai] = true;
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Indices of active bits, ascending.
    pub fn active_set(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Jaccard similarity of the two active sets.
    ///
    /// Intersection and union are counted as integers; the only floating-point
    /// operation is the final division, so values like 1/3 are computed
    /// identically no matter how the labels were built.
    pub fn jaccard(&self, other: &Self) -> f64 {
        let mut inter: u64 = 0;
        let mut union: u64 = 0;
        let n = self.bits.len().max(other.bits.len());
        for i in 0..n {
            let a = *self.bits.get(i).unwrap_or(&false);
            let b = *other.bits.get(i).unwrap_or(&false);
            if a && b {
                inter += 1;
            }
            if a || b {
                union += 1;
            }
        }
        // union > 0: construction guarantees at least one active bit.
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> MetadataVocabulary {
        MetadataVocabulary::new(vec!["CT", "MR", "US"], vec!["knee", "breast", "thyroid"])
            .unwrap()
    }

    #[test]
    fn encode_is_one_hot_per_block() {
        let v = vocab();
        let l = MultiHotLabel::encode("MR", "knee", &v).unwrap();
        let as_u8: Vec<u8> = l.bits().iter().map(|&b| b as u8).collect();
        assert_eq!(as_u8, vec![0, 1, 0, 1, 0, 0]);

        let l = MultiHotLabel::encode("US", "thyroid", &v).unwrap();
        let as_u8: Vec<u8> = l.bits().iter().map(|&b| b as u8).collect();
        assert_eq!(as_u8, vec![0, 0, 1, 0, 0, 1]);
    }

    #[test]
    fn encode_rejects_unknown_names() {
        let v = vocab();
        assert_eq!(
            MultiHotLabel::encode("PET", "knee", &v),
            Err(LabelError::UnknownName {
                kind: "modality",
                name: "PET".into()
            })
        );
        assert!(matches!(
            MultiHotLabel::encode("CT", "lung", &v),
            Err(LabelError::UnknownName { kind: "anatomy", .. })
        ));
    }

    #[test]
    fn active_set_matches_bits() {
        let l = MultiHotLabel::new(vec![false, true, false, true, false, false]).unwrap();
        assert_eq!(l.active_set(), vec![1, 3]);
        let l = MultiHotLabel::new(vec![true, true, false, true, false, false]).unwrap();
        assert_eq!(l.active_set(), vec![0, 1, 3]);
    }

    #[test]
    fn all_zeros_rejected_at_construction() {
        assert_eq!(
            MultiHotLabel::new(vec![false; 4]),
            Err(LabelError::EmptyLabel)
        );
    }

    #[test]
    fn encode_recovers_vocab_indices() {
        let v = vocab();
        let l = MultiHotLabel::encode("US", "breast", &v).unwrap();
        assert_eq!(
            l.active_set(),
            vec![2, v.modalities().len() + 1] // modality index, offset anatomy index
        );
    }

    #[test]
    fn jaccard_examples() {
        let a = MultiHotLabel::new(vec![false, true, false, true, false, false]).unwrap();
        let b = MultiHotLabel::new(vec![false, true, false, true, false, false]).unwrap();
        assert_eq!(a.jaccard(&b), 1.0);

        let c = MultiHotLabel::new(vec![false, true, false, false, false, true]).unwrap();
        assert_eq!(a.jaccard(&c), 1.0 / 3.0);

        let d = MultiHotLabel::new(vec![false, false, true, false, false, true]).unwrap();
        assert_eq!(a.jaccard(&d), 0.0);
    }

    #[test]
    fn jaccard_of_encode_labels_is_zero_third_or_one() {
        let v = vocab();
        let mut seen = std::collections::BTreeSet::new();
        for m1 in v.modalities() {
            for a1 in v.anatomies() {
                for m2 in v.modalities() {
                    for a2 in v.anatomies() {
                        let l1 = MultiHotLabel::encode(m1, a1, &v).unwrap();
                        let l2 = MultiHotLabel::encode(m2, a2, &v).unwrap();
                        seen.insert((l1.jaccard(&l2) * 3.0).round() as i64);
                    }
                }
            }
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![0, 1, 3]);
    }

    #[test]
    fn vocabulary_validation() {
        assert!(matches!(
            MetadataVocabulary::new(Vec::<&str>::new(), vec!["knee"]),
            Err(LabelError::EmptyVocabulary("modality"))
        ));
        assert!(matches!(
            MetadataVocabulary::new(vec!["CT", "CT"], vec!["knee"]),
            Err(LabelError::DuplicateName { .. })
        ));
    }
}
