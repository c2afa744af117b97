//! Dataset manifests: a line-oriented tab-delimited text format with a
//! vocabulary header.
//!
//! ```text
//! #modalities<TAB>CT<TAB>MR<TAB>US
//! #anatomies<TAB>knee<TAB>breast<TAB>thyroid
//! <id><TAB><modality><TAB><anatomy><TAB><class_id|-><TAB><task_label|-><TAB><features...>
//! ```
//!
//! Features are either inline floats or a single `@path` token pointing at a
//! feature blob (length-prefixed little-endian f64 array, resolved relative
//! to the manifest). Floats are written in shortest round-trip form, so
//! save/load is field-exact.

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::label::{LabelError, MetadataVocabulary, MultiHotLabel};
use crate::synth::{cap_per_class, SyntheticCorpus};
use crate::train::{LabeledDataset, PretrainDataset, TrainError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown {kind} name `{name}`")]
    UnknownName {
        line: usize,
        kind: &'static str,
        name: String,
    },
    #[error("line {line}: feature dimension {got}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("row `{id}` lacks a class_id")]
    MissingClassId { id: String },
    #[error("row `{id}` lacks a task_label")]
    MissingTaskLabel { id: String },
    #[error("feature blob {path}: {msg}")]
    BadBlob { path: PathBuf, msg: String },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub modality: String,
    pub anatomy: String,
    pub class_id: Option<usize>,
    pub task_label: Option<u8>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    vocab: MetadataVocabulary,
    rows: Vec<ManifestRow>,
    dim: usize,
}

impl Manifest {
    /// Validates ids, vocabulary membership, and feature-dimension uniformity
    /// (inferred from the first row).
    pub fn new(vocab: MetadataVocabulary, rows: Vec<ManifestRow>) -> Result<Self, DataError> {
        let dim = rows.first().map_or(0, |r| r.features.len());
        let mut seen = HashSet::new();
        for (i, row) in rows.iter().enumerate() {
            let line = i + 1;
            if !seen.insert(row.id.clone()) {
                return Err(DataError::DuplicateId {
                    line,
                    id: row.id.clone(),
                });
            }
            if vocab.modality_index(&row.modality).is_none() {
                return Err(DataError::UnknownName {
                    line,
                    kind: "modality",
                    name: row.modality.clone(),
                });
            }
            if vocab.anatomy_index(&row.anatomy).is_none() {
                return Err(DataError::UnknownName {
                    line,
                    kind: "anatomy",
                    name: row.anatomy.clone(),
                });
            }
            if row.features.len() != dim {
                return Err(DataError::DimensionMismatch {
                    line,
                    expected: dim,
                    got: row.features.len(),
                });
            }
            if let Some(bad) = row.features.iter().find(|f| !f.is_finite()) {
                return Err(DataError::Parse {
                    line,
                    msg: format!("non-finite feature value {bad}"),
                });
            }
        }
        Ok(Self { vocab, rows, dim })
    }

    pub fn vocab(&self) -> &MetadataVocabulary {
        &self.vocab
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent())
    }

    /// Parse manifest text. `base` resolves `@path` feature blobs; passing
    /// `None` makes blob references a parse error.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, DataError> {
        let mut modalities: Option<Vec<String>> = None;
        let mut anatomies: Option<Vec<String>> = None;
        let mut raw_rows: Vec<(usize, ManifestRow)> = Vec::new();

        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split('\t');
                match parts.next() {
                    Some("modalities") => {
                        modalities = Some(parts.map(str::to_string).collect());
                    }
                    Some("anatomies") => {
                        anatomies = Some(parts.map(str::to_string).collect());
                    }
                    other => {
                        return Err(DataError::Parse {
                            line: lineno,
                            msg: format!("unknown header directive `{}`", other.unwrap_or("")),
                        });
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 6 {
                return Err(DataError::Parse {
                    line: lineno,
                    msg: format!("expected at least 6 tab-separated fields, got {}", fields.len()),
                });
            }
            let class_id = parse_optional(fields[3], lineno, "class_id")?;
            let task_label = match parse_optional::<u8>(fields[4], lineno, "task_label")? {
                Some(v) if v > 1 => {
                    return Err(DataError::Parse {
                        line: lineno,
                        msg: format!("task_label must be 0 or 1, got {v}"),
                    });
                }
                other => other,
            };
            let features = if let Some(rel) = fields[5].strip_prefix('@') {
                if fields.len() != 6 {
                    return Err(DataError::Parse {
                        line: lineno,
                        msg: "blob reference must be the sole feature field".into(),
                    });
                }
                let Some(base) = base else {
                    return Err(DataError::Parse {
                        line: lineno,
                        msg: "blob references need a base directory to resolve against".into(),
                    });
                };
                read_feature_blob(&base.join(rel))?
            } else {
                let mut feats = Vec::with_capacity(fields.len() - 5);
                for f in &fields[5..] {
                    feats.push(f.parse::<f64>().map_err(|_| DataError::Parse {
                        line: lineno,
                        msg: format!("bad feature value `{f}`"),
                    })?);
                }
                feats
            };
            raw_rows.push((
                lineno,
                ManifestRow {
                    id: fields[0].to_string(),
                    modality: fields[1].to_string(),
                    anatomy: fields[2].to_string(),
                    class_id,
                    task_label,
                    features,
                },
            ));
        }

        let modalities = modalities.ok_or(DataError::Parse {
            line: 0,
            msg: "missing #modalities header".into(),
        })?;
        let anatomies = anatomies.ok_or(DataError::Parse {
            line: 0,
            msg: "missing #anatomies header".into(),
        })?;
        let vocab = MetadataVocabulary::new(modalities, anatomies)?;

        // Re-validate with real line numbers for precise diagnostics.
        let dim = raw_rows.first().map_or(0, |(_, r)| r.features.len());
        let mut seen = HashSet::new();
        for (line, row) in &raw_rows {
            if !seen.insert(row.id.clone()) {
                return Err(DataError::DuplicateId {
                    line: *line,
                    id: row.id.clone(),
                });
            }
            if vocab.modality_index(&row.modality).is_none() {
                return Err(DataError::UnknownName {
                    line: *line,
                    kind: "modality",
                    name: row.modality.clone(),
                });
            }
            if vocab.anatomy_index(&row.anatomy).is_none() {
                return Err(DataError::UnknownName {
                    line: *line,
                    kind: "anatomy",
                    name: row.anatomy.clone(),
                });
            }
            if row.features.len() != dim {
                return Err(DataError::DimensionMismatch {
                    line: *line,
                    expected: dim,
                    got: row.features.len(),
                });
            }
            if let Some(bad) = row.features.iter().find(|f| !f.is_finite()) {
                return Err(DataError::Parse {
                    line: *line,
                    msg: format!("non-finite feature value {bad}"),
                });
            }
        }
        Ok(Self {
            vocab,
            rows: raw_rows.into_iter().map(|(_, r)| r).collect(),
            dim,
        })
    }

    /// Serialize with inline features in shortest round-trip form.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("#modalities");
        for m in self.vocab.modalities() {
            out.push('\t');
            out.push_str(m);
        }
        out.push('\n');
        out.push_str("#anatomies");
        for a in self.vocab.anatomies() {
            out.push('\t');
            out.push_str(a);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.id);
            out.push('\t');
            out.push_str(&row.modality);
            out.push('\t');
            out.push_str(&row.anatomy);
            out.push('\t');
            match row.class_id {
                Some(c) => out.push_str(&c.to_string()),
                None => out.push('-'),
            }
            out.push('\t');
            match row.task_label {
                Some(l) => out.push_str(&l.to_string()),
                None => out.push('-'),
            }
            for f in &row.features {
                out.push('\t');
                out.push_str(&format!("{f}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.render()).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Pretraining view: multi-hot labels from the vocabulary for every row;
    /// class ids attached when every row carries one.
    pub fn to_pretrain_dataset(&self) -> Result<PretrainDataset, DataError> {
        let mut features = Vec::with_capacity(self.rows.len());
        let mut labels = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            features.push(row.features.clone());
            labels.push(MultiHotLabel::encode(
                &row.modality,
                &row.anatomy,
                &self.vocab,
            )?);
        }
        let class_ids = if self.rows.iter().all(|r| r.class_id.is_some()) {
            Some(self.rows.iter().map(|r| r.class_id.unwrap()).collect())
        } else {
            None
        };
        Ok(PretrainDataset::new(features, Some(labels), class_ids)?)
    }

    /// Downstream view: every row must carry a task label.
    pub fn to_task_dataset(&self) -> Result<LabeledDataset, DataError> {
        let mut features = Vec::with_capacity(self.rows.len());
        let mut labels = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let Some(l) = row.task_label else {
                return Err(DataError::MissingTaskLabel { id: row.id.clone() });
            };
            features.push(row.features.clone());
            labels.push(l);
        }
        Ok(LabeledDataset::new(features, labels)?)
    }

    /// Retain at most `cap` rows per class, uniformly sampled and seeded;
    /// all rows must carry a class id.
    pub fn cap_per_class(&self, cap: usize, seed: u64) -> Result<Manifest, DataError> {
        let mut class_ids = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            match row.class_id {
                Some(c) => class_ids.push(c),
                None => return Err(DataError::MissingClassId { id: row.id.clone() }),
            }
        }
        let kept = cap_per_class(&class_ids, cap, seed);
        let rows = kept.iter().map(|&i| self.rows[i].clone()).collect();
        Manifest::new(self.vocab.clone(), rows)
    }
}

fn parse_optional<T: std::str::FromStr>(
    field: &str,
    line: usize,
    name: &str,
) -> Result<Option<T>, DataError> {
    if field == "-" {
        return Ok(None);
    }
    field.parse::<T>().map(Some).map_err(|_| DataError::Parse {
        line,
        msg: format!("bad {name} value `{field}`"),
    })
}

/// Feature blob: u64 little-endian count followed by count f64 values.
pub fn write_feature_blob(path: &Path, values: &[f64]) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(8 + values.len() * 8);
    bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(&bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_feature_blob(path: &Path) -> Result<Vec<f64>, DataError> {
    let mut f = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 8 {
        return Err(DataError::BadBlob {
            path: path.to_path_buf(),
            msg: "missing length prefix".into(),
        });
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + count * 8 {
        return Err(DataError::BadBlob {
            path: path.to_path_buf(),
            msg: format!(
                "length prefix says {count} values but file holds {} bytes",
                bytes.len()
            ),
        });
    }
    Ok(bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Manifest for the synthetic pretraining corpus (class id = cell index).
pub fn manifest_from_pretrain(corpus: &SyntheticCorpus) -> Result<Manifest, DataError> {
    let n_anat = corpus.vocab.anatomies().len();
    let rows = corpus
        .pretrain
        .features()
        .iter()
        .zip(&corpus.cell_of)
        .enumerate()
        .map(|(i, (features, &cell))| ManifestRow {
            id: format!("s{i:06}"),
            modality: corpus.vocab.modalities()[cell / n_anat].clone(),
            anatomy: corpus.vocab.anatomies()[cell % n_anat].clone(),
            class_id: Some(cell),
            task_label: None,
            features: features.clone(),
        })
        .collect();
    Manifest::new(corpus.vocab.clone(), rows)
}

/// Manifest for the synthetic downstream task (rows carry the designated
/// cell's metadata and the binary task label).
pub fn manifest_from_task(corpus: &SyntheticCorpus) -> Result<Manifest, DataError> {
    let (m, a) = corpus.designated_cell;
    let modality = corpus.vocab.modalities()[m].clone();
    let anatomy = corpus.vocab.anatomies()[a].clone();
    let rows = corpus
        .downstream
        .features()
        .iter()
        .zip(corpus.downstream.labels())
        .enumerate()
        .map(|(i, (features, &label))| ManifestRow {
            id: format!("t{i:06}"),
            modality: modality.clone(),
            anatomy: anatomy.clone(),
            class_id: None,
            task_label: Some(label),
            features: features.clone(),
        })
        .collect();
    Manifest::new(corpus.vocab.clone(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "#modalities\tCT\tMR\n#anatomies\tknee\tbreast\n\
        a\tCT\tknee\t0\t-\t0.5\t-1.25\n\
        b\tMR\tknee\t1\t0\t0.125\t3\n\
        c\tMR\tbreast\t-\t1\t-0.75\t0.1\n";

    #[test]
    fn parse_happy_path() {
        let m = Manifest::parse(SAMPLE, None).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.dim(), 2);
        assert_eq!(m.rows()[0].class_id, Some(0));
        assert_eq!(m.rows()[0].task_label, None);
        assert_eq!(m.rows()[2].task_label, Some(1));
        assert_eq!(m.rows()[1].features, vec![0.125, 3.0]);
    }

    #[test]
    fn round_trip_is_field_exact() {
        let m = Manifest::parse(SAMPLE, None).unwrap();
        let rendered = m.render();
        let reparsed = Manifest::parse(&rendered, None).unwrap();
        assert_eq!(m, reparsed);
    }

    #[test]
    fn round_trip_survives_awkward_floats() {
        let vocab = MetadataVocabulary::new(vec!["CT"], vec!["knee"]).unwrap();
        let rows = vec![ManifestRow {
            id: "x".into(),
            modality: "CT".into(),
            anatomy: "knee".into(),
            class_id: None,
            task_label: None,
            features: vec![0.1 + 0.2, 1.0 / 3.0, f64::MIN_POSITIVE, -0.0],
        }];
        let m = Manifest::new(vocab, rows).unwrap();
        let reparsed = Manifest::parse(&m.render(), None).unwrap();
        for (a, b) in m.rows()[0].features.iter().zip(&reparsed.rows()[0].features) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn unknown_modality_reports_line() {
        let text = "#modalities\tCT\n#anatomies\tknee\nr1\tXR\tknee\t-\t-\t1.0\n";
        match Manifest::parse(text, None) {
            Err(DataError::UnknownName { line, kind, name }) => {
                assert_eq!(line, 3);
                assert_eq!(kind, "modality");
                assert_eq!(name, "XR");
            }
            other => panic!("expected UnknownName, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_reports_line() {
        let text = "#modalities\tCT\n#anatomies\tknee\n\
            a\tCT\tknee\t-\t-\t1\t2\t3\n\
            b\tCT\tknee\t-\t-\t1\t2\n";
        match Manifest::parse(text, None) {
            Err(DataError::DimensionMismatch {
                line,
                expected,
                got,
            }) => {
                assert_eq!((line, expected, got), (4, 3, 2));
            }
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let text = "#modalities\tCT\n#anatomies\tknee\n\
            a\tCT\tknee\t-\t-\t1\n\
            a\tCT\tknee\t-\t-\t2\n";
        assert!(matches!(
            Manifest::parse(text, None),
            Err(DataError::DuplicateId { line: 4, .. })
        ));
    }

    #[test]
    fn blob_features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let blob = dir.path().join("row.f64");
        write_feature_blob(&blob, &[1.5, -2.25, 1.0 / 3.0]).unwrap();
        let text = "#modalities\tCT\n#anatomies\tknee\na\tCT\tknee\t-\t-\t@row.f64\n";
        let manifest_path = dir.path().join("data.tsv");
        fs::write(&manifest_path, text).unwrap();
        let m = Manifest::load(&manifest_path).unwrap();
        assert_eq!(m.rows()[0].features, vec![1.5, -2.25, 1.0 / 3.0]);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let blob = dir.path().join("bad.f64");
        fs::write(&blob, [9u8; 12]).unwrap();
        assert!(matches!(
            read_feature_blob(&blob),
            Err(DataError::BadBlob { .. })
        ));
    }

    #[test]
    fn task_dataset_requires_labels() {
        let m = Manifest::parse(SAMPLE, None).unwrap();
        assert!(matches!(
            m.to_task_dataset(),
            Err(DataError::MissingTaskLabel { .. })
        ));
    }

    #[test]
    fn pretrain_dataset_attaches_class_ids_only_when_complete() {
        let m = Manifest::parse(SAMPLE, None).unwrap();
        let ds = m.to_pretrain_dataset().unwrap();
        assert!(ds.class_ids().is_none()); // row `c` lacks one
        assert!(ds.labels().is_some());
    }

    #[test]
    fn cap_per_class_requires_class_column() {
        let m = Manifest::parse(SAMPLE, None).unwrap();
        assert!(matches!(
            m.cap_per_class(100, 1),
            Err(DataError::MissingClassId { .. })
        ));
    }

    #[test]
    fn synthetic_manifests_convert_back_to_datasets() {
        use crate::synth::{generate_hierarchical_corpus, SynthConfig};
        let vocab = MetadataVocabulary::new(vec!["m0", "m1"], vec!["a0", "a1"]).unwrap();
        let mut cfg = SynthConfig::new(vocab, 3, 5);
        cfg.downstream_n = 20;
        let corpus = generate_hierarchical_corpus(&cfg).unwrap();

        let pm = manifest_from_pretrain(&corpus).unwrap();
        let ds = pm.to_pretrain_dataset().unwrap();
        assert_eq!(ds.len(), corpus.pretrain.len());
        assert_eq!(ds.class_ids().unwrap(), corpus.pretrain.class_ids().unwrap());
        assert_eq!(ds.labels().unwrap(), corpus.pretrain.labels().unwrap());

        let tm = manifest_from_task(&corpus).unwrap();
        let task = tm.to_task_dataset().unwrap();
        assert_eq!(task.labels(), corpus.downstream.labels());

        // Text round trip preserves features bit-for-bit.
        let reparsed = Manifest::parse(&pm.render(), None).unwrap();
        assert_eq!(pm, reparsed);
    }
}
