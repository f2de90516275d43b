//! Embedding vectors, z-score normalization, concatenation fusion and
//! line-delimited persistence.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Report,
    ClinicalText,
    OneHot,
    Slide,
    Fused,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modality::Report => "report",
            Modality::ClinicalText => "clinical_text",
            Modality::OneHot => "one_hot",
            Modality::Slide => "slide",
            Modality::Fused => "fused",
        };
        f.write_str(s)
    }
}

/// A non-empty vector of finite reals tagged with its owner id and modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub id: String,
    pub modality: Modality,
    pub vector: Vec<f64>,
}

impl Embedding {
    pub fn new(id: impl Into<String>, vector: Vec<f64>, modality: Modality) -> Result<Self> {
        let e = Embedding {
            id: id.into(),
            modality,
            vector,
        };
        e.check()?;
        Ok(e)
    }

    fn check(&self) -> Result<()> {
        if self.vector.is_empty() {
            return Err(Error::Validation(format!("embedding {} is empty", self.id)));
        }
        if let Some(pos) = self.vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "embedding {} has non-finite value at index {pos}",
                self.id
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Guard for zero-variance dimensions.
pub const STD_EPSILON: f64 = 1e-8;

/// Per-dimension population mean and std fitted on a set of embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fitted_on: BTreeSet<String>,
}

impl NormalizationStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes a raw vector in place.
    pub fn apply_in_place(&self, vector: &mut [f64]) -> Result<()> {
        if vector.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: vector.len(),
            });
        }
        for ((x, m), s) in vector.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s.max(STD_EPSILON);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("stats serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stats: NormalizationStats = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if stats.mean.len() != stats.std.len() || stats.std.iter().any(|s| *s < 0.0) {
            return Err(Error::Validation("malformed normalization stats".into()));
        }
        Ok(stats)
    }
}

pub fn fit_normalizer<'a>(
    embeddings: impl IntoIterator<Item = &'a Embedding>,
) -> Result<NormalizationStats> {
    let embeddings: Vec<&Embedding> = embeddings.into_iter().collect();
    let first = embeddings
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot fit normalizer on no embeddings".into()))?;
    let dim = first.dim();
    if let Some(bad) = embeddings.iter().find(|e| e.dim() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: bad.dim(),
        });
    }
    let n = embeddings.len() as f64;
    let mut mean = vec![0.0; dim];
    for e in &embeddings {
        for (m, x) in mean.iter_mut().zip(&e.vector) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for e in &embeddings {
        for ((v, x), m) in var.iter_mut().zip(&e.vector).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
    Ok(NormalizationStats {
        mean,
        std,
        fitted_on: embeddings.iter().map(|e| e.id.clone()).collect(),
    })
}

pub fn apply_normalizer(stats: &NormalizationStats, e: &Embedding) -> Result<Embedding> {
    let mut vector = e.vector.clone();
    stats.apply_in_place(&mut vector)?;
    Ok(Embedding {
        id: e.id.clone(),
        modality: e.modality,
        vector,
    })
}

/// Concatenates two embeddings of the same patient.
pub fn fuse_concat(a: &Embedding, b: &Embedding) -> Result<Embedding> {
    if a.id != b.id {
        return Err(Error::InvalidArgument(format!(
            "refusing to fuse embeddings of different ids {:?} and {:?}",
            a.id, b.id
        )));
    }
    let mut vector = Vec::with_capacity(a.dim() + b.dim());
    vector.extend_from_slice(&a.vector);
    vector.extend_from_slice(&b.vector);
    Ok(Embedding {
        id: a.id.clone(),
        modality: Modality::Fused,
        vector,
    })
}

pub fn parse_embeddings(text: &str, source: &str) -> Result<Vec<Embedding>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            file: source.to_string(),
            line: idx + 1,
            message,
        };
        let e: Embedding = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        e.check().map_err(|e| parse_err(e.to_string()))?;
        out.push(e);
    }
    Ok(out)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<Embedding>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, &path.display().to_string())
}

/// Writes one JSON record per line. Floats use shortest round-trip formatting.
pub fn save_embeddings(path: &Path, embeddings: &[Embedding]) -> Result<()> {
    let mut out = String::new();
    for e in embeddings {
        e.check()?;
        out.push_str(&serde_json::to_string(e).expect("embedding serializes"));
        out.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(id: &str, v: &[f64]) -> Embedding {
        Embedding::new(id, v.to_vec(), Modality::Report).unwrap()
    }

    #[test]
    fn fit_population_std() {
        let es = [emb("a", &[1.0]), emb("b", &[2.0]), emb("c", &[3.0])];
        let stats = fit_normalizer(&es).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert!((stats.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((stats.std[0] - 0.8165).abs() < 1e-4);
        assert_eq!(stats.fitted_on.len(), 3);

        let z = apply_normalizer(&stats, &emb("d", &[3.0])).unwrap();
        assert!((z.vector[0] - 1.2247).abs() < 1e-4);
        assert_eq!(z.modality, Modality::Report);
    }

    #[test]
    fn single_sample_has_zero_std() {
        let stats = fit_normalizer(&[emb("a", &[4.0, -1.0])]).unwrap();
        assert_eq!(stats.std, vec![0.0, 0.0]);
        let z = apply_normalizer(&stats, &emb("b", &[5.0, -1.0])).unwrap();
        assert!(z.vector.iter().all(|v| v.is_finite()));
        assert_eq!(z.vector[1], 0.0);
        assert_eq!(z.vector[0], 1.0 / STD_EPSILON);
    }

    #[test]
    fn mean_vector_maps_to_zero() {
        let es = [emb("a", &[1.0, 10.0]), emb("b", &[3.0, 20.0])];
        let stats = fit_normalizer(&es).unwrap();
        let z = apply_normalizer(&stats, &emb("m", &[2.0, 15.0])).unwrap();
        assert_eq!(z.vector, vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_errors() {
        assert!(fit_normalizer(&[emb("a", &[1.0, 2.0]), emb("b", &[1.0, 2.0, 3.0])]).is_err());
        assert!(fit_normalizer(std::iter::empty()).is_err());
        let stats = fit_normalizer(&[emb("a", &[1.0])]).unwrap();
        assert!(apply_normalizer(&stats, &emb("b", &[1.0, 2.0])).is_err());
    }

    #[test]
    fn fuse_concatenates_in_order() {
        let f = fuse_concat(&emb("p", &[5.0]), &emb("p", &[7.0])).unwrap();
        assert_eq!(f.vector, vec![5.0, 7.0]);
        assert_eq!(f.modality, Modality::Fused);
        let big = fuse_concat(&emb("p", &[0.5; 768]), &emb("p", &[0.25; 768])).unwrap();
        assert_eq!(big.dim(), 1536);
        assert!(fuse_concat(&emb("A", &[1.0]), &emb("B", &[1.0])).is_err());
    }

    #[test]
    fn non_finite_values_rejected() {
        assert!(Embedding::new("x", vec![f64::NAN], Modality::Slide).is_err());
        assert!(Embedding::new("x", vec![], Modality::Slide).is_err());
        let text = "{\"id\":\"a\",\"modality\":\"slide\",\"vector\":[1.0]}\n{\"id\":\"b\",\"modality\":\"slide\",\"vector\":[NaN]}\n";
        match parse_embeddings(text, "f").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        // Out-of-range literal overflows to infinity in some parsers; must still fail.
        let text = "{\"id\":\"a\",\"modality\":\"slide\",\"vector\":[1e400]}\n";
        assert!(parse_embeddings(text, "f").is_err());
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_embeddings(&path).unwrap().is_empty());
    }

    #[test]
    fn fuse_is_associative() {
        let a = emb("p", &[1.0, 2.0]);
        let b = emb("p", &[3.0]);
        let c = emb("p", &[4.0, 5.0, 6.0]);
        let left = fuse_concat(&fuse_concat(&a, &b).unwrap(), &c).unwrap();
        let right = fuse_concat(&a, &fuse_concat(&b, &c).unwrap()).unwrap();
        assert_eq!(left.vector, right.vector);
        assert_eq!(left.vector, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    proptest! {
        #[test]
        fn save_load_is_bit_exact(vals in proptest::collection::vec(
            proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..40), n in 1usize..4) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("e.jsonl");
            let es: Vec<Embedding> = (0..n)
                .map(|i| Embedding::new(format!("id{i}"), vals.clone(), Modality::Slide).unwrap())
                .collect();
            save_embeddings(&path, &es).unwrap();
            let back = load_embeddings(&path).unwrap();
            prop_assert_eq!(back.len(), es.len());
            for (x, y) in es.iter().zip(&back) {
                prop_assert_eq!(&x.id, &y.id);
                prop_assert_eq!(x.modality, y.modality);
                let xb: Vec<u64> = x.vector.iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.vector.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
            }
        }

        #[test]
        fn self_normalized_training_fold_is_standard(
            rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3), 2..30)
        ) {
            let es: Vec<Embedding> = rows.iter().enumerate()
                .map(|(i, r)| emb(&format!("r{i}"), r)).collect();
            let stats = fit_normalizer(&es).unwrap();
            let z: Vec<Embedding> = es.iter().map(|e| apply_normalizer(&stats, e).unwrap()).collect();
            let post = fit_normalizer(&z).unwrap();
            for d in 0..3 {
                prop_assert!(post.mean[d].abs() < 1e-9);
                if stats.std[d] > 1e-6 {
                    prop_assert!((post.std[d] - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
