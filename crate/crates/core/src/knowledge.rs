//! Local retrieval knowledge base: corpus loading, keyword filtering,
//! overlapping character chunks, and a flat-file cosine top-k index.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::text_embed::TextEmbedder;
use crate::{Error, Result};

pub const DEFAULT_CHUNK_SIZE: usize = 1000;
pub const DEFAULT_OVERLAP: usize = 200;
pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_KEYWORDS: [&str; 4] = ["glioma", "oligodendroglioma", "astrocytoma", "IDH"];

pub fn default_keywords() -> Vec<String> {
    DEFAULT_KEYWORDS.iter().map(|k| k.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub title: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
}

pub fn chunk_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#{ordinal:04}")
}

/// Reads every `.txt` / `.md` file in `dir` (sorted by name). The first
/// non-blank line is the title, the remainder the body; the file stem is the id.
pub fn load_corpus(dir: &Path) -> Result<Vec<Document>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("txt" | "md")))
        .collect();
    paths.sort();
    let mut docs = Vec::with_capacity(paths.len());
    for path in paths {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines().skip_while(|l| l.trim().is_empty());
        let title = lines
            .next()
            .unwrap_or_default()
            .trim()
            .trim_start_matches('#')
            .trim()
            .to_string();
        let body = lines.collect::<Vec<_>>().join("\n").trim().to_string();
        if body.is_empty() {
            warn!(path = %path.display(), "skipping document with empty body");
            continue;
        }
        let doc_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        docs.push(Document {
            doc_id,
            title,
            body,
        });
    }
    Ok(docs)
}

/// Keeps documents whose title or body contains any keyword, case-insensitively.
pub fn filter_corpus(docs: &[Document], keywords: &[String]) -> Vec<Document> {
    let needles: Vec<String> = keywords
        .iter()
        .map(|k| k.trim().to_lowercase())
        .filter(|k| !k.is_empty())
        .collect();
    docs.iter()
        .filter(|d| {
            let hay = format!("{}\n{}", d.title, d.body).to_lowercase();
            needles.iter().any(|k| hay.contains(k.as_str()))
        })
        .cloned()
        .collect()
}

/// Splits the body into windows of `chunk_size` characters starting every
/// `chunk_size - overlap` characters. A body no longer than one window is a
/// single chunk.
pub fn chunk_document(doc: &Document, chunk_size: usize, overlap: usize) -> Result<Vec<Chunk>> {
    if chunk_size == 0 || overlap >= chunk_size {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= overlap < chunk_size, got overlap {overlap}, chunk_size {chunk_size}"
        )));
    }
    let chars: Vec<char> = doc.body.chars().collect();
    let make = |ordinal: usize, start: usize| {
        let end = (start + chunk_size).min(chars.len());
        Chunk {
            chunk_id: chunk_id(&doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            text: chars[start..end].iter().collect(),
            vector: None,
        }
    };
    if chars.len() <= chunk_size {
        return Ok(vec![make(0, 0)]);
    }
    let step = chunk_size - overlap;
    Ok((0..chars.len())
        .step_by(step)
        .enumerate()
        .map(|(i, start)| make(i, start))
        .collect())
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub title: String,
    pub score: f64,
}

/// In-memory vector index persisted as a single JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeIndex {
    pub embedder: String,
    pub dimension: usize,
    pub chunks: Vec<IndexedChunk>,
}

impl KnowledgeIndex {
    pub fn build(chunks: &[Chunk], embedder: &dyn TextEmbedder) -> Result<Self> {
        let mut indexed = Vec::with_capacity(chunks.len());
        for c in chunks {
            let vector = embedder
                .embed_texts(&[c.text.as_str()])
                .and_then(|mut v| v.pop().ok_or_else(|| Error::Backend("no vector".into())))
                .map_err(|e| Error::Embedding {
                    ids: vec![c.chunk_id.clone()],
                    message: e.to_string(),
                })?;
            if vector.len() != embedder.dimension() {
                return Err(Error::Dimension {
                    expected: embedder.dimension(),
                    got: vector.len(),
                });
            }
            indexed.push(IndexedChunk {
                chunk_id: c.chunk_id.clone(),
                doc_id: c.doc_id.clone(),
                title: c.title.clone(),
                text: c.text.clone(),
                vector,
            });
        }
        Ok(KnowledgeIndex {
            embedder: embedder.descriptor(),
            dimension: embedder.dimension(),
            chunks: indexed,
        })
    }

    /// Filters, chunks and indexes a corpus in one go.
    pub fn from_corpus(
        docs: &[Document],
        keywords: &[String],
        chunk_size: usize,
        overlap: usize,
        embedder: &dyn TextEmbedder,
    ) -> Result<Self> {
        let mut chunks = Vec::new();
        for doc in filter_corpus(docs, keywords) {
            chunks.extend(chunk_document(&doc, chunk_size, overlap)?);
        }
        KnowledgeIndex::build(&chunks, embedder)
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string(self).expect("index serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index: KnowledgeIndex = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if let Some(bad) = index.chunks.iter().find(|c| c.vector.len() != index.dimension) {
            return Err(Error::Validation(format!(
                "chunk {} has dimension {} in a {}-d index",
                bad.chunk_id,
                bad.vector.len(),
                index.dimension
            )));
        }
        Ok(index)
    }

    /// Top-k by cosine similarity, descending, ties by ascending chunk id.
    pub fn search_vector(&self, query: &[f64], k: usize) -> Result<Vec<RetrievedChunk>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if self.is_empty() {
            warn!("retrieval against an empty index");
            return Ok(Vec::new());
        }
        if query.len() != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                got: query.len(),
            });
        }
        let mut scored: Vec<(f64, &IndexedChunk)> = self
            .chunks
            .iter()
            .map(|c| (cosine_similarity(query, &c.vector), c))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.1.chunk_id.cmp(&b.1.chunk_id))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(score, c)| RetrievedChunk {
                chunk_id: c.chunk_id.clone(),
                doc_id: c.doc_id.clone(),
                title: c.title.clone(),
                score,
            })
            .collect())
    }

    pub fn retrieve(
        &self,
        embedder: &dyn TextEmbedder,
        query: &str,
        k: usize,
    ) -> Result<Vec<RetrievedChunk>> {
        if self.is_empty() {
            warn!("retrieval against an empty index");
            return Ok(Vec::new());
        }
        let q = embedder
            .embed_texts(&[query])?
            .pop()
            .ok_or_else(|| Error::Backend("embedder returned no vector".into()))?;
        self.search_vector(&q, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text_embed::HashedEmbedder;

    fn doc(id: &str, title: &str, body: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: title.into(),
            body: body.into(),
        }
    }

    #[test]
    fn filter_keeps_matching_documents_in_order() {
        let docs = vec![
            doc("a", "Heart failure", "cardiology guideline on arrhythmia"),
            doc("b", "Brain tumours", "Management of OLIGODENDROGLIOMA in adults"),
            doc("c", "Glioma grading", "WHO criteria"),
        ];
        let kw = vec!["glioma".to_string(), "oligodendroglioma".to_string()];
        let kept = filter_corpus(&docs, &kw);
        assert_eq!(
            kept.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>(),
            vec!["b", "c"]
        );
        assert_eq!(filter_corpus(&kept, &kw), kept);
    }

    #[test]
    fn filter_planted_fixture() {
        let docs: Vec<Document> = (0..10)
            .map(|i| {
                let body = if [1, 4, 6, 9].contains(&i) {
                    format!("document {i} discusses glioma treatment")
                } else {
                    format!("document {i} discusses renal function")
                };
                doc(&format!("d{i}"), &format!("Doc {i}"), &body)
            })
            .collect();
        let kept = filter_corpus(&docs, &default_keywords());
        assert_eq!(
            kept.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>(),
            vec!["d1", "d4", "d6", "d9"]
        );
    }

    #[test]
    fn chunk_offsets() {
        let body: String = (0..2500).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let d = doc("g", "t", &body);
        let chunks = chunk_document(&d, 1000, 200).unwrap();
        assert_eq!(chunks.len(), 4);
        for (c, start) in chunks.iter().zip([0usize, 800, 1600, 2400]) {
            let end = (start + 1000).min(2500);
            assert_eq!(c.text, &body[start..end]);
        }
        assert_eq!(chunks[0].chunk_id, "g#0000");
        assert_eq!(chunks[3].chunk_id, "g#0003");
    }

    #[test]
    fn chunk_short_body_and_bad_overlap() {
        let d = doc("s", "t", "short body");
        let chunks = chunk_document(&d, 1000, 200).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, "short body");
        assert!(chunk_document(&d, 1000, 1000).is_err());
        assert!(chunk_document(&d, 0, 0).is_err());
    }

    fn reconstruct(chunks: &[Chunk], overlap: usize) -> String {
        let mut out = String::new();
        for (i, c) in chunks.iter().enumerate() {
            let skip = if i == 0 { 0 } else { overlap };
            out.extend(c.text.chars().skip(skip));
        }
        out
    }

    proptest::proptest! {
        #[test]
        fn chunks_cover_body(len in 1usize..600, size in 2usize..120, ov_frac in 0.0f64..1.0) {
            let overlap = ((size as f64) * ov_frac) as usize % size;
            let body: String = (0..len).map(|i| if i % 7 == 0 { 'é' } else { 'x' }).collect();
            let chunks = chunk_document(&doc("p", "t", &body), size, overlap).unwrap();
            proptest::prop_assert_eq!(reconstruct(&chunks, overlap), body.clone());
            // Full windows share exactly `overlap` chars with their successor.
            for w in chunks.windows(2) {
                let a: Vec<char> = w[0].text.chars().collect();
                let b: Vec<char> = w[1].text.chars().collect();
                if a.len() == size && b.len() >= overlap {
                    proptest::prop_assert_eq!(&a[a.len() - overlap..], &b[..overlap]);
                }
            }
            for c in &chunks {
                proptest::prop_assert!(c.text.chars().count() <= size);
            }
        }
    }

    fn manual_index(vectors: &[(&str, Vec<f64>)]) -> KnowledgeIndex {
        KnowledgeIndex {
            embedder: "manual".into(),
            dimension: vectors[0].1.len(),
            chunks: vectors
                .iter()
                .map(|(id, v)| IndexedChunk {
                    chunk_id: id.to_string(),
                    doc_id: id.to_string(),
                    title: id.to_string(),
                    text: String::new(),
                    vector: v.clone(),
                })
                .collect(),
        }
    }

    #[test]
    fn identical_vector_scores_one() {
        let idx = manual_index(&[
            ("a", vec![1.0, 0.0, 0.0]),
            ("b", vec![0.3, 0.4, 0.5]),
            ("c", vec![0.0, 1.0, 0.0]),
        ]);
        let hits = idx.search_vector(&[0.3, 0.4, 0.5], 3).unwrap();
        assert_eq!(hits[0].chunk_id, "b");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_query_scores_zero_and_ties_by_id() {
        let idx = manual_index(&[("z", vec![1.0, 0.0, 0.0]), ("a", vec![0.0, 1.0, 0.0])]);
        let hits = idx.search_vector(&[0.0, 0.0, 1.0], 5).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| h.score == 0.0));
        assert_eq!(hits[0].chunk_id, "a");
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = KnowledgeIndex {
            embedder: "x".into(),
            dimension: 4,
            chunks: vec![],
        };
        assert!(idx.search_vector(&[1.0; 4], 3).unwrap().is_empty());
        let e = HashedEmbedder::new(8, 10);
        assert!(idx.retrieve(&e, "q", 5).unwrap().is_empty());
    }

    #[test]
    fn planted_chunk_ranks_first() {
        let e = HashedEmbedder::new(768, 8192);
        let mut docs: Vec<Document> = (0..9)
            .map(|i| {
                doc(
                    &format!("decoy{i}"),
                    "Decoy",
                    &format!("renal dialysis schedule number {i} for outpatient clinics"),
                )
            })
            .collect();
        docs.push(doc(
            "planted",
            "Glioma",
            "IDH1 status informs glioma prognosis",
        ));
        let chunks: Vec<Chunk> = docs
            .iter()
            .flat_map(|d| chunk_document(d, 1000, 200).unwrap())
            .collect();
        let idx = KnowledgeIndex::build(&chunks, &e).unwrap();
        let query = "IDH1 glioma prognosis";
        let hits = idx.retrieve(&e, query, 10).unwrap();
        assert_eq!(hits[0].doc_id, "planted");

        // Brute force over all ten stored vectors.
        let q = e.embed_one(query).unwrap();
        let best = idx
            .chunks
            .iter()
            .max_by(|a, b| {
                cosine_similarity(&q, &a.vector)
                    .partial_cmp(&cosine_similarity(&q, &b.vector))
                    .unwrap()
            })
            .unwrap();
        assert_eq!(best.chunk_id, hits[0].chunk_id);
        for w in hits.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn index_persists_and_rebuilds_identically() {
        let e = HashedEmbedder::new(64, 100);
        let docs = vec![
            doc("a", "Glioma", "IDH mutant astrocytoma outcomes"),
            doc("b", "Glioma", "oligodendroglioma codeletion"),
        ];
        let kw = default_keywords();
        let idx = KnowledgeIndex::from_corpus(&docs, &kw, 1000, 200, &e).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        idx.save(&path).unwrap();
        let back = KnowledgeIndex::load(&path).unwrap();
        assert_eq!(back, idx);
        let again = KnowledgeIndex::from_corpus(&docs, &kw, 1000, 200, &e).unwrap();
        assert_eq!(
            again.retrieve(&e, "astrocytoma", 2).unwrap(),
            back.retrieve(&e, "astrocytoma", 2).unwrap()
        );
    }
}
