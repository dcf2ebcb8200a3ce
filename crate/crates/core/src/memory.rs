//! Non-parametric retrieval memory over context embeddings.
//!
//! Search is an exact cosine-similarity scan. Results are ordered by
//! similarity descending, ties broken by the lexicographic key.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, MemoryError};
use crate::prompting::cache;
use crate::prompting::{ContextEmbedding, EmbeddingKey};

#[derive(Debug, Clone)]
pub struct RetrievalCorpus {
    entries: Vec<ContextEmbedding>,
    norms: Vec<f64>,
    keys: HashMap<EmbeddingKey, usize>,
    dim: usize,
    pub built_from: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub index: usize,
    pub key: EmbeddingKey,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub hits: Vec<Hit>,
    /// Fewer than K candidates were available.
    pub short: bool,
}

#[derive(Clone, Copy)]
pub struct RetrieveOptions<'a> {
    pub k: usize,
    pub exclude_self: bool,
    /// Candidate predicate, e.g. a time-aware date filter.
    pub filter: Option<&'a (dyn Fn(&EmbeddingKey) -> bool + Sync)>,
}

impl<'a> RetrieveOptions<'a> {
    pub fn new(k: usize, exclude_self: bool) -> Self {
        RetrieveOptions {
            k,
            exclude_self,
            filter: None,
        }
    }
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn cosine(a: &[f32], a_norm: f64, b: &[f32], b_norm: f64) -> f64 {
    let denom = a_norm * b_norm;
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// Heap entry; the greatest element is the current worst hit.
struct Candidate {
    similarity: f64,
    key: String,
    index: usize,
}

impl Candidate {
    fn rank(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then_with(|| self.key.cmp(&other.key))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.rank(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank(other)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub dim: usize,
    pub count: usize,
    pub built_from: String,
    pub metric: String,
}

impl RetrievalCorpus {
    pub fn build(embeddings: Vec<ContextEmbedding>, built_from: &str) -> Result<Self, MemoryError> {
        let dim = embeddings.first().ok_or(MemoryError::Empty)?.vector.len();
        let mut corpus = RetrievalCorpus {
            entries: Vec::with_capacity(embeddings.len()),
            norms: Vec::with_capacity(embeddings.len()),
            keys: HashMap::with_capacity(embeddings.len()),
            dim,
            built_from: built_from.to_string(),
        };
        corpus.append(embeddings)?;
        Ok(corpus)
    }

    /// Adds entries atomically: on any error the corpus is left unchanged.
    pub fn append(&mut self, new: Vec<ContextEmbedding>) -> Result<(), MemoryError> {
        let mut batch_keys = HashMap::new();
        for e in &new {
            if e.vector.len() != self.dim {
                return Err(MemoryError::WidthMismatch {
                    expected: self.dim,
                    got: e.vector.len(),
                });
            }
            if self.keys.contains_key(&e.key) || batch_keys.insert(e.key.clone(), ()).is_some() {
                return Err(MemoryError::DuplicateKey(e.key.to_string()));
            }
        }
        for e in new {
            self.keys.insert(e.key.clone(), self.entries.len());
            self.norms.push(norm(&e.vector));
            self.entries.push(e);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[ContextEmbedding] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> &ContextEmbedding {
        &self.entries[index]
    }

    pub fn index_of(&self, key: &EmbeddingKey) -> Option<usize> {
        self.keys.get(key).copied()
    }

    pub fn retrieve(&self, query: &ContextEmbedding, opts: RetrieveOptions<'_>) -> Result<Retrieval, MemoryError> {
        if self.entries.is_empty() {
            return Err(MemoryError::Empty);
        }
        if opts.k == 0 {
            return Err(MemoryError::ZeroK);
        }
        if query.vector.len() != self.dim {
            return Err(MemoryError::WidthMismatch {
                expected: self.dim,
                got: query.vector.len(),
            });
        }
        let q_norm = norm(&query.vector);
        let skip = if opts.exclude_self {
            self.keys.get(&query.key).copied()
        } else {
            None
        };
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(opts.k + 1);
        let mut candidates = 0usize;
        for (i, e) in self.entries.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            if let Some(f) = opts.filter {
                if !f(&e.key) {
                    continue;
                }
            }
            candidates += 1;
            let c = Candidate {
                similarity: cosine(&query.vector, q_norm, &e.vector, self.norms[i]),
                key: e.key.to_string(),
                index: i,
            };
            if heap.len() < opts.k {
                heap.push(c);
            } else if let Some(worst) = heap.peek() {
                if c < *worst {
                    heap.pop();
                    heap.push(c);
                }
            }
        }
        let hits = heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Hit {
                index: c.index,
                key: self.entries[c.index].key.clone(),
                similarity: c.similarity,
            })
            .collect();
        Ok(Retrieval {
            hits,
            short: candidates < opts.k,
        })
    }

    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            version: 1,
            dim: self.dim,
            count: self.entries.len(),
            built_from: self.built_from.clone(),
            metric: "cosine".into(),
        }
    }

    /// Writes the corpus in the embedding-cache format plus a sidecar
    /// `<path>.json` manifest.
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        cache::write_file(path, self.dim, &self.entries)?;
        let manifest = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        std::fs::write(manifest_path(path), manifest)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(manifest_path(path))?;
        let manifest: CorpusManifest =
            serde_json::from_str(&text).map_err(|e| MemoryError::Manifest(e.to_string()))?;
        let (dim, entries) = cache::read_file(path)?;
        if dim != manifest.dim || entries.len() != manifest.count {
            return Err(MemoryError::Manifest(format!(
                "manifest says {} x {}, file holds {} x {}",
                manifest.count,
                manifest.dim,
                entries.len(),
                dim
            ))
            .into());
        }
        Ok(RetrievalCorpus::build(entries, &manifest.built_from)?)
    }
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    name.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn emb(station: &str, day: u32, vector: Vec<f32>) -> ContextEmbedding {
        ContextEmbedding {
            key: EmbeddingKey::new(station, NaiveDate::from_ymd_opt(2019, 3, day).unwrap()),
            vector,
            provider_tag: "stub".into(),
        }
    }

    fn three() -> Vec<ContextEmbedding> {
        vec![
            emb("S1", 1, vec![1.0, 0.0, 0.0]),
            emb("S1", 2, vec![0.0, 1.0, 0.0]),
            emb("S2", 1, vec![0.6, 0.8, 0.0]),
        ]
    }

    #[test]
    fn build_checks() {
        assert_eq!(RetrievalCorpus::build(three(), "train").unwrap().len(), 3);
        let mut dup = three();
        dup.push(emb("S1", 2, vec![1.0, 1.0, 1.0]));
        match RetrievalCorpus::build(dup, "train") {
            Err(MemoryError::DuplicateKey(k)) => assert_eq!(k, "S1|2019-03-02"),
            other => panic!("unexpected {other:?}"),
        }
        let mixed = vec![emb("A", 1, vec![0.0; 64]), emb("B", 1, vec![0.0; 128])];
        assert!(matches!(RetrievalCorpus::build(mixed, "train"), Err(MemoryError::WidthMismatch { .. })));
        assert!(matches!(RetrievalCorpus::build(vec![], "train"), Err(MemoryError::Empty)));
    }

    #[test]
    fn self_match_ranks_first() {
        let c = RetrievalCorpus::build(three(), "train").unwrap();
        let q = emb("Q", 9, vec![0.6, 0.8, 0.0]);
        let r = c.retrieve(&q, RetrieveOptions::new(3, false)).unwrap();
        assert_eq!(r.hits[0].key.station_id, "S2");
        assert!((r.hits[0].similarity - 1.0).abs() < 1e-7);
        assert!(r.hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn orthogonal_similarities() {
        let c = RetrievalCorpus::build(
            vec![emb("A", 1, vec![1.0, 0.0]), emb("B", 1, vec![0.0, 1.0])],
            "train",
        )
        .unwrap();
        let r = c.retrieve(&emb("A", 1, vec![1.0, 0.0]), RetrieveOptions::new(2, false)).unwrap();
        let sims: Vec<f64> = r.hits.iter().map(|h| h.similarity).collect();
        assert_eq!(sims, vec![1.0, 0.0]);
    }

    #[test]
    fn exclude_self_and_short_flag() {
        let c = RetrievalCorpus::build(three(), "train").unwrap();
        let q = three().remove(2);
        let r = c.retrieve(&q, RetrieveOptions::new(30, true)).unwrap();
        assert_eq!(r.hits.len(), 2);
        assert!(r.short);
        assert!(r.hits.iter().all(|h| h.key != q.key));
        assert!(matches!(c.retrieve(&q, RetrieveOptions::new(0, true)), Err(MemoryError::ZeroK)));
    }

    #[test]
    fn ties_break_on_key() {
        let c = RetrievalCorpus::build(
            vec![emb("B", 1, vec![1.0, 0.0]), emb("A", 1, vec![1.0, 0.0]), emb("C", 1, vec![2.0, 0.0])],
            "train",
        )
        .unwrap();
        let r = c.retrieve(&emb("Q", 1, vec![1.0, 0.0]), RetrieveOptions::new(3, false)).unwrap();
        let order: Vec<&str> = r.hits.iter().map(|h| h.key.station_id.as_str()).collect();
        assert_eq!(order, vec!["A", "B", "C"]);
    }

    #[test]
    fn filter_predicate_restricts_candidates() {
        let c = RetrievalCorpus::build(three(), "train").unwrap();
        let before = |k: &EmbeddingKey| k.date < NaiveDate::from_ymd_opt(2019, 3, 2).unwrap();
        let opts = RetrieveOptions {
            filter: Some(&before),
            ..RetrieveOptions::new(5, false)
        };
        let r = c.retrieve(&emb("Q", 9, vec![0.0, 1.0, 0.0]), opts).unwrap();
        assert_eq!(r.hits.len(), 2);
        assert!(r.hits.iter().all(|h| h.key.date.to_string() == "2019-03-01"));
    }

    #[test]
    fn append_semantics() {
        let mut c = RetrievalCorpus::build(three(), "train").unwrap();
        let new = emb("S3", 5, vec![0.0, 0.0, 1.0]);
        c.append(vec![new.clone()]).unwrap();
        assert_eq!(c.len(), 4);
        let r = c.retrieve(&new, RetrieveOptions::new(1, false)).unwrap();
        assert_eq!(r.hits[0].key, new.key);
        let err = c.append(vec![emb("S9", 1, vec![1.0, 1.0, 1.0]), emb("S1", 1, vec![0.0, 0.0, 1.0])]);
        assert!(matches!(err, Err(MemoryError::DuplicateKey(_))));
        assert_eq!(c.len(), 4);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.bin");
        let c = RetrievalCorpus::build(three(), "train").unwrap();
        c.save(&path).unwrap();
        let back = RetrievalCorpus::load(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.built_from, "train");
        assert_eq!(back.get(2).vector, c.get(2).vector);
        let m: CorpusManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path(&path)).unwrap()).unwrap();
        assert_eq!(m.metric, "cosine");
    }
}
