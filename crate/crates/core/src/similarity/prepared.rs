use std::collections::HashMap;

use super::{levenshtein_ratio, real, sorted_set_jaccard, sparse_cosine, sparse_norm, unique_sorted, IdfTable, Metric};
use crate::corpus::SequenceRecord;
use crate::error::{RclError, Result};

/// Per-sequence features precomputed once so that any pair `(i, j)` can be
/// scored without re-deriving sets or weight vectors.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    metric: Metric,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    /// Sorted unique ids; n-grams are interned to dense ids first.
    /// `None` marks a sequence shorter than n.
    Sets(Vec<Option<Vec<u32>>>),
    TfIdf { vecs: Vec<Vec<(u32, f64)>>, norms: Vec<f64> },
    Tokens(Vec<Vec<u32>>),
    /// Unit vectors; `None` for zero-norm representations.
    Unit(Vec<Option<Vec<f64>>>),
}

impl PreparedSet {
    pub fn new(records: &[SequenceRecord], metric: Metric) -> Result<Self> {
        let kind = match metric {
            Metric::Jaccard => Kind::Sets(records.iter().map(|r| Some(unique_sorted(&r.items))).collect()),
            Metric::NGram(n) => {
                if n == 0 {
                    return Err(RclError::InvalidConfig("n-gram size must be at least 1".into()));
                }
                let mut vocab: HashMap<Vec<u32>, u32> = HashMap::new();
                let sets = records
                    .iter()
                    .map(|r| {
                        let items = real(&r.items);
                        if items.len() < n {
                            return None;
                        }
                        let mut ids: Vec<u32> = items
                            .windows(n)
                            .map(|g| {
                                let next = vocab.len() as u32;
                                *vocab.entry(g.to_vec()).or_insert(next)
                            })
                            .collect();
                        ids.sort_unstable();
                        ids.dedup();
                        Some(ids)
                    })
                    .collect();
                Kind::Sets(sets)
            }
            Metric::TfIdf => {
                let idf = super::build_idf(records);
                Self::tfidf_kind(records, &idf)
            }
            Metric::Levenshtein => Kind::Tokens(records.iter().map(|r| real(&r.items)).collect()),
            Metric::Semantic => {
                return Err(RclError::InvalidConfig(
                    "semantic features come from representations; use from_representations".into(),
                ))
            }
        };
        Ok(PreparedSet { metric, kind })
    }

    /// TF-IDF features against an externally built idf table.
    pub fn tfidf_with(records: &[SequenceRecord], idf: &IdfTable) -> Self {
        PreparedSet {
            metric: Metric::TfIdf,
            kind: Self::tfidf_kind(records, idf),
        }
    }

    fn tfidf_kind(records: &[SequenceRecord], idf: &IdfTable) -> Kind {
        let vecs: Vec<Vec<(u32, f64)>> = records.iter().map(|r| idf.weights(&r.items)).collect();
        let norms = vecs.iter().map(|v| sparse_norm(v)).collect();
        Kind::TfIdf { vecs, norms }
    }

    pub fn from_representations(reps: &[Vec<f64>]) -> Self {
        let units = reps
            .iter()
            .map(|h| {
                let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
                (norm > 0.0 && norm.is_finite()).then(|| h.iter().map(|x| x / norm).collect())
            })
            .collect();
        PreparedSet {
            metric: Metric::Semantic,
            kind: Kind::Unit(units),
        }
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        match &self.kind {
            Kind::Sets(v) => v.len(),
            Kind::TfIdf { vecs, .. } => vecs.len(),
            Kind::Tokens(v) => v.len(),
            Kind::Unit(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Similarity of sequences `i` and `j`; degenerate pairs score 0.
    pub fn score(&self, i: usize, j: usize) -> f64 {
        match &self.kind {
            Kind::Sets(sets) => match (&sets[i], &sets[j]) {
                (Some(a), Some(b)) if !(a.is_empty() && b.is_empty()) => sorted_set_jaccard(a, b),
                _ => 0.0,
            },
            Kind::TfIdf { vecs, norms } => sparse_cosine(&vecs[i], norms[i], &vecs[j], norms[j]).value,
            Kind::Tokens(tokens) => levenshtein_ratio(&tokens[i], &tokens[j]),
            Kind::Unit(units) => match (&units[i], &units[j]) {
                (Some(a), Some(b)) => {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    dot.clamp(0.0, 1.0)
                }
                _ => 0.0,
            },
        }
    }
}
