//! Sequence-to-sequence similarity metrics and the top-α neighbor index that
//! forms each sequence's weak-positive pool.
//!
//! Every metric maps into `[0, 1]`. Padding ids are ignored everywhere.

mod histogram;
mod index;
mod prepared;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{SequenceRecord, PADDING};
use crate::error::{RclError, Result};

pub use histogram::{similarity_histogram, Histogram, HistogramBin};
pub use index::{build_semantic_index, build_topk_index, neighbor_count, Neighbor, SimilarityIndex};
pub use prepared::PreparedSet;

/// A similarity value in `[0, 1]`. `degenerate` marks inputs for which the
/// metric is undefined and a score of 0 was substituted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub degenerate: bool,
}

impl SimilarityScore {
    pub fn new(value: f64) -> Self {
        SimilarityScore {
            value: value.clamp(0.0, 1.0),
            degenerate: false,
        }
    }

    pub fn degenerate() -> Self {
        SimilarityScore {
            value: 0.0,
            degenerate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Jaccard,
    /// Jaccard over contiguous n-grams.
    NGram(usize),
    TfIdf,
    Levenshtein,
    /// Cosine of encoder representations; changes as the model trains.
    Semantic,
}

impl Metric {
    /// Whether the metric ignores item order entirely.
    pub fn is_order_insensitive(self) -> bool {
        matches!(self, Metric::Jaccard | Metric::TfIdf)
    }

    pub fn is_static(self) -> bool {
        self != Metric::Semantic
    }

    pub fn all_static() -> [Metric; 6] {
        [
            Metric::Jaccard,
            Metric::NGram(2),
            Metric::NGram(3),
            Metric::TfIdf,
            Metric::Levenshtein,
            Metric::NGram(1),
        ]
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Jaccard => f.write_str("jaccard"),
            Metric::NGram(n) => write!(f, "ngram{n}"),
            Metric::TfIdf => f.write_str("tfidf"),
            Metric::Levenshtein => f.write_str("levenshtein"),
            Metric::Semantic => f.write_str("semantic"),
        }
    }
}

impl FromStr for Metric {
    type Err = RclError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || RclError::InvalidConfig(format!("unknown metric `{s}`"));
        match s.as_str() {
            "jaccard" => Ok(Metric::Jaccard),
            "tfidf" | "tf-idf" => Ok(Metric::TfIdf),
            "levenshtein" | "edit" => Ok(Metric::Levenshtein),
            "semantic" | "cosine" => Ok(Metric::Semantic),
            "bigram" => Ok(Metric::NGram(2)),
            _ => {
                let n = s
                    .strip_prefix("ngram")
                    .map(|r| r.trim_start_matches([':', '-', '=']))
                    .ok_or_else(bad)?;
                let n: usize = n.parse().map_err(|_| bad())?;
                if n == 0 {
                    return Err(bad());
                }
                Ok(Metric::NGram(n))
            }
        }
    }
}

fn real(items: &[u32]) -> Vec<u32> {
    items.iter().copied().filter(|&i| i != PADDING).collect()
}

/// `|A ∩ B| / |A ∪ B|` over two sorted, deduplicated slices.
pub(crate) fn sorted_set_jaccard<T: Ord>(a: &[T], b: &[T]) -> f64 {
    let (mut i, mut j, mut inter) = (0usize, 0usize, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

pub(crate) fn unique_sorted(items: &[u32]) -> Vec<u32> {
    let mut v = real(items);
    v.sort_unstable();
    v.dedup();
    v
}

pub fn jaccard(a: &SequenceRecord, b: &SequenceRecord) -> Result<SimilarityScore> {
    let sa = unique_sorted(&a.items);
    let sb = unique_sorted(&b.items);
    if sa.is_empty() && sb.is_empty() {
        return Err(RclError::UndefinedInput("jaccard of two empty sequences".into()));
    }
    Ok(SimilarityScore::new(sorted_set_jaccard(&sa, &sb)))
}

fn ngram_set(items: &[u32], n: usize) -> Vec<&[u32]> {
    let mut grams: Vec<&[u32]> = items.windows(n).collect();
    grams.sort_unstable();
    grams.dedup();
    grams
}

/// Jaccard over unique contiguous n-grams. A sequence shorter than `n` gives a
/// degenerate zero score.
pub fn ngram_similarity(a: &SequenceRecord, b: &SequenceRecord, n: usize) -> SimilarityScore {
    let ra = real(&a.items);
    let rb = real(&b.items);
    if n == 0 || ra.len() < n || rb.len() < n {
        return SimilarityScore::degenerate();
    }
    SimilarityScore::new(sorted_set_jaccard(&ngram_set(&ra, n), &ngram_set(&rb, n)))
}

/// Document frequencies over a collection of sequences.
#[derive(Debug, Clone, Default)]
pub struct IdfTable {
    pub df: HashMap<u32, usize>,
    pub n_sequences: usize,
}

impl IdfTable {
    /// `ln(N / df_v)`. Items never seen are treated as appearing once.
    pub fn idf(&self, item: u32) -> f64 {
        let df = self.df.get(&item).copied().unwrap_or(1).max(1);
        (self.n_sequences as f64 / df as f64).ln()
    }

    /// Sparse `tf · idf` weights sorted by item id.
    pub fn weights(&self, items: &[u32]) -> Vec<(u32, f64)> {
        let mut sorted = real(items);
        sorted.sort_unstable();
        let mut out: Vec<(u32, f64)> = Vec::new();
        for item in sorted {
            match out.last_mut() {
                Some((last, tf)) if *last == item => *tf += 1.0,
                _ => out.push((item, 1.0)),
            }
        }
        for (item, w) in out.iter_mut() {
            *w *= self.idf(*item);
        }
        out
    }
}

pub fn build_idf(records: &[SequenceRecord]) -> IdfTable {
    let mut df: HashMap<u32, usize> = HashMap::new();
    for r in records {
        let uniq: HashSet<u32> = r.real_items().collect();
        for item in uniq {
            *df.entry(item).or_default() += 1;
        }
    }
    IdfTable {
        df,
        n_sequences: records.len(),
    }
}

pub(crate) fn sparse_cosine(a: &[(u32, f64)], na: f64, b: &[(u32, f64)], nb: f64) -> SimilarityScore {
    if na == 0.0 || nb == 0.0 {
        return SimilarityScore::degenerate();
    }
    let (mut i, mut j, mut dot) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    SimilarityScore::new(dot / (na * nb))
}

pub(crate) fn sparse_norm(w: &[(u32, f64)]) -> f64 {
    w.iter().map(|(_, x)| x * x).sum::<f64>().sqrt()
}

/// Cosine of TF-IDF weight vectors. Zero-norm vectors give a degenerate zero.
pub fn tfidf_similarity(a: &SequenceRecord, b: &SequenceRecord, idf: &IdfTable) -> SimilarityScore {
    let wa = idf.weights(&a.items);
    let wb = idf.weights(&b.items);
    sparse_cosine(&wa, sparse_norm(&wa), &wb, sparse_norm(&wb))
}

/// Edit distance with unit insertion, deletion and substitution costs.
pub fn levenshtein_distance(a: &[u32], b: &[u32]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub(crate) fn levenshtein_ratio(a: &[u32], b: &[u32]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein_distance(a, b) as f64 / longest as f64
}

/// `1 - d(a, b) / max(|a|, |b|)`.
pub fn levenshtein_similarity(a: &SequenceRecord, b: &SequenceRecord) -> SimilarityScore {
    SimilarityScore::new(levenshtein_ratio(&real(&a.items), &real(&b.items)))
}

/// Cosine of two representations, clamped at zero so it can serve as a
/// sampling weight.
pub fn semantic_similarity(h_a: &[f64], h_b: &[f64]) -> Result<SimilarityScore> {
    if h_a.len() != h_b.len() {
        return Err(RclError::DegenerateInput(format!(
            "dimension mismatch {} vs {}",
            h_a.len(),
            h_b.len()
        )));
    }
    let na = h_a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = h_b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(RclError::DegenerateInput("zero-norm representation".into()));
    }
    let dot: f64 = h_a.iter().zip(h_b).map(|(x, y)| x * y).sum();
    Ok(SimilarityScore::new(dot / (na * nb)))
}

/// Scores a pair of records under a static metric.
pub fn pair_similarity(a: &SequenceRecord, b: &SequenceRecord, metric: Metric, idf: Option<&IdfTable>) -> Result<SimilarityScore> {
    match metric {
        Metric::Jaccard => jaccard(a, b),
        Metric::NGram(n) => Ok(ngram_similarity(a, b, n)),
        Metric::TfIdf => {
            let idf = idf.ok_or_else(|| RclError::InvalidConfig("tfidf needs an idf table".into()))?;
            Ok(tfidf_similarity(a, b, idf))
        }
        Metric::Levenshtein => Ok(levenshtein_similarity(a, b)),
        Metric::Semantic => Err(RclError::InvalidConfig(
            "semantic similarity needs representations, not records".into(),
        )),
    }
}
