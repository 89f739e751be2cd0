use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use super::{Metric, PreparedSet};
use crate::corpus::SequenceRecord;
use crate::error::{RclError, Result};

const MAGIC: &[u8; 4] = b"RCLI";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub score: f64,
}

impl Neighbor {
    /// Ranking order: higher score first, then lower id.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then(self.id.cmp(&other.id))
    }
}

/// Heap entry whose maximum is the *worst* retained neighbor, so the top of a
/// max-heap is the one to evict.
struct Worst(Neighbor);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// Top-K most similar other sequences for every sequence, scores descending,
/// ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityIndex {
    pub metric: Metric,
    pub alpha: f64,
    pub k: usize,
    pub neighbors: Vec<Vec<Neighbor>>,
}

/// `K = ceil(alpha * n)`, clamped to `n - 1`.
pub fn neighbor_count(alpha: f64, n: usize) -> usize {
    let k = (alpha * n as f64).ceil() as usize;
    let cap = n.saturating_sub(1);
    if k > cap {
        log::warn!("ceil({alpha} * {n}) = {k} neighbors exceeds N-1; clamped to {cap}");
        return cap;
    }
    k
}

/// Scores row `u` against every other sequence keeping only a size-`k`
/// replace-min buffer.
fn top_k_row(u: usize, n: usize, k: usize, score: &(impl Fn(usize, usize) -> f64 + Sync)) -> Vec<Neighbor> {
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
    for v in (0..n).filter(|&v| v != u) {
        let cand = Neighbor {
            id: v as u32,
            score: score(u, v),
        };
        if heap.len() < k {
            heap.push(Worst(cand));
        } else if let Some(worst) = heap.peek() {
            if cand.rank_cmp(&worst.0) == Ordering::Less {
                heap.pop();
                heap.push(Worst(cand));
            }
        }
    }
    let mut row: Vec<Neighbor> = heap.into_iter().map(|w| w.0).collect();
    row.sort_by(Neighbor::rank_cmp);
    row
}

#[cfg(feature = "parallel")]
fn all_rows(n: usize, k: usize, workers: usize, score: &(impl Fn(usize, usize) -> f64 + Sync)) -> Vec<Vec<Neighbor>> {
    use rayon::prelude::*;
    let rows = || (0..n).into_par_iter().map(|u| top_k_row(u, n, k, score)).collect();
    if workers <= 1 {
        return (0..n).map(|u| top_k_row(u, n, k, score)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(rows),
        Err(e) => {
            log::warn!("could not start {workers} workers ({e}); running on the global pool");
            rows()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn all_rows(n: usize, k: usize, _workers: usize, score: &(impl Fn(usize, usize) -> f64 + Sync)) -> Vec<Vec<Neighbor>> {
    (0..n).map(|u| top_k_row(u, n, k, score)).collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RclError::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

impl SimilarityIndex {
    /// Builds the index from already prepared features. Rows are split across
    /// `workers`; the result does not depend on the worker count.
    pub fn from_prepared(prepared: &PreparedSet, alpha: f64, workers: usize) -> Result<Self> {
        check_alpha(alpha)?;
        let n = prepared.len();
        let k = neighbor_count(alpha, n);
        let neighbors = all_rows(n, k, workers, &|u, v| prepared.score(u, v));
        Ok(SimilarityIndex {
            metric: prepared.metric(),
            alpha,
            k,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn row(&self, u: usize) -> &[Neighbor] {
        &self.neighbors[u]
    }

    /// Score of `v` within `u`'s pool, if present.
    pub fn score_of(&self, u: usize, v: usize) -> Option<f64> {
        self.neighbors[u].iter().find(|n| n.id as usize == v).map(|n| n.score)
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.score_of(u, v).is_some()
    }

    /// Little-endian binary: magic, version, metric tag, alpha, N, K, then N
    /// rows of K `(u32 id, f64 score)` records.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let tag = self.metric.to_string();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(tag.len() as u16).to_le_bytes())?;
        w.write_all(tag.as_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&(self.neighbors.len() as u64).to_le_bytes())?;
        w.write_all(&(self.k as u64).to_le_bytes())?;
        for row in &self.neighbors {
            for nb in row {
                w.write_all(&nb.id.to_le_bytes())?;
                w.write_all(&nb.score.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)
                .map_err(|e| RclError::Format(format!("truncated index: {e}")))?;
            Ok(buf)
        }
        if &take::<4, _>(&mut r)? != MAGIC {
            return Err(RclError::Format("not a similarity index (bad magic)".into()));
        }
        let version = u16::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(RclError::Format(format!("unsupported index version {version}")));
        }
        let tag_len = u16::from_le_bytes(take(&mut r)?) as usize;
        let mut tag = vec![0u8; tag_len];
        r.read_exact(&mut tag)
            .map_err(|e| RclError::Format(format!("truncated index: {e}")))?;
        let tag = String::from_utf8(tag).map_err(|_| RclError::Format("metric tag is not utf-8".into()))?;
        let metric: Metric = tag.parse()?;
        let alpha = f64::from_le_bytes(take(&mut r)?);
        let n = u64::from_le_bytes(take(&mut r)?) as usize;
        let k = u64::from_le_bytes(take(&mut r)?) as usize;
        let mut neighbors = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = Vec::with_capacity(k);
            for _ in 0..k {
                let id = u32::from_le_bytes(take(&mut r)?);
                let score = f64::from_le_bytes(take(&mut r)?);
                row.push(Neighbor { id, score });
            }
            neighbors.push(row);
        }
        Ok(SimilarityIndex {
            metric,
            alpha,
            k,
            neighbors,
        })
    }

    /// `sequence,rank,neighbor,score` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sequence,rank,neighbor,score")?;
        for (u, row) in self.neighbors.iter().enumerate() {
            for (rank, nb) in row.iter().enumerate() {
                writeln!(w, "{u},{},{},{}", rank + 1, nb.id, nb.score)?;
            }
        }
        Ok(())
    }
}

/// Top-α index over `records` for a static metric.
pub fn build_topk_index(records: &[SequenceRecord], metric: Metric, alpha: f64, workers: usize) -> Result<SimilarityIndex> {
    if metric == Metric::Semantic {
        return Err(RclError::InvalidConfig(
            "semantic index is rebuilt from representations; use build_semantic_index".into(),
        ));
    }
    let prepared = PreparedSet::new(records, metric)?;
    SimilarityIndex::from_prepared(&prepared, alpha, workers)
}

/// Top-α index over clamped cosine similarity of representations.
pub fn build_semantic_index(reps: &[Vec<f64>], alpha: f64, workers: usize) -> Result<SimilarityIndex> {
    let prepared = PreparedSet::from_representations(reps);
    SimilarityIndex::from_prepared(&prepared, alpha, workers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(items: &[u32]) -> SequenceRecord {
        SequenceRecord::new(1, items.to_vec(), 1)
    }

    fn brute(prepared: &PreparedSet, k: usize) -> Vec<Vec<Neighbor>> {
        let n = prepared.len();
        (0..n)
            .map(|u| {
                let mut row: Vec<Neighbor> = (0..n)
                    .filter(|&v| v != u)
                    .map(|v| Neighbor {
                        id: v as u32,
                        score: prepared.score(u, v),
                    })
                    .collect();
                row.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
                row.truncate(k);
                row
            })
            .collect()
    }

    #[test]
    fn four_sequences_half() {
        let recs = vec![rec(&[1, 2, 3]), rec(&[2, 3, 4]), rec(&[1, 2]), rec(&[7, 8])];
        let idx = build_topk_index(&recs, Metric::Jaccard, 0.5, 1).unwrap();
        assert_eq!(idx.k, 2);
        let p = PreparedSet::new(&recs, Metric::Jaccard).unwrap();
        assert_eq!(idx.neighbors, brute(&p, 2));
        assert!(idx.neighbors.iter().enumerate().all(|(u, r)| r.iter().all(|n| n.id as usize != u)));
    }

    #[test]
    fn identical_sequences_tie_by_id() {
        let recs = vec![rec(&[1, 2]); 5];
        let idx = build_topk_index(&recs, Metric::Jaccard, 0.5, 2).unwrap();
        assert_eq!(idx.k, 3);
        let ids: Vec<u32> = idx.row(0).iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        let ids: Vec<u32> = idx.row(2).iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![0, 1, 3]);
        assert!(idx.neighbors.iter().flatten().all(|n| n.score == 1.0));
    }

    #[test]
    fn k_clamps_to_n_minus_one() {
        assert_eq!(neighbor_count(0.9, 3), 3 - 1);
        assert_eq!(neighbor_count(0.05, 1000), 50);
        assert_eq!(neighbor_count(0.025, 100), 3);
    }

    #[test]
    fn rejects_bad_alpha_and_semantic() {
        let recs = vec![rec(&[1]), rec(&[2])];
        assert!(build_topk_index(&recs, Metric::Jaccard, 0.0, 1).is_err());
        assert!(build_topk_index(&recs, Metric::Jaccard, 1.0, 1).is_err());
        assert!(build_topk_index(&recs, Metric::Semantic, 0.5, 1).is_err());
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let recs = vec![rec(&[1, 2, 3]), rec(&[2, 3, 4]), rec(&[1, 2]), rec(&[7, 8])];
        let idx = build_topk_index(&recs, Metric::NGram(2), 0.5, 1).unwrap();
        let mut buf = Vec::new();
        idx.write_binary(&mut buf).unwrap();
        // magic + version + taglen + "ngram2" + alpha + N + K + 4*2*(4+8)
        assert_eq!(buf.len(), 4 + 2 + 2 + 6 + 8 + 8 + 8 + 4 * 2 * 12);
        assert_eq!(&buf[8..14], b"ngram2");
        let back = SimilarityIndex::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, idx);
        assert!(SimilarityIndex::read_binary(&buf[..20]).is_err());
    }

    #[test]
    fn csv_export() {
        let recs = vec![rec(&[1, 2]), rec(&[1, 3]), rec(&[4])];
        let idx = build_topk_index(&recs, Metric::Jaccard, 0.3, 1).unwrap();
        let mut buf = Vec::new();
        idx.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("sequence,rank,neighbor,score"));
        assert_eq!(lines.next().unwrap(), format!("0,1,1,{}", 1.0 / 3.0));
    }
}
