//! Dual-tiered positive selection: same-target strong positives and
//! similarity-sampled weak positives, plus epoch-wise batch assembly.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::SequenceRecord;
use crate::error::{RclError, Result};
use crate::similarity::{Metric, PreparedSet, SimilarityIndex};
use crate::tensor::Matrix;

static ZERO_POOL_WARNED: AtomicBool = AtomicBool::new(false);

/// Train sequences grouped by target item.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongIndex {
    pub groups: BTreeMap<u32, Vec<usize>>,
    targets: Vec<u32>,
}

impl StrongIndex {
    pub fn build(records: &[SequenceRecord]) -> Self {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            groups.entry(r.target).or_default().push(i);
        }
        StrongIndex {
            groups,
            targets: records.iter().map(|r| r.target).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn group(&self, u: usize) -> &[usize] {
        &self.groups[&self.targets[u]]
    }

    /// `SP_u`: sequences sharing `u`'s target, excluding `u`.
    pub fn strong_pool(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.group(u).iter().copied().filter(move |&v| v != u)
    }

    pub fn pool_len(&self, u: usize) -> usize {
        self.group(u).len() - 1
    }

    /// Fraction of sequences whose `SP_u` is empty.
    pub fn empty_share(&self) -> f64 {
        if self.targets.is_empty() {
            return 0.0;
        }
        let empty = self.groups.values().filter(|g| g.len() == 1).count();
        empty as f64 / self.targets.len() as f64
    }
}

pub fn build_strong_index(records: &[SequenceRecord]) -> StrongIndex {
    StrongIndex::build(records)
}

/// Uniform draw from `SP_u`, or `None` when it is empty.
pub fn sample_strong<R: Rng + ?Sized>(u: usize, idx: &StrongIndex, rng: &mut R) -> Option<usize> {
    let group = idx.group(u);
    if group.len() < 2 {
        return None;
    }
    let own = group.iter().position(|&v| v == u).expect("sequence is in its own group");
    let mut k = rng.gen_range(0..group.len() - 1);
    if k >= own {
        k += 1;
    }
    Some(group[k])
}

/// Draws `b ∈ WP_u` with probability proportional to `s_{u,b}`. A pool whose
/// scores are all zero is sampled uniformly and reported with score 0.
pub fn sample_weak<R: Rng + ?Sized>(u: usize, idx: &SimilarityIndex, rng: &mut R) -> Result<(usize, f64)> {
    let row = idx.row(u);
    if row.is_empty() {
        return Err(RclError::DegenerateInput(format!("weak-positive pool of sequence {u} is empty")));
    }
    let total: f64 = row.iter().map(|n| n.score).sum();
    if !(total > 0.0) {
        if !ZERO_POOL_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("all weak-positive scores are zero for sequence {u}; sampling uniformly (further occurrences not reported)");
        }
        let n = row[rng.gen_range(0..row.len())];
        return Ok((n.id as usize, n.score));
    }
    let mut r = rng.gen::<f64>() * total;
    for n in row {
        if r < n.score {
            return Ok((n.id as usize, n.score));
        }
        r -= n.score;
    }
    // rounding left `r` just past the last positive score
    let last = row.iter().rev().find(|n| n.score > 0.0).expect("positive total");
    Ok((last.id as usize, last.score))
}

/// Pairwise scores `s_{u,c}` available to the weighted loss.
pub struct BatchScorer<'a> {
    prepared: &'a PreparedSet,
    index: &'a SimilarityIndex,
}

impl<'a> BatchScorer<'a> {
    pub fn new(prepared: &'a PreparedSet, index: &'a SimilarityIndex) -> Self {
        BatchScorer { prepared, index }
    }

    /// Computed directly for every metric except Levenshtein, which only uses
    /// the scores already held in the index and gives 0 elsewhere.
    pub fn score(&self, u: usize, c: usize) -> f64 {
        if u == c {
            return 1.0;
        }
        match self.prepared.metric() {
            Metric::Levenshtein => self.index.score_of(u, c).unwrap_or(0.0),
            _ => self.prepared.score(u, c),
        }
    }
}

/// One minibatch of centers with their sampled positives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub centers: Vec<usize>,
    pub strong: Vec<Option<usize>>,
    pub weak: Vec<usize>,
    pub weak_score: Vec<f64>,
    /// Distinct sequence ids of the batch: centers first, then sampled
    /// positives in order of first appearance.
    pub members: Vec<usize>,
    /// `batch_scores[(i, j)] = s_{centers[i], members[j]}`.
    pub batch_scores: Matrix,
}

impl TrainingBatch {
    /// Row of `id` in [`TrainingBatch::members`].
    pub fn member_row(&self, id: usize) -> Option<usize> {
        self.members.iter().position(|&m| m == id)
    }
}

pub fn make_batch<R: Rng + ?Sized>(
    centers: &[usize],
    strong_idx: &StrongIndex,
    sim_idx: &SimilarityIndex,
    scorer: &BatchScorer<'_>,
    rng: &mut R,
) -> Result<TrainingBatch> {
    let mut strong = Vec::with_capacity(centers.len());
    let mut weak = Vec::with_capacity(centers.len());
    let mut weak_score = Vec::with_capacity(centers.len());
    for &u in centers {
        strong.push(sample_strong(u, strong_idx, rng));
        let (b, s) = sample_weak(u, sim_idx, rng)?;
        weak.push(b);
        weak_score.push(s);
    }
    let mut members = centers.to_vec();
    for id in strong.iter().flatten().chain(&weak) {
        if !members.contains(id) {
            members.push(*id);
        }
    }
    let mut batch_scores = Matrix::zeros(centers.len(), members.len());
    for (i, &u) in centers.iter().enumerate() {
        for (j, &c) in members.iter().enumerate() {
            if c != u {
                batch_scores.set(i, j, scorer.score(u, c));
            }
        }
    }
    Ok(TrainingBatch {
        centers: centers.to_vec(),
        strong,
        weak,
        weak_score,
        members,
        batch_scores,
    })
}

/// Shuffled center order for one epoch, cut into batches. The last batch may
/// be shorter.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
