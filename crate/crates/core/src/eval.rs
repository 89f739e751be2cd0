//! Full-vocabulary HR@K / NDCG@K and the triplet dot-product diagnostic.

use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SequenceRecord;
use crate::error::{RclError, Result};
use crate::model::{item_scores, represent_many, ModelParams};
use crate::selection::{sample_strong, sample_weak, StrongIndex};
use crate::similarity::SimilarityIndex;
use crate::tensor::dot;

/// 1-based rank of `target` among items `1..scores.len()`. Items scoring
/// higher, or equal with a smaller id, rank ahead.
pub fn target_rank(scores: &[f64], target: u32) -> usize {
    let t = target as usize;
    let st = scores[t];
    1 + scores
        .iter()
        .enumerate()
        .skip(1)
        .filter(|&(i, &s)| i != t && (s > st || (s == st && i < t)))
        .count()
}

pub fn hit_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub count: usize,
}

impl EvalReport {
    /// Aggregates per-record target ranks.
    pub fn from_ranks(variant: impl Into<String>, ranks: &[usize], ks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(RclError::UndefinedInput("evaluation split is empty".into()));
        }
        if ks.is_empty() {
            return Err(RclError::InvalidConfig("no cutoffs requested".into()));
        }
        let mut ks = ks.to_vec();
        ks.sort_unstable();
        ks.dedup();
        let n = ranks.len() as f64;
        let hr = ks.iter().map(|&k| ranks.iter().map(|&r| hit_at(r, k)).sum::<f64>() / n).collect();
        let ndcg = ks.iter().map(|&k| ranks.iter().map(|&r| ndcg_at(r, k)).sum::<f64>() / n).collect();
        Ok(EvalReport {
            variant: variant.into(),
            ks,
            hr,
            ndcg,
            count: ranks.len(),
        })
    }

    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.hr[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }

    pub fn write_csv_header<W: Write>(mut w: W) -> std::io::Result<()> {
        writeln!(w, "variant,k,hr,ndcg")
    }

    /// `variant,k,hr,ndcg` rows without the header.
    pub fn write_csv_rows<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, k) in self.ks.iter().enumerate() {
            writeln!(w, "{},{},{:.6},{:.6}", self.variant, k, self.hr[i], self.ndcg[i])?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        Self::write_csv_header(&mut w)?;
        self.write_csv_rows(w)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} ({} sequences)", self.variant, self.count)?;
        writeln!(f, "{:>6}  {:>8}  {:>8}", "K", "HR", "NDCG")?;
        for (i, k) in self.ks.iter().enumerate() {
            writeln!(f, "{:>6}  {:>8.4}  {:>8.4}", k, self.hr[i], self.ndcg[i])?;
        }
        Ok(())
    }
}

/// Ranks every record's target over the full item set with eval-mode
/// representations.
pub fn target_ranks(params: &ModelParams, split: &[SequenceRecord]) -> Result<Vec<usize>> {
    let seqs: Vec<&[u32]> = split.iter().map(|r| r.items.as_slice()).collect();
    let reps = represent_many(params, &seqs)?;
    let mut ranks = Vec::with_capacity(split.len());
    for (r, h) in split.iter().zip(&reps) {
        if r.target == 0 || r.target as usize > params.config.item_count {
            return Err(RclError::IndexOutOfRange(format!("target {}", r.target)));
        }
        ranks.push(target_rank(&item_scores(h, &params.item_emb), r.target));
    }
    Ok(ranks)
}

pub fn evaluate(params: &ModelParams, split: &[SequenceRecord], ks: &[usize], variant: &str) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(RclError::UndefinedInput("evaluation split is empty".into()));
    }
    EvalReport::from_ranks(variant, &target_ranks(params, split)?, ks)
}

/// Mean center-to-positive dot products by positive kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DotReport {
    pub strong: f64,
    pub weak: f64,
    pub negative: f64,
    pub centers: usize,
}

impl DotReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "kind,mean_dot,centers")?;
        writeln!(w, "strong,{},{}", self.strong, self.centers)?;
        writeln!(w, "weak,{},{}", self.weak, self.centers)?;
        writeln!(w, "negative,{},{}", self.negative, self.centers)
    }
}

/// `(center, strong, weak, negative)` row ids.
pub type Triplet = (usize, usize, usize, usize);

/// Mean dot products over `triplets` of rows of `reps`.
pub fn mean_dot_products(reps: &[Vec<f64>], triplets: &[Triplet]) -> DotReport {
    let n = triplets.len().max(1) as f64;
    let mut acc = [0.0; 3];
    for &(u, a, b, neg) in triplets {
        acc[0] += dot(&reps[u], &reps[a]);
        acc[1] += dot(&reps[u], &reps[b]);
        acc[2] += dot(&reps[u], &reps[neg]);
    }
    DotReport {
        strong: acc[0] / n,
        weak: acc[1] / n,
        negative: acc[2] / n,
        centers: triplets.len(),
    }
}

/// Samples up to `max_centers` centers that have a strong positive, with a
/// weak positive and a negative whose target differs and which is outside
/// the center's weak pool.
pub fn sample_triplets<R: Rng + ?Sized>(
    records: &[SequenceRecord],
    strong_idx: &StrongIndex,
    sim_idx: &SimilarityIndex,
    max_centers: usize,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    let mut eligible: Vec<usize> = (0..records.len()).filter(|&u| strong_idx.pool_len(u) > 0).collect();
    rand::seq::SliceRandom::shuffle(eligible.as_mut_slice(), rng);
    eligible.truncate(max_centers);
    let mut out = Vec::with_capacity(eligible.len());
    for u in eligible {
        let a = sample_strong(u, strong_idx, rng).expect("eligible center");
        let (b, _) = sample_weak(u, sim_idx, rng)?;
        let neg = (0..64).map(|_| rng.gen_range(0..records.len())).find(|&c| {
            c != u && records[c].target != records[u].target && !sim_idx.contains(u, c)
        });
        if let Some(neg) = neg {
            out.push((u, a, b, neg));
        }
    }
    Ok(out)
}

/// Triplet dot-product report with eval-mode representations of `records`.
pub fn triplet_dot_report<R: Rng + ?Sized>(
    params: &ModelParams,
    records: &[SequenceRecord],
    strong_idx: &StrongIndex,
    sim_idx: &SimilarityIndex,
    max_centers: usize,
    rng: &mut R,
) -> Result<DotReport> {
    let triplets = sample_triplets(records, strong_idx, sim_idx, max_centers, rng)?;
    let seqs: Vec<&[u32]> = records.iter().map(|r| r.items.as_slice()).collect();
    let reps = represent_many(params, &seqs)?;
    Ok(mean_dot_products(&reps, &triplets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_and_tie_rule() {
        let scores = vec![f64::NEG_INFINITY, 0.5, 0.9, 0.5, 0.1];
        assert_eq!(target_rank(&scores, 2), 1);
        assert_eq!(target_rank(&scores, 1), 2);
        assert_eq!(target_rank(&scores, 3), 3);
        assert_eq!(target_rank(&scores, 4), 4);
    }

    #[test]
    fn metric_values() {
        assert_eq!(hit_at(1, 5), 1.0);
        assert_eq!(ndcg_at(1, 5), 1.0);
        assert_eq!(ndcg_at(3, 10), 0.5);
        assert_eq!(ndcg_at(11, 10), 0.0);
        let r = EvalReport::from_ranks("x", &[1, 3, 20], &[10, 5]).unwrap();
        assert_eq!(r.ks, vec![5, 10]);
        assert!((r.hr_at(10).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.ndcg_at(5).unwrap() - 0.5).abs() < 1e-15);
        assert!(EvalReport::from_ranks("x", &[], &[5]).is_err());
    }

    #[test]
    fn csv_and_table() {
        let r = EvalReport::from_ranks("wrcl", &[1, 2], &[5]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "variant,k,hr,ndcg\nwrcl,5,1.000000,0.815465\n");
        assert!(r.to_string().contains("wrcl (2 sequences)"));
    }

    #[test]
    fn identical_reps_give_equal_means() {
        let reps = vec![vec![0.3, -0.2]; 4];
        let d = mean_dot_products(&reps, &[(0, 1, 2, 3), (1, 0, 3, 2)]);
        assert_eq!(d.strong, d.weak);
        assert_eq!(d.weak, d.negative);
    }
}
