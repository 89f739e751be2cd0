use std::io::Write;

use serde::Serialize;

use super::PreparedSet;
use crate::corpus::SequenceRecord;
use crate::error::{RclError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: u64,
}

/// Distribution of similarity over all unordered pairs whose targets differ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
    pub pairs: u64,
    pub threshold: f64,
    /// Pairs scoring strictly above `threshold`.
    pub above: u64,
}

impl Histogram {
    pub fn share_above(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.above as f64 / self.pairs as f64
        }
    }

    /// `bin_low,bin_high,count` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_low,bin_high,count")?;
        for b in &self.bins {
            writeln!(w, "{},{},{}", b.low, b.high, b.count)?;
        }
        Ok(())
    }

    /// Bins are `[i/bins, (i+1)/bins)`, the last one closed at 1.
    pub fn from_scores(scores: impl IntoIterator<Item = f64>, bins: usize, threshold: f64) -> Result<Self> {
        if bins < 2 {
            return Err(RclError::InvalidConfig("histogram needs at least 2 bins".into()));
        }
        let mut counts = vec![0u64; bins];
        let (mut pairs, mut above) = (0u64, 0u64);
        for s in scores {
            let b = ((s * bins as f64).floor() as usize).min(bins - 1);
            counts[b] += 1;
            pairs += 1;
            if s > threshold {
                above += 1;
            }
        }
        let width = 1.0 / bins as f64;
        Ok(Histogram {
            bins: counts
                .into_iter()
                .enumerate()
                .map(|(i, count)| HistogramBin {
                    low: i as f64 * width,
                    high: if i + 1 == bins { 1.0 } else { (i + 1) as f64 * width },
                    count,
                })
                .collect(),
            pairs,
            threshold,
            above,
        })
    }
}

/// Histogram over every unordered pair of `records` with different targets.
pub fn similarity_histogram(
    records: &[SequenceRecord],
    prepared: &PreparedSet,
    bins: usize,
    threshold: f64,
) -> Result<Histogram> {
    if prepared.len() != records.len() {
        return Err(RclError::InvalidConfig("prepared features do not match the records".into()));
    }
    let n = records.len();
    let scores = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| records[i].target != records[j].target)
        .map(|(i, j)| prepared.score(i, j));
    Histogram::from_scores(scores, bins, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::Metric;

    fn rec(items: &[u32], target: u32) -> SequenceRecord {
        SequenceRecord::new(1, items.to_vec(), target)
    }

    #[test]
    fn same_target_pairs_are_skipped() {
        let r = vec![rec(&[1, 2], 7), rec(&[1, 3], 7)];
        let p = PreparedSet::new(&r, Metric::Jaccard).unwrap();
        let h = similarity_histogram(&r, &p, 4, 0.7).unwrap();
        assert_eq!(h.pairs, 0);
        assert_eq!(h.share_above(), 0.0);
    }

    #[test]
    fn hand_binning() {
        let h = Histogram::from_scores([0.0, 0.5, 1.0], 2, 0.7).unwrap();
        assert_eq!(h.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!((h.bins[1].low, h.bins[1].high), (0.5, 1.0));
        assert_eq!(h.above, 1);
        assert!(Histogram::from_scores([0.1], 1, 0.7).is_err());
    }

    #[test]
    fn pairs_from_records() {
        // {1,2} vs {1,2,3,4} = 0.5, {1,2} vs {3,4} = 0, {1,2,3,4} vs {3,4} = 0.5
        let r = vec![rec(&[1, 2], 1), rec(&[1, 2, 3, 4], 2), rec(&[3, 4], 3)];
        let p = PreparedSet::new(&r, Metric::Jaccard).unwrap();
        let h = similarity_histogram(&r, &p, 2, 0.7).unwrap();
        assert_eq!(h.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(h.pairs, 3);
    }

    #[test]
    fn identical_corpus_fills_top_bin() {
        let r: Vec<_> = (0..5).map(|t| rec(&[4, 5, 6], t)).collect();
        let p = PreparedSet::new(&r, Metric::NGram(2)).unwrap();
        let h = similarity_histogram(&r, &p, 10, 0.7).unwrap();
        assert_eq!(h.pairs, 10);
        assert_eq!(h.bins[9].count, 10);
        assert_eq!(h.share_above(), 1.0);
        let mut csv = Vec::new();
        h.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("bin_low,bin_high,count\n0,0.1,0\n"));
    }
}
