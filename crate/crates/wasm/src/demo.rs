//! Demo operations with plain-string errors, callable from native code.

use rcl_core::corpus::SequenceRecord;
use rcl_core::losses::{contrastive_with_grad, pair_loss, CenterRoles, ContrastiveOptions, LossVariant};
use rcl_core::selection::StrongIndex;
use rcl_core::similarity::{build_topk_index, similarity_histogram, Metric, PreparedSet};
use rcl_core::synth::{generate, SynthConfig};
use rcl_core::tensor::Matrix;
use rcl_core::{build_sequences, RclError};
use serde::Serialize;

fn msg(e: RclError) -> String {
    e.to_string()
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// One record per non-empty line: space- or comma-separated item ids, the
/// last of which is the target.
pub fn parse_records(text: &str) -> Result<Vec<SequenceRecord>, String> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let ids: Vec<u32> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<u32>().map_err(|_| format!("line {}: `{t}` is not an item id", no + 1)))
            .collect::<Result<_, _>>()?;
        if ids.len() < 2 {
            return Err(format!("line {}: need at least one item and a target", no + 1));
        }
        if ids.contains(&0) {
            return Err(format!("line {}: item id 0 is reserved for padding", no + 1));
        }
        let (target, items) = ids.split_last().expect("two or more ids");
        out.push(SequenceRecord::new(out.len() as u32, items.to_vec(), *target));
    }
    if out.len() < 2 {
        return Err("paste at least two sequences".into());
    }
    Ok(out)
}

#[derive(Serialize)]
struct NeighborView {
    id: usize,
    score: f64,
    same_target: bool,
}

#[derive(Serialize)]
struct RowView {
    id: usize,
    items: Vec<u32>,
    target: u32,
    strong: Vec<usize>,
    weak: Vec<NeighborView>,
}

#[derive(Serialize)]
struct NeighborsView {
    metric: String,
    k: usize,
    rows: Vec<RowView>,
}

/// Strong pool and top-alpha weak pool of every pasted sequence.
pub fn neighbors(corpus: &str, metric: &str, alpha: f64) -> Result<String, String> {
    let records = parse_records(corpus)?;
    let metric: Metric = metric.parse().map_err(msg)?;
    let index = build_topk_index(&records, metric, alpha, 1).map_err(msg)?;
    let strong = StrongIndex::build(&records);
    let rows = records
        .iter()
        .enumerate()
        .map(|(u, r)| RowView {
            id: u,
            items: r.items.clone(),
            target: r.target,
            strong: strong.strong_pool(u).collect(),
            weak: index
                .row(u)
                .iter()
                .map(|n| NeighborView {
                    id: n.id as usize,
                    score: n.score,
                    same_target: records[n.id as usize].target == r.target,
                })
                .collect(),
        })
        .collect();
    to_json(&NeighborsView {
        metric: metric.to_string(),
        k: index.k,
        rows,
    })
}

#[derive(Serialize)]
struct HistogramView {
    pairs: u64,
    above: u64,
    share_above: f64,
    bins: Vec<(f64, f64, u64)>,
    same_target_free: f64,
}

/// Histogram of different-target test pairs of a generated corpus.
#[allow(clippy::too_many_arguments)]
pub fn synth_histogram(
    users: usize,
    items: usize,
    intents: usize,
    noise: f64,
    overlap: f64,
    seed: u64,
    metric: &str,
    bins: usize,
    threshold: f64,
) -> Result<String, String> {
    let cfg = SynthConfig {
        users,
        items,
        intents,
        noise,
        overlap,
        seed,
        ..SynthConfig::default()
    };
    let metric: Metric = metric.parse().map_err(msg)?;
    let data = generate(&cfg).map_err(msg)?;
    let set = build_sequences(&data.to_corpus(), cfg.max_len).map_err(msg)?;
    let prepared = PreparedSet::new(&set.test, metric).map_err(msg)?;
    let hist = similarity_histogram(&set.test, &prepared, bins, threshold).map_err(msg)?;
    to_json(&HistogramView {
        pairs: hist.pairs,
        above: hist.above,
        share_above: hist.share_above(),
        bins: hist.bins.iter().map(|b| (b.low, b.high, b.count)).collect(),
        same_target_free: StrongIndex::build(&set.train).empty_share(),
    })
}

#[derive(Serialize)]
struct LossView {
    strong_pair: f64,
    weak_pair: f64,
    strong_term: f64,
    weak_term: f64,
    clamped: bool,
    /// Gradient of the contrastive objective per row: center, strong, weak,
    /// then the negatives.
    grads: Vec<[f64; 2]>,
    points: Vec<[f64; 2]>,
}

fn polar(radius: f64, degrees: f64) -> Vec<f64> {
    let t = degrees.to_radians();
    vec![radius * t.cos(), radius * t.sin()]
}

/// Relative loss of one center at angle 0 with a strong positive, a weak
/// positive and `negatives` evenly spaced negatives, all at `radius`.
///
/// `variant` is one of `unweight`, `wrcl`, `weak` or `strong`; under `wrcl`
/// every negative carries `negative_score` and the weak positive
/// `weak_score`.
#[allow(clippy::too_many_arguments)]
pub fn relative_loss(
    strong_deg: f64,
    weak_deg: f64,
    negatives: usize,
    radius: f64,
    tau: f64,
    variant: &str,
    weak_score: f64,
    negative_score: f64,
) -> Result<String, String> {
    let variant: LossVariant = variant.parse().map_err(msg)?;
    if matches!(variant, LossVariant::Base | LossVariant::ThreePairs) {
        return Err("pick unweight, wrcl, weak or strong".into());
    }
    if negatives == 0 {
        return Err("need at least one negative".into());
    }
    let mut rows = vec![polar(radius, 0.0), polar(radius, strong_deg), polar(radius, weak_deg)];
    for j in 0..negatives {
        rows.push(polar(radius, 180.0 + 360.0 * (j as f64 + 0.5) / negatives as f64 - 180.0 / negatives as f64));
    }
    let reps = Matrix::from_rows(&rows);
    let mut roles = CenterRoles::new(0, Some(1), Some(2), rows.len());
    roles.weak_score = weak_score;
    roles.weights = vec![negative_score; rows.len()];
    roles.weights[1] = 1.0;
    roles.weights[2] = weak_score;
    let (breakdown, grads) =
        contrastive_with_grad(&reps, &[roles], variant, ContrastiveOptions::new(tau)).map_err(msg)?;
    to_json(&LossView {
        strong_pair: pair_loss(&reps, 0, 1, tau),
        weak_pair: pair_loss(&reps, 0, 2, tau),
        strong_term: breakdown.strong_term,
        weak_term: breakdown.weak_term,
        clamped: breakdown.clamped.first().copied().unwrap_or(false),
        grads: (0..grads.rows).map(|r| [grads.get(r, 0), grads.get(r, 1)]).collect(),
        points: rows.iter().map(|p| [p[0], p[1]]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_history_and_target() {
        let r = parse_records("1 2 3\n\n4,5\n").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].items, vec![1, 2]);
        assert_eq!(r[0].target, 3);
        assert_eq!(r[1].items, vec![4]);
        assert!(parse_records("1 2\n").is_err());
        assert!(parse_records("1 0 2\n3 4").is_err());
        assert!(parse_records("1 x\n3 4").is_err());
    }
}
