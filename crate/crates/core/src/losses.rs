//! Next-item loss, pairwise and similarity-weighted InfoNCE, the
//! boundary-clamped relative objectives and the ablation variants.
//!
//! Contrastive terms are built on a [`Tape`] over a matrix of representations
//! so the same code serves training and the value-only helpers below.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RclError, Result};
use crate::graph::{Tape, Var};
use crate::tensor::Matrix;

/// Floor applied to every denominator weight of the weighted InfoNCE.
pub const WEIGHT_FLOOR: f64 = 1e-6;
/// Smallest probability accepted by [`rec_loss`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossVariant {
    /// Next-item loss only.
    Base,
    /// Same-target positives only.
    Strong,
    /// Similarity-sampled positives only.
    Weak,
    /// Relative loss without similarity weights.
    Unweight,
    /// Relative loss with similarity-weighted weak pairs.
    Wrcl,
    /// Strong-vs-weak InfoNCE plus both pair losses.
    ThreePairs,
}

impl LossVariant {
    pub const ALL: [LossVariant; 6] = [
        LossVariant::Base,
        LossVariant::Strong,
        LossVariant::Weak,
        LossVariant::Unweight,
        LossVariant::Wrcl,
        LossVariant::ThreePairs,
    ];

    pub fn uses_weak(self) -> bool {
        !matches!(self, LossVariant::Base | LossVariant::Strong)
    }

    pub fn uses_strong(self) -> bool {
        !matches!(self, LossVariant::Base | LossVariant::Weak)
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossVariant::Base => "base",
            LossVariant::Strong => "strong",
            LossVariant::Weak => "weak",
            LossVariant::Unweight => "unweight",
            LossVariant::Wrcl => "wrcl",
            LossVariant::ThreePairs => "three_pairs",
        })
    }
}

impl FromStr for LossVariant {
    type Err = RclError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "base" => Ok(LossVariant::Base),
            "strong" => Ok(LossVariant::Strong),
            "weak" => Ok(LossVariant::Weak),
            "unweight" | "unweighted" | "rcl" => Ok(LossVariant::Unweight),
            "wrcl" => Ok(LossVariant::Wrcl),
            "three_pairs" | "3pairs" | "3_pairs" => Ok(LossVariant::ThreePairs),
            other => Err(RclError::InvalidConfig(format!("unknown loss variant `{other}`"))),
        }
    }
}

/// Mean of `-ln p[target]` over a batch of probability vectors indexed by
/// item id. Probabilities below [`PROB_FLOOR`] are clipped.
pub fn rec_loss(predictions: &[Vec<f64>], targets: &[u32]) -> f64 {
    assert_eq!(predictions.len(), targets.len());
    if predictions.is_empty() {
        return 0.0;
    }
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, &t)| {
            let pt = p[t as usize];
            if pt < PROB_FLOOR {
                log::warn!("target probability {pt:e} clipped to {PROB_FLOOR:e}");
            }
            -pt.max(PROB_FLOOR).ln()
        })
        .sum();
    total / predictions.len() as f64
}

/// `rec + λ · contrastive`
pub fn total_loss(rec: f64, contrastive: f64, lambda: f64) -> f64 {
    rec + lambda * contrastive
}

/// Roles of one center sequence, as row indices into the representation
/// matrix of its batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterRoles {
    pub center: usize,
    pub strong: Option<usize>,
    pub weak: Option<usize>,
    /// `s_{u,b}` for the weak positive.
    pub weak_score: f64,
    /// `s_{u,c}` for every row `c`; the center's own entry is ignored.
    pub weights: Vec<f64>,
    /// Rows that belong to the center's weak-positive pool. Only the
    /// three-pairs objective reads more than the sampled weak row.
    pub weak_pool: Vec<usize>,
}

impl CenterRoles {
    /// Roles with unit weights for a batch of `rows` representations.
    pub fn new(center: usize, strong: Option<usize>, weak: Option<usize>, rows: usize) -> Self {
        CenterRoles {
            center,
            strong,
            weak,
            weak_score: 1.0,
            weights: vec![1.0; rows],
            weak_pool: weak.into_iter().collect(),
        }
    }
}

/// Options that change how the relative objectives are assembled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveOptions {
    pub tau: f64,
    /// Under `wrcl`, use the weighted weak pair when no strong positive exists.
    pub weighted_fallback: bool,
}

impl ContrastiveOptions {
    pub fn new(tau: f64) -> Self {
        ContrastiveOptions {
            tau,
            weighted_fallback: true,
        }
    }
}

/// Per-batch contrastive terms and their tape handles.
#[derive(Debug, Clone)]
pub struct ContrastiveTerms {
    pub strong: Var,
    pub weak: Var,
    pub total: Var,
    /// Whether each center's weak term took the boundary value. `false` for
    /// centers without a boundary.
    pub clamped: Vec<bool>,
    /// `L^max_u` per center when a strong positive was present.
    pub boundaries: Vec<Option<f64>>,
}

/// Everything reported for one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub strong_term: f64,
    pub weak_term: f64,
    pub clamped: Vec<bool>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn clamp_rate(&self) -> f64 {
        if self.clamped.is_empty() {
            0.0
        } else {
            self.clamped.iter().filter(|&&c| c).count() as f64 / self.clamped.len() as f64
        }
    }
}

fn others(rows: usize, center: usize) -> Vec<usize> {
    (0..rows).filter(|&c| c != center).collect()
}

/// `L^pair(u, pos)` against every other row of `reps`.
pub fn pair_loss_on_tape(tape: &mut Tape, reps: Var, center: usize, pos: usize, tau: f64) -> Var {
    let rows = tape.value(reps).rows;
    tape.info_nce(reps, center, pos, &others(rows, center), None, tau)
}

/// `L^weighted(u, pos)`: numerator weight `s_pos`, denominator weights
/// `max(s_{u,c}, WEIGHT_FLOOR)`.
pub fn weighted_pair_loss_on_tape(
    tape: &mut Tape,
    reps: Var,
    center: usize,
    pos: usize,
    weights: &[f64],
    s_pos: f64,
    tau: f64,
) -> Result<Var> {
    if !(s_pos > 0.0) {
        return Err(RclError::DegenerateWeight(format!("positive weight {s_pos} makes the loss infinite")));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(RclError::DegenerateWeight(format!("negative or NaN weight {w}")));
    }
    let rows = tape.value(reps).rows;
    let cands = others(rows, center);
    let w: Vec<f64> = cands
        .iter()
        .map(|&c| if c == pos { s_pos.max(WEIGHT_FLOOR) } else { weights[c].max(WEIGHT_FLOOR) })
        .collect();
    Ok(tape.info_nce(reps, center, pos, &cands, Some((&w, s_pos)), tau))
}

/// `L^{S-W}_u`: the strong positive against the center's weak-pool rows
/// present in the batch.
fn strong_vs_weak_on_tape(tape: &mut Tape, reps: Var, roles: &CenterRoles, strong: usize, tau: f64) -> Var {
    let mut cands = vec![strong];
    for &c in &roles.weak_pool {
        if c != roles.center && c != strong && !cands.contains(&c) {
            cands.push(c);
        }
    }
    tape.info_nce(reps, roles.center, strong, &cands, None, tau)
}

/// `L^max_u` over the strong pair losses available this step.
pub fn strong_boundary(strong_pair_losses: &[f64]) -> Option<f64> {
    strong_pair_losses.iter().copied().reduce(f64::max)
}

/// Builds the contrastive objective of `variant` over `reps`, reduced as the
/// sum over centers divided by the number of centers.
pub fn contrastive_on_tape(
    tape: &mut Tape,
    reps: Var,
    centers: &[CenterRoles],
    variant: LossVariant,
    opts: ContrastiveOptions,
) -> Result<ContrastiveTerms> {
    let tau = opts.tau;
    let mut strong_parts = Vec::new();
    let mut weak_parts = Vec::new();
    let mut clamped = Vec::with_capacity(centers.len());
    let mut boundaries = Vec::with_capacity(centers.len());
    for roles in centers {
        let u = roles.center;
        let mut was_clamped = false;
        let mut boundary = None;
        match variant {
            LossVariant::Base => {}
            LossVariant::Strong => {
                if let Some(a) = roles.strong {
                    strong_parts.push(pair_loss_on_tape(tape, reps, u, a, tau));
                }
            }
            LossVariant::Weak => {
                if let Some(b) = roles.weak {
                    weak_parts.push(pair_loss_on_tape(tape, reps, u, b, tau));
                }
            }
            LossVariant::Unweight | LossVariant::Wrcl => {
                let weighted = variant == LossVariant::Wrcl;
                let strong = roles.strong.map(|a| pair_loss_on_tape(tape, reps, u, a, tau));
                if let Some(ls) = strong {
                    strong_parts.push(ls);
                    boundary = Some(tape.scalar(ls));
                }
                let use_weights = weighted && (strong.is_some() || opts.weighted_fallback);
                let weak = match roles.weak {
                    Some(b) if use_weights => {
                        if roles.weak_score > 0.0 {
                            Some(weighted_pair_loss_on_tape(tape, reps, u, b, &roles.weights, roles.weak_score, tau)?)
                        } else {
                            // a zero-similarity draw carries no weight
                            None
                        }
                    }
                    Some(b) => Some(pair_loss_on_tape(tape, reps, u, b, tau)),
                    None => None,
                };
                match (weak, strong) {
                    (Some(lw), Some(ls)) => {
                        was_clamped = tape.scalar(lw) < tape.scalar(ls);
                        weak_parts.push(tape.max2(lw, ls));
                    }
                    (Some(lw), None) => weak_parts.push(lw),
                    (None, _) => {}
                }
            }
            LossVariant::ThreePairs => match (roles.strong, roles.weak) {
                (Some(a), Some(b)) => {
                    let sw = strong_vs_weak_on_tape(tape, reps, roles, a, tau);
                    let la = pair_loss_on_tape(tape, reps, u, a, tau);
                    let lb = pair_loss_on_tape(tape, reps, u, b, tau);
                    strong_parts.push(sw);
                    strong_parts.push(la);
                    weak_parts.push(lb);
                }
                _ => log::debug!("three-pairs: center row {u} lacks a tier; skipped"),
            },
        }
        clamped.push(was_clamped);
        boundaries.push(boundary);
    }
    let scale = if centers.is_empty() { 0.0 } else { 1.0 / centers.len() as f64 };
    let s = tape.sum(&strong_parts);
    let strong = tape.scale(s, scale);
    let w = tape.sum(&weak_parts);
    let weak = tape.scale(w, scale);
    let total = tape.add(strong, weak);
    Ok(ContrastiveTerms {
        strong,
        weak,
        total,
        clamped,
        boundaries,
    })
}

/// Value and gradient with respect to `reps` of a contrastive objective.
pub fn contrastive_with_grad(
    reps: &Matrix,
    centers: &[CenterRoles],
    variant: LossVariant,
    opts: ContrastiveOptions,
) -> Result<(LossBreakdown, Matrix)> {
    let mut tape = Tape::new();
    let r = tape.leaf(reps.clone());
    let terms = contrastive_on_tape(&mut tape, r, centers, variant, opts)?;
    let mut grads = tape.backward(terms.total);
    let g = grads.take_or_zeros(r, reps.rows, reps.cols);
    Ok((
        LossBreakdown {
            rec: 0.0,
            strong_term: tape.scalar(terms.strong),
            weak_term: tape.scalar(terms.weak),
            clamped: terms.clamped,
            total: tape.scalar(terms.total),
        },
        g,
    ))
}

/// `L^pair(u, pos)` with every other row of `reps` in the denominator.
pub fn pair_loss(reps: &Matrix, center: usize, pos: usize, tau: f64) -> f64 {
    let mut tape = Tape::new();
    let r = tape.leaf(reps.clone());
    let l = pair_loss_on_tape(&mut tape, r, center, pos, tau);
    tape.scalar(l)
}

pub fn weighted_pair_loss(reps: &Matrix, center: usize, pos: usize, weights: &[f64], s_pos: f64, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let r = tape.leaf(reps.clone());
    let l = weighted_pair_loss_on_tape(&mut tape, r, center, pos, weights, s_pos, tau)?;
    Ok(tape.scalar(l))
}

fn contrastive_value(reps: &Matrix, centers: &[CenterRoles], variant: LossVariant, opts: ContrastiveOptions) -> Result<LossBreakdown> {
    contrastive_with_grad(reps, centers, variant, opts).map(|(b, _)| b)
}

/// Unweighted relative loss, falling back to the weak pair alone when a
/// center has no strong positive.
pub fn rcl_loss(reps: &Matrix, centers: &[CenterRoles], tau: f64) -> Result<f64> {
    contrastive_value(reps, centers, LossVariant::Unweight, ContrastiveOptions::new(tau)).map(|b| b.total)
}

/// Weighted relative loss with its strong/weak split.
pub fn wrcl_loss(reps: &Matrix, centers: &[CenterRoles], opts: ContrastiveOptions) -> Result<LossBreakdown> {
    contrastive_value(reps, centers, LossVariant::Wrcl, opts)
}

pub fn three_pairs_loss(reps: &Matrix, centers: &[CenterRoles], tau: f64) -> Result<f64> {
    contrastive_value(reps, centers, LossVariant::ThreePairs, ContrastiveOptions::new(tau)).map(|b| b.total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reps(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn rec_loss_examples() {
        assert_eq!(rec_loss(&[vec![0.0, 1.0, 0.0]], &[1]), 0.0);
        let uniform = vec![0.0, 0.25, 0.25, 0.25, 0.25];
        assert!((rec_loss(std::slice::from_ref(&uniform), &[3]) - 4f64.ln()).abs() < 1e-15);
        let clipped = rec_loss(&[vec![0.0, 1.0, 0.0]], &[2]);
        assert!((clipped - (-PROB_FLOOR.ln())).abs() < 1e-12);
    }

    #[test]
    fn pair_loss_examples() {
        // center row 0; dot with pos = 0, other = 0
        let r = reps(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        assert!((pair_loss(&r, 0, 1, 1.0) - 2f64.ln()).abs() < 1e-15);
        // dots {pos: 2, other: 0}
        let r = reps(&[&[1.0, 0.0], &[2.0, 0.0], &[0.0, 5.0]]);
        let want = (1.0 + (-2f64).exp()).ln();
        assert!((pair_loss(&r, 0, 1, 1.0) - want).abs() < 1e-15);
        assert!((want - 0.1269).abs() < 1e-4);
        // large temperature tends to ln(|A| - 1)
        let big = pair_loss(&r, 0, 1, 1e9);
        assert!((big - 2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn weighted_examples() {
        let r = reps(&[&[1.0, 0.0], &[0.5, 0.5], &[0.5, -0.5]]);
        let w = [0.0, 0.8, 0.2];
        let l = weighted_pair_loss(&r, 0, 1, &w, 0.8, 1.0).unwrap();
        assert!((l - (-(0.8f64).ln())).abs() < 1e-15);
        let equal = weighted_pair_loss(&r, 0, 1, &[0.0, 0.3, 0.3], 0.3, 0.7).unwrap();
        assert!((equal - pair_loss(&r, 0, 1, 0.7)).abs() < 1e-12);
        let near_zero = weighted_pair_loss(&r, 0, 1, &[0.0, 1.0, 0.0], 1.0, 1.0).unwrap();
        assert!(near_zero.abs() < 1e-5);
        assert!(matches!(
            weighted_pair_loss(&r, 0, 1, &w, 0.0, 1.0),
            Err(RclError::DegenerateWeight(_))
        ));
    }

    #[test]
    fn boundary_is_max() {
        assert_eq!(strong_boundary(&[0.9]), Some(0.9));
        assert_eq!(strong_boundary(&[0.4, 0.9]), Some(0.9));
        assert_eq!(strong_boundary(&[]), None);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.0, 0.5, 0.0), 1.0);
        assert!((total_loss(1.0, 0.5, 0.2) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn clamp_routes_to_boundary() {
        // center 0; strong 1 is far (large loss), weak 2 is close (small loss)
        let r = reps(&[&[1.0, 0.0], &[-0.5, 0.2], &[2.0, 0.0], &[0.0, 1.0]]);
        let roles = [CenterRoles::new(0, Some(1), Some(2), 4)];
        let (b, g) = contrastive_with_grad(&r, &roles, LossVariant::Unweight, ContrastiveOptions::new(1.0)).unwrap();
        assert_eq!(b.clamped, vec![true]);
        assert!((b.weak_term - b.strong_term).abs() < 1e-15);
        // weak row only receives gradient as a denominator member of the two strong terms
        let strong_only = contrastive_with_grad(&r, &roles, LossVariant::Strong, ContrastiveOptions::new(1.0)).unwrap().1;
        for j in 0..2 {
            assert!((g.get(2, j) - 2.0 * strong_only.get(2, j)).abs() < 1e-15);
        }
    }

    #[test]
    fn variant_tags() {
        for v in LossVariant::ALL {
            assert_eq!(v.to_string().parse::<LossVariant>().unwrap(), v);
        }
        assert!("nope".parse::<LossVariant>().is_err());
    }

    #[test]
    fn breakdown_clamp_rate() {
        let b = LossBreakdown {
            rec: 0.0,
            strong_term: 0.0,
            weak_term: 0.0,
            clamped: vec![true, false, true, true],
            total: 0.0,
        };
        assert_eq!(b.clamp_rate(), 0.75);
    }
}
