//! Joint next-item and contrastive training with Adam, plus a
//! finite-difference gradient checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RefreshCadence, TrainConfig};
use crate::corpus::{SequenceRecord, SequenceSet};
use crate::error::{RclError, Result};
use crate::eval::evaluate;
use crate::graph::{Tape, Var};
use crate::losses::{contrastive_on_tape, CenterRoles, ContrastiveOptions, LossBreakdown, LossVariant};
use crate::model::{represent_many, represent_on_tape, Dropout, ModelParams, ParamVars};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::selection::{epoch_batches, make_batch, BatchScorer, StrongIndex, TrainingBatch};
use crate::similarity::{Metric, PreparedSet, SimilarityIndex};
use crate::tensor::Matrix;

const STREAM_ORDER: u64 = 1;
const STREAM_SAMPLING: u64 = 2;
const ROLE_VIEW: u64 = 0;
const ROLE_AUGMENT: u64 = 1;

/// Generator for one dropout draw, keyed by run seed, step, sequence and role
/// so a forward pass never depends on which other passes ran before it.
pub fn dropout_rng(seed: u64, step: u64, sequence: u64, role: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_exact_mut(8).zip([seed, step, sequence, role]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dropout applied during one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutPlan {
    pub rate: f64,
    pub seed: u64,
    pub step: u64,
}

/// What one step optimizes: the loss variant, its options and `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub variant: LossVariant,
    pub lambda: f64,
    pub contrastive: ContrastiveOptions,
}

impl Objective {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Objective {
            variant: cfg.variant,
            lambda: cfg.lambda,
            contrastive: ContrastiveOptions {
                tau: cfg.tau,
                weighted_fallback: cfg.weighted_fallback,
            },
        }
    }
}

/// Loss handles of one objective built on a tape.
pub struct ObjectiveVars {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

fn forward<R: Rng>(tape: &mut Tape, pv: &ParamVars, params: &ModelParams, items: &[u32], rate: f64, rng: Option<R>) -> Result<Var> {
    match rng {
        Some(mut rng) if rate > 0.0 => {
            let d = Dropout { rate, rng: &mut rng };
            represent_on_tape(tape, pv, &params.config, items, Some(d))
        }
        _ => represent_on_tape::<ChaCha8Rng>(tape, pv, &params.config, items, None),
    }
}

/// Builds `rec + λ · contrastive` for `batch` on `tape`.
///
/// Rows of the representation matrix are the batch members in order,
/// followed under the `strong` variant by a second dropout view of each
/// center that has no same-target positive.
#[allow(clippy::too_many_arguments)]
pub fn objective_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    params: &ModelParams,
    records: &[SequenceRecord],
    batch: &TrainingBatch,
    sim_idx: Option<&SimilarityIndex>,
    objective: Objective,
    dropout: Option<DropoutPlan>,
) -> Result<ObjectiveVars> {
    let variant = objective.variant;
    let contrastive = variant != LossVariant::Base;
    let rows: &[usize] = if contrastive { &batch.members } else { &batch.centers };
    let rate = dropout.map_or(0.0, |d| d.rate);
    let rng_for = |id: usize, role: u64| dropout.map(|d| dropout_rng(d.seed, d.step, id as u64, role));
    let mut hs = Vec::with_capacity(rows.len());
    for &id in rows {
        hs.push(forward(tape, pv, params, &records[id].items, rate, rng_for(id, ROLE_VIEW))?);
    }
    let b = batch.centers.len();
    let mut rec_parts = Vec::with_capacity(b);
    for (i, &u) in batch.centers.iter().enumerate() {
        rec_parts.push(tape.softmax_xent(hs[i], pv.item_emb(), records[u].target as usize));
    }
    let rec_sum = tape.sum(&rec_parts);
    let rec = tape.scale(rec_sum, 1.0 / b as f64);

    if !contrastive {
        let breakdown = LossBreakdown {
            rec: tape.scalar(rec),
            strong_term: 0.0,
            weak_term: 0.0,
            clamped: vec![false; b],
            total: tape.scalar(rec),
        };
        return Ok(ObjectiveVars { total: rec, breakdown });
    }

    let mut augmented = vec![None; b];
    if variant == LossVariant::Strong {
        for (i, &u) in batch.centers.iter().enumerate() {
            if batch.strong[i].is_none() {
                augmented[i] = Some(hs.len());
                hs.push(forward(tape, pv, params, &records[u].items, rate, rng_for(u, ROLE_AUGMENT))?);
            }
        }
    }
    let n_rows = hs.len();
    let reps = tape.stack_rows(&hs);
    let mut roles = Vec::with_capacity(b);
    for (i, &u) in batch.centers.iter().enumerate() {
        let strong = match batch.strong[i] {
            Some(a) => batch.member_row(a),
            None => augmented[i],
        };
        let weak = batch.member_row(batch.weak[i]);
        let mut weights = vec![1.0; n_rows];
        weights[..batch.members.len()].copy_from_slice(batch.batch_scores.row(i));
        let weak_pool = match sim_idx {
            Some(idx) if variant == LossVariant::ThreePairs => (0..batch.members.len())
                .filter(|&j| idx.contains(u, batch.members[j]))
                .collect(),
            _ => weak.into_iter().collect(),
        };
        roles.push(CenterRoles {
            center: i,
            strong,
            weak,
            weak_score: batch.weak_score[i],
            weights,
            weak_pool,
        });
    }
    let terms = contrastive_on_tape(tape, reps, &roles, variant, objective.contrastive)?;
    let scaled = tape.scale(terms.total, objective.lambda);
    let total = tape.add(rec, scaled);
    let breakdown = LossBreakdown {
        rec: tape.scalar(rec),
        strong_term: tape.scalar(terms.strong),
        weak_term: tape.scalar(terms.weak),
        clamped: terms.clamped,
        total: tape.scalar(total),
    };
    Ok(ObjectiveVars { total, breakdown })
}

/// Loss breakdown and parameter gradients of one batch.
pub fn objective_with_grad(
    params: &ModelParams,
    records: &[SequenceRecord],
    batch: &TrainingBatch,
    sim_idx: Option<&SimilarityIndex>,
    objective: Objective,
    dropout: Option<DropoutPlan>,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let o = objective_on_tape(&mut tape, &pv, params, records, batch, sim_idx, objective, dropout)?;
    if !o.breakdown.total.is_finite() {
        return Ok((o.breakdown, Vec::new()));
    }
    let mut grads = tape.backward(o.total);
    let g = pv.gradients(&mut grads, params);
    Ok((o.breakdown, g))
}

/// Loss value only, with the same graph as [`objective_with_grad`].
pub fn objective_value(
    params: &ModelParams,
    records: &[SequenceRecord],
    batch: &TrainingBatch,
    sim_idx: Option<&SimilarityIndex>,
    objective: Objective,
    dropout: Option<DropoutPlan>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    Ok(objective_on_tape(&mut tape, &pv, params, records, batch, sim_idx, objective, dropout)?
        .breakdown
        .total)
}

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub rec: f64,
    pub strong: f64,
    pub weak: f64,
    pub clamp_rate: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub mean_rec: f64,
    pub mean_total: f64,
    pub valid_ndcg10: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation parameters under early stopping, otherwise the last
    /// parameters. After divergence, the parameters before the failing step.
    pub params: ModelParams,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub diverged_at: Option<u64>,
}

/// Progress notifications from [`train_with`].
pub enum TrainEvent<'a> {
    Step(&'a StepLog),
    Epoch(&'a EpochLog, &'a ModelParams),
}

/// Neighbor pool and scorer inputs for one metric.
struct Similarity {
    prepared: PreparedSet,
    index: SimilarityIndex,
}

impl Similarity {
    fn build(cfg: &TrainConfig, records: &[SequenceRecord], params: &ModelParams) -> Result<Self> {
        let prepared = if cfg.metric == Metric::Semantic {
            let seqs: Vec<&[u32]> = records.iter().map(|r| r.items.as_slice()).collect();
            PreparedSet::from_representations(&represent_many(params, &seqs)?)
        } else {
            PreparedSet::new(records, cfg.metric)?
        };
        let index = SimilarityIndex::from_prepared(&prepared, cfg.alpha, cfg.workers)?;
        Ok(Similarity { prepared, index })
    }
}

pub fn train(cfg: &TrainConfig, data: &SequenceSet) -> Result<TrainOutcome> {
    train_with(cfg, data, &mut |_| {})
}

/// Runs the training loop, reporting every step and epoch to `observer`.
pub fn train_with(cfg: &TrainConfig, data: &SequenceSet, observer: &mut dyn FnMut(TrainEvent<'_>)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let records = &data.train;
    if records.len() < 2 {
        return Err(RclError::EmptyCorpus);
    }
    let model_cfg = cfg.model_config(data.item_count);
    let mut params = ModelParams::init(model_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
    };
    let objective = Objective::from_config(cfg);
    let mut order_rng = stream_rng(cfg.seed, STREAM_ORDER);
    let mut sample_rng = stream_rng(cfg.seed, STREAM_SAMPLING);
    let contrastive = cfg.variant != LossVariant::Base;
    let strong_idx = StrongIndex::build(records);
    if contrastive {
        log::info!(
            "{} train sequences, {:.1}% without a same-target positive",
            records.len(),
            100.0 * strong_idx.empty_share()
        );
    }
    let mut sim = if contrastive { Some(Similarity::build(cfg, records, &params)?) } else { None };
    let early_stop = cfg.patience > 0 && !data.valid.is_empty();

    let mut outcome = TrainOutcome {
        params: params.clone(),
        steps: Vec::new(),
        epochs: Vec::new(),
        best_epoch: None,
        stopped_early: false,
        diverged_at: None,
    };
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.metric == Metric::Semantic && contrastive && cfg.semantic_refresh == RefreshCadence::Epoch {
            sim = Some(Similarity::build(cfg, records, &params)?);
        }
        let (mut sum_rec, mut sum_total, mut n_steps) = (0.0, 0.0, 0usize);
        for centers in epoch_batches(records.len(), cfg.batch_size, &mut order_rng) {
            if contrastive && cfg.metric == Metric::Semantic && cfg.semantic_refresh == RefreshCadence::Step && step > 0 {
                sim = Some(Similarity::build(cfg, records, &params)?);
            }
            let batch = match &sim {
                Some(s) => {
                    let scorer = BatchScorer::new(&s.prepared, &s.index);
                    make_batch(&centers, &strong_idx, &s.index, &scorer, &mut sample_rng)?
                }
                None => TrainingBatch {
                    centers: centers.clone(),
                    strong: vec![None; centers.len()],
                    weak: Vec::new(),
                    weak_score: Vec::new(),
                    members: centers.clone(),
                    batch_scores: Matrix::zeros(0, 0),
                },
            };
            let plan = DropoutPlan {
                rate: cfg.dropout,
                seed: cfg.seed,
                step,
            };
            let (breakdown, grads) =
                objective_with_grad(&params, records, &batch, sim.as_ref().map(|s| &s.index), objective, Some(plan))?;
            if !breakdown.total.is_finite() {
                log::error!("total loss is {} at step {step}; keeping the last finite parameters", breakdown.total);
                outcome.diverged_at = Some(step);
                outcome.params = params;
                return Ok(outcome);
            }
            adam_step(&mut params, &grads, &mut adam, adam_cfg)?;
            if !params.is_finite() {
                return Err(RclError::Diverged { step: step as usize });
            }
            let log = StepLog {
                step,
                epoch,
                rec: breakdown.rec,
                strong: breakdown.strong_term,
                weak: breakdown.weak_term,
                clamp_rate: breakdown.clamp_rate(),
                total: breakdown.total,
            };
            observer(TrainEvent::Step(&log));
            sum_rec += log.rec;
            sum_total += log.total;
            n_steps += 1;
            outcome.steps.push(log);
            step += 1;
        }
        let valid_ndcg10 = if early_stop {
            Some(evaluate(&params, &data.valid, &[10], "valid")?.ndcg[0])
        } else {
            None
        };
        let elog = EpochLog {
            epoch,
            steps: n_steps,
            mean_rec: sum_rec / n_steps.max(1) as f64,
            mean_total: sum_total / n_steps.max(1) as f64,
            valid_ndcg10,
        };
        log::debug!("epoch {epoch}: loss {:.5} valid ndcg@10 {:?}", elog.mean_total, elog.valid_ndcg10);
        observer(TrainEvent::Epoch(&elog, &params));
        outcome.epochs.push(elog);
        if let Some(v) = valid_ndcg10 {
            if v > best {
                best = v;
                since_best = 0;
                outcome.best_epoch = Some(epoch);
                outcome.params = params.clone();
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    outcome.stopped_early = true;
                    return Ok(outcome);
                }
            }
        }
    }
    if !early_stop {
        outcome.params = params;
    }
    Ok(outcome)
}

/// Finite-difference comparison result.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub probes: usize,
}

/// Compares `analytic` with central differences of `loss`, over `probes`
/// random coordinates (every coordinate when `probes` is 0). The relative
/// error of a coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<F, R>(
    params: &ModelParams,
    analytic: &[Matrix],
    mut loss: F,
    probes: usize,
    h: f64,
    floor: f64,
    rng: &mut R,
) -> GradCheckReport
where
    F: FnMut(&ModelParams) -> f64,
    R: Rng + ?Sized,
{
    let names = params.names();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let coords: Vec<usize> = if probes == 0 || probes >= total {
        (0..total).collect()
    } else {
        (0..probes).map(|_| rng.gen_range(0..total)).collect()
    };
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        probes: coords.len(),
    };
    for flat in coords {
        let (mut t, mut i) = (0, flat);
        while i >= sizes[t] {
            i -= sizes[t];
            t += 1;
        }
        let orig = work.tensors()[t].data[i];
        work.tensors_mut()[t].data[i] = orig + h;
        let up = loss(&work);
        work.tensors_mut()[t].data[i] = orig - h;
        let down = loss(&work);
        work.tensors_mut()[t].data[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[t].data[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_tensor = names[t].clone();
            report.worst_index = i;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn quadratic_grad_check_is_exact() {
        let cfg = ModelConfig::new(5, 4, 4, 1, 1);
        let params = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let analytic: Vec<Matrix> = params.tensors().iter().map(|t| t.scaled(2.0)).collect();
        let sq = |p: &ModelParams| p.tensors().iter().map(|t| t.data.iter().map(|x| x * x).sum::<f64>()).sum::<f64>();
        // central differences are exact on a quadratic, so a wide step only
        // shrinks the roundoff
        let r = grad_check(&params, &analytic, sq, 0, 1e-2, 1e-6, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        let mut bad = analytic.clone();
        bad[2].data[0] += 1.0;
        let r = grad_check(&params, &bad, sq, 0, 1e-5, 1e-6, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst_tensor, params.names()[2]);
    }

    #[test]
    fn dropout_streams_are_keyed() {
        let a: u64 = dropout_rng(1, 2, 3, 0).gen();
        let b: u64 = dropout_rng(1, 2, 3, 0).gen();
        let c: u64 = dropout_rng(1, 2, 3, 1).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
