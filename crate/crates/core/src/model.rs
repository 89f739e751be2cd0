//! Item and positional embeddings, a causal self-attention encoder and
//! full-vocabulary next-item scoring with the shared item table.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PADDING;
use crate::error::{RclError, Result};
use crate::graph::{weighted_log_sum_exp, Grads, Tape, Var};
use crate::tensor::{dot, Matrix};

pub const LAYER_NORM_EPS: f64 = 1e-8;
const CHECKPOINT_MAGIC: &[u8; 4] = b"RCLM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub item_count: usize,
    pub max_len: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

impl ModelConfig {
    pub fn new(item_count: usize, max_len: usize, dim: usize, blocks: usize, heads: usize) -> Self {
        ModelConfig {
            item_count,
            max_len,
            dim,
            blocks,
            heads,
            ffn_dim: dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(RclError::InvalidConfig(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.item_count == 0 || self.max_len == 0 || self.ffn_dim == 0 {
            return Err(RclError::InvalidConfig("item_count, max_len and ffn_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub w_1: Matrix,
    pub w_2: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

/// All trainable tensors. Row 0 of `item_emb` is the padding row and stays
/// zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub item_emb: Matrix,
    pub pos_emb: Matrix,
    pub blocks: Vec<BlockParams>,
}

fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect())
}

impl ModelParams {
    /// Embeddings and projections uniform in `±1/√d`, layer norms at identity.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let f = config.ffn_dim;
        let bound = 1.0 / (d as f64).sqrt();
        let mut item_emb = uniform(config.item_count + 1, d, bound, rng);
        item_emb.row_mut(PADDING as usize).fill(0.0);
        let pos_emb = uniform(config.max_len, d, bound, rng);
        let blocks = (0..config.blocks)
            .map(|_| BlockParams {
                w_q: uniform(d, d, bound, rng),
                w_k: uniform(d, d, bound, rng),
                w_v: uniform(d, d, bound, rng),
                w_o: uniform(d, d, bound, rng),
                ln1_gain: Matrix::filled(1, d, 1.0),
                ln1_bias: Matrix::zeros(1, d),
                w_1: uniform(d, f, bound, rng),
                w_2: uniform(f, d, bound, rng),
                ln2_gain: Matrix::filled(1, d, 1.0),
                ln2_bias: Matrix::zeros(1, d),
            })
            .collect();
        Ok(ModelParams {
            config,
            item_emb,
            pos_emb,
            blocks,
        })
    }

    /// Tensor names in canonical order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["item_emb".to_string(), "pos_emb".to_string()];
        for b in 0..self.blocks.len() {
            for t in ["w_q", "w_k", "w_v", "w_o", "ln1_gain", "ln1_bias", "w_1", "w_2", "ln2_gain", "ln2_bias"] {
                names.push(format!("block{b}.{t}"));
            }
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.item_emb, &self.pos_emb];
        for b in &self.blocks {
            out.extend([
                &b.w_q,
                &b.w_k,
                &b.w_v,
                &b.w_o,
                &b.ln1_gain,
                &b.ln1_bias,
                &b.w_1,
                &b.w_2,
                &b.ln2_gain,
                &b.ln2_bias,
            ]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.item_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend([
                &mut b.w_q,
                &mut b.w_k,
                &mut b.w_v,
                &mut b.w_o,
                &mut b.ln1_gain,
                &mut b.ln1_bias,
                &mut b.w_1,
                &mut b.w_2,
                &mut b.ln2_gain,
                &mut b.ln2_bias,
            ]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn zero_padding_row(&mut self) {
        self.item_emb.row_mut(PADDING as usize).fill(0.0);
    }

    /// Puts every tensor on `tape` as a leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let vars = self.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
        ParamVars {
            vars,
            blocks: self.blocks.len(),
        }
    }

    /// Versioned little-endian checkpoint: header with the model shape, then
    /// each tensor as `name, rows, cols, f64 data`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let c = &self.config;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [c.item_count, c.max_len, c.dim, c.blocks, c.heads, c.ffn_dim] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        let names = self.names();
        let tensors = self.tensors();
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, t) in names.iter().zip(tensors) {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows as u32).to_le_bytes())?;
            w.write_all(&(t.cols as u32).to_le_bytes())?;
            for x in &t.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut buf4 = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut buf4)
                .map_err(|e| RclError::Format(format!("truncated checkpoint: {e}")))?;
            Ok(u32::from_le_bytes(buf4))
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| RclError::Format(format!("truncated checkpoint: {e}")))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(RclError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(RclError::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 6];
        for d in dims.iter_mut() {
            *d = read_u32(&mut r)? as usize;
        }
        let config = ModelConfig {
            item_count: dims[0],
            max_len: dims[1],
            dim: dims[2],
            blocks: dims[3],
            heads: dims[4],
            ffn_dim: dims[5],
        };
        config.validate()?;
        let mut params = ModelParams::init(config, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        let names = params.names();
        let count = read_u32(&mut r)? as usize;
        if count != names.len() {
            return Err(RclError::Format(format!("expected {} tensors, found {count}", names.len())));
        }
        for (name, t) in names.iter().zip(params.tensors_mut()) {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)
                .map_err(|e| RclError::Format(format!("truncated checkpoint: {e}")))?;
            let mut got = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut got)
                .map_err(|e| RclError::Format(format!("truncated checkpoint: {e}")))?;
            if got != name.as_bytes() {
                return Err(RclError::Format(format!(
                    "expected tensor `{name}`, found `{}`",
                    String::from_utf8_lossy(&got)
                )));
            }
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            if (rows, cols) != t.shape() {
                return Err(RclError::Format(format!("tensor `{name}` has shape {rows}x{cols}, expected {:?}", t.shape())));
            }
            let mut bytes = vec![0u8; rows * cols * 8];
            r.read_exact(&mut bytes)
                .map_err(|e| RclError::Format(format!("truncated checkpoint: {e}")))?;
            for (x, chunk) in t.data.iter_mut().zip(bytes.chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        Ok(params)
    }
}

/// Tape handles for every parameter tensor, in [`ModelParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
    blocks: usize,
}

struct BlockVars<'a>(&'a [Var]);

impl BlockVars<'_> {
    fn w_q(&self) -> Var {
        self.0[0]
    }
    fn w_k(&self) -> Var {
        self.0[1]
    }
    fn w_v(&self) -> Var {
        self.0[2]
    }
    fn w_o(&self) -> Var {
        self.0[3]
    }
    fn ln1(&self) -> (Var, Var) {
        (self.0[4], self.0[5])
    }
    fn w_1(&self) -> Var {
        self.0[6]
    }
    fn w_2(&self) -> Var {
        self.0[7]
    }
    fn ln2(&self) -> (Var, Var) {
        (self.0[8], self.0[9])
    }
}

impl ParamVars {
    pub fn item_emb(&self) -> Var {
        self.vars[0]
    }

    pub fn pos_emb(&self) -> Var {
        self.vars[1]
    }

    fn block(&self, b: usize) -> BlockVars<'_> {
        BlockVars(&self.vars[2 + 10 * b..2 + 10 * (b + 1)])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients for every tensor, zeros where nothing flowed.
    pub fn gradients(&self, grads: &mut Grads, params: &ModelParams) -> Vec<Matrix> {
        debug_assert_eq!(self.blocks, params.blocks.len());
        self.vars
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| grads.take_or_zeros(v, t.rows, t.cols))
            .collect()
    }
}

/// Dropout configuration for one forward pass.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
}

fn maybe_dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, dropout: &mut Option<Dropout<'_, R>>) -> Var {
    match dropout {
        Some(d) if d.rate > 0.0 => {
            let len = tape.value(x).len();
            let mask = dropout_mask(len, d.rate, d.rng);
            tape.mask(x, mask)
        }
        _ => x,
    }
}

/// Leading padding is dropped; any padding after the first real item is an
/// error, as are ids beyond the vocabulary.
pub fn strip_padding(items: &[u32], item_count: usize) -> Result<&[u32]> {
    let start = items.iter().position(|&i| i != PADDING).unwrap_or(items.len());
    let real = &items[start..];
    if real.is_empty() {
        return Err(RclError::UndefinedInput("sequence has no real items".into()));
    }
    if let Some(&bad) = real.iter().find(|&&i| i == PADDING || i as usize > item_count) {
        return Err(RclError::IndexOutOfRange(format!("item id {bad} (item count {item_count})")));
    }
    Ok(real)
}

/// `E_u`: row `i` is `M[item_i] + P[i]`.
pub fn embed(items: &[u32], params: &ModelParams) -> Result<Matrix> {
    let real = strip_padding(items, params.config.item_count)?;
    let real = &real[real.len().saturating_sub(params.config.max_len)..];
    let d = params.config.dim;
    let mut e = Matrix::zeros(real.len(), d);
    for (i, &item) in real.iter().enumerate() {
        for (j, x) in e.row_mut(i).iter_mut().enumerate() {
            *x = params.item_emb.get(item as usize, j) + params.pos_emb.get(i, j);
        }
    }
    Ok(e)
}

/// Embeds `items` on the tape (most recent `max_len` items).
pub fn embed_on_tape(tape: &mut Tape, pv: &ParamVars, config: &ModelConfig, items: &[u32]) -> Result<Var> {
    let real = strip_padding(items, config.item_count)?;
    let real = &real[real.len().saturating_sub(config.max_len)..];
    let ids: Vec<usize> = real.iter().map(|&i| i as usize).collect();
    let positions: Vec<usize> = (0..ids.len()).collect();
    let m = tape.gather(pv.item_emb(), &ids);
    let p = tape.gather(pv.pos_emb(), &positions);
    Ok(tape.add(m, p))
}

/// Runs every block over `x` (`L × d`) and returns all hidden states.
pub fn encode_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &ModelConfig,
    x: Var,
    mut dropout: Option<Dropout<'_, R>>,
) -> Var {
    let d = config.dim;
    let dh = d / config.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut x = maybe_dropout(tape, x, &mut dropout);
    for b in 0..config.blocks {
        let bv = pv.block(b);
        let q = tape.matmul(x, bv.w_q());
        let k = tape.matmul(x, bv.w_k());
        let v = tape.matmul(x, bv.w_v());
        let mut heads = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            let (qh, kh, vh) = if config.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh),
                    tape.slice_cols(k, h * dh, dh),
                    tape.slice_cols(v, h * dh, dh),
                )
            };
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.causal_softmax(scores);
            let attn = maybe_dropout(tape, attn, &mut dropout);
            heads.push(tape.matmul(attn, vh));
        }
        let merged = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        let attn_out = tape.matmul(merged, bv.w_o());
        let res = tape.add(x, attn_out);
        let (g1, b1) = bv.ln1();
        let x1 = tape.layer_norm(res, g1, b1, LAYER_NORM_EPS);
        let hidden = tape.matmul(x1, bv.w_1());
        let hidden = tape.relu(hidden);
        let ffn = tape.matmul(hidden, bv.w_2());
        let ffn = maybe_dropout(tape, ffn, &mut dropout);
        let res = tape.add(x1, ffn);
        let (g2, b2) = bv.ln2();
        x = tape.layer_norm(res, g2, b2, LAYER_NORM_EPS);
    }
    x
}

/// `h_u` on the tape: the hidden state at the last real position.
pub fn represent_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &ModelConfig,
    items: &[u32],
    dropout: Option<Dropout<'_, R>>,
) -> Result<Var> {
    let e = embed_on_tape(tape, pv, config, items)?;
    let hidden = encode_on_tape(tape, pv, config, e, dropout);
    let last = tape.value(hidden).rows - 1;
    Ok(tape.select_row(hidden, last))
}

/// Hidden states at every real position, eval mode.
pub fn encode_all(params: &ModelParams, items: &[u32]) -> Result<Matrix> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let e = embed_on_tape(&mut tape, &pv, &params.config, items)?;
    let h = encode_on_tape::<rand::rngs::mock::StepRng>(&mut tape, &pv, &params.config, e, None);
    Ok(tape.value(h).clone())
}

/// Runs the encoder over an already embedded `E_u`.
pub fn encode<R: Rng + ?Sized>(embedded: &Matrix, params: &ModelParams, dropout_rate: f64, train_mode: bool, rng: &mut R) -> Vec<f64> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let e = tape.leaf(embedded.clone());
    let dropout = (train_mode && dropout_rate > 0.0).then_some(Dropout { rate: dropout_rate, rng });
    let h = encode_on_tape(&mut tape, &pv, &params.config, e, dropout);
    let hv = tape.value(h);
    hv.row(hv.rows - 1).to_vec()
}

/// Eval-mode `h_u` for many sequences, registering the parameters once per
/// worker.
pub fn represent_many<S: AsRef<[u32]> + Sync>(params: &ModelParams, seqs: &[S]) -> Result<Vec<Vec<f64>>> {
    let run = |chunk: &[S]| -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let pv = params.register(&mut tape);
        let mark = tape.len();
        let mut out = Vec::with_capacity(chunk.len());
        for s in chunk {
            let h = represent_on_tape::<rand::rngs::mock::StepRng>(&mut tape, &pv, &params.config, s.as_ref(), None)?;
            out.push(tape.value(h).data.clone());
            tape.truncate(mark);
        }
        Ok(out)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let chunk = seqs.len().div_ceil(rayon::current_num_threads().max(1)).max(64);
        let parts: Vec<Result<Vec<Vec<f64>>>> = seqs.par_chunks(chunk).map(run).collect();
        let mut out = Vec::with_capacity(seqs.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run(seqs)
    }
}

/// `h_u` in eval mode.
pub fn represent(params: &ModelParams, items: &[u32]) -> Result<Vec<f64>> {
    let all = encode_all(params, items)?;
    Ok(all.row(all.rows - 1).to_vec())
}

/// Item scores `h · M[i]` for `i = 1..=|V|`, indexed by item id (slot 0 is
/// unused and set to `-inf`).
pub fn item_scores(h: &[f64], item_emb: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(item_emb.rows);
    out.push(f64::NEG_INFINITY);
    out.extend((1..item_emb.rows).map(|i| dot(h, item_emb.row(i))));
    out
}

/// `softmax(h Mᵀ)` over real items, indexed by item id with `p[0] = 0`.
pub fn predict(h: &[f64], item_emb: &Matrix) -> Vec<f64> {
    let scores = item_scores(h, item_emb);
    let (_, q) = weighted_log_sum_exp(&scores[1..], None);
    let mut p = Vec::with_capacity(scores.len());
    p.push(0.0);
    p.extend(q);
    p
}
