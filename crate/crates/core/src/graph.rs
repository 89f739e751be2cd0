//! A small reverse-mode differentiation tape over dense matrices.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep visits
//! every node after all of its consumers. Only the operations the encoder and
//! the contrastive objectives need are provided; each carries whatever forward
//! intermediates its backward rule reads.

use crate::tensor::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Gather { src: Var, ids: Vec<usize> },
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Scale(Var, f64),
    CausalSoftmax(Var),
    Mask(Var, Vec<f64>),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    SliceCols { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    SelectRow(Var, usize),
    StackRows(Vec<Var>),
    SoftmaxXent {
        h: Var,
        table: Var,
        target: usize,
        probs: Vec<f64>,
    },
    InfoNce {
        reps: Var,
        center: usize,
        pos: usize,
        cands: Vec<usize>,
        tau: f64,
        q: Vec<f64>,
    },
    Max2(Var, Var),
    Sum(Vec<Var>),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros shaped like `like` when nothing reached it.
    pub fn take_or_zeros(&mut self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.grads[v.0].take().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn accumulate_row(slot: &mut Option<Matrix>, rows: usize, cols: usize, r: usize, g: &[f64]) {
    let acc = slot.get_or_insert_with(|| Matrix::zeros(rows, cols));
    for (a, b) in acc.row_mut(r).iter_mut().zip(g) {
        *a += b;
    }
}

/// Stable `ln Σ_c w_c exp(z_c)` and the normalized weights `q_c`.
pub(crate) fn weighted_log_sum_exp(z: &[f64], w: Option<&[f64]>) -> (f64, Vec<f64>) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(i, &zi)| w.map_or(1.0, |w| w[i]) * (zi - m).exp())
        .collect();
    let s: f64 = q.iter().sum();
    for qi in q.iter_mut() {
        *qi /= s;
    }
    (m + s.ln(), q)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after the first `len`. Handles to dropped
    /// nodes must not be used afterwards.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(Matrix::scalar(value))
    }

    /// Rows `ids` of `src`.
    pub fn gather(&mut self, src: Var, ids: &[usize]) -> Var {
        let s = self.value(src);
        let mut out = Matrix::zeros(ids.len(), s.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(s.row(id));
        }
        self.push(out, Op::Gather { src, ids: ids.to_vec() })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// `a + 1·row` where `row` is `1 × cols`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!(r.shape(), (1, out.cols));
        for i in 0..out.rows {
            for (x, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Var {
        let out = self.value(a).scaled(f);
        self.push(out, Op::Scale(a, f))
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i`; masked
    /// entries are exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let upto = (i + 1).min(x.cols);
            let row = &x.row(i)[..upto];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out.row_mut(i)[..upto];
            let mut s = 0.0;
            for (oj, &xj) in o.iter_mut().zip(row) {
                *oj = (xj - m).exp();
                s += *oj;
            }
            for oj in o.iter_mut() {
                *oj /= s;
            }
        }
        self.push(out, Op::CausalSoftmax(a))
    }

    /// Elementwise multiply by a fixed mask (dropout with rescaling baked in).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let x = self.value(a);
        assert_eq!(mask.len(), x.len());
        let data = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Matrix::from_vec(x.rows, x.cols, data);
        self.push(out, Op::Mask(a, mask))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|v| v.max(0.0)).collect();
        let out = Matrix::from_vec(x.rows, x.cols, data);
        self.push(out, Op::Relu(a))
    }

    /// Row-wise layer normalization with learned `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (h, v) in xhat.row_mut(i).iter_mut().zip(r) {
                *h = (v - mean) * is;
            }
        }
        let g = self.value(gain);
        let b = self.value(bias);
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out.set(i, j, xhat.get(i, j) * g.data[j] + b.data[j]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Var {
        let s = self.value(src);
        let mut out = Matrix::zeros(s.rows, len);
        for i in 0..s.rows {
            out.row_mut(i).copy_from_slice(&s.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols { src, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[off..off + m.cols].copy_from_slice(m.row(i));
            }
            off += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn select_row(&mut self, src: Var, r: usize) -> Var {
        let s = self.value(src);
        let out = Matrix::from_vec(1, s.cols, s.row(r).to_vec());
        self.push(out, Op::SelectRow(src, r))
    }

    /// Stacks `1 × d` rows into an `n × d` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        let data: Vec<Vec<f64>> = rows.iter().map(|&r| self.value(r).data.clone()).collect();
        self.push(Matrix::from_rows(&data), Op::StackRows(rows.to_vec()))
    }

    /// `-ln softmax(h · tableᵀ)[target]` with row 0 of `table` excluded from
    /// the support. The probabilities are available through
    /// [`Tape::xent_probs`].
    pub fn softmax_xent(&mut self, h: Var, table: Var, target: usize) -> Var {
        let hv = self.value(h);
        let t = self.value(table);
        assert!(target >= 1 && target < t.rows, "target {target} outside 1..{}", t.rows);
        let z: Vec<f64> = (1..t.rows).map(|i| dot(hv.row(0), t.row(i))).collect();
        let (lse, probs) = weighted_log_sum_exp(&z, None);
        let loss = lse - z[target - 1];
        self.push(
            Matrix::scalar(loss),
            Op::SoftmaxXent {
                h,
                table,
                target,
                probs,
            },
        )
    }

    /// InfoNCE over rows of `reps`:
    /// `-ln( w_pos e^{z_pos} / Σ_c w_c e^{z_c} )` with `z_c = reps[center]·reps[c] / τ`.
    ///
    /// `cands` must contain `pos` and must not contain `center`. With
    /// `weights = None` every weight is 1. `num_weight` is the numerator
    /// weight `w_pos`; the denominator uses `weights` as given.
    pub fn info_nce(
        &mut self,
        reps: Var,
        center: usize,
        pos: usize,
        cands: &[usize],
        weights: Option<(&[f64], f64)>,
        tau: f64,
    ) -> Var {
        let r = self.value(reps);
        let hu = r.row(center);
        let z: Vec<f64> = cands.iter().map(|&c| dot(hu, r.row(c)) / tau).collect();
        let pos_slot = cands.iter().position(|&c| c == pos).expect("positive missing from candidates");
        debug_assert!(!cands.contains(&center));
        let (lse, q) = weighted_log_sum_exp(&z, weights.map(|(w, _)| w));
        let num_log_w = weights.map_or(0.0, |(_, wp)| wp.ln());
        let loss = lse - z[pos_slot] - num_log_w;
        self.push(
            Matrix::scalar(loss),
            Op::InfoNce {
                reps,
                center,
                pos: pos_slot,
                cands: cands.to_vec(),
                tau,
                q,
            },
        )
    }

    /// Probabilities computed by a [`Tape::softmax_xent`] node, indexed by
    /// item id minus one.
    pub fn xent_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// `max(a, b)` of two scalars. The gradient goes to `a` when `a >= b`,
    /// otherwise to `b`.
    pub fn max2(&mut self, a: Var, b: Var) -> Var {
        let v = self.scalar(a).max(self.scalar(b));
        self.push(Matrix::scalar(v), Op::Max2(a, b))
    }

    /// Sum of same-shaped nodes. An empty list gives a scalar zero.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let out = match xs.first() {
            None => Matrix::scalar(0.0),
            Some(&first) => {
                let mut acc = self.value(first).clone();
                for &x in &xs[1..] {
                    acc.add_assign(self.value(x));
                }
                acc
            }
        };
        self.push(out, Op::Sum(xs.to_vec()))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v: f64 = self.value(a).data.iter().map(|x| x * x).sum();
        self.push(Matrix::scalar(v), Op::SumSquares(a))
    }

    /// Reverse sweep from a scalar `root`.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => grads[idx] = Some(g),
                Op::Gather { src, ids } => {
                    let s = self.value(*src);
                    for (r, &id) in ids.iter().enumerate() {
                        accumulate_row(&mut grads[src.0], s.rows, s.cols, id, g.row(r));
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (x, y) in gr.data.iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads[row.0], gr);
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut grads[a.0], g.matmul_t(bv));
                    accumulate(&mut grads[b.0], av.t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut grads[a.0], g.matmul(bv));
                    accumulate(&mut grads[b.0], g.t_matmul(av));
                }
                Op::Scale(a, f) => accumulate(&mut grads[a.0], g.scaled(*f)),
                Op::CausalSoftmax(a) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let upto = (i + 1).min(y.cols);
                        let yr = &y.row(i)[..upto];
                        let gr = &g.row(i)[..upto];
                        let s = dot(yr, gr);
                        for (j, d) in dx.row_mut(i)[..upto].iter_mut().enumerate() {
                            *d = yr[j] * (gr[j] - s);
                        }
                    }
                    accumulate(&mut grads[a.0], dx);
                }
                Op::Mask(a, mask) => {
                    let data = g.data.iter().zip(mask).map(|(x, m)| x * m).collect();
                    accumulate(&mut grads[a.0], Matrix::from_vec(g.rows, g.cols, data));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let data = g
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[a.0], Matrix::from_vec(g.rows, g.cols, data));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let (rows, cols) = xhat.shape();
                    let mut dgain = Matrix::zeros(1, cols);
                    let mut dbias = Matrix::zeros(1, cols);
                    let mut dx = Matrix::zeros(rows, cols);
                    let n = cols as f64;
                    for i in 0..rows {
                        let gr = g.row(i);
                        let xr = xhat.row(i);
                        let dxhat: Vec<f64> = gr.iter().zip(&gv.data).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dot(&dxhat, xr);
                        for j in 0..cols {
                            dgain.data[j] += gr[j] * xr[j];
                            dbias.data[j] += gr[j];
                            dx.set(i, j, inv_std[i] / n * (n * dxhat[j] - sum_d - xr[j] * sum_dx));
                        }
                    }
                    accumulate(&mut grads[gain.0], dgain);
                    accumulate(&mut grads[bias.0], dbias);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::SliceCols { src, start } => {
                    let s = self.value(*src);
                    let slot = grads[src.0].get_or_insert_with(|| Matrix::zeros(s.rows, s.cols));
                    for i in 0..g.rows {
                        for (a, b) in slot.row_mut(i)[*start..*start + g.cols].iter_mut().zip(g.row(i)) {
                            *a += b;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let cols = self.value(*p).cols;
                        let mut part = Matrix::zeros(g.rows, cols);
                        for i in 0..g.rows {
                            part.row_mut(i).copy_from_slice(&g.row(i)[off..off + cols]);
                        }
                        accumulate(&mut grads[p.0], part);
                        off += cols;
                    }
                }
                Op::SelectRow(src, r) => {
                    let s = self.value(*src);
                    accumulate_row(&mut grads[src.0], s.rows, s.cols, *r, &g.data);
                }
                Op::StackRows(rows) => {
                    for (i, r) in rows.iter().enumerate() {
                        accumulate(&mut grads[r.0], Matrix::from_vec(1, g.cols, g.row(i).to_vec()));
                    }
                }
                Op::SoftmaxXent {
                    h,
                    table,
                    target,
                    probs,
                } => {
                    let up = g.data[0];
                    let hv = self.value(*h);
                    let t = self.value(*table);
                    let mut dh = Matrix::zeros(1, t.cols);
                    let slot = grads[table.0].get_or_insert_with(|| Matrix::zeros(t.rows, t.cols));
                    for i in 1..t.rows {
                        let coef = up * (probs[i - 1] - if i == *target { 1.0 } else { 0.0 });
                        if coef == 0.0 {
                            continue;
                        }
                        for (d, w) in dh.data.iter_mut().zip(t.row(i)) {
                            *d += coef * w;
                        }
                        for (d, x) in slot.row_mut(i).iter_mut().zip(hv.row(0)) {
                            *d += coef * x;
                        }
                    }
                    accumulate(&mut grads[h.0], dh);
                }
                Op::InfoNce {
                    reps,
                    center,
                    pos,
                    cands,
                    tau,
                    q,
                } => {
                    let up = g.data[0];
                    let r = self.value(*reps);
                    let slot = grads[reps.0].get_or_insert_with(|| Matrix::zeros(r.rows, r.cols));
                    let hu = r.row(*center).to_vec();
                    let mut du = vec![0.0; r.cols];
                    for (k, &c) in cands.iter().enumerate() {
                        let coef = up * (q[k] - if k == *pos { 1.0 } else { 0.0 }) / tau;
                        for (d, x) in du.iter_mut().zip(r.row(c)) {
                            *d += coef * x;
                        }
                        for (d, x) in slot.row_mut(c).iter_mut().zip(&hu) {
                            *d += coef * x;
                        }
                    }
                    for (d, x) in slot.row_mut(*center).iter_mut().zip(&du) {
                        *d += x;
                    }
                }
                Op::Max2(a, b) => {
                    if self.scalar(*a) >= self.scalar(*b) {
                        accumulate(&mut grads[a.0], g);
                    } else {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::Sum(xs) => {
                    for x in xs {
                        accumulate(&mut grads[x.0], g.clone());
                    }
                }
                Op::SumSquares(a) => {
                    accumulate(&mut grads[a.0], self.value(*a).scaled(2.0 * g.data[0]));
                }
            }
        }
        Grads { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of d(f)/d(leaf) for a graph builder.
    fn check(inputs: Vec<Matrix>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = build(&mut tape, &leaves);
        let grads = tape.backward(out);
        let h = 1e-6;
        for (li, m) in inputs.iter().enumerate() {
            let analytic = grads.get(leaves[li]).cloned().unwrap_or_else(|| Matrix::zeros(m.rows, m.cols));
            for k in 0..m.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let ls: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, x)| {
                            let mut x = x.clone();
                            if j == li {
                                x.data[k] += delta;
                            }
                            t.leaf(x)
                        })
                        .collect();
                    let o = build(&mut t, &ls);
                    t.scalar(o)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.data[k];
                assert!((fd - a).abs() <= 1e-6 * (1.0 + a.abs()), "leaf {li} coord {k}: fd {fd} vs analytic {a}");
            }
        }
    }

    #[test]
    fn matmul_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(vec![random(3, 4, &mut rng), random(4, 2, &mut rng)], |t, v| {
            let p = t.matmul(v[0], v[1]);
            t.sum_squares(p)
        });
        check(vec![random(3, 4, &mut rng), random(5, 4, &mut rng)], |t, v| {
            let p = t.matmul_t(v[0], v[1]);
            let s = t.scale(p, 0.5);
            t.sum_squares(s)
        });
    }

    #[test]
    fn softmax_norm_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random(4, 4, &mut rng);
        check(
            vec![random(4, 4, &mut rng), random(1, 4, &mut rng), random(1, 4, &mut rng)],
            move |t, v| {
                let sm = t.causal_softmax(v[0]);
                let ln = t.layer_norm(sm, v[1], v[2], 1e-8);
                let wv = t.leaf(w.clone());
                let p = t.matmul(ln, wv);
                let r = t.relu(p);
                let m = t.mask(r, vec![2.0; 16]);
                t.sum_squares(m)
            },
        );
    }

    #[test]
    fn slicing_and_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check(vec![random(3, 6, &mut rng), random(1, 6, &mut rng)], |t, v| {
            let a = t.slice_cols(v[0], 0, 2);
            let b = t.slice_cols(v[0], 2, 4);
            let c = t.concat_cols(&[b, a]);
            let c = t.add_row(c, v[1]);
            let r0 = t.select_row(c, 0);
            let r2 = t.select_row(c, 2);
            let s = t.stack_rows(&[r2, r0]);
            let g = t.gather(s, &[1, 1, 0]);
            t.sum_squares(g)
        });
    }

    #[test]
    fn xent_and_info_nce() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(vec![random(1, 3, &mut rng), random(5, 3, &mut rng)], |t, v| t.softmax_xent(v[0], v[1], 2));
        check(vec![random(4, 3, &mut rng)], |t, v| t.info_nce(v[0], 1, 3, &[0, 2, 3], None, 0.7));
        check(vec![random(4, 3, &mut rng)], |t, v| {
            t.info_nce(v[0], 0, 2, &[1, 2, 3], Some((&[0.2, 0.9, 0.4], 0.9)), 0.5)
        });
    }

    #[test]
    fn max_routes_gradient_to_larger() {
        let mut tape = Tape::new();
        let a = tape.leaf(Matrix::scalar(0.5));
        let b = tape.leaf(Matrix::scalar(0.9));
        let m = tape.max2(a, b);
        let g = tape.backward(m);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap().data[0], 1.0);
    }

    #[test]
    fn info_nce_uniform_case() {
        let mut tape = Tape::new();
        let reps = tape.leaf(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.5, -0.5]]));
        let l = tape.info_nce(reps, 0, 1, &[1, 2], None, 1.0);
        assert!((tape.scalar(l) - 2f64.ln()).abs() < 1e-15);
    }
}
