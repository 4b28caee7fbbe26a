//! Define-by-run reverse-mode autodiff over [`Tensor`] values.
//!
//! A [`Graph`] is built per sample, forward values are computed eagerly, and
//! [`Graph::backward`] walks the node list in reverse accumulating gradients.
//! The op set is exactly what the model needs: dense products, layer norm,
//! (causal) softmax, row/column slicing for attention heads, embedding
//! gather, image-token splicing, masked cross-entropy, and the clipped
//! policy-gradient surrogate. Each op's backward is verified against central
//! finite differences in the test module.

use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Payload {
    /// Leaf bound to a parameter slot; value lives in the caller's slice.
    Param(usize),
    /// Constant or computed value owned by the graph.
    Owned(Tensor),
}

enum Op {
    Leaf,
    /// a @ b
    Matmul(Var, Var),
    /// a @ b^T
    MatmulNT(Var, Var),
    Add(Var, Var),
    /// x + row broadcast over rows
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    SoftmaxRows(Var),
    CausalSoftmaxRows(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    ConcatRows(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    SpliceRows {
        base: Var,
        patch: Var,
        at: usize,
    },
    MeanMaskedCe {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<f64>,
    },
    GatherLogSoftmax {
        logits: Var,
        ids: Vec<usize>,
    },
    ClippedSurrogate {
        logp: Var,
        old_logp: Vec<f64>,
        ref_logp: Vec<f64>,
        advantage: f64,
        clip_eps: f64,
        kl_beta: f64,
    },
    WeightedSumScalars(Vec<(Var, f64)>),
}

struct Node {
    payload: Payload,
    op: Op,
    /// Saved forward by-products reused in backward (softmax probs etc.).
    aux: Vec<f64>,
}

pub struct Graph<'a> {
    params: &'a [Tensor],
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

const LN_EPS: f64 = 1e-5;

fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a [Tensor]) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(128),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn val(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].payload {
            Payload::Param(i) => &self.params[*i],
            Payload::Owned(t) => t,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_aux(value, op, Vec::new())
    }

    fn push_aux(&mut self, value: Tensor, op: Op, aux: Vec<f64>) -> Var {
        self.nodes.push(Node {
            payload: Payload::Owned(value),
            op,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, idx: usize) -> Var {
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        self.nodes.push(Node {
            payload: Payload::Param(idx),
            op: Op::Leaf,
            aux: Vec::new(),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a).matmul(self.val(b));
        self.push(v, Op::Matmul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a).matmul_nt(self.val(b));
        self.push(v, Op::MatmulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.val(a).clone();
        v.add_assign(self.val(b));
        self.push(v, Op::Add(a, b))
    }

    /// Broadcast-add a (1, C) row vector to every row of x.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let xv = self.val(x);
        let rv = self.val(row);
        assert_eq!(rv.rows, 1);
        assert_eq!(rv.cols, xv.cols);
        let mut v = xv.clone();
        for r in 0..v.rows {
            for c in 0..v.cols {
                *v.at_mut(r, c) += rv.data[c];
            }
        }
        self.push(v, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut v = self.val(a).clone();
        v.scale_assign(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut v = self.val(x).clone();
        for a in v.data.iter_mut() {
            *a = gelu_scalar(*a);
        }
        self.push(v, Op::Gelu(x))
    }

    /// Row-wise layer norm with learned scale and shift, both (1, C).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.val(x);
        let g = self.val(gamma);
        let b = self.val(beta);
        let (rows, cols) = xv.shape();
        assert_eq!(g.shape(), (1, cols));
        assert_eq!(b.shape(), (1, cols));
        let mut out = Tensor::zeros(rows, cols);
        // aux holds (mean, inv_std) per row followed by normalized values.
        let mut aux = Vec::with_capacity(2 * rows + rows * cols);
        aux.resize(2 * rows, 0.0);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv_std = 1.0 / (var + LN_EPS).sqrt();
            aux[2 * r] = mean;
            aux[2 * r + 1] = inv_std;
            for c in 0..cols {
                let xhat = (row[c] - mean) * inv_std;
                aux.push(xhat);
                *out.at_mut(r, c) = xhat * g.data[c] + b.data[c];
            }
        }
        self.push_aux(out, Op::LayerNorm { x, gamma, beta }, aux)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = softmax_forward(self.val(x), false);
        self.push(v, Op::SoftmaxRows(x))
    }

    /// Softmax over each row with columns greater than the row index masked
    /// out. Requires a square input.
    pub fn causal_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.val(x);
        assert_eq!(xv.rows, xv.cols, "causal softmax expects square scores");
        let v = softmax_forward(xv, true);
        self.push(v, Op::CausalSoftmaxRows(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.val(x);
        assert!(start + len <= xv.cols);
        let mut out = Tensor::zeros(xv.rows, len);
        for r in 0..xv.rows {
            out.data[r * len..(r + 1) * len].copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(x, start, len))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let rows = self.val(xs[0]).rows;
        let total: usize = xs.iter().map(|v| self.val(*v).cols).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut off = 0;
        for v in xs {
            let t = self.val(*v);
            assert_eq!(t.rows, rows);
            for r in 0..rows {
                out.data[r * total + off..r * total + off + t.cols].copy_from_slice(t.row(r));
            }
            off += t.cols;
        }
        self.push(out, Op::ConcatCols(xs.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.val(x);
        assert!(start + len <= xv.rows);
        let out = Tensor::from_vec(
            len,
            xv.cols,
            xv.data[start * xv.cols..(start + len) * xv.cols].to_vec(),
        );
        self.push(out, Op::SliceRows(x, start, len))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let cols = self.val(xs[0]).cols;
        let total: usize = xs.iter().map(|v| self.val(*v).rows).sum();
        let mut data = Vec::with_capacity(total * cols);
        for v in xs {
            let t = self.val(*v);
            assert_eq!(t.cols, cols);
            data.extend_from_slice(&t.data);
        }
        self.push(Tensor::from_vec(total, cols, data), Op::ConcatRows(xs.to_vec()))
    }

    /// Rows of `table` selected by token id; the embedding lookup.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.val(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            assert!(id < t.rows, "token id {id} out of vocab range {}", t.rows);
            out.data[r * t.cols..(r + 1) * t.cols].copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// `base` with rows `[at, at + patch.rows)` replaced by `patch`.
    pub fn splice_rows(&mut self, base: Var, patch: Var, at: usize) -> Var {
        let b = self.val(base);
        let p = self.val(patch);
        assert_eq!(b.cols, p.cols);
        assert!(at + p.rows <= b.rows);
        let mut out = b.clone();
        out.data[at * b.cols..(at + p.rows) * b.cols].copy_from_slice(&p.data);
        self.push(out, Op::SpliceRows { base, patch, at })
    }

    /// Mean cross-entropy over positions with nonzero mask weight.
    /// `targets[t]` is the gold id for row `t`; rows with `mask[t] == 0` are
    /// excluded. Returns a (1,1) scalar.
    pub fn mean_masked_ce(&mut self, logits: Var, targets: &[usize], mask: &[f64]) -> Var {
        let lv = self.val(logits);
        assert_eq!(lv.rows, targets.len());
        assert_eq!(lv.rows, mask.len());
        let total: f64 = mask.iter().sum();
        assert!(total > 0.0, "cross-entropy mask is empty");
        let probs = softmax_forward(lv, false);
        let mut loss = 0.0;
        for t in 0..lv.rows {
            if mask[t] != 0.0 {
                let p = probs.at(t, targets[t]).max(1e-300);
                loss -= mask[t] * p.ln();
            }
        }
        loss /= total;
        self.push_aux(
            Tensor::scalar(loss),
            Op::MeanMaskedCe {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
            probs.data,
        )
    }

    /// Per-row log-probability of the selected id: (T, V) -> (T, 1).
    pub fn gather_log_softmax(&mut self, logits: Var, ids: &[usize]) -> Var {
        let lv = self.val(logits);
        assert_eq!(lv.rows, ids.len());
        let probs = softmax_forward(lv, false);
        let mut out = Tensor::zeros(ids.len(), 1);
        for (t, &id) in ids.iter().enumerate() {
            out.data[t] = probs.at(t, id).max(1e-300).ln();
        }
        self.push_aux(
            out,
            Op::GatherLogSoftmax {
                logits,
                ids: ids.to_vec(),
            },
            probs.data,
        )
    }

    /// Sum over tokens of the clipped importance-ratio surrogate minus a KL
    /// penalty to the reference policy:
    ///   sum_t min(rho_t * A, clamp(rho_t, 1-eps, 1+eps) * A) - beta * k3_t
    /// with rho_t = exp(logp_t - old_logp_t) and
    /// k3_t = exp(ref_t - logp_t) - (ref_t - logp_t) - 1.
    pub fn clipped_surrogate(
        &mut self,
        logp: Var,
        old_logp: &[f64],
        ref_logp: &[f64],
        advantage: f64,
        clip_eps: f64,
        kl_beta: f64,
    ) -> Var {
        let lv = self.val(logp);
        assert_eq!(lv.cols, 1);
        assert_eq!(lv.rows, old_logp.len());
        assert_eq!(lv.rows, ref_logp.len());
        let mut total = 0.0;
        for t in 0..lv.rows {
            let lp = lv.data[t];
            let rho = (lp - old_logp[t]).exp();
            let unclipped = rho * advantage;
            let clipped = rho.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
            total += unclipped.min(clipped);
            if kl_beta != 0.0 {
                let d = ref_logp[t] - lp;
                total -= kl_beta * (d.exp() - d - 1.0);
            }
        }
        self.push(
            Tensor::scalar(total),
            Op::ClippedSurrogate {
                logp,
                old_logp: old_logp.to_vec(),
                ref_logp: ref_logp.to_vec(),
                advantage,
                clip_eps,
                kl_beta,
            },
        )
    }

    /// Weighted sum of (1,1) scalars.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut s = 0.0;
        for (v, w) in terms {
            let t = self.val(*v);
            assert_eq!(t.shape(), (1, 1));
            s += w * t.data[0];
        }
        self.push(Tensor::scalar(s), Op::WeightedSumScalars(terms.to_vec()))
    }

    /// Reverse pass from a (1,1) loss node. Returns per-parameter gradients
    /// indexed like the parameter slice; slots the loss does not reach are
    /// `None`.
    pub fn backward(&self, loss: Var) -> Vec<Option<Tensor>> {
        assert_eq!(self.val(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    // Re-store so param export below can find it.
                    grads[i] = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    let da = g.matmul_nt(self.val(*b));
                    let db = self.val(*a).matmul_tn(&g);
                    accumulate(&mut grads, a.0, da);
                    accumulate(&mut grads, b.0, db);
                }
                Op::MatmulNT(a, b) => {
                    let da = g.matmul(self.val(*b));
                    let db = g.matmul_tn(self.val(*a));
                    accumulate(&mut grads, a.0, da);
                    accumulate(&mut grads, b.0, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a.0, g.clone());
                    accumulate(&mut grads, b.0, g);
                }
                Op::AddRow(x, row) => {
                    let cols = g.cols;
                    let mut drow = Tensor::zeros(1, cols);
                    for r in 0..g.rows {
                        for c in 0..cols {
                            drow.data[c] += g.at(r, c);
                        }
                    }
                    accumulate(&mut grads, x.0, g);
                    accumulate(&mut grads, row.0, drow);
                }
                Op::Scale(a, c) => {
                    let mut da = g;
                    da.scale_assign(*c);
                    accumulate(&mut grads, a.0, da);
                }
                Op::Gelu(x) => {
                    let xv = self.val(*x);
                    let mut dx = g;
                    for (d, xi) in dx.data.iter_mut().zip(&xv.data) {
                        *d *= gelu_grad(*xi);
                    }
                    accumulate(&mut grads, x.0, dx);
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let xv = self.val(*x);
                    let gv = self.val(*gamma);
                    let (rows, cols) = xv.shape();
                    let aux = &self.nodes[i].aux;
                    let xhat = &aux[2 * rows..];
                    let mut dx = Tensor::zeros(rows, cols);
                    let mut dgamma = Tensor::zeros(1, cols);
                    let mut dbeta = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        let inv_std = aux[2 * r + 1];
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for c in 0..cols {
                            let dy = g.at(r, c);
                            let xh = xhat[r * cols + c];
                            dgamma.data[c] += dy * xh;
                            dbeta.data[c] += dy;
                            let dxh = dy * gv.data[c];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xh;
                        }
                        mean_dxhat /= cols as f64;
                        mean_dxhat_xhat /= cols as f64;
                        for c in 0..cols {
                            let dy = g.at(r, c);
                            let xh = xhat[r * cols + c];
                            let dxh = dy * gv.data[c];
                            *dx.at_mut(r, c) =
                                inv_std * (dxh - mean_dxhat - xh * mean_dxhat_xhat);
                        }
                    }
                    accumulate(&mut grads, x.0, dx);
                    accumulate(&mut grads, gamma.0, dgamma);
                    accumulate(&mut grads, beta.0, dbeta);
                }
                Op::SoftmaxRows(x) | Op::CausalSoftmaxRows(x) => {
                    let y = match &self.nodes[i].payload {
                        Payload::Owned(t) => t,
                        Payload::Param(_) => unreachable!(),
                    };
                    let mut dx = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let mut dot = 0.0;
                        for c in 0..y.cols {
                            dot += g.at(r, c) * y.at(r, c);
                        }
                        for c in 0..y.cols {
                            *dx.at_mut(r, c) = (g.at(r, c) - dot) * y.at(r, c);
                        }
                    }
                    accumulate(&mut grads, x.0, dx);
                }
                Op::SliceCols(x, start, len) => {
                    let xv = self.val(*x);
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        for c in 0..*len {
                            *dx.at_mut(r, start + c) = g.at(r, c);
                        }
                    }
                    accumulate(&mut grads, x.0, dx);
                }
                Op::ConcatCols(xs) => {
                    let mut off = 0;
                    for v in xs {
                        let t = self.val(*v);
                        let mut dv = Tensor::zeros(t.rows, t.cols);
                        for r in 0..t.rows {
                            for c in 0..t.cols {
                                *dv.at_mut(r, c) = g.at(r, off + c);
                            }
                        }
                        off += t.cols;
                        accumulate(&mut grads, v.0, dv);
                    }
                }
                Op::SliceRows(x, start, len) => {
                    let xv = self.val(*x);
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    dx.data[start * xv.cols..(start + len) * xv.cols].copy_from_slice(&g.data);
                    accumulate(&mut grads, x.0, dx);
                }
                Op::ConcatRows(xs) => {
                    let mut off = 0;
                    for v in xs {
                        let t = self.val(*v);
                        let dv = Tensor::from_vec(
                            t.rows,
                            t.cols,
                            g.data[off * t.cols..(off + t.rows) * t.cols].to_vec(),
                        );
                        off += t.rows;
                        accumulate(&mut grads, v.0, dv);
                    }
                }
                Op::GatherRows { table, ids } => {
                    let tv = self.val(*table);
                    let mut dt = Tensor::zeros(tv.rows, tv.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..tv.cols {
                            *dt.at_mut(id, c) += g.at(r, c);
                        }
                    }
                    accumulate(&mut grads, table.0, dt);
                }
                Op::SpliceRows { base, patch, at } => {
                    let p = self.val(*patch);
                    let mut dbase = g.clone();
                    let mut dpatch = Tensor::zeros(p.rows, p.cols);
                    dpatch
                        .data
                        .copy_from_slice(&g.data[at * p.cols..(at + p.rows) * p.cols]);
                    for v in dbase.data[at * p.cols..(at + p.rows) * p.cols].iter_mut() {
                        *v = 0.0;
                    }
                    accumulate(&mut grads, base.0, dbase);
                    accumulate(&mut grads, patch.0, dpatch);
                }
                Op::MeanMaskedCe {
                    logits,
                    targets,
                    mask,
                } => {
                    let lv = self.val(*logits);
                    let probs = &self.nodes[i].aux;
                    let total: f64 = mask.iter().sum();
                    let gs = g.data[0];
                    let mut dl = Tensor::zeros(lv.rows, lv.cols);
                    for t in 0..lv.rows {
                        if mask[t] == 0.0 {
                            continue;
                        }
                        let w = gs * mask[t] / total;
                        for c in 0..lv.cols {
                            let p = probs[t * lv.cols + c];
                            let y = if c == targets[t] { 1.0 } else { 0.0 };
                            *dl.at_mut(t, c) = w * (p - y);
                        }
                    }
                    accumulate(&mut grads, logits.0, dl);
                }
                Op::GatherLogSoftmax { logits, ids } => {
                    let lv = self.val(*logits);
                    let probs = &self.nodes[i].aux;
                    let mut dl = Tensor::zeros(lv.rows, lv.cols);
                    for t in 0..lv.rows {
                        let gv = g.data[t];
                        if gv == 0.0 {
                            continue;
                        }
                        for c in 0..lv.cols {
                            let p = probs[t * lv.cols + c];
                            let y = if c == ids[t] { 1.0 } else { 0.0 };
                            *dl.at_mut(t, c) = gv * (y - p);
                        }
                    }
                    accumulate(&mut grads, logits.0, dl);
                }
                Op::ClippedSurrogate {
                    logp,
                    old_logp,
                    ref_logp,
                    advantage,
                    clip_eps,
                    kl_beta,
                } => {
                    let lv = self.val(*logp);
                    let gs = g.data[0];
                    let mut dl = Tensor::zeros(lv.rows, 1);
                    for t in 0..lv.rows {
                        let lp = lv.data[t];
                        let rho = (lp - old_logp[t]).exp();
                        let unclipped = rho * advantage;
                        let clipped =
                            rho.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
                        let mut d = if unclipped <= clipped {
                            advantage * rho
                        } else {
                            0.0
                        };
                        if *kl_beta != 0.0 {
                            // d/dlp [exp(ref-lp) - (ref-lp) - 1] = 1 - exp(ref-lp)
                            d -= kl_beta * (1.0 - (ref_logp[t] - lp).exp());
                        }
                        dl.data[t] = gs * d;
                    }
                    accumulate(&mut grads, logp.0, dl);
                }
                Op::WeightedSumScalars(terms) => {
                    let gs = g.data[0];
                    for (v, w) in terms {
                        accumulate(&mut grads, v.0, Tensor::scalar(gs * w));
                    }
                }
            }
        }

        let mut out: Vec<Option<Tensor>> = (0..self.params.len()).map(|_| None).collect();
        for (idx, pv) in self.param_vars.iter().enumerate() {
            if let Some(v) = pv {
                out[idx] = grads[v.0].take();
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn softmax_forward(x: &Tensor, causal: bool) -> Tensor {
    let mut out = Tensor::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let limit = if causal { r + 1 } else { x.cols };
        let row = x.row(r);
        let max = row[..limit].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..limit {
            let e = (row[c] - max).exp();
            out.data[r * x.cols + c] = e;
            sum += e;
        }
        for c in 0..limit {
            out.data[r * x.cols + c] /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` w.r.t. the parameter slice.
    fn fd_grads(params: &[Tensor], f: &dyn Fn(&[Tensor]) -> f64, eps: f64) -> Vec<Tensor> {
        let mut out = Vec::new();
        let mut work = params.to_vec();
        for pi in 0..params.len() {
            let mut g = Tensor::zeros(params[pi].rows, params[pi].cols);
            for k in 0..params[pi].data.len() {
                let orig = params[pi].data[k];
                work[pi].data[k] = orig + eps;
                let up = f(&work);
                work[pi].data[k] = orig - eps;
                let down = f(&work);
                work[pi].data[k] = orig;
                g.data[k] = (up - down) / (2.0 * eps);
            }
            out.push(g);
        }
        out
    }

    fn assert_grads_close(analytic: &[Option<Tensor>], numeric: &[Tensor], tol: f64) {
        for (a, n) in analytic.iter().zip(numeric) {
            let a = a.as_ref().expect("missing gradient");
            for (x, y) in a.data.iter().zip(&n.data) {
                let denom = x.abs().max(y.abs()).max(1e-6);
                assert!(
                    (x - y).abs() / denom < tol,
                    "gradient mismatch: analytic {x} vs numeric {y}"
                );
            }
        }
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn chain_build<'a>(ps: &'a [Tensor]) -> (Graph<'a>, Var) {
        let mut g = Graph::new(ps);
        let a = g.param(0);
        let b = g.param(1);
        let bias = g.param(2);
        let c = g.matmul(a, b);
        let d = g.add_row(c, bias);
        let e = g.gelu(d);
        // Reduce to scalar: diagonal entries of e e^T.
        let et = g.matmul_nt(e, e); // (3,3)
        let s0 = g.slice_cols(et, 0, 1);
        let s00 = g.slice_rows(s0, 0, 1);
        let s1 = g.slice_cols(et, 1, 1);
        let s11 = g.slice_rows(s1, 1, 1);
        let loss = g.weighted_sum(&[(s00, 1.0), (s11, 0.5)]);
        (g, loss)
    }

    #[test]
    fn matmul_chain_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = vec![
            rand_tensor(&mut rng, 3, 4),
            rand_tensor(&mut rng, 4, 2),
            rand_tensor(&mut rng, 1, 2),
        ];
        let (g, loss) = chain_build(&params);
        let analytic = g.backward(loss);
        let numeric = fd_grads(&params, &|ps| {
            let (g, loss) = chain_build(ps);
            g.val(loss).data[0]
        }, 1e-5);
        assert_grads_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn matmul_tn_helper() {
        // matmul_tn used above as e^T e; sanity only (covered by fd already).
        let a = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let c = a.matmul_tn(&a);
        assert_eq!(c.data, vec![10.0, 14.0, 14.0, 20.0]);
    }

    fn ln_build<'a>(ps: &'a [Tensor]) -> (Graph<'a>, Var) {
        let targets = [1usize, 4, 0];
        let mask = [1.0, 0.0, 1.0];
        let mut g = Graph::new(ps);
        let x = g.param(0);
        let gamma = g.param(1);
        let beta = g.param(2);
        let normed = g.layer_norm(x, gamma, beta);
        let loss = g.mean_masked_ce(normed, &targets, &mask);
        (g, loss)
    }

    #[test]
    fn layer_norm_and_softmax_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![
            rand_tensor(&mut rng, 3, 5),
            rand_tensor(&mut rng, 1, 5),
            rand_tensor(&mut rng, 1, 5),
        ];
        let (g, loss) = ln_build(&params);
        let analytic = g.backward(loss);
        let numeric = fd_grads(&params, &|ps| {
            let (g, loss) = ln_build(ps);
            g.val(loss).data[0]
        }, 1e-5);
        assert_grads_close(&analytic, &numeric, 1e-5);
    }

    // Mini single-head attention with causal softmax, gather, and splice.
    fn attn_build<'a>(ps: &'a [Tensor]) -> (Graph<'a>, Var) {
        let ids = [0usize, 3, 3, 5];
        let targets = [1usize, 2, 3, 4];
        let mask = [0.0, 1.0, 1.0, 1.0];
        let mut g = Graph::new(ps);
        let table = g.param(0);
        let wq = g.param(1);
        let wk = g.param(2);
        let wv = g.param(3);
        let patch = g.param(4);
        let emb = g.gather_rows(table, &ids);
        let emb = g.splice_rows(emb, patch, 1);
        let q = g.matmul(emb, wq);
        let k = g.matmul(emb, wk);
        let v = g.matmul(emb, wv);
        let scores = g.matmul_nt(q, k);
        let scores = g.scale(scores, 0.5);
        let probs = g.causal_softmax_rows(scores);
        let ctx = g.matmul(probs, v);
        let h1 = g.slice_cols(ctx, 0, 2);
        let h2 = g.slice_cols(ctx, 2, 2);
        let joined = g.concat_cols(&[h1, h2]);
        let emb2 = g.concat_rows(&[joined]);
        let logits = g.matmul_nt(emb2, table);
        let loss = g.mean_masked_ce(logits, &targets, &mask);
        (g, loss)
    }

    #[test]
    fn attention_shaped_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![
            rand_tensor(&mut rng, 6, 4), // embedding table
            rand_tensor(&mut rng, 4, 4), // wq
            rand_tensor(&mut rng, 4, 4), // wk
            rand_tensor(&mut rng, 4, 4), // wv
            rand_tensor(&mut rng, 2, 4), // visual patch
        ];
        let (g, loss) = attn_build(&params);
        let analytic = g.backward(loss);
        let numeric = fd_grads(&params, &|ps| {
            let (g, loss) = attn_build(ps);
            g.val(loss).data[0]
        }, 1e-5);
        assert_grads_close(&analytic, &numeric, 1e-5);
    }

    fn surrogate_build<'a>(
        ps: &'a [Tensor],
        old: &[f64],
        refp: &[f64],
        adv: f64,
        beta: f64,
    ) -> (Graph<'a>, Var) {
        let ids = [2usize, 0, 5, 1, 3];
        let mut g = Graph::new(ps);
        let logits = g.param(0);
        let lp = g.gather_log_softmax(logits, &ids);
        let s = g.clipped_surrogate(lp, old, refp, adv, 0.2, beta);
        let loss = g.weighted_sum(&[(s, -1.0)]);
        (g, loss)
    }

    #[test]
    fn surrogate_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = vec![rand_tensor(&mut rng, 5, 6)];
        let old: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..-0.5)).collect();
        let refp: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..-0.5)).collect();
        for &(adv, beta) in &[(0.7, 0.0), (-1.3, 0.0), (0.9, 0.04)] {
            let (g, loss) = surrogate_build(&params, &old, &refp, adv, beta);
            let analytic = g.backward(loss);
            let numeric = fd_grads(&params, &|ps| {
                let (g, loss) = surrogate_build(ps, &old, &refp, adv, beta);
                g.val(loss).data[0]
            }, 1e-6);
            assert_grads_close(&analytic, &numeric, 1e-4);
        }
    }

    #[test]
    fn causal_softmax_masks_future() {
        let x = Tensor::from_vec(3, 3, vec![1.0, 9.0, 9.0, 0.5, 0.5, 9.0, 0.1, 0.2, 0.3]);
        let params: Vec<Tensor> = vec![];
        let mut g = Graph::new(&params);
        let xv = g.input(x);
        let y = g.causal_softmax_rows(xv);
        let yv = g.val(y);
        assert_eq!(yv.at(0, 0), 1.0);
        assert_eq!(yv.at(0, 1), 0.0);
        assert_eq!(yv.at(0, 2), 0.0);
        assert_eq!(yv.at(1, 2), 0.0);
        let row2: f64 = (0..3).map(|c| yv.at(2, c)).sum();
        assert!((row2 - 1.0).abs() < 1e-12);
    }
}
