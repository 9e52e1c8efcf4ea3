//! Define-by-run reverse-mode differentiation over matrices.
//!
//! Each operation evaluates eagerly when recorded and stores its result on
//! the tape; [`Graph::backward`] then sweeps the tape once in reverse and
//! accumulates parameter gradients into the [`ParamStore`]. Every node is
//! checked for non-finite values as it is produced, so NaN/Inf cannot
//! propagate silently.
//!
//! Beyond the generic layer ops (affine, activations, elementwise), the tape
//! has fused nodes for the three VAE-specific pieces — reparameterized
//! sampling, Bernoulli reconstruction likelihood and the Gaussian KL — whose
//! analytic gradients are short and numerically stable.

use crate::error::{EvaeError, Result};
use crate::nn::{affine_forward, apply_activation, sigmoid, Activation, ParamId, ParamStore};
use crate::tensor::{matmul_at_accum, matmul_bt_accum, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    /// Leaf holding data that receives no gradient (inputs, constants, noise).
    Input,
    /// Leaf holding a copy of a parameter; backward accumulates into the store.
    Param(ParamId),
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Activation {
        x: NodeId,
        kind: Activation,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale {
        x: NodeId,
        k: f64,
    },
    /// `a + k * b`, used for `recon + beta * kl`.
    AddScaled {
        a: NodeId,
        b: NodeId,
        k: f64,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        end: usize,
    },
    /// `z = mu + eps * exp(log_var / 2)`; no gradient flows into `eps`.
    Reparam {
        mu: NodeId,
        log_var: NodeId,
        eps: NodeId,
    },
    /// Mean-per-row Bernoulli negative log-likelihood from logits.
    BernoulliNll {
        logits: NodeId,
        target: NodeId,
    },
    /// Mean-per-row squared-error Gaussian negative log-likelihood (unit
    /// variance, additive constant dropped).
    GaussianNll {
        mean: NodeId,
        target: NodeId,
    },
    /// Mean-per-row KL(N(mu, sigma^2) || N(0, I)) summed over dimensions.
    GaussianKl {
        mu: NodeId,
        log_var: NodeId,
    },
    SumAll(NodeId),
    /// Sum over all elements divided by the row count (mean per sample).
    MeanRows(NodeId),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let n = &self.nodes[id.0];
        if n.rows * n.cols == 1 {
            Ok(n.data[0])
        } else {
            Err(EvaeError::Usage(format!(
                "expected scalar node, got {}x{}",
                n.rows, n.cols
            )))
        }
    }

    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id.0].rows, self.nodes[id.0].cols)
    }

    fn push(
        &mut self,
        op: Op,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        what: &str,
    ) -> Result<NodeId> {
        debug_assert_eq!(rows * cols, data.len());
        if !data.iter().all(|v| v.is_finite()) {
            return Err(EvaeError::Numeric(format!(
                "non-finite value produced by {what}"
            )));
        }
        self.nodes.push(Node {
            op,
            rows,
            cols,
            data,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn input(&mut self, t: &Tensor) -> Result<NodeId> {
        let (rows, cols) = t.dims2()?;
        self.push(Op::Input, rows, cols, t.values().to_vec(), "input")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        let p = store.get(id);
        self.push(Op::Param(id), p.rows, p.cols, p.values.clone(), "param")
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (batch, in_dim) = self.dims(x);
        let (w_rows, out_dim) = self.dims(w);
        let (b_rows, b_cols) = self.dims(b);
        if w_rows != in_dim || b_rows != 1 || b_cols != out_dim {
            return Err(EvaeError::Config(format!(
                "affine shape mismatch: x {batch}x{in_dim}, w {w_rows}x{out_dim}, b {b_rows}x{b_cols}"
            )));
        }
        let y = affine_forward(
            &self.nodes[x.0].data,
            &self.nodes[w.0].data,
            &self.nodes[b.0].data,
            batch,
            in_dim,
            out_dim,
        );
        self.push(Op::Affine { x, w, b }, batch, out_dim, y, "affine")
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.dims(x);
        let mut y = self.nodes[x.0].data.clone();
        apply_activation(kind, &mut y);
        self.push(Op::Activation { x, kind }, rows, cols, y, "activation")
    }

    fn elementwise(&mut self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(EvaeError::Config(format!(
                "{what} shape mismatch: {da:?} vs {db:?}"
            )));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.elementwise(a, b, "add")?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x + y);
        self.push(Op::Add(a, b), rows, cols, data, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.elementwise(a, b, "sub")?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x - y);
        self.push(Op::Sub(a, b), rows, cols, data, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.elementwise(a, b, "mul")?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x * y);
        self.push(Op::Mul(a, b), rows, cols, data, "mul")
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        let (rows, cols) = self.dims(x);
        let data = self.nodes[x.0].data.iter().map(|v| v * k).collect();
        self.push(Op::Scale { x, k }, rows, cols, data, "scale")
    }

    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, k: f64) -> Result<NodeId> {
        let (rows, cols) = self.elementwise(a, b, "add_scaled")?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| {
            x + k * y
        });
        self.push(Op::AddScaled { a, b, k }, rows, cols, data, "add_scaled")
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (rows, cols) = self.dims(x);
        if start >= end || end > cols {
            return Err(EvaeError::Config(format!(
                "slice [{start}, {end}) out of range for {cols} columns"
            )));
        }
        let width = end - start;
        let src = &self.nodes[x.0].data;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        self.push(
            Op::SliceCols { x, start, end },
            rows,
            width,
            data,
            "slice_cols",
        )
    }

    pub fn reparam(&mut self, mu: NodeId, log_var: NodeId, eps: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.elementwise(mu, log_var, "reparam")?;
        self.elementwise(mu, eps, "reparam")?;
        let m = &self.nodes[mu.0].data;
        let lv = &self.nodes[log_var.0].data;
        let e = &self.nodes[eps.0].data;
        let data = (0..m.len())
            .map(|i| m[i] + e[i] * (0.5 * lv[i]).exp())
            .collect();
        self.push(
            Op::Reparam { mu, log_var, eps },
            rows,
            cols,
            data,
            "reparam",
        )
    }

    /// Numerically stable Bernoulli NLL from logits, averaged over rows:
    /// `sum(max(l, 0) - l*x + ln(1 + exp(-|l|))) / batch`.
    pub fn bernoulli_nll(&mut self, logits: NodeId, target: NodeId) -> Result<NodeId> {
        let (rows, _) = self.elementwise(logits, target, "bernoulli_nll")?;
        let l = &self.nodes[logits.0].data;
        let x = &self.nodes[target.0].data;
        let mut acc = 0.0;
        for i in 0..l.len() {
            acc += l[i].max(0.0) - l[i] * x[i] + (-l[i].abs()).exp().ln_1p();
        }
        let value = acc / rows as f64;
        self.push(
            Op::BernoulliNll { logits, target },
            1,
            1,
            vec![value],
            "bernoulli_nll",
        )
    }

    pub fn gaussian_nll(&mut self, mean: NodeId, target: NodeId) -> Result<NodeId> {
        let (rows, _) = self.elementwise(mean, target, "gaussian_nll")?;
        let m = &self.nodes[mean.0].data;
        let x = &self.nodes[target.0].data;
        let acc: f64 = m.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let value = 0.5 * acc / rows as f64;
        self.push(
            Op::GaussianNll { mean, target },
            1,
            1,
            vec![value],
            "gaussian_nll",
        )
    }

    /// Closed-form KL to the standard normal prior, summed over latent
    /// dimensions and averaged over rows.
    pub fn gaussian_kl(&mut self, mu: NodeId, log_var: NodeId) -> Result<NodeId> {
        let (rows, _) = self.elementwise(mu, log_var, "gaussian_kl")?;
        let m = &self.nodes[mu.0].data;
        let lv = &self.nodes[log_var.0].data;
        let mut acc = 0.0;
        for i in 0..m.len() {
            acc += 0.5 * (m[i] * m[i] + lv[i].exp() - lv[i] - 1.0);
        }
        let value = acc / rows as f64;
        self.push(
            Op::GaussianKl { mu, log_var },
            1,
            1,
            vec![value],
            "gaussian_kl",
        )
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.nodes[x.0].data.iter().sum();
        self.push(Op::SumAll(x), 1, 1, vec![value], "sum_all")
    }

    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, _) = self.dims(x);
        let value = self.nodes[x.0].data.iter().sum::<f64>() / rows as f64;
        self.push(Op::MeanRows(x), 1, 1, vec![value], "mean_rows")
    }

    /// Backpropagate from a scalar loss node, accumulating parameter
    /// gradients into `store`. Gradients of `Input` leaves are discarded.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let n = &self.nodes[loss.0];
        if n.rows * n.cols != 1 {
            return Err(EvaeError::Usage(format!(
                "backward requires a scalar loss node, got {}x{}",
                n.rows, n.cols
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    if !dy.iter().all(|v| v.is_finite()) {
                        return Err(EvaeError::Numeric(format!(
                            "non-finite gradient for parameter {}",
                            store.get(*pid).name
                        )));
                    }
                    store.accumulate_grad(*pid, &dy);
                }
                Op::Affine { x, w, b } => {
                    let (batch, out_dim) = (node.rows, node.cols);
                    let in_dim = self.nodes[x.0].cols;
                    {
                        let dx = grad_buf(&mut grads, x, &self.nodes);
                        matmul_bt_accum(&dy, &self.nodes[w.0].data, dx, batch, out_dim, in_dim);
                    }
                    {
                        let dw = grad_buf(&mut grads, w, &self.nodes);
                        matmul_at_accum(&self.nodes[x.0].data, &dy, dw, batch, in_dim, out_dim);
                    }
                    {
                        let db = grad_buf(&mut grads, b, &self.nodes);
                        for row in dy.chunks_exact(out_dim) {
                            for (d, g) in db.iter_mut().zip(row.iter()) {
                                *d += g;
                            }
                        }
                    }
                }
                Op::Activation { x, kind } => {
                    let y = &node.data;
                    let xv = &self.nodes[x.0].data;
                    let dx = grad_buf(&mut grads, x, &self.nodes);
                    match kind {
                        Activation::Relu => {
                            for i in 0..dx.len() {
                                if xv[i] > 0.0 {
                                    dx[i] += dy[i];
                                }
                            }
                        }
                        Activation::Tanh => {
                            for i in 0..dx.len() {
                                dx[i] += dy[i] * (1.0 - y[i] * y[i]);
                            }
                        }
                        Activation::Sigmoid => {
                            for i in 0..dx.len() {
                                dx[i] += dy[i] * y[i] * (1.0 - y[i]);
                            }
                        }
                        Activation::Exp => {
                            for i in 0..dx.len() {
                                dx[i] += dy[i] * y[i];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, &self.nodes, &dy, 1.0);
                    accumulate(&mut grads, b, &self.nodes, &dy, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, &self.nodes, &dy, 1.0);
                    accumulate(&mut grads, b, &self.nodes, &dy, -1.0);
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].data.clone();
                    let bv = &self.nodes[b.0].data;
                    {
                        let da = grad_buf(&mut grads, a, &self.nodes);
                        for i in 0..da.len() {
                            da[i] += dy[i] * bv[i];
                        }
                    }
                    let db = grad_buf(&mut grads, b, &self.nodes);
                    for i in 0..db.len() {
                        db[i] += dy[i] * av[i];
                    }
                }
                Op::Scale { x, k } => accumulate(&mut grads, x, &self.nodes, &dy, *k),
                Op::AddScaled { a, b, k } => {
                    accumulate(&mut grads, a, &self.nodes, &dy, 1.0);
                    accumulate(&mut grads, b, &self.nodes, &dy, *k);
                }
                Op::SliceCols { x, start, end } => {
                    let cols = self.nodes[x.0].cols;
                    let width = end - start;
                    let dx = grad_buf(&mut grads, x, &self.nodes);
                    for r in 0..node.rows {
                        for c in 0..width {
                            dx[r * cols + start + c] += dy[r * width + c];
                        }
                    }
                }
                Op::Reparam { mu, log_var, eps } => {
                    let lv = self.nodes[log_var.0].data.clone();
                    let e = &self.nodes[eps.0].data;
                    accumulate(&mut grads, mu, &self.nodes, &dy, 1.0);
                    let dlv = grad_buf(&mut grads, log_var, &self.nodes);
                    for i in 0..dlv.len() {
                        dlv[i] += dy[i] * e[i] * 0.5 * (0.5 * lv[i]).exp();
                    }
                    // eps is noise: no gradient.
                }
                Op::BernoulliNll { logits, target } => {
                    let scale = dy[0] / node_rows(&self.nodes, logits) as f64;
                    let l = self.nodes[logits.0].data.clone();
                    let x = &self.nodes[target.0].data;
                    let dl = grad_buf(&mut grads, logits, &self.nodes);
                    for i in 0..dl.len() {
                        dl[i] += scale * (sigmoid(l[i]) - x[i]);
                    }
                }
                Op::GaussianNll { mean, target } => {
                    let scale = dy[0] / node_rows(&self.nodes, mean) as f64;
                    let m = self.nodes[mean.0].data.clone();
                    let x = &self.nodes[target.0].data;
                    let dm = grad_buf(&mut grads, mean, &self.nodes);
                    for i in 0..dm.len() {
                        dm[i] += scale * (m[i] - x[i]);
                    }
                }
                Op::GaussianKl { mu, log_var } => {
                    let scale = dy[0] / node_rows(&self.nodes, mu) as f64;
                    let mv = self.nodes[mu.0].data.clone();
                    let lv = self.nodes[log_var.0].data.clone();
                    {
                        let dm = grad_buf(&mut grads, mu, &self.nodes);
                        for i in 0..dm.len() {
                            dm[i] += scale * mv[i];
                        }
                    }
                    let dlv = grad_buf(&mut grads, log_var, &self.nodes);
                    for i in 0..dlv.len() {
                        dlv[i] += scale * 0.5 * (lv[i].exp() - 1.0);
                    }
                }
                Op::SumAll(x) => {
                    let dx = grad_buf(&mut grads, x, &self.nodes);
                    dx.iter_mut().for_each(|d| *d += dy[0]);
                }
                Op::MeanRows(x) => {
                    let scale = dy[0] / node_rows(&self.nodes, x) as f64;
                    let dx = grad_buf(&mut grads, x, &self.nodes);
                    dx.iter_mut().for_each(|d| *d += scale);
                }
            }
        }
        Ok(())
    }
}

fn node_rows(nodes: &[Node], id: &NodeId) -> usize {
    nodes[id.0].rows
}

fn grad_buf<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    id: &NodeId,
    nodes: &[Node],
) -> &'a mut Vec<f64> {
    let slot = &mut grads[id.0];
    slot.get_or_insert_with(|| vec![0.0; nodes[id.0].data.len()])
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: &NodeId, nodes: &[Node], dy: &[f64], k: f64) {
    let dst = grad_buf(grads, id, nodes);
    for (d, g) in dst.iter_mut().zip(dy.iter()) {
        *d += k * g;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b.iter()).map(|(x, y)| f(*x, *y)).collect()
}
