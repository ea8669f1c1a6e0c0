//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! tape visits every node after all of its consumers. Nodes that do not depend
//! on any gradient-requiring leaf are never given a gradient buffer.

use crate::tensor::{axpy, dot, matmul_acc, matmul_t_into, matmul_tn_acc, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMulT(Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    SquaredError {
        x: Var,
        target: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// `a (n×k) · bᵀ (m×k)`, the shape of every `x Wᵀ` linear layer.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "matmul_t inner dims");
        let (n, k, m) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![0.0; n * m];
        matmul_t_into(av.data(), bv.data(), n, k, m, &mut out);
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::matrix(n, m, out).unwrap(), Op::MatMulT(a, b), rg)
    }

    /// `a (n×k) · b (k×m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.rows(), "matmul inner dims");
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; n * m];
        matmul_acc(av.data(), bv.data(), n, k, m, &mut out);
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::matrix(n, m, out).unwrap(), Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b)).expect("add shapes");
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Broadcasts a single row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        let m = av.cols();
        assert_eq!(rv.len(), m, "add_row width");
        let mut out = av.data().to_vec();
        for r in out.chunks_mut(m) {
            for (o, b) in r.iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(av.shape().to_vec(), out).unwrap();
        let rg = self.any_grad(&[a, row]);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let av = self.value(a);
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * s).collect()).unwrap();
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| gelu(x)).collect()).unwrap();
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, m) = (xv.rows(), xv.cols());
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; n * m];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = r;
            for j in 0..m {
                let h = (row[j] - mean) * r;
                xhat[i * m + j] = h;
                out[i * m + j] = g[j] * h + b[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out).unwrap();
        let rg = self.any_grad(&[x, gamma, beta]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Row-wise softmax. With `causal`, entry (i, j) for j > i is masked out.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let av = self.value(a);
        let (n, m) = (av.rows(), av.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = av.row(i);
            let limit = if causal { (i + 1).min(m) } else { m };
            let mx = row[..limit].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..limit {
                let e = (row[j] - mx).exp();
                out[i * m + j] = e;
                z += e;
            }
            for o in &mut out[i * m..i * m + limit] {
                *o /= z;
            }
        }
        let value = Tensor::new(av.shape().to_vec(), out).unwrap();
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Softmax(a), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let (n, m) = (xv.rows(), xv.cols());
        assert!(start + len <= m, "slice_cols out of range");
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let rg = self.any_grad(&[x]);
        self.push(Tensor::matrix(n, len, out).unwrap(), Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows(), n, "concat_cols row count");
                out.extend_from_slice(pv.row(i));
            }
        }
        let rg = self.any_grad(parts);
        self.push(
            Tensor::matrix(n, total, out).unwrap(),
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let m = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut n = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols(), m, "concat_rows width");
            out.extend_from_slice(pv.data());
            n += pv.rows();
        }
        let rg = self.any_grad(parts);
        self.push(Tensor::matrix(n, m, out).unwrap(), Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Selects rows of `table` by index (embedding lookup, row picking).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let m = tv.cols();
        let mut out = Vec::with_capacity(ids.len() * m);
        for &id in ids {
            out.extend_from_slice(tv.row(id));
        }
        let rg = self.any_grad(&[table]);
        self.push(
            Tensor::matrix(ids.len(), m, out).unwrap(),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Mean cross-entropy over the rows that carry a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        let (n, v) = (lv.rows(), lv.cols());
        assert_eq!(n, targets.len(), "one target slot per row");
        let mut probs = vec![0.0; n * v];
        let mut total = 0.0;
        let mut count = 0;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = lv.row(i);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            for j in 0..v {
                probs[i * v + j] = (row[j] - mx).exp() / z;
            }
            total += mx + z.ln() - row[t];
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.any_grad(&[logits]);
        self.push(
            Tensor::full(&[1, 1], loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        )
    }

    /// `(x − target)²` for a single-element `x`.
    pub fn squared_error(&mut self, x: Var, target: f64) -> Var {
        let d = self.value(x).item() - target;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::full(&[1, 1], d * d), Op::SquaredError { x, target }, rg)
    }

    /// Back-propagates from the scalar `loss`, seeding it with 1.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = self.grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &dy);
            self.grads[idx] = Some(dy);
        }
    }

    fn backprop_node(&mut self, idx: usize, dy: &[f64]) {
        // Temporarily take the op so parent values can be borrowed alongside.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &op {
            Op::Leaf => {}
            &Op::MatMulT(a, b) => {
                let (n, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let m = nodes[b.0].value.rows();
                if nodes[a.0].requires_grad {
                    let bv = nodes[b.0].value.data();
                    let ga = acc(grads, nodes, a, n * k).unwrap();
                    matmul_acc(dy, bv, n, m, k, ga);
                }
                if nodes[b.0].requires_grad {
                    let av = nodes[a.0].value.data();
                    let gb = acc(grads, nodes, b, m * k).unwrap();
                    matmul_tn_acc(dy, av, n, m, k, gb);
                }
            }
            &Op::MatMul(a, b) => {
                let (n, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let m = nodes[b.0].value.cols();
                if nodes[a.0].requires_grad {
                    let bv = nodes[b.0].value.data();
                    let ga = acc(grads, nodes, a, n * k).unwrap();
                    // dA = dY · Bᵀ
                    for i in 0..n {
                        let dyr = &dy[i * m..(i + 1) * m];
                        for p in 0..k {
                            ga[i * k + p] += dot(dyr, &bv[p * m..(p + 1) * m]);
                        }
                    }
                }
                if nodes[b.0].requires_grad {
                    let av = nodes[a.0].value.data();
                    let gb = acc(grads, nodes, b, k * m).unwrap();
                    matmul_tn_acc(av, dy, n, k, m, gb);
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(g) = acc(grads, nodes, v, dy.len()) {
                        axpy(1.0, dy, g);
                    }
                }
            }
            &Op::AddRow(a, row) => {
                if let Some(g) = acc(grads, nodes, a, dy.len()) {
                    axpy(1.0, dy, g);
                }
                let m = nodes[row.0].value.len();
                if let Some(g) = acc(grads, nodes, row, m) {
                    for r in dy.chunks(m) {
                        axpy(1.0, r, g);
                    }
                }
            }
            &Op::Scale(a, s) => {
                if let Some(g) = acc(grads, nodes, a, dy.len()) {
                    axpy(s, dy, g);
                }
            }
            &Op::Gelu(a) => {
                if nodes[a.0].requires_grad {
                    let x = nodes[a.0].value.data();
                    let g = acc(grads, nodes, a, dy.len()).unwrap();
                    for ((gi, xi), d) in g.iter_mut().zip(x).zip(dy) {
                        *gi += d * gelu_grad(*xi);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let m = nodes[gamma.0].value.len();
                let n = rstd.len();
                if nodes[gamma.0].requires_grad {
                    let g = acc(grads, nodes, gamma, m).unwrap();
                    for i in 0..n {
                        for j in 0..m {
                            g[j] += dy[i * m + j] * xhat[i * m + j];
                        }
                    }
                }
                if let Some(g) = acc(grads, nodes, beta, m) {
                    for r in dy.chunks(m) {
                        axpy(1.0, r, g);
                    }
                }
                if nodes[x.0].requires_grad {
                    let gam = nodes[gamma.0].value.data();
                    let g = acc(grads, nodes, x, n * m).unwrap();
                    let mut dxhat = vec![0.0; m];
                    for i in 0..n {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..m {
                            let d = dy[i * m + j] * gam[j];
                            dxhat[j] = d;
                            s1 += d;
                            s2 += d * xhat[i * m + j];
                        }
                        let scale = rstd[i] / m as f64;
                        for j in 0..m {
                            g[i * m + j] += scale * (m as f64 * dxhat[j] - s1 - xhat[i * m + j] * s2);
                        }
                    }
                }
            }
            &Op::Softmax(a) => {
                if nodes[a.0].requires_grad {
                    let y = nodes[idx].value.data().to_vec();
                    let m = nodes[idx].value.cols();
                    let g = acc(grads, nodes, a, dy.len()).unwrap();
                    for (i, yr) in y.chunks(m).enumerate() {
                        let dyr = &dy[i * m..(i + 1) * m];
                        let s = dot(yr, dyr);
                        for j in 0..m {
                            g[i * m + j] += yr[j] * (dyr[j] - s);
                        }
                    }
                }
            }
            &Op::SliceCols { x, start } => {
                let (n, m) = (nodes[x.0].value.rows(), nodes[x.0].value.cols());
                let len = dy.len() / n;
                if let Some(g) = acc(grads, nodes, x, n * m) {
                    for i in 0..n {
                        axpy(
                            1.0,
                            &dy[i * len..(i + 1) * len],
                            &mut g[i * m + start..i * m + start + len],
                        );
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let n = nodes[idx].value.rows();
                let total = nodes[idx].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    if let Some(g) = acc(grads, nodes, p, n * w) {
                        for i in 0..n {
                            axpy(
                                1.0,
                                &dy[i * total + offset..i * total + offset + w],
                                &mut g[i * w..(i + 1) * w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(g) = acc(grads, nodes, p, len) {
                        axpy(1.0, &dy[offset..offset + len], g);
                    }
                    offset += len;
                }
            }
            Op::Gather { table, ids } => {
                let table = *table;
                let m = nodes[table.0].value.cols();
                let len = nodes[table.0].value.len();
                if let Some(g) = acc(grads, nodes, table, len) {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(1.0, &dy[r * m..(r + 1) * m], &mut g[id * m..(id + 1) * m]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let logits = *logits;
                let v = nodes[logits.0].value.cols();
                let len = nodes[logits.0].value.len();
                if *count > 0 {
                    if let Some(g) = acc(grads, nodes, logits, len) {
                        let s = dy[0] / *count as f64;
                        for (i, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            for j in 0..v {
                                g[i * v + j] += s * probs[i * v + j];
                            }
                            g[i * v + t] -= s;
                        }
                    }
                }
            }
            &Op::SquaredError { x, target } => {
                let d = nodes[x.0].value.item() - target;
                if let Some(g) = acc(grads, nodes, x, 1) {
                    g[0] += 2.0 * d * dy[0];
                }
            }
        }
        self.nodes[idx].op = op;
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var, len: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[3, 7]));
        let loss = g.cross_entropy(logits, &[Some(1), None, Some(6)]);
        assert!((g.value(loss).item() - 7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::new();
        let a = g.constant(t(2, 2, &[1.0, 5.0, 1.0, 1.0]));
        let s = g.softmax(a, true);
        assert_eq!(g.value(s).data(), &[1.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(1, 2, &[1.0, 2.0]), true);
        let w = g.leaf(t(1, 2, &[3.0, 4.0]), false);
        let y = g.matmul_t(x, w);
        let loss = g.squared_error(y, 0.0);
        g.backward(loss);
        assert!(g.grad(w).is_none());
        // d/dx (x·w)² = 2 (x·w) w = 22 w
        assert_eq!(g.grad(x).unwrap(), &[66.0, 88.0]);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut g = Graph::new();
        let x = g.constant(t(1, 4, &[1.0, 2.0, 3.0, 10.0]));
        let gamma = g.constant(Tensor::full(&[4], 1.0));
        let beta = g.constant(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gamma, beta);
        let v = g.value(y).data();
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        let var: f64 = v.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }
}
