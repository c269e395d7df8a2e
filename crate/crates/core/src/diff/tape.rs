//! Append-only reverse-mode tape over small dense vectors.
//!
//! Each node holds a value slice in a shared arena. Scalars are length-1
//! nodes. Inputs always precede the nodes that consume them, so a single
//! reverse sweep visits every node once.

use std::collections::{BTreeMap, HashMap};

use crate::ball::{ATANH_MAX, MIN_NORM, TANH_CLAMP};
use crate::error::{HsrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Identifies one trainable tensor in a [`super::ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    User(usize),
    Item(usize),
    /// Feature-update matrix of layer `ℓ` (0-based).
    Layer(usize),
    /// Attention matrix of layer `ℓ` (0-based).
    Attention(usize),
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, usize),
    ScaleConst(usize, f64),
    AddConst(usize),
    Dot(usize, usize),
    Norm(usize),
    Tanh(usize),
    Atanh(usize),
    Exp(usize),
    Ln(usize),
    Recip(usize),
    Sigmoid(usize),
    LogSigmoid(usize),
    LeakyRelu(usize, f64),
    Clamp(usize, f64, f64),
    MatVec { m: usize, x: usize, cols: usize },
    TrMatVecBlock { m: usize, x: usize, row_off: usize, cols: usize },
    Stack { args: usize, n: usize },
    Softmax(usize, f64),
    WeightedSum { args: usize, n: usize, w: usize },
    Sum { args: usize, n: usize },
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    off: usize,
    len: usize,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    args: Vec<usize>,
    leaves: Vec<(ParamId, usize)>,
    leaf_index: HashMap<ParamId, NodeId>,
}

/// Euclidean gradients keyed by parameter, in `ParamId` order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.map.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Vec<f64>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, id: ParamId, grad: Vec<f64>) {
        self.map.insert(id, grad);
    }

    /// Add `other` into `self` entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.map {
            match self.map.get_mut(id) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    self.map.insert(*id, g.clone());
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let n = &self.nodes[id.0];
        &self.values[n.off..n.off + n.len]
    }

    /// Value of a length-1 node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    pub fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].len
    }

    fn push(&mut self, op: Op, value: &[f64]) -> NodeId {
        let off = self.values.len();
        self.values.extend_from_slice(value);
        self.nodes.push(Node {
            op,
            off,
            len: value.len(),
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_args(&mut self, ids: &[NodeId]) -> usize {
        let off = self.args.len();
        self.args.extend(ids.iter().map(|n| n.0));
        off
    }

    pub fn constant(&mut self, value: &[f64]) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.push(Op::Leaf, &[value])
    }

    /// Register a trainable leaf. Repeated calls with the same id return the
    /// same node, so a parameter used many times accumulates one gradient.
    pub fn param(&mut self, id: ParamId, value: &[f64]) -> NodeId {
        if let Some(&n) = self.leaf_index.get(&id) {
            return n;
        }
        let n = self.push(Op::Leaf, value);
        self.leaves.push((id, n.0));
        self.leaf_index.insert(id, n);
        n
    }

    fn map_unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, &v)
    }

    fn zip_binary(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        assert_eq!(self.len_of(a), self.len_of(b), "tape: operand length mismatch");
        let v: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(op, &v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_binary(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_binary(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_binary(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    /// Vector `v` times scalar node `s`.
    pub fn scale(&mut self, v: NodeId, s: NodeId) -> NodeId {
        let k = self.scalar_value(s);
        self.map_unary(v, Op::Scale(v.0, s.0), |x| x * k)
    }

    pub fn scale_const(&mut self, a: NodeId, k: f64) -> NodeId {
        self.map_unary(a, Op::ScaleConst(a.0, k), |x| x * k)
    }

    pub fn add_const(&mut self, a: NodeId, k: f64) -> NodeId {
        self.map_unary(a, Op::AddConst(a.0), |x| x + k)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale_const(a, -1.0)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.len_of(a), self.len_of(b), "tape: dot length mismatch");
        let v = crate::linalg::dot(self.value(a), self.value(b));
        self.push(Op::Dot(a.0, b.0), &[v])
    }

    /// Euclidean norm. Its gradient is defined as zero below [`MIN_NORM`].
    pub fn norm(&mut self, a: NodeId) -> NodeId {
        let v = crate::linalg::norm(self.value(a));
        self.push(Op::Norm(a.0), &[v])
    }

    /// `tanh` with its argument clamped to `[−15, 15]`.
    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map_unary(a, Op::Tanh(a.0), crate::ball::tanh_clamped)
    }

    /// `tanh⁻¹` with its argument magnitude clamped to `1 − 1e-15`.
    pub fn atanh(&mut self, a: NodeId) -> NodeId {
        self.map_unary(a, Op::Atanh(a.0), crate::ball::atanh_clamped)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map_unary(a, Op::Exp(a.0), f64::exp)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.map_unary(a, Op::Ln(a.0), f64::ln)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.map_unary(a, Op::Recip(a.0), f64::recip)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map_unary(a, Op::Sigmoid(a.0), sigmoid)
    }

    /// `ln σ(x)`, evaluated without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map_unary(a, Op::LogSigmoid(a.0), log_sigmoid)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.map_unary(a, Op::LeakyRelu(a.0, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    /// Clamp to `[lo, hi]`; the gradient passes only where the input was inside.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map_unary(a, Op::Clamp(a.0, lo, hi), |x| x.clamp(lo, hi))
    }

    /// `M x` where node `m` holds a row-major `rows × cols` matrix.
    pub fn matvec(&mut self, m: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.len_of(m), rows * cols, "tape: matrix size mismatch");
        assert_eq!(self.len_of(x), cols, "tape: matvec operand mismatch");
        let mv = self.value(m);
        let xv = self.value(x);
        let out: Vec<f64> = mv
            .chunks_exact(cols)
            .map(|row| crate::linalg::dot(row, xv))
            .collect();
        self.push(Op::MatVec { m: m.0, x: x.0, cols }, &out)
    }

    /// `Mᵀ x` over the row block `row_off .. row_off + len(x)` of a row-major
    /// matrix with `cols` columns.
    pub fn tr_matvec_block(&mut self, m: NodeId, x: NodeId, row_off: usize, cols: usize) -> NodeId {
        let k = self.len_of(x);
        assert!((row_off + k) * cols <= self.len_of(m), "tape: matrix block out of range");
        let mv = self.value(m);
        let xv = self.value(x);
        let mut out = vec![0.0; cols];
        for (i, &xi) in xv.iter().enumerate() {
            let row = &mv[(row_off + i) * cols..(row_off + i + 1) * cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * xi;
            }
        }
        self.push(
            Op::TrMatVecBlock {
                m: m.0,
                x: x.0,
                row_off,
                cols,
            },
            &out,
        )
    }

    /// Concatenate scalar nodes into one vector.
    pub fn stack(&mut self, scalars: &[NodeId]) -> NodeId {
        let v: Vec<f64> = scalars.iter().map(|&s| self.scalar_value(s)).collect();
        let args = self.push_args(scalars);
        self.push(
            Op::Stack {
                args,
                n: scalars.len(),
            },
            &v,
        )
    }

    /// `softmax(v / temperature)`.
    pub fn softmax(&mut self, v: NodeId, temperature: f64) -> NodeId {
        let inv = 1.0 / temperature;
        let out = softmax(self.value(v), inv);
        self.push(Op::Softmax(v.0, inv), &out)
    }

    /// `Σₖ w[k] · vₖ` for equally sized vectors `vₖ`.
    pub fn weighted_sum(&mut self, vecs: &[NodeId], w: NodeId) -> NodeId {
        assert_eq!(self.len_of(w), vecs.len(), "tape: weight count mismatch");
        assert!(!vecs.is_empty(), "tape: empty weighted sum");
        let d = self.len_of(vecs[0]);
        let mut out = vec![0.0; d];
        for (k, &v) in vecs.iter().enumerate() {
            let wk = self.value(w)[k];
            crate::linalg::axpy(&mut out, wk, self.value(v));
        }
        let args = self.push_args(vecs);
        self.push(
            Op::WeightedSum {
                args,
                n: vecs.len(),
                w: w.0,
            },
            &out,
        )
    }

    /// Sum of equally sized nodes.
    pub fn sum(&mut self, items: &[NodeId]) -> NodeId {
        assert!(!items.is_empty(), "tape: empty sum");
        let d = self.len_of(items[0]);
        let mut out = vec![0.0; d];
        for &v in items {
            crate::linalg::axpy(&mut out, 1.0, self.value(v));
        }
        let args = self.push_args(items);
        self.push(
            Op::Sum {
                args,
                n: items.len(),
            },
            &out,
        )
    }

    /// Reverse sweep from a scalar `loss`, returning `∂loss/∂θ` for every
    /// registered parameter leaf (zero for leaves the loss does not reach).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.len_of(loss) != 1 {
            return Err(HsrError::Usage(format!(
                "backward needs a scalar loss, node has length {}",
                self.len_of(loss)
            )));
        }
        let mut grads = vec![0.0; self.values.len()];
        let mut live = vec![false; self.nodes.len()];
        grads[self.nodes[loss.0].off] = 1.0;
        live[loss.0] = true;

        for idx in (0..=loss.0).rev() {
            if !live[idx] {
                continue;
            }
            let node = self.nodes[idx];
            let (lower, upper) = grads.split_at_mut(node.off);
            let g = &upper[..node.len];
            let out = &self.values[node.off..node.off + node.len];
            self.propagate(node.op, g, out, lower, &mut live);
        }

        let mut result = Gradients::default();
        for &(pid, n) in &self.leaves {
            let node = self.nodes[n];
            let g = if live[n] {
                grads[node.off..node.off + node.len].to_vec()
            } else {
                vec![0.0; node.len]
            };
            result.map.insert(pid, g);
        }
        Ok(result)
    }

    fn val(&self, i: usize) -> &[f64] {
        let n = &self.nodes[i];
        &self.values[n.off..n.off + n.len]
    }

    fn grad_slice<'a>(&self, lower: &'a mut [f64], i: usize, live: &mut [bool]) -> &'a mut [f64] {
        live[i] = true;
        let n = &self.nodes[i];
        &mut lower[n.off..n.off + n.len]
    }

    fn propagate(&self, op: Op, g: &[f64], out: &[f64], lower: &mut [f64], live: &mut [bool]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(self.grad_slice(lower, a, live), g, 1.0);
                add_into(self.grad_slice(lower, b, live), g, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(self.grad_slice(lower, a, live), g, 1.0);
                add_into(self.grad_slice(lower, b, live), g, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(a), self.val(b));
                let ga = self.grad_slice(lower, a, live);
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
                let gb = self.grad_slice(lower, b, live);
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            }
            Op::Scale(v, s) => {
                let k = self.val(s)[0];
                let vv = self.val(v);
                let gs: f64 = g.iter().zip(vv).map(|(x, y)| x * y).sum();
                add_into(self.grad_slice(lower, v, live), g, k);
                self.grad_slice(lower, s, live)[0] += gs;
            }
            Op::ScaleConst(a, k) => add_into(self.grad_slice(lower, a, live), g, k),
            Op::AddConst(a) => add_into(self.grad_slice(lower, a, live), g, 1.0),
            Op::Dot(a, b) => {
                let (av, bv) = (self.val(a), self.val(b));
                add_into(self.grad_slice(lower, a, live), bv, g[0]);
                add_into(self.grad_slice(lower, b, live), av, g[0]);
            }
            Op::Norm(a) => {
                let n = out[0];
                if n >= MIN_NORM {
                    let av = self.val(a);
                    add_into(self.grad_slice(lower, a, live), av, g[0] / n);
                }
            }
            Op::Tanh(a) => {
                let av = self.val(a);
                let ga = self.grad_slice(lower, a, live);
                for i in 0..g.len() {
                    if av[i].abs() <= TANH_CLAMP {
                        ga[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
            }
            Op::Atanh(a) => {
                let av = self.val(a);
                let ga = self.grad_slice(lower, a, live);
                for i in 0..g.len() {
                    if av[i].abs() < ATANH_MAX {
                        ga[i] += g[i] / (1.0 - av[i] * av[i]);
                    }
                }
            }
            Op::Exp(a) => {
                let ga = self.grad_slice(lower, a, live);
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i];
                }
            }
            Op::Ln(a) => {
                let av = self.val(a);
                let ga = self.grad_slice(lower, a, live);
                for i in 0..g.len() {
                    ga[i] += g[i] / av[i];
                }
            }
            Op::Recip(a) => {
                let ga = self.grad_slice(lower, a, live);
                for i in 0..g.len() {
                    ga[i] -= g[i] * out[i] * out[i];
                }
            }
            Op::Sigmoid(a) => {
                let ga = self.grad_slice(lower, a, live);
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }
            Op::LogSigmoid(a) => {
                let av = self.val(a);
                let ga = self.grad_slice(lower, a, live);
                for i in 0..g.len() {
                    ga[i] += g[i] * sigmoid(-av[i]);
                }
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.val(a);
                let ga = self.grad_slice(lower, a, live);
                for i in 0..g.len() {
                    ga[i] += g[i] * if av[i] > 0.0 { 1.0 } else { slope };
                }
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.val(a);
                let ga = self.grad_slice(lower, a, live);
                for i in 0..g.len() {
                    if av[i] >= lo && av[i] <= hi {
                        ga[i] += g[i];
                    }
                }
            }
            Op::MatVec { m, x, cols } => {
                let (mv, xv) = (self.val(m), self.val(x));
                let gx = self.grad_slice(lower, x, live);
                for (r, &gr) in g.iter().enumerate() {
                    add_into(gx, &mv[r * cols..(r + 1) * cols], gr);
                }
                let gm = self.grad_slice(lower, m, live);
                for (r, &gr) in g.iter().enumerate() {
                    add_into(&mut gm[r * cols..(r + 1) * cols], xv, gr);
                }
            }
            Op::TrMatVecBlock { m, x, row_off, cols } => {
                let (mv, xv) = (self.val(m), self.val(x));
                let gx = self.grad_slice(lower, x, live);
                for k in 0..xv.len() {
                    let row = &mv[(row_off + k) * cols..(row_off + k + 1) * cols];
                    gx[k] += crate::linalg::dot(row, g);
                }
                let gm = self.grad_slice(lower, m, live);
                for (k, &xk) in xv.iter().enumerate() {
                    add_into(&mut gm[(row_off + k) * cols..(row_off + k + 1) * cols], g, xk);
                }
            }
            Op::Stack { args, n } => {
                for k in 0..n {
                    let a = self.args[args + k];
                    self.grad_slice(lower, a, live)[0] += g[k];
                }
            }
            Op::Softmax(v, inv) => {
                let s: f64 = g.iter().zip(out).map(|(a, b)| a * b).sum();
                let gv = self.grad_slice(lower, v, live);
                for i in 0..g.len() {
                    gv[i] += inv * out[i] * (g[i] - s);
                }
            }
            Op::WeightedSum { args, n, w } => {
                let wv = self.val(w).to_vec();
                let mut gw = vec![0.0; n];
                for k in 0..n {
                    let a = self.args[args + k];
                    gw[k] = crate::linalg::dot(g, self.val(a));
                    add_into(self.grad_slice(lower, a, live), g, wv[k]);
                }
                add_into(self.grad_slice(lower, w, live), &gw, 1.0);
            }
            Op::Sum { args, n } => {
                for k in 0..n {
                    let a = self.args[args + k];
                    add_into(self.grad_slice(lower, a, live), g, 1.0);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `softmax(v · inv_temperature)`, max-shifted.
pub fn softmax(v: &[f64], inv_temperature: f64) -> Vec<f64> {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = v.iter().map(|&x| ((x - m) * inv_temperature).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}
