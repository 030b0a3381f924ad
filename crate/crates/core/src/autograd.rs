//! A small reverse-mode automatic differentiation engine over row-major
//! `f32` matrices.
//!
//! Gradients are themselves built out of graph operations, so a gradient can
//! be differentiated again. The Lipschitz penalty on the critics needs this:
//! it penalizes the norm of an input gradient and then differentiates that
//! penalty with respect to the critic weights.
//!
//! Sequence batches are stored as `[batch * len, channels]` matrices with the
//! time index varying fastest inside each sequence. Time shifts, slicing and
//! concatenation are all expressed through [`Graph::gather`] and its adjoint
//! [`Graph::scatter_add`].

use std::rc::Rc;

/// Row index meaning "emit a zero row" in a gather.
pub const ZERO_ROW: u32 = u32::MAX;

const LOGIT_EPS: f32 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match shape");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f32) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a `[1, 1]` tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// `op(a) * op(b)` where `op` optionally transposes.
pub fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "matmul inner dimension mismatch");
    let mut out = Tensor::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: the strides above describe in-bounds views of `a` and `b`,
    // and `out` is a freshly allocated m x n row-major buffer.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f32),
    MulConst(Var, Rc<Vec<f32>>),
    Recip(Var),
    Sqrt(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f32),
    Logit(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Gather(Var, Rc<Vec<u32>>),
    ScatterAdd(Var, Rc<Vec<u32>>),
    Sum(Var),
    Broadcast(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Computation graph. Nodes are appended in evaluation order, so node indices
/// are a topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A leaf that gradients can flow into.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Mul(a, b), t)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f32, shift: f32) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let t = self.tracked(x);
        self.push(value, Op::Affine(x, scale), t)
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        self.affine(x, s, 0.0)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Rc<Vec<f32>>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.data.len(), c.len(), "mul_const shape mismatch");
        let value = Tensor {
            rows: xv.rows,
            cols: xv.cols,
            data: xv.data.iter().zip(c.iter()).map(|(&a, &b)| a * b).collect(),
        };
        let t = self.tracked(x);
        self.push(value, Op::MulConst(x, c), t)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| 1.0 / v);
        let t = self.tracked(x);
        self.push(value, Op::Recip(x), t)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f32::sqrt);
        let t = self.tracked(x);
        self.push(value, Op::Sqrt(x), t)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f32::tanh);
        let t = self.tracked(x);
        self.push(value, Op::Tanh(x), t)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let t = self.tracked(x);
        self.push(value, Op::Sigmoid(x), t)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let t = self.tracked(x);
        self.push(value, Op::LeakyRelu(x, slope), t)
    }

    /// `log(p / (1 - p))` with `p` clamped to `[1e-6, 1 - 1e-6]`.
    ///
    /// The backward pass treats the local derivative as a constant, so this
    /// op supports first-order gradients only.
    pub fn logit(&mut self, p: Var) -> Var {
        let value = self.value(p).map(|v| {
            let v = v.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
            (v / (1.0 - v)).ln()
        });
        let t = self.tracked(p);
        self.push(value, Op::Logit(p), t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let value = matmul(self.value(a), self.value(b), ta, tb);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::MatMul { a, b, ta, tb }, t)
    }

    /// Row gather: `out[i] = x[idx[i]]`, or zeros where `idx[i] == ZERO_ROW`.
    pub fn gather(&mut self, x: Var, idx: Rc<Vec<u32>>) -> Var {
        let xv = self.value(x);
        let cols = xv.cols;
        let mut data = vec![0.0f32; idx.len() * cols];
        for (i, &r) in idx.iter().enumerate() {
            if r != ZERO_ROW {
                let r = r as usize;
                data[i * cols..(i + 1) * cols].copy_from_slice(&xv.data[r * cols..(r + 1) * cols]);
            }
        }
        let value = Tensor { rows: idx.len(), cols, data };
        let t = self.tracked(x);
        self.push(value, Op::Gather(x, idx), t)
    }

    /// Adjoint of [`Graph::gather`] for an output with `rows` rows:
    /// `out[idx[i]] += x[i]`.
    pub fn scatter_add(&mut self, x: Var, idx: Rc<Vec<u32>>, rows: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows, idx.len(), "scatter index length mismatch");
        let cols = xv.cols;
        let mut data = vec![0.0f32; rows * cols];
        for (i, &r) in idx.iter().enumerate() {
            if r != ZERO_ROW {
                let r = r as usize;
                for c in 0..cols {
                    data[r * cols + c] += xv.data[i * cols + c];
                }
            }
        }
        let value = Tensor { rows, cols, data };
        let t = self.tracked(x);
        self.push(value, Op::ScatterAdd(x, idx), t)
    }

    /// Sum of all entries, as a `[1, 1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        // f64 accumulation, fixed order
        let s: f64 = self.value(x).data.iter().map(|&v| v as f64).sum();
        let t = self.tracked(x);
        self.push(Tensor::scalar(s as f32), Op::Sum(x), t)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).data.len().max(1) as f32;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Broadcast a `[1, 1]` tensor to `[rows, cols]`.
    pub fn broadcast(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(x).item();
        let t = self.tracked(x);
        self.push(Tensor::full(rows, cols, v), Op::Broadcast(x), t)
    }

    /// Add a `[1, cols]` bias to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let rows = self.value(x).rows;
        let rep = self.gather(bias, Rc::new(vec![0; rows]));
        self.add(x, rep)
    }

    /// Per-row sums, `[rows, cols] -> [rows, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let cols = self.value(x).cols;
        let ones = self.constant(Tensor::full(cols, 1, 1.0));
        self.matmul(x, ones)
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// The returned nodes live in this graph and can be differentiated again.
    /// Inputs that `output` does not depend on get a zero gradient.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.shape(output), (1, 1), "grad() needs a scalar output");
        let n = output.0 + 1;
        // nodes on some path to a requested input
        let mut reaches = vec![false; n];
        for w in wrt {
            if w.0 < n {
                reaches[w.0] = true;
            }
        }
        for i in 0..n {
            if reaches[i] || !self.nodes[i].tracked {
                continue;
            }
            reaches[i] = children(&self.nodes[i].op).iter().any(|c| reaches[c.0]);
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        if reaches[output.0] {
            grads[output.0] = Some(self.constant(Tensor::scalar(1.0)));
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            if !reaches[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let me = Var(i);
            let send = |graph: &mut Graph, grads: &mut Vec<Option<Var>>, to: Var, make: &dyn Fn(&mut Graph) -> Var| {
                if !reaches[to.0] {
                    return;
                }
                let contrib = make(graph);
                grads[to.0] = Some(match grads[to.0] {
                    Some(prev) => graph.add(prev, contrib),
                    None => contrib,
                });
            };
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    send(self, &mut grads, a, &|_| g);
                    send(self, &mut grads, b, &|_| g);
                }
                Op::Sub(a, b) => {
                    send(self, &mut grads, a, &|_| g);
                    send(self, &mut grads, b, &|gr| gr.scale(g, -1.0));
                }
                Op::Mul(a, b) => {
                    send(self, &mut grads, a, &|gr| gr.mul(g, b));
                    send(self, &mut grads, b, &|gr| gr.mul(g, a));
                }
                Op::Affine(x, s) => send(self, &mut grads, x, &|gr| gr.scale(g, s)),
                Op::MulConst(x, c) => send(self, &mut grads, x, &|gr| gr.mul_const(g, c.clone())),
                Op::Recip(x) => send(self, &mut grads, x, &|gr| {
                    let sq = gr.mul(me, me);
                    let d = gr.scale(sq, -1.0);
                    gr.mul(g, d)
                }),
                Op::Sqrt(x) => send(self, &mut grads, x, &|gr| {
                    let r = gr.recip(me);
                    let d = gr.scale(r, 0.5);
                    gr.mul(g, d)
                }),
                Op::Tanh(x) => send(self, &mut grads, x, &|gr| {
                    let sq = gr.mul(me, me);
                    let d = gr.affine(sq, -1.0, 1.0);
                    gr.mul(g, d)
                }),
                Op::Sigmoid(x) => send(self, &mut grads, x, &|gr| {
                    let om = gr.affine(me, -1.0, 1.0);
                    let d = gr.mul(me, om);
                    gr.mul(g, d)
                }),
                Op::LeakyRelu(x, slope) => send(self, &mut grads, x, &|gr| {
                    let mask: Vec<f32> =
                        gr.value(x).data.iter().map(|&v| if v > 0.0 { 1.0 } else { slope }).collect();
                    gr.mul_const(g, Rc::new(mask))
                }),
                Op::Logit(x) => send(self, &mut grads, x, &|gr| {
                    let d: Vec<f32> = gr
                        .value(x)
                        .data
                        .iter()
                        .map(|&v| {
                            if v > LOGIT_EPS && v < 1.0 - LOGIT_EPS {
                                1.0 / (v * (1.0 - v))
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    gr.mul_const(g, Rc::new(d))
                }),
                Op::MatMul { a, b, ta, tb } => {
                    send(self, &mut grads, a, &|gr| {
                        if ta {
                            gr.matmul_t(b, g, tb, true)
                        } else {
                            gr.matmul_t(g, b, false, !tb)
                        }
                    });
                    send(self, &mut grads, b, &|gr| {
                        if tb {
                            gr.matmul_t(g, a, true, ta)
                        } else {
                            gr.matmul_t(a, g, !ta, false)
                        }
                    });
                }
                Op::Gather(x, idx) => {
                    let rows = self.value(x).rows;
                    send(self, &mut grads, x, &|gr| gr.scatter_add(g, idx.clone(), rows));
                }
                Op::ScatterAdd(x, idx) => send(self, &mut grads, x, &|gr| gr.gather(g, idx.clone())),
                Op::Sum(x) => {
                    let (r, c) = self.shape(x);
                    send(self, &mut grads, x, &|gr| gr.broadcast(g, r, c));
                }
                Op::Broadcast(x) => send(self, &mut grads, x, &|gr| gr.sum(g)),
            }
        }
        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.shape(*w);
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect()
    }
}

fn children(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::MatMul { a, b, .. } => vec![*a, *b],
        Op::Affine(x, ..)
        | Op::MulConst(x, _)
        | Op::Recip(x)
        | Op::Sqrt(x)
        | Op::Tanh(x)
        | Op::Sigmoid(x)
        | Op::LeakyRelu(x, _)
        | Op::Logit(x)
        | Op::Gather(x, _)
        | Op::ScatterAdd(x, _)
        | Op::Sum(x)
        | Op::Broadcast(x) => vec![*x],
    }
}

pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row indices that shift every length-`len` sequence in a stacked batch
/// forward in time by `lag` steps, zero-filling the first `lag` positions.
pub fn causal_shift_index(batch: usize, len: usize, lag: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(batch * len);
    for b in 0..batch {
        for t in 0..len {
            idx.push(if t >= lag { (b * len + t - lag) as u32 } else { ZERO_ROW });
        }
    }
    idx
}

/// Row indices mapping each row of a stacked batch to its sequence number.
pub fn sequence_index(batch: usize, len: usize) -> Vec<u32> {
    (0..batch * len).map(|i| (i / len) as u32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: &dyn Fn(&Tensor) -> f32, x: &Tensor) -> Vec<f32> {
        let h = 1e-2f32;
        (0..x.data.len())
            .map(|i| {
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn sample(rows: usize, cols: usize, seed: u32) -> Tensor {
        let data = (0..rows * cols)
            .map(|i| {
                let v = ((i as u32).wrapping_mul(2654435761).wrapping_add(seed.wrapping_mul(40503))) % 1000;
                v as f32 / 500.0 - 1.0
            })
            .collect();
        Tensor::new(rows, cols, data)
    }

    fn composite(g: &mut Graph, x: Var, w: Var) -> Var {
        let h = g.matmul(x, w);
        let h = g.tanh(h);
        let s = g.sigmoid(h);
        let l = g.leaky_relu(h, 0.2);
        let p = g.mul(s, l);
        let idx = Rc::new(causal_shift_index(2, 3, 1));
        let sh = g.gather(p, idx);
        let q = g.add(p, sh);
        let q = g.affine(q, 1.5, 2.0);
        let r = g.sqrt(q);
        let r = g.recip(r);
        g.mean(r)
    }

    #[test]
    fn first_order_matches_finite_differences() {
        let x = sample(6, 4, 1);
        let w = sample(4, 3, 2);
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let wv = g.param(w.clone());
        let out = composite(&mut g, xv, wv);
        let grads = g.grad(out, &[xv, wv]);
        let fx = |t: &Tensor| {
            let mut g = Graph::new();
            let a = g.constant(t.clone());
            let b = g.constant(w.clone());
            let o = composite(&mut g, a, b);
            g.value(o).item()
        };
        let num = numeric_grad(&fx, &x);
        for (a, b) in g.value(grads[0]).data.iter().zip(&num) {
            assert!((a - b).abs() < 2e-3, "{a} vs {b}");
        }
        let fw = |t: &Tensor| {
            let mut g = Graph::new();
            let a = g.constant(x.clone());
            let b = g.constant(t.clone());
            let o = composite(&mut g, a, b);
            g.value(o).item()
        };
        let num = numeric_grad(&fw, &w);
        for (a, b) in g.value(grads[1]).data.iter().zip(&num) {
            assert!((a - b).abs() < 2e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn transposed_matmul_gradients() {
        let a = sample(3, 5, 3);
        let b = sample(4, 3, 4);
        // out = sum(tanh(a^T b^T))
        let f = |ga: &Tensor, gb: &Tensor| {
            let mut g = Graph::new();
            let x = g.constant(ga.clone());
            let y = g.constant(gb.clone());
            let m = g.matmul_t(x, y, true, true);
            let m = g.tanh(m);
            let s = g.sum(m);
            g.value(s).item()
        };
        let mut g = Graph::new();
        let x = g.param(a.clone());
        let y = g.param(b.clone());
        let m = g.matmul_t(x, y, true, true);
        let m = g.tanh(m);
        let s = g.sum(m);
        let gr = g.grad(s, &[x, y]);
        let na = numeric_grad(&|t| f(t, &b), &a);
        let nb = numeric_grad(&|t| f(&a, t), &b);
        for (p, q) in g.value(gr[0]).data.iter().zip(&na) {
            assert!((p - q).abs() < 2e-3);
        }
        for (p, q) in g.value(gr[1]).data.iter().zip(&nb) {
            assert!((p - q).abs() < 2e-3);
        }
    }

    #[test]
    fn second_order_matches_finite_differences() {
        // penalty(w) = sum_i (|d/dx f(x_i; w)|^2), f = sum(tanh(x w) v)
        let x = sample(5, 3, 7);
        let w = sample(3, 4, 8);
        let v = sample(4, 1, 9);
        let penalty = |wt: &Tensor, want_grad: bool| -> (f32, Option<Vec<f32>>) {
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let wv = if want_grad { g.param(wt.clone()) } else { g.constant(wt.clone()) };
            let vv = g.constant(v.clone());
            let h = g.matmul(xv, wv);
            let h = g.tanh(h);
            let o = g.matmul(h, vv);
            let o = g.sum(o);
            let gx = g.grad(o, &[xv])[0];
            let sq = g.mul(gx, gx);
            let per = g.sum_cols(sq);
            let nrm = g.sqrt(per);
            let dev = g.affine(nrm, 1.0, -1.0);
            let dev2 = g.mul(dev, dev);
            let p = g.mean(dev2);
            let val = g.value(p).item();
            if want_grad {
                let gw = g.grad(p, &[wv])[0];
                (val, Some(g.value(gw).data.clone()))
            } else {
                (val, None)
            }
        };
        let (_, analytic) = penalty(&w, true);
        let num = numeric_grad(&|t| penalty(t, false).0, &w);
        for (a, b) in analytic.unwrap().iter().zip(&num) {
            assert!((a - b).abs() < 3e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn gather_scatter_are_adjoint() {
        let x = sample(6, 2, 11);
        let y = sample(6, 2, 12);
        let idx = causal_shift_index(2, 3, 2);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let gx = g.gather(xv, Rc::new(idx.clone()));
        let sy = g.scatter_add(yv, Rc::new(idx), 6);
        let lhs: f32 = g.value(gx).data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f32 = g.value(sy).data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-5);
    }

    #[test]
    fn untouched_inputs_get_zero_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::full(2, 2, 1.0));
        let b = g.param(Tensor::full(3, 1, 1.0));
        let s = g.sum(a);
        let gr = g.grad(s, &[a, b]);
        assert!(g.value(gr[0]).data.iter().all(|&v| v == 1.0));
        assert_eq!(g.value(gr[1]).shape(), (3, 1));
        assert!(g.value(gr[1]).data.iter().all(|&v| v == 0.0));
    }
}
