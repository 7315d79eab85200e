//! Tape-based computation graph.
//!
//! Every op appends a node holding its forward value and whatever it needs for
//! the adjoint. Node ids grow monotonically, so the tape order is already a
//! topological order and `backward` is a single reverse sweep.

use std::fmt::Write as _;

use crate::kernels;
use crate::tensor::{trailing_broadcast_repeat, Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqr,
    Gelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    /// Population standard deviation (divisor `n`).
    Std,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(UnaryOp, usize),
    Binary {
        op: BinaryOp,
        a: usize,
        b: usize,
        repeat: usize,
    },
    Scale(usize, f64),
    AddScalar(usize),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Linear {
        x: usize,
        w: usize,
        bias: Option<usize>,
        m: usize,
        k: usize,
        n: usize,
    },
    Reduce {
        op: Reduction,
        a: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Softmax(usize),
    LayerNorm {
        a: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Reshape(usize),
    Concat(Vec<usize>),
    ScatterRows {
        src: usize,
        fill: usize,
        layout: Vec<Option<usize>>,
    },
    Rotary {
        x: usize,
        theta: usize,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> String {
        match self {
            Op::Leaf => "leaf".into(),
            Op::Unary(op, _) => format!("{op:?}").to_lowercase(),
            Op::Binary { op, .. } => format!("{op:?}").to_lowercase(),
            Op::Scale(_, c) => format!("scale({c})"),
            Op::AddScalar(_) => "add_scalar".into(),
            Op::MatMul { .. } => "matmul".into(),
            Op::Linear { .. } => "linear".into(),
            Op::Reduce { op, .. } => format!("{op:?}").to_lowercase(),
            Op::Softmax(_) => "softmax".into(),
            Op::LayerNorm { .. } => "layernorm".into(),
            Op::Reshape(_) => "reshape".into(),
            Op::Concat(_) => "concat".into(),
            Op::ScatterRows { .. } => "scatter_rows".into(),
            Op::Rotary { .. } => "rotary".into(),
            Op::Attention { heads, .. } => format!("attention(h={heads})"),
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Unary(_, a) | Op::Scale(a, _) | Op::AddScalar(a) | Op::Softmax(a) | Op::Reshape(a) => {
                vec![*a]
            }
            Op::Binary { a, b, .. } | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Linear { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias.iter().copied());
                v
            }
            Op::Reduce { a, .. } => vec![*a],
            Op::LayerNorm { a, gain, bias, .. } => vec![*a, *gain, *bias],
            Op::Concat(parts) => parts.clone(),
            Op::ScatterRows { src, fill, .. } => vec![*src, *fill],
            Op::Rotary { x, theta } => vec![*x, *theta],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-use tape. Build the forward pass with the op methods, call
/// [`Graph::backward`] once on a scalar, then read leaf gradients.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.push_with(value, op, requires_grad)
    }

    fn push_with(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_with(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_with(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_with(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if any flowed into it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    // ---- elementwise -------------------------------------------------

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Var {
        let x = self.value(a);
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Neg => |v| -v,
            UnaryOp::Sin => f64::sin,
            UnaryOp::Cos => f64::cos,
            UnaryOp::Exp => f64::exp,
            UnaryOp::Sqr => |v| v * v,
            UnaryOp::Gelu => kernels::gelu,
        };
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Unary(op, a.0))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a)
    }
    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sin, a)
    }
    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Cos, a)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a)
    }
    pub fn sqr(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sqr, a)
    }
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Gelu, a)
    }

    /// Binary elementwise op. `b` may broadcast against `a` along a trailing
    /// run of singleton axes (see [`trailing_broadcast_repeat`]).
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let repeat = trailing_broadcast_repeat(av.shape(), bv.shape())
            .ok_or_else(|| shape_err("elementwise", av.shape(), bv.shape()))?;
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
        };
        let bd = bv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i / repeat]))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(
            value,
            Op::Binary {
                op,
                a: a.0,
                b: b.0,
                repeat,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v + c).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::AddScalar(a.0))
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
        ))
    }

    /// `x · w + bias` with `x` viewed as `[rows, k]`, `w: [k, n]`, `bias: [n]`
    /// or `[1, n]`. Leading axes of `x` are kept.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 || xv.last_dim() != wv.shape()[0] {
            return Err(shape_err("linear", xv.shape(), wv.shape()));
        }
        let (m, k, n) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
        let mut out = vec![0.0; m * n];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.numel() != n || bv.last_dim() != n {
                return Err(shape_err("linear bias", &[n], bv.shape()));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bv.data());
            }
        }
        kernels::matmul_acc(xv.data(), wv.data(), &mut out, m, k, n);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = n;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Linear {
                x: x.0,
                w: w.0,
                bias: bias.map(|b| b.0),
                m,
                k,
                n,
            },
        ))
    }

    // ---- reductions --------------------------------------------------

    /// Reduce over `axis` (kept with extent 1) or over everything (shape `[1]`).
    pub fn reduce(&mut self, op: Reduction, a: Var, axis: Option<usize>) -> Result<Var> {
        let x = self.value(a);
        let shape = x.shape();
        let (outer, len, inner, out_shape) = match axis {
            None => (1, x.numel(), 1, vec![1]),
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(TensorError::AxisOutOfRange {
                        axis: ax,
                        shape: shape.to_vec(),
                    });
                }
                let mut out_shape = shape.to_vec();
                out_shape[ax] = 1;
                (
                    shape[..ax].iter().product(),
                    shape[ax],
                    shape[ax + 1..].iter().product(),
                    out_shape,
                )
            }
        };
        if op == Reduction::Std && len < 2 {
            return Err(TensorError::DegenerateReduction {
                op: "std",
                reason: format!("needs at least 2 elements along the reduced axis, got {len}"),
            });
        }
        let d = x.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| d[(o * len + j) * inner + i];
                let sum: f64 = (0..len).map(at).sum();
                out[o * inner + i] = match op {
                    Reduction::Sum => sum,
                    Reduction::Mean => sum / len as f64,
                    Reduction::Std => {
                        let mean = sum / len as f64;
                        let var = (0..len).map(|j| (at(j) - mean).powi(2)).sum::<f64>() / len as f64;
                        var.sqrt()
                    }
                };
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Reduce {
                op,
                a: a.0,
                outer,
                len,
                inner,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(Reduction::Sum, a, None).expect("full sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(Reduction::Mean, a, None).expect("full mean")
    }

    // ---- normalization -----------------------------------------------

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut data = x.data().to_vec();
        let cols = x.last_dim();
        for row in data.chunks_mut(cols) {
            kernels::softmax_row(row);
        }
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Softmax(a.0))
    }

    /// Per-row normalization over the last axis followed by `gain`/`bias`.
    pub fn layernorm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let cols = x.last_dim();
        for p in [gain, bias] {
            let pv = self.value(p);
            if pv.numel() != cols || pv.last_dim() != cols {
                return Err(shape_err("layernorm", x.shape(), pv.shape()));
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = x.rows();
        let mut xhat = vec![0.0; x.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; x.numel()];
        for r in 0..rows {
            let row = &x.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                a: a.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                rstd,
            },
        ))
    }

    // ---- layout ------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a.0)))
    }

    /// Concatenate along the last axis. All parts must agree on the number
    /// of rows.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat_last",
            reason: "no inputs".into(),
        })?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(shape_err("concat_last", self.shape(*first), v.shape()));
            }
            total += v.last_dim();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let v = self.value(*p);
                let c = v.last_dim();
                out.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = self.shape(*first).to_vec();
        *shape.last_mut().expect("rank >= 1") = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat(parts.iter().map(|p| p.0).collect())))
    }

    /// Build `[layout.len(), D]` whose row `r` is `src[layout[r]]`, or the
    /// shared `fill` row where `layout[r]` is `None`.
    pub fn scatter_rows(&mut self, src: Var, fill: Var, layout: &[Option<usize>]) -> Result<Var> {
        let (sv, fv) = (self.value(src), self.value(fill));
        let cols = sv.last_dim();
        if fv.numel() != cols {
            return Err(shape_err("scatter_rows", sv.shape(), fv.shape()));
        }
        let mut out = Vec::with_capacity(layout.len() * cols);
        for slot in layout {
            match slot {
                Some(r) if *r < sv.rows() => out.extend_from_slice(&sv.data()[r * cols..(r + 1) * cols]),
                Some(r) => {
                    return Err(TensorError::InvalidArgument {
                        op: "scatter_rows",
                        reason: format!("row {r} out of range for {} source rows", sv.rows()),
                    })
                }
                None => out.extend_from_slice(fv.data()),
            }
        }
        let value = Tensor::new(vec![layout.len(), cols], out)?;
        Ok(self.push(
            value,
            Op::ScatterRows {
                src: src.0,
                fill: fill.0,
                layout: layout.to_vec(),
            },
        ))
    }

    // ---- attention ---------------------------------------------------

    /// Rotate consecutive feature pairs of `x: [L, 2P]` by `theta: [L, P]`.
    /// Differentiable in both arguments.
    pub fn rotary(&mut self, x: Var, theta: Var) -> Result<Var> {
        let (xv, tv) = (self.value(x), self.value(theta));
        if xv.rank() != 2 || tv.rank() != 2 || xv.shape()[0] != tv.shape()[0] || xv.shape()[1] != 2 * tv.shape()[1] {
            return Err(shape_err("rotary", xv.shape(), tv.shape()));
        }
        let mut out = vec![0.0; xv.numel()];
        kernels::rotate_pairs(xv.data(), tv.data(), &mut out);
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Rotary { x: x.0, theta: theta.0 }))
    }

    /// Multi-head scaled dot-product self-attention. `q`, `k`, `v` are
    /// `[L, heads·d]` with head `h` occupying columns `h·d..(h+1)·d`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || qv.rank() != 2 {
            return Err(shape_err("attention", qv.shape(), kv.shape()));
        }
        let (len, width) = (qv.shape()[0], qv.shape()[1]);
        if heads == 0 || width % heads != 0 {
            return Err(TensorError::InvalidArgument {
                op: "attention",
                reason: format!("width {width} not divisible into {heads} heads"),
            });
        }
        let d = width / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut probs = vec![0.0; heads * len * len];
        let mut out = vec![0.0; len * width];
        for h in 0..heads {
            let off = h * d;
            for i in 0..len {
                let qi = &qd[i * width + off..i * width + off + d];
                let row = &mut probs[(h * len + i) * len..(h * len + i + 1) * len];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = scale * kernels::dot(qi, &kd[j * width + off..j * width + off + d]);
                }
                kernels::softmax_row(row);
                let oi = &mut out[i * width + off..i * width + off + d];
                for (j, &p) in row.iter().enumerate() {
                    let vj = &vd[j * width + off..j * width + off + d];
                    for (o, &x) in oi.iter_mut().zip(vj) {
                        *o += p * x;
                    }
                }
            }
        }
        let value = Tensor::new(vec![len, width], out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                heads,
                probs,
            },
        ))
    }

    // ---- backward ----------------------------------------------------

    /// Reverse sweep from a scalar `root`. Gradients accumulate into every
    /// node that requires them; calling twice adds twice.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(TensorError::NonScalarRoot(rv.shape().to_vec()));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        accumulate(&mut self.grads, &self.nodes, root.0, |g| g[0] += 1.0);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            backprop_node(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Human-readable listing of the tape.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "%{i} = {}({}) shape={:?}{}{}",
                n.op.name(),
                n.op
                    .inputs()
                    .iter()
                    .map(|j| format!("%{j}"))
                    .collect::<Vec<_>>()
                    .join(", "),
                n.value.shape(),
                if n.requires_grad { " grad" } else { "" },
                if self.grads[i].is_some() { " [populated]" } else { "" },
            );
        }
        s
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], idx: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[idx].requires_grad {
        return;
    }
    let slot = grads[idx].get_or_insert_with(|| vec![0.0; nodes[idx].value.numel()]);
    f(slot);
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let val = |j: usize| nodes[j].value.data();
    let out = val(i);
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Unary(op, a) => {
            let x = val(*a);
            accumulate(grads, nodes, *a, |ga| {
                for (j, slot) in ga.iter_mut().enumerate() {
                    let d = match op {
                        UnaryOp::Neg => -1.0,
                        UnaryOp::Sin => x[j].cos(),
                        UnaryOp::Cos => -x[j].sin(),
                        UnaryOp::Exp => out[j],
                        UnaryOp::Sqr => 2.0 * x[j],
                        UnaryOp::Gelu => kernels::gelu_grad(x[j]),
                    };
                    *slot += g[j] * d;
                }
            });
        }
        Op::Binary { op, a, b, repeat } => {
            let (xa, xb) = (val(*a), val(*b));
            let r = *repeat;
            accumulate(grads, nodes, *a, |ga| {
                for (j, slot) in ga.iter_mut().enumerate() {
                    *slot += match op {
                        BinaryOp::Add | BinaryOp::Sub => g[j],
                        BinaryOp::Mul => g[j] * xb[j / r],
                    };
                }
            });
            accumulate(grads, nodes, *b, |gb| {
                for (j, &gj) in g.iter().enumerate() {
                    gb[j / r] += match op {
                        BinaryOp::Add => gj,
                        BinaryOp::Sub => -gj,
                        BinaryOp::Mul => gj * xa[j],
                    };
                }
            });
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, |ga| {
            for (s, &gj) in ga.iter_mut().zip(g) {
                *s += c * gj;
            }
        }),
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(grads, nodes, *a, |ga| {
            for (s, &gj) in ga.iter_mut().zip(g) {
                *s += gj;
            }
        }),
        Op::MatMul { a, b, m, k, n } => {
            let (xa, xb) = (val(*a), val(*b));
            accumulate(grads, nodes, *a, |ga| kernels::matmul_grad_lhs(g, xb, ga, *m, *k, *n));
            accumulate(grads, nodes, *b, |gb| kernels::matmul_grad_rhs(xa, g, gb, *m, *k, *n));
        }
        Op::Linear { x, w, bias, m, k, n } => {
            let (xx, xw) = (val(*x), val(*w));
            accumulate(grads, nodes, *x, |gx| kernels::matmul_grad_lhs(g, xw, gx, *m, *k, *n));
            accumulate(grads, nodes, *w, |gw| kernels::matmul_grad_rhs(xx, g, gw, *m, *k, *n));
            if let Some(b) = bias {
                accumulate(grads, nodes, *b, |gb| {
                    for row in g.chunks(*n) {
                        for (s, &gj) in gb.iter_mut().zip(row) {
                            *s += gj;
                        }
                    }
                });
            }
        }
        Op::Reduce {
            op,
            a,
            outer,
            len,
            inner,
        } => {
            let x = val(*a);
            let (outer, len, inner) = (*outer, *len, *inner);
            accumulate(grads, nodes, *a, |ga| {
                for o in 0..outer {
                    for ii in 0..inner {
                        let gi = g[o * inner + ii];
                        let idx = |j: usize| (o * len + j) * inner + ii;
                        match op {
                            Reduction::Sum => (0..len).for_each(|j| ga[idx(j)] += gi),
                            Reduction::Mean => (0..len).for_each(|j| ga[idx(j)] += gi / len as f64),
                            Reduction::Std => {
                                let sd = out[o * inner + ii];
                                if sd > 0.0 {
                                    let mean = (0..len).map(|j| x[idx(j)]).sum::<f64>() / len as f64;
                                    for j in 0..len {
                                        ga[idx(j)] += gi * (x[idx(j)] - mean) / (len as f64 * sd);
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }
        Op::Softmax(a) => {
            let cols = nodes[i].value.last_dim();
            accumulate(grads, nodes, *a, |ga| {
                for ((grow, prow), arow) in g.chunks(cols).zip(out.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    let inner = kernels::dot(grow, prow);
                    for c in 0..cols {
                        arow[c] += prow[c] * (grow[c] - inner);
                    }
                }
            });
        }
        Op::LayerNorm {
            a,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let cols = nodes[i].value.last_dim();
            let gv = val(*gain);
            accumulate(grads, nodes, *a, |ga| {
                let mut dxhat = vec![0.0; cols];
                for (r, &rs) in rstd.iter().enumerate() {
                    let grow = &g[r * cols..(r + 1) * cols];
                    let hrow = &xhat[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        dxhat[c] = grow[c] * gv[c];
                    }
                    let s1: f64 = dxhat.iter().sum();
                    let s2 = kernels::dot(&dxhat, hrow);
                    let n = cols as f64;
                    for c in 0..cols {
                        ga[r * cols + c] += rs / n * (n * dxhat[c] - s1 - hrow[c] * s2);
                    }
                }
            });
            accumulate(grads, nodes, *gain, |gg| {
                for (grow, hrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
                    for c in 0..cols {
                        gg[c] += grow[c] * hrow[c];
                    }
                }
            });
            accumulate(grads, nodes, *bias, |gb| {
                for grow in g.chunks(cols) {
                    for c in 0..cols {
                        gb[c] += grow[c];
                    }
                }
            });
        }
        Op::Concat(parts) => {
            let total = nodes[i].value.last_dim();
            let mut offset = 0;
            for &p in parts {
                let c = nodes[p].value.last_dim();
                accumulate(grads, nodes, p, |gp| {
                    for (r, row) in gp.chunks_mut(c).enumerate() {
                        for (s, &gj) in row.iter_mut().zip(&g[r * total + offset..r * total + offset + c]) {
                            *s += gj;
                        }
                    }
                });
                offset += c;
            }
        }
        Op::ScatterRows { src, fill, layout } => {
            let cols = nodes[i].value.last_dim();
            accumulate(grads, nodes, *src, |gs| {
                for (r, slot) in layout.iter().enumerate() {
                    if let Some(s) = slot {
                        for c in 0..cols {
                            gs[s * cols + c] += g[r * cols + c];
                        }
                    }
                }
            });
            accumulate(grads, nodes, *fill, |gf| {
                for (r, slot) in layout.iter().enumerate() {
                    if slot.is_none() {
                        for c in 0..cols {
                            gf[c] += g[r * cols + c];
                        }
                    }
                }
            });
        }
        Op::Rotary { x, theta } => {
            let th = val(*theta);
            accumulate(grads, nodes, *x, |gx| {
                for (p, &t) in th.iter().enumerate() {
                    let (s, c) = t.sin_cos();
                    let (g0, g1) = (g[2 * p], g[2 * p + 1]);
                    gx[2 * p] += g0 * c + g1 * s;
                    gx[2 * p + 1] += -g0 * s + g1 * c;
                }
            });
            accumulate(grads, nodes, *theta, |gt| {
                for (p, slot) in gt.iter_mut().enumerate() {
                    *slot += -g[2 * p] * out[2 * p + 1] + g[2 * p + 1] * out[2 * p];
                }
            });
        }
        Op::Attention { q, k, v, heads, probs } => {
            let shape = nodes[i].value.shape();
            let (len, width) = (shape[0], shape[1]);
            let d = width / heads;
            let scale = 1.0 / (d as f64).sqrt();
            let (qd, kd, vd) = (val(*q), val(*k), val(*v));
            let mut dq = vec![0.0; len * width];
            let mut dk = vec![0.0; len * width];
            let mut dv = vec![0.0; len * width];
            let mut ds = vec![0.0; len];
            for h in 0..*heads {
                let off = h * d;
                for ii in 0..len {
                    let prow = &probs[(h * len + ii) * len..(h * len + ii + 1) * len];
                    let gi = &g[ii * width + off..ii * width + off + d];
                    // dP_ij = <dO_i, V_j>; dV_j += P_ij dO_i
                    for j in 0..len {
                        let vj = &vd[j * width + off..j * width + off + d];
                        ds[j] = kernels::dot(gi, vj);
                        let dvj = &mut dv[j * width + off..j * width + off + d];
                        for (s, &x) in dvj.iter_mut().zip(gi) {
                            *s += prow[j] * x;
                        }
                    }
                    let inner = kernels::dot(&ds, prow);
                    for j in 0..len {
                        let dsj = prow[j] * (ds[j] - inner) * scale;
                        if dsj == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            dq[ii * width + off + c] += dsj * kd[j * width + off + c];
                            dk[j * width + off + c] += dsj * qd[ii * width + off + c];
                        }
                    }
                }
            }
            for (idx, local) in [(*q, dq), (*k, dk), (*v, dv)] {
                accumulate(grads, nodes, idx, |gx| {
                    for (s, x) in gx.iter_mut().zip(local) {
                        *s += x;
                    }
                });
            }
        }
    }
}
