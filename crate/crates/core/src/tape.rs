//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! append a node recording their inputs, so nodes are stored in topological
//! order by construction and [`Tape::backward`] is a single reverse sweep.
//!
//! Leaves created with `requires_grad = true` receive `d root / d leaf` in
//! their [`Tensor::grad`] buffer; repeated backward passes add into it until
//! [`Tape::zero_grad`] is called.
//!
//! ```
//! use relnet_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0).with_requires_grad(true));
//! let y = tape.square(x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[6.0]);
//! ```

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::gemm::{gemm, MatMut, MatRef};
use crate::math;
use crate::{Error, Result, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Sigmoid,
    Tanh,
    Relu,
    Log,
    Exp,
    Square,
    Sqrt,
    Neg,
}

/// Element-wise operations addressable through [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Log,
    Exp,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

#[derive(Debug)]
struct GruSaved {
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    reset_state: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryOp, Broadcast, Var, Var),
    Unary(UnaryOp, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    Concat {
        parts: Vec<Var>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Narrow {
        src: Var,
        outer: usize,
        src_chunk: usize,
        offset: usize,
        chunk: usize,
    },
    Reduce {
        src: Var,
        kind: Reduction,
        outer: usize,
        dim: usize,
        inner: usize,
    },
    GatherRows {
        src: Var,
        idx: Vec<usize>,
    },
    ScatterAddRows {
        src: Var,
        idx: Vec<usize>,
    },
    Clamp {
        src: Var,
        lo: f64,
        hi: f64,
    },
    Reshape(Var),
    GruCell {
        x: Var,
        s: Var,
        w: Var,
        u: Var,
        b: Var,
        saved: Box<GruSaved>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation tape: values plus the operations that produced them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn expect_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, s, &[0, 0])),
    }
}

fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Domain {
            op,
            detail: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Gradient slot for `v`, zero-initialised on first touch.
fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf. Its gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    /// Overwrites a leaf's data in place (finite-difference probing).
    pub fn set_leaf_data(&mut self, v: Var, data: &[f64]) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::contract("set_leaf_data on a non-leaf node"));
        }
        if node.value.len() != data.len() {
            return Err(Error::shape("set_leaf_data", node.value.shape(), &[data.len()]));
        }
        node.value.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = expect_matrix("matmul", self.value(a))?;
        let (k2, n) = expect_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            1.0,
            MatRef::new(self.data(a), m, k),
            MatRef::new(self.data(b), k, n),
            0.0,
            MatMut::new(&mut out, m, n),
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), needs))
    }

    fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a), self.value(b));
        let bc = if sa.shape() == sb.shape() {
            Broadcast::Same
        } else if sb.len() == 1 {
            Broadcast::RhsScalar
        } else if sa.len() == 1 {
            Broadcast::LhsScalar
        } else {
            let name = match op {
                BinaryOp::Add => "add",
                BinaryOp::Sub => "sub",
                BinaryOp::Mul => "mul",
            };
            return Err(Error::shape(name, sa.shape(), sb.shape()));
        };
        let f = |x: f64, y: f64| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
        };
        let (shape, data) = match bc {
            Broadcast::Same => (
                sa.shape().to_vec(),
                sa.data().iter().zip(sb.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::RhsScalar => {
                let y = sb.data()[0];
                (sa.shape().to_vec(), sa.data().iter().map(|&x| f(x, y)).collect())
            }
            Broadcast::LhsScalar => {
                let x = sa.data()[0];
                (sb.shape().to_vec(), sb.data().iter().map(|&y| f(x, y)).collect())
            }
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Binary(op, bc, a, b), needs))
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

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let x = self.value(a);
        if matches!(op, UnaryOp::Log | UnaryOp::Sqrt) {
            let bad = |v: f64| if op == UnaryOp::Log { v <= 0.0 } else { v < 0.0 };
            if let Some(v) = x.data().iter().find(|&&v| bad(v) || v.is_nan()) {
                return Err(Error::Domain {
                    op: if op == UnaryOp::Log { "log" } else { "sqrt" },
                    detail: format!("argument {v}"),
                });
            }
        }
        let data = x
            .data()
            .iter()
            .map(|&v| match op {
                UnaryOp::Sigmoid => math::sigmoid(v),
                UnaryOp::Tanh => math::tanh(v),
                UnaryOp::Relu => v.max(0.0),
                UnaryOp::Log => math::ln(v),
                UnaryOp::Exp => math::exp(v),
                UnaryOp::Square => v * v,
                UnaryOp::Sqrt => math::sqrt(v),
                UnaryOp::Neg => -v,
            })
            .collect();
        let shape = x.shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Unary(op, a), needs))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, a)
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sqrt, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::contract(format!(
                "{op:?} takes {arity} argument(s), got {}",
                args.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Sub => self.sub(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Relu => self.relu(args[0]),
            Elementwise::Log => self.log(args[0]),
            Elementwise::Exp => self.exp(args[0]),
            Elementwise::Square => self.square(args[0]),
        }
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let x = self.value(a);
        let t = Tensor::new(x.shape(), x.data().iter().map(|v| v * k).collect())?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Scale(a, k), needs))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let x = self.value(a);
        let t = Tensor::new(x.shape(), x.data().iter().map(|v| v + k).collect())?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::AddScalar(a), needs))
    }

    /// `a[r, c] + bias[c]` for a matrix `a` and a bias of `cols` entries.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = expect_matrix("add_bias", self.value(a))?;
        if self.value(bias).len() != cols {
            return Err(Error::shape("add_bias", self.shape(a), self.shape(bias)));
        }
        let b = self.data(bias);
        let mut out = self.data(a).to_vec();
        for r in 0..rows {
            out[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(b)
                .for_each(|(o, &bv)| *o += bv);
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(Tensor::new(&[rows, cols], out)?, Op::AddBias(a, bias), needs))
    }

    /// `a[r, c] · s[r]`: scales every row of `a` by its own factor.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (rows, cols) = expect_matrix("scale_rows", self.value(a))?;
        if self.value(s).len() != rows {
            return Err(Error::shape("scale_rows", self.shape(a), self.shape(s)));
        }
        let sv = self.data(s);
        let mut out = self.data(a).to_vec();
        for r in 0..rows {
            out[r * cols..(r + 1) * cols].iter_mut().for_each(|o| *o *= sv[r]);
        }
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(Tensor::new(&[rows, cols], out)?, Op::ScaleRows(a, s), needs))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let base = self.shape(first).to_vec();
        let (outer, _, inner) = split_axis("concat", &base, axis)?;
        let mut chunks = Vec::with_capacity(parts.len());
        let mut total_dim = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total_dim += s[axis];
            chunks.push(s[axis] * inner);
        }
        let row: usize = chunks.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (&p, &c) in parts.iter().zip(&chunks) {
                out.extend_from_slice(&self.data(p)[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base;
        shape[axis] = total_dim;
        let needs = parts.iter().any(|&p| self.needs(p));
        let op = Op::Concat {
            parts: parts.to_vec(),
            outer,
            chunks,
        };
        Ok(self.push(Tensor::new(&shape, out)?, op, needs))
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, dim, inner) = split_axis("narrow", &shape, axis)?;
        if start + len > dim {
            return Err(Error::Domain {
                op: "narrow",
                detail: format!("range {start}..{} exceeds axis size {dim}", start + len),
            });
        }
        let (src_chunk, chunk, offset) = (dim * inner, len * inner, start * inner);
        let src = self.data(a);
        let mut out = Vec::with_capacity(outer * chunk);
        for o in 0..outer {
            out.extend_from_slice(&src[o * src_chunk + offset..o * src_chunk + offset + chunk]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let needs = self.needs(a);
        let op = Op::Narrow {
            src: a,
            outer,
            src_chunk,
            offset,
            chunk,
        };
        Ok(self.push(Tensor::new(&new_shape, out)?, op, needs))
    }

    /// Sum or mean over `axis`, or over everything when `axis` is `None`.
    pub fn reduce(&mut self, kind: Reduction, a: Var, axis: Option<usize>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, dim, inner, out_shape) = match axis {
            None => (1, self.value(a).len(), 1, vec![1]),
            Some(ax) => {
                let (o, d, i) = split_axis("reduce", &shape, ax)?;
                let mut s: Vec<usize> = shape.clone();
                s.remove(ax);
                if s.is_empty() {
                    s.push(1);
                }
                (o, d, i, s)
            }
        };
        if dim == 0 {
            return Err(Error::Domain {
                op: "reduce",
                detail: "empty reduction axis".into(),
            });
        }
        let src = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let base = (o * dim + d) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        if kind == Reduction::Mean {
            let inv = 1.0 / dim as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let needs = self.needs(a);
        let op = Op::Reduce {
            src: a,
            kind,
            outer,
            dim,
            inner,
        };
        Ok(self.push(Tensor::new(&out_shape, out)?, op, needs))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduction::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduction::Mean, a, None)
    }

    /// Rows `idx[k]` of matrix `a`, in order.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = expect_matrix("gather_rows", self.value(a))?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Domain {
                op: "gather_rows",
                detail: format!("row {bad} out of {rows}"),
            });
        }
        let src = self.data(a);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let needs = self.needs(a);
        let op = Op::GatherRows {
            src: a,
            idx: idx.to_vec(),
        };
        Ok(self.push(Tensor::new(&[idx.len(), cols], out)?, op, needs))
    }

    /// Segment sum: output row `idx[k]` accumulates input row `k`.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], out_rows: usize) -> Result<Var> {
        let (rows, cols) = expect_matrix("scatter_add_rows", self.value(a))?;
        if idx.len() != rows {
            return Err(Error::shape("scatter_add_rows", self.shape(a), &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(Error::Domain {
                op: "scatter_add_rows",
                detail: format!("target row {bad} out of {out_rows}"),
            });
        }
        let src = self.data(a);
        let mut out = vec![0.0; out_rows * cols];
        for (k, &i) in idx.iter().enumerate() {
            out[i * cols..(i + 1) * cols]
                .iter_mut()
                .zip(&src[k * cols..(k + 1) * cols])
                .for_each(|(o, s)| *o += s);
        }
        let needs = self.needs(a);
        let op = Op::ScatterAddRows {
            src: a,
            idx: idx.to_vec(),
        };
        Ok(self.push(Tensor::new(&[out_rows, cols], out)?, op, needs))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let x = self.value(a);
        let t = Tensor::new(x.shape(), x.data().iter().map(|v| v.clamp(lo, hi)).collect())?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Clamp { src: a, lo, hi }, needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape, self.data(a).to_vec())
            .map_err(|_| Error::shape("reshape", self.shape(a), shape))?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), needs))
    }

    /// One GRU update for a batch of rows.
    ///
    /// Shapes: `x` is `[R, I]`, `s` is `[R, H]`, `w` is `[I, 3H]`, `u` is
    /// `[H, 3H]` and `b` holds `3H` entries. Column blocks of `w`, `u` and
    /// `b` are ordered (update, reset, candidate):
    ///
    /// ```text
    /// z  = σ(x·Wz + s·Uz + bz)
    /// r  = σ(x·Wr + s·Ur + br)
    /// ŝ  = tanh(x·Wh + (r ∗ s)·Uh + bh)
    /// s' = (1 − z) ∗ s + z ∗ ŝ
    /// ```
    pub fn gru_cell(&mut self, x: Var, s: Var, w: Var, u: Var, b: Var) -> Result<Var> {
        let (rows, inp) = expect_matrix("gru_cell", self.value(x))?;
        let (srows, hid) = expect_matrix("gru_cell", self.value(s))?;
        if srows != rows {
            return Err(Error::shape("gru_cell", self.shape(x), self.shape(s)));
        }
        let g3 = 3 * hid;
        if self.shape(w) != [inp, g3] {
            return Err(Error::shape("gru_cell", self.shape(w), &[inp, g3]));
        }
        if self.shape(u) != [hid, g3] {
            return Err(Error::shape("gru_cell", self.shape(u), &[hid, g3]));
        }
        if self.value(b).len() != g3 {
            return Err(Error::shape("gru_cell", self.shape(b), &[g3]));
        }
        let (xd, sd, wd, ud, bd) = (
            self.data(x),
            self.data(s),
            self.data(w),
            self.data(u),
            self.data(b),
        );
        let mut pre = vec![0.0; rows * g3];
        for r in 0..rows {
            pre[r * g3..(r + 1) * g3].copy_from_slice(bd);
        }
        gemm(
            1.0,
            MatRef::new(xd, rows, inp),
            MatRef::new(wd, inp, g3),
            1.0,
            MatMut::new(&mut pre, rows, g3),
        );
        gemm(
            1.0,
            MatRef::new(sd, rows, hid),
            MatRef::cols_of(ud, hid, g3, 0, 2 * hid),
            1.0,
            MatMut::cols_of(&mut pre, rows, g3, 0, 2 * hid),
        );
        let n = rows * hid;
        let mut z = vec![0.0; n];
        let mut rg = vec![0.0; n];
        let mut reset_state = vec![0.0; n];
        for r in 0..rows {
            for k in 0..hid {
                let i = r * hid + k;
                z[i] = math::sigmoid(pre[r * g3 + k]);
                rg[i] = math::sigmoid(pre[r * g3 + hid + k]);
                reset_state[i] = rg[i] * sd[i];
            }
        }
        gemm(
            1.0,
            MatRef::new(&reset_state, rows, hid),
            MatRef::cols_of(ud, hid, g3, 2 * hid, hid),
            1.0,
            MatMut::cols_of(&mut pre, rows, g3, 2 * hid, hid),
        );
        let mut cand = vec![0.0; n];
        let mut out = vec![0.0; n];
        for r in 0..rows {
            for k in 0..hid {
                let i = r * hid + k;
                cand[i] = math::tanh(pre[r * g3 + 2 * hid + k]);
                out[i] = sd[i] + z[i] * (cand[i] - sd[i]);
            }
        }
        let needs = [x, s, w, u, b].iter().any(|&v| self.needs(v));
        let op = Op::GruCell {
            x,
            s,
            w,
            u,
            b,
            saved: Box::new(GruSaved {
                z,
                r: rg,
                cand,
                reset_state,
            }),
        };
        Ok(self.push(Tensor::new(&[rows, hid], out)?, op, needs))
    }

    /// Back-propagates from a scalar `root`, adding `d root / d leaf` into
    /// every leaf that requires a gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::contract("backward root is not on this tape"));
        }
        if self.value(root).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                leaf_grads.push((i, g));
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g)?;
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).matrix_dims();
                let n = self.value(*b).matrix_dims().1;
                if self.needs(*a) {
                    let ga = slot(grads, *a, m * k);
                    gemm(
                        1.0,
                        MatRef::new(g, m, n),
                        MatRef::new(self.data(*b), k, n).t(),
                        1.0,
                        MatMut::new(ga, m, k),
                    );
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, k * n);
                    gemm(
                        1.0,
                        MatRef::new(self.data(*a), m, k).t(),
                        MatRef::new(g, m, n),
                        1.0,
                        MatMut::new(gb, k, n),
                    );
                }
            }
            Op::Binary(op, bc, a, b) => self.backprop_binary(*op, *bc, *a, *b, g, grads),
            Op::Unary(op, a) => {
                let x = self.data(*a);
                let ga = slot(grads, *a, x.len());
                for k in 0..x.len() {
                    ga[k] += g[k]
                        * match op {
                            UnaryOp::Sigmoid => y[k] * (1.0 - y[k]),
                            UnaryOp::Tanh => 1.0 - y[k] * y[k],
                            UnaryOp::Relu => {
                                if x[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Log => 1.0 / x[k],
                            UnaryOp::Exp => y[k],
                            UnaryOp::Square => 2.0 * x[k],
                            UnaryOp::Sqrt => {
                                if y[k] > 0.0 {
                                    0.5 / y[k]
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Neg => -1.0,
                        };
                }
            }
            Op::Scale(a, s) => {
                let ga = slot(grads, *a, g.len());
                ga.iter_mut().zip(g).for_each(|(o, gv)| *o += gv * s);
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let ga = slot(grads, *a, g.len());
                ga.iter_mut().zip(g).for_each(|(o, gv)| *o += gv);
            }
            Op::AddBias(a, b) => {
                let (rows, cols) = node.value.matrix_dims();
                if self.needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    ga.iter_mut().zip(g).for_each(|(o, gv)| *o += gv);
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, cols);
                    for r in 0..rows {
                        gb.iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(o, gv)| *o += gv);
                    }
                }
            }
            Op::ScaleRows(a, s) => {
                let (rows, cols) = node.value.matrix_dims();
                let (ad, sd) = (self.data(*a), self.data(*s));
                if self.needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[r * cols + c] += g[r * cols + c] * sd[r];
                        }
                    }
                }
                if self.needs(*s) {
                    let gs = slot(grads, *s, rows);
                    for r in 0..rows {
                        gs[r] += (0..cols).map(|c| g[r * cols + c] * ad[r * cols + c]).sum::<f64>();
                    }
                }
            }
            Op::Concat {
                parts,
                outer,
                chunks,
            } => {
                let row: usize = chunks.iter().sum();
                let mut off = 0;
                for (&p, &c) in parts.iter().zip(chunks) {
                    if self.needs(p) {
                        let gp = slot(grads, p, outer * c);
                        for o in 0..*outer {
                            gp[o * c..(o + 1) * c]
                                .iter_mut()
                                .zip(&g[o * row + off..o * row + off + c])
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                    off += c;
                }
            }
            Op::Narrow {
                src,
                outer,
                src_chunk,
                offset,
                chunk,
            } => {
                let ga = slot(grads, *src, outer * src_chunk);
                for o in 0..*outer {
                    let base = o * src_chunk + offset;
                    ga[base..base + chunk]
                        .iter_mut()
                        .zip(&g[o * chunk..(o + 1) * chunk])
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::Reduce {
                src,
                kind,
                outer,
                dim,
                inner,
            } => {
                let scale = match kind {
                    Reduction::Sum => 1.0,
                    Reduction::Mean => 1.0 / *dim as f64,
                };
                let ga = slot(grads, *src, outer * dim * inner);
                for o in 0..*outer {
                    for d in 0..*dim {
                        let base = (o * dim + d) * inner;
                        for k in 0..*inner {
                            ga[base + k] += g[o * inner + k] * scale;
                        }
                    }
                }
            }
            Op::GatherRows { src, idx } => {
                let (rows, cols) = self.value(*src).matrix_dims();
                let ga = slot(grads, *src, rows * cols);
                for (k, &r) in idx.iter().enumerate() {
                    ga[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&g[k * cols..(k + 1) * cols])
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::ScatterAddRows { src, idx } => {
                let (rows, cols) = self.value(*src).matrix_dims();
                let ga = slot(grads, *src, rows * cols);
                for (k, &r) in idx.iter().enumerate() {
                    ga[k * cols..(k + 1) * cols]
                        .iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::Clamp { src, lo, hi } => {
                let x = self.data(*src);
                let ga = slot(grads, *src, x.len());
                for k in 0..x.len() {
                    if x[k] >= *lo && x[k] <= *hi {
                        ga[k] += g[k];
                    }
                }
            }
            Op::GruCell {
                x,
                s,
                w,
                u,
                b,
                saved,
            } => self.backprop_gru(*x, *s, *w, *u, *b, saved, g, grads),
        }
    }

    fn backprop_binary(
        &self,
        op: BinaryOp,
        bc: Broadcast,
        a: Var,
        b: Var,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (ad, bd) = (self.data(a), self.data(b));
        let n = g.len();
        // d out[k] / d a[k], d out[k] / d b[k] under the broadcast mapping
        let lhs = |k: usize| match bc {
            Broadcast::LhsScalar => ad[0],
            _ => ad[k],
        };
        let rhs = |k: usize| match bc {
            Broadcast::RhsScalar => bd[0],
            _ => bd[k],
        };
        let da = |k: usize| match op {
            BinaryOp::Add | BinaryOp::Sub => 1.0,
            BinaryOp::Mul => rhs(k),
        };
        let db = |k: usize| match op {
            BinaryOp::Add => 1.0,
            BinaryOp::Sub => -1.0,
            BinaryOp::Mul => lhs(k),
        };
        if self.needs(a) {
            let ga = slot(grads, a, ad.len());
            if bc == Broadcast::LhsScalar {
                ga[0] += (0..n).map(|k| g[k] * da(k)).sum::<f64>();
            } else {
                (0..n).for_each(|k| ga[k] += g[k] * da(k));
            }
        }
        if self.needs(b) {
            let gb = slot(grads, b, bd.len());
            if bc == Broadcast::RhsScalar {
                gb[0] += (0..n).map(|k| g[k] * db(k)).sum::<f64>();
            } else {
                (0..n).for_each(|k| gb[k] += g[k] * db(k));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_gru(
        &self,
        x: Var,
        s: Var,
        w: Var,
        u: Var,
        b: Var,
        saved: &GruSaved,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (rows, inp) = self.value(x).matrix_dims();
        let hid = self.value(s).matrix_dims().1;
        let g3 = 3 * hid;
        let (sd, ud, wd, xd) = (self.data(s), self.data(u), self.data(w), self.data(x));
        let GruSaved {
            z,
            r,
            cand,
            reset_state,
        } = saved;

        // Pre-activation gradients laid out like the fused gate block.
        let mut dpre = vec![0.0; rows * g3];
        let mut ds = vec![0.0; rows * hid];
        for row in 0..rows {
            for k in 0..hid {
                let i = row * hid + k;
                let dz = g[i] * (cand[i] - sd[i]);
                ds[i] = g[i] * (1.0 - z[i]);
                dpre[row * g3 + k] = dz * z[i] * (1.0 - z[i]);
                dpre[row * g3 + 2 * hid + k] = g[i] * z[i] * (1.0 - cand[i] * cand[i]);
            }
        }
        let mut d_reset_state = vec![0.0; rows * hid];
        gemm(
            1.0,
            MatRef::cols_of(&dpre, rows, g3, 2 * hid, hid),
            MatRef::cols_of(ud, hid, g3, 2 * hid, hid).t(),
            0.0,
            MatMut::new(&mut d_reset_state, rows, hid),
        );
        for row in 0..rows {
            for k in 0..hid {
                let i = row * hid + k;
                let dr = d_reset_state[i] * sd[i];
                ds[i] += d_reset_state[i] * r[i];
                dpre[row * g3 + hid + k] = dr * r[i] * (1.0 - r[i]);
            }
        }
        if self.needs(s) {
            gemm(
                1.0,
                MatRef::cols_of(&dpre, rows, g3, 0, 2 * hid),
                MatRef::cols_of(ud, hid, g3, 0, 2 * hid).t(),
                1.0,
                MatMut::new(&mut ds, rows, hid),
            );
            slot(grads, s, rows * hid)
                .iter_mut()
                .zip(&ds)
                .for_each(|(o, v)| *o += v);
        }
        if self.needs(x) {
            let gx = slot(grads, x, rows * inp);
            gemm(
                1.0,
                MatRef::new(&dpre, rows, g3),
                MatRef::new(wd, inp, g3).t(),
                1.0,
                MatMut::new(gx, rows, inp),
            );
        }
        if self.needs(w) {
            let gw = slot(grads, w, inp * g3);
            gemm(
                1.0,
                MatRef::new(xd, rows, inp).t(),
                MatRef::new(&dpre, rows, g3),
                1.0,
                MatMut::new(gw, inp, g3),
            );
        }
        if self.needs(u) {
            let gu = slot(grads, u, hid * g3);
            gemm(
                1.0,
                MatRef::new(sd, rows, hid).t(),
                MatRef::cols_of(&dpre, rows, g3, 0, 2 * hid),
                1.0,
                MatMut::cols_of(gu, hid, g3, 0, 2 * hid),
            );
            gemm(
                1.0,
                MatRef::new(reset_state, rows, hid).t(),
                MatRef::cols_of(&dpre, rows, g3, 2 * hid, hid),
                1.0,
                MatMut::cols_of(gu, hid, g3, 2 * hid, hid),
            );
        }
        if self.needs(b) {
            let gb = slot(grads, b, g3);
            for row in 0..rows {
                gb.iter_mut()
                    .zip(&dpre[row * g3..(row + 1) * g3])
                    .for_each(|(o, v)| *o += v);
            }
        }
    }
}
