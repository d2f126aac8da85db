//! Reverse-mode tape.
//!
//! Every forward op appends a node holding its value and the rule needed to
//! push gradients back to its inputs. Nodes are only ever appended, so the
//! recording order is a topological order and backward is a single reverse
//! sweep.

use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How an operand of a binary op lines up with the `[rows, cols]` view of the
/// output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Full,
    /// Repeated for every leading-axis row.
    Row,
    /// One value per leading-axis row, repeated along the trailing axis.
    Col,
    Scalar,
}

impl Bcast {
    #[inline]
    fn at(self, r: usize, c: usize, cols: usize) -> usize {
        match self {
            Bcast::Full => r * cols + c,
            Bcast::Row => c,
            Bcast::Col => r,
            Bcast::Scalar => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Neg,
    Tanh,
    Sigmoid,
    Elu,
    Exp,
    Log,
    Softplus,
    Square,
    Sqrt,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
        ab: Bcast,
        bb: Bcast,
        rows: usize,
        cols: usize,
    },
    Unary(Unary, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    ClampMin(Var, T),
    Sum {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    Concat {
        parts: Vec<Var>,
        outer: usize,
    },
    Slice {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
        start: usize,
        len: usize,
    },
    Gather {
        x: Var,
        rows: Vec<usize>,
        width: usize,
    },
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    tracked: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every tracked leaf of a tape.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn leading(shape: &[usize]) -> usize {
    shape.first().copied().unwrap_or(1)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Number of recorded ops.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, tracked: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    /// First element of a value; the whole value for scalars.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape matches its value")
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.tracked(v)
    }

    /// Records a constant; no gradient flows into it.
    pub fn input(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Input, false)
    }

    pub fn input_vec(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "input",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(self.push(shape.to_vec(), data, Op::Input, false))
    }

    pub fn constant(&mut self, shape: &[usize], value: T) -> Var {
        self.push(shape.to_vec(), vec![value; numel(shape)], Op::Input, false)
    }

    /// Records a differentiable leaf; its gradient is reported by `backward`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn leaf_slice(&mut self, shape: &[usize], data: &[T]) -> Var {
        self.push(shape.to_vec(), data.to_vec(), Op::Leaf, true)
    }

    /// Copy of `x` cut off from the gradient path.
    pub fn detach(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Input, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        if m > 0 && n > 0 && k > 0 {
            let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
            // SAFETY: extents and strides describe exactly the three buffers.
            unsafe {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    av.as_ptr(),
                    k as isize,
                    1,
                    bv.as_ptr(),
                    n as isize,
                    1,
                    T::zero(),
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), tracked))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Vec<usize>, Bcast, Bcast)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok((sa.to_vec(), Bcast::Full, Bcast::Full));
        }
        let fits = |big: &[usize], small: &[usize]| -> Option<Bcast> {
            if numel(small) == 1 {
                return Some(Bcast::Scalar);
            }
            if big.len() >= 2 {
                let tail = &big[1..];
                if small == tail || (small.len() == big.len() && small[0] == 1 && &small[1..] == tail) {
                    return Some(Bcast::Row);
                }
                if big.len() == 2 && small == [big[0], 1] {
                    return Some(Bcast::Col);
                }
            }
            None
        };
        let mismatch = || Error::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if numel(sa) >= numel(sb) {
            let kb = fits(sa, sb).ok_or_else(mismatch)?;
            Ok((sa.to_vec(), Bcast::Full, kb))
        } else {
            let ka = fits(sb, sa).ok_or_else(mismatch)?;
            Ok((sb.to_vec(), ka, Bcast::Full))
        }
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (shape, ab, bb) = self.broadcast(name, a, b)?;
        let total = numel(&shape);
        let rows = if shape.is_empty() { 1 } else { leading(&shape) };
        let cols = if rows == 0 { 0 } else { total / rows };
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out: Vec<T> = if ab == Bcast::Full && bb == Bcast::Full {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(total);
            for r in 0..rows {
                for c in 0..cols {
                    out.push(f(av[ab.at(r, c, cols)], bv[bb.at(r, c, cols)]));
                }
            }
            out
        };
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            shape,
            out,
            Op::Binary {
                kind,
                a,
                b,
                ab,
                bb,
                rows,
                cols,
            },
            tracked,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let out: Vec<T> = match kind {
            Unary::Neg => xv.iter().map(|&v| -v).collect(),
            Unary::Tanh => xv.iter().map(|&v| v.tanh()).collect(),
            Unary::Sigmoid => xv.iter().map(|&v| sigmoid(v)).collect(),
            Unary::Elu => xv
                .iter()
                .map(|&v| if v > T::zero() { v } else { v.exp_m1() })
                .collect(),
            Unary::Exp => xv.iter().map(|&v| v.exp()).collect(),
            Unary::Log => xv.iter().map(|&v| v.ln()).collect(),
            Unary::Softplus => xv.iter().map(|&v| softplus(v)).collect(),
            Unary::Square => xv.iter().map(|&v| v * v).collect(),
            Unary::Sqrt => xv.iter().map(|&v| v.sqrt()).collect(),
        };
        let shape = self.nodes[x.0].shape.clone();
        let tracked = self.tracked(x);
        self.push(shape, out, Op::Unary(kind, x), tracked)
    }

    fn reject_negative(&self, op: &'static str, x: Var) -> Result<()> {
        match self.value(x).iter().find(|v| **v < T::zero()) {
            Some(v) => Err(Error::Domain {
                op,
                value: v.as_f64(),
            }),
            None => Ok(()),
        }
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(Unary::Neg, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(Unary::Elu, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Unary::Square, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.reject_negative("log", x)?;
        Ok(self.unary(Unary::Log, x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.reject_negative("sqrt", x)?;
        Ok(self.unary(Unary::Sqrt, x))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        self.push(shape, out, Op::AddScalar(x), tracked)
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        self.push(shape, out, Op::MulScalar(x, c), tracked)
    }

    /// `max(x, c)`; no gradient where the floor is active.
    pub fn clamp_min(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(c)).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        self.push(shape, out, Op::ClampMin(x, c), tracked)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Invalid(alloc::format!(
                "axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let xv = self.value(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &xv[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let tracked = self.tracked(x);
        Ok(self.push(out_shape, out, Op::Sum { x, outer, n, inner }, tracked))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self.shape(x).get(axis).ok_or_else(|| {
            Error::Invalid(alloc::format!("axis {axis} out of range"))
        })?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.mul_scalar(s, T::one() / T::from_f64(n.max(1) as f64)))
    }

    /// Sum of all elements, as a rank-0 value.
    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let total = self.value(x).iter().copied().sum();
        let tracked = self.tracked(x);
        self.push(
            Vec::new(),
            vec![total],
            Op::Sum {
                x,
                outer: 1,
                n,
                inner: 1,
            },
            tracked,
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.mul_scalar(s, T::one() / T::from_f64(n as f64))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Invalid(alloc::format!(
                "axis {axis} out of range for shape {base:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let w = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
            },
            tracked,
        ))
    }

    /// Entries `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Invalid(alloc::format!(
                "slice {start}..{} on axis {axis} out of range for shape {shape:?}",
                start + len
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let tracked = self.tracked(x);
        Ok(self.push(
            out_shape,
            out,
            Op::Slice {
                x,
                outer,
                n,
                inner,
                start,
                len,
            },
            tracked,
        ))
    }

    /// Gathers leading-axis rows; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let lead = leading(&shape);
        let width = if lead == 0 { 0 } else { numel(&shape) / lead };
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= lead {
                return Err(Error::Invalid(alloc::format!(
                    "row {r} out of range for leading extent {lead}"
                )));
            }
            out.extend_from_slice(&xv[r * width..(r + 1) * width]);
        }
        let mut out_shape = if shape.is_empty() { vec![1] } else { shape };
        out_shape[0] = rows.len();
        let tracked = self.tracked(x);
        Ok(self.push(
            out_shape,
            out,
            Op::Gather {
                x,
                rows: rows.to_vec(),
                width,
            },
            tracked,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = self.value(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), tracked))
    }

    /// Reverse sweep from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let Tape { nodes } = self;
        let loss_node = &nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_node.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        if !loss_node.tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            match &node.op {
                Op::Input => {}
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if let Some(ga) = slot(&mut grads, &nodes, *a) {
                        if m > 0 && n > 0 && k > 0 {
                            // SAFETY: g is m×n, b is k×n read transposed, ga is m×k.
                            unsafe {
                                T::gemm(
                                    m,
                                    n,
                                    k,
                                    T::one(),
                                    g.as_ptr(),
                                    n as isize,
                                    1,
                                    nodes[b.0].value.as_ptr(),
                                    1,
                                    n as isize,
                                    T::one(),
                                    ga.as_mut_ptr(),
                                    k as isize,
                                    1,
                                );
                            }
                        }
                    }
                    if let Some(gb) = slot(&mut grads, &nodes, *b) {
                        if m > 0 && n > 0 && k > 0 {
                            // SAFETY: a is m×k read transposed, g is m×n, gb is k×n.
                            unsafe {
                                T::gemm(
                                    k,
                                    m,
                                    n,
                                    T::one(),
                                    nodes[a.0].value.as_ptr(),
                                    1,
                                    k as isize,
                                    g.as_ptr(),
                                    n as isize,
                                    1,
                                    T::one(),
                                    gb.as_mut_ptr(),
                                    n as isize,
                                    1,
                                );
                            }
                        }
                    }
                }
                Op::Binary {
                    kind,
                    a,
                    b,
                    ab,
                    bb,
                    rows,
                    cols,
                } => {
                    let (kind, ab, bb, rows, cols) = (*kind, *ab, *bb, *rows, *cols);
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(ga) = slot(&mut grads, &nodes, *a) {
                        for r in 0..rows {
                            for c in 0..cols {
                                let gi = g[r * cols + c];
                                let (ia, ib) = (ab.at(r, c, cols), bb.at(r, c, cols));
                                ga[ia] += match kind {
                                    Binary::Add | Binary::Sub => gi,
                                    Binary::Mul => gi * bv[ib],
                                    Binary::Div => gi / bv[ib],
                                };
                            }
                        }
                    }
                    if let Some(gb) = slot(&mut grads, &nodes, *b) {
                        for r in 0..rows {
                            for c in 0..cols {
                                let gi = g[r * cols + c];
                                let (ia, ib) = (ab.at(r, c, cols), bb.at(r, c, cols));
                                gb[ib] += match kind {
                                    Binary::Add => gi,
                                    Binary::Sub => -gi,
                                    Binary::Mul => gi * av[ia],
                                    Binary::Div => -gi * av[ia] / (bv[ib] * bv[ib]),
                                };
                            }
                        }
                    }
                }
                Op::Unary(kind, x) => {
                    let (kind, x) = (*kind, *x);
                    let y = &node.value;
                    let xv = &nodes[x.0].value;
                    if let Some(gx) = slot(&mut grads, &nodes, x) {
                        for j in 0..g.len() {
                            gx[j] += g[j]
                                * match kind {
                                    Unary::Neg => -T::one(),
                                    Unary::Tanh => T::one() - y[j] * y[j],
                                    Unary::Sigmoid => y[j] * (T::one() - y[j]),
                                    Unary::Elu => {
                                        if xv[j] > T::zero() {
                                            T::one()
                                        } else {
                                            y[j] + T::one()
                                        }
                                    }
                                    Unary::Exp => y[j],
                                    Unary::Log => T::one() / xv[j],
                                    Unary::Softplus => sigmoid(xv[j]),
                                    Unary::Square => xv[j] + xv[j],
                                    Unary::Sqrt => T::one() / (y[j] + y[j]),
                                };
                        }
                    }
                }
                Op::AddScalar(x) | Op::Reshape(x) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        gx.iter_mut().zip(&g).for_each(|(d, &s)| *d += s);
                    }
                }
                Op::MulScalar(x, c) => {
                    let c = *c;
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        gx.iter_mut().zip(&g).for_each(|(d, &s)| *d += s * c);
                    }
                }
                Op::ClampMin(x, c) => {
                    let c = *c;
                    let xv = &nodes[x.0].value;
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for j in 0..g.len() {
                            if xv[j] > c {
                                gx[j] += g[j];
                            }
                        }
                    }
                }
                Op::Sum { x, outer, n, inner } => {
                    let (outer, n, inner) = (*outer, *n, *inner);
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for o in 0..outer {
                            let src = &g[o * inner..(o + 1) * inner];
                            for j in 0..n {
                                let dst = &mut gx[(o * n + j) * inner..(o * n + j + 1) * inner];
                                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                            }
                        }
                    }
                }
                Op::Concat { parts, outer } => {
                    let outer = *outer;
                    let total: usize = node.shape.iter().product::<usize>() / outer.max(1);
                    let mut offset = 0;
                    for &p in parts {
                        let w = nodes[p.0].value.len() / outer.max(1);
                        if let Some(gp) = slot(&mut grads, &nodes, p) {
                            for o in 0..outer {
                                let src = &g[o * total + offset..o * total + offset + w];
                                gp[o * w..(o + 1) * w]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(d, &s)| *d += s);
                            }
                        }
                        offset += w;
                    }
                }
                Op::Slice {
                    x,
                    outer,
                    n,
                    inner,
                    start,
                    len,
                } => {
                    let (outer, n, inner, start, len) = (*outer, *n, *inner, *start, *len);
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for o in 0..outer {
                            let base = (o * n + start) * inner;
                            let src = &g[o * len * inner..(o + 1) * len * inner];
                            gx[base..base + len * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, &s)| *d += s);
                        }
                    }
                }
                Op::Gather { x, rows, width } => {
                    let width = *width;
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for (i, &r) in rows.iter().enumerate() {
                            gx[r * width..(r + 1) * width]
                                .iter_mut()
                                .zip(&g[i * width..(i + 1) * width])
                                .for_each(|(d, &s)| *d += s);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradient accumulator for `v`, allocated on first use; `None` when no
/// gradient should flow into `v`.
fn slot<'a, T: Real>(
    grads: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.tracked {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(&t(&[2, 2], &[1., 2., 3., 4.]));
        let i = tape.input(&t(&[2, 2], &[1., 0., 0., 1.]));
        let y = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(y), &[1., 2., 3., 4.]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch_and_reports_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.input(&Tensor::zeros(&[2, 3]));
        let b = tape.input(&Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn tanh_of_zero() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(&Tensor::scalar(0.0));
        let y = tape.tanh(x);
        assert_eq!(tape.item(y), 0.0);
    }

    #[test]
    fn mean_over_leading_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&t(&[2, 2], &[1., 2., 3., 4.]));
        let m = tape.mean_axis(x, 0).unwrap();
        // column means by direct arithmetic: (1+3)/2, (2+4)/2
        assert_eq!(tape.value(m), &[2., 3.]);
        assert_eq!(tape.shape(m), &[2]);
    }

    #[test]
    fn log_and_sqrt_reject_negative_input() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(&Tensor::new(&[2], vec![1.0, -0.5]).unwrap());
        assert!(matches!(tape.log(x), Err(Error::Domain { op: "log", .. })));
        assert!(matches!(tape.sqrt(x), Err(Error::Domain { op: "sqrt", .. })));
    }

    #[test]
    fn add_rejects_incompatible_broadcast() {
        let mut tape = Tape::<f32>::new();
        let a = tape.input(&Tensor::zeros(&[3, 4]));
        let b = tape.input(&Tensor::zeros(&[3]));
        assert!(matches!(tape.add(a, b), Err(Error::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn broadcast_row_col_and_scalar() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(&t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let row = tape.input(&t(&[3], &[10., 20., 30.]));
        let col = tape.input(&t(&[2, 1], &[100., 200.]));
        let s = tape.input(&Tensor::scalar(1000.0));
        let x = tape.add(a, row).unwrap();
        let x = tape.add(x, col).unwrap();
        let x = tape.add(s, x).unwrap();
        assert_eq!(
            tape.value(x),
            &[1111., 1122., 1133., 1214., 1225., 1236.]
        );
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(&Tensor::new(&[3], vec![0.3, -2.0, 5.0]).unwrap());
        let loss = tape.sum(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        // d/dw sum(w*w) = 2w
        assert_eq!(g.get(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_is_a_no_op() {
        let mut tape = Tape::<f32>::new();
        let c = tape.input(&Tensor::scalar(3.0));
        let g = tape.backward(c).unwrap();
        assert!(g.get(c).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(&Tensor::zeros(&[2]));
        assert!(matches!(
            tape.backward(w),
            Err(Error::NonScalarLoss(s)) if s == vec![2]
        ));
    }

    #[test]
    fn detached_branch_gets_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(&t(&[2], &[1., 2.]));
        let d = tape.detach(w);
        let y = tape.mul(w, d).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        // only the tracked factor contributes: d/dw (w * stopgrad(w)) = w
        assert_eq!(g.get(w).unwrap(), &[1., 2.]);
    }

    #[test]
    fn clamp_min_blocks_gradient_below_floor() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(&t(&[2], &[0.5, 2.0]));
        let c = tape.clamp_min(w, 1.0);
        let loss = tape.sum(c);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &[0.0, 1.0]);
    }
}
