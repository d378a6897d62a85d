//! Dense f64 tensors and a define-by-run reverse-mode tape.
//!
//! A [`Tape`] records every operation of one forward pass. Values live on
//! the tape and are addressed through copyable [`Var`] handles; trainable
//! weights live in a [`ParamStore`] and are bound onto the tape with
//! [`Tape::param`]. After [`Tape::backward`] the gradient of every bound
//! parameter is available through [`Tape::param_grad`].
//!
//! Broadcasting is limited to scalar-vs-tensor in the binary elementwise ops.

pub mod gradcheck;
mod kernels;
mod params;

pub use params::{ParamId, ParamStore};

use crate::error::{Error, Result};
use kernels::ConvDims;

/// A dense row-major tensor of finite f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        if numel_of(&shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel_of(&shape), data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("tensor construction (flat index {i})"),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel_of(&shape);
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        assert!(v.is_finite(), "non-finite scalar");
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if numel_of(&shape) != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Splits along `axis` into pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
        if axis >= self.rank() || sizes.iter().sum::<usize>() != self.shape[axis] {
            return Err(Error::shape(
                "split",
                format!("sizes {sizes:?} along axis {axis} of {:?}", self.shape),
            ));
        }
        let (outer, len, inner) = axis_split(&self.shape, axis);
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            let mut data = Vec::with_capacity(outer * s * inner);
            for o in 0..outer {
                let base = o * len * inner;
                data.extend_from_slice(&self.data[base + start * inner..base + (start + s) * inner]);
            }
            let mut shape = self.shape.clone();
            shape[axis] = s;
            out.push(Tensor::new(shape, data)?);
            start += s;
        }
        Ok(out)
    }
}

/// (product of dims before axis, dim at axis, product of dims after axis)
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel_of(&shape[..axis]),
        shape[axis],
        numel_of(&shape[axis + 1..]),
    )
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Tanh,
    Sigmoid,
    Relu,
    Log,
    Cosh,
    Exp,
    /// log(cosh(x)) in the overflow-safe form |x| + log1p(e^{-2|x|}) - log 2.
    LogCosh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentOp {
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    Scale(Var, f64),
    Reduce {
        op: ReduceOp,
        x: Var,
        axis: Option<usize>,
        argmax: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    AvgPool1d {
        x: Var,
        window: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Segment {
        op: SegmentOp,
        x: Var,
        offsets: Vec<usize>,
        argmax: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bound: Vec<Option<Var>>,
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe log(cosh(x)).
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl Tape {
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

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Accumulated gradient of a bound parameter, if it took part in the pass.
    pub fn param_grad(&self, id: ParamId) -> Option<&[f64]> {
        self.bound
            .get(id.0)
            .copied()
            .flatten()
            .and_then(|v| self.grad(v))
    }

    /// Clears all accumulated gradients.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if let Some(i) = value.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("forward output of {} (flat index {i})", op_name(&op)),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_ok(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_ok(t, Op::Leaf, false)
    }

    /// A leaf that receives gradients.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_ok(t, Op::Leaf, true)
    }

    /// Binds a stored parameter onto the tape; repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(&self.value(a).data, &self.value(b).data, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor { shape: vec![m, n], data }, Op::MatMul(a, b), rg)
    }

    /// `x[n×in] · w[out×in]ᵀ + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(Error::shape("linear", format!("x {sx:?}, w {sw:?}, b {sb:?}")));
        }
        let (rows, inp, out) = (sx[0], sx[1], sw[0]);
        let data = kernels::linear(
            &self.value(x).data,
            &self.value(w).data,
            &self.value(b).data,
            rows,
            inp,
            out,
        );
        let rg = self.rg(&[x, w, b]);
        self.push(Tensor { shape: vec![rows, out], data }, Op::Linear { x, w, b }, rg)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = if ta.shape == tb.shape || tb.numel() == 1 {
            ta.shape.clone()
        } else if ta.numel() == 1 {
            tb.shape.clone()
        } else {
            return Err(Error::shape(
                "elementwise",
                format!("{:?} vs {:?}", ta.shape, tb.shape),
            ));
        };
        let n = numel_of(&shape);
        let f = |x: f64, y: f64| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
        };
        let da = &ta.data;
        let db = &tb.data;
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let x = if da.len() == 1 { da[0] } else { da[i] };
                let y = if db.len() == 1 { db[0] } else { db[i] };
                f(x, y)
            })
            .collect();
        let rg = self.rg(&[a, b]);
        self.push(Tensor { shape, data }, Op::Binary(op, a, b), rg)
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

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let t = self.value(x);
        if op == UnaryOp::Log {
            if let Some(i) = t.data.iter().position(|&v| v <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive value {} at flat index {i}", t.data[i]),
                });
            }
        }
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Neg => |v| -v,
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Relu => relu,
            UnaryOp::Log => f64::ln,
            UnaryOp::Cosh => f64::cosh,
            UnaryOp::Exp => f64::exp,
            UnaryOp::LogCosh => log_cosh,
        };
        let data = t.data.iter().map(|&v| f(v)).collect();
        let shape = t.shape.clone();
        let rg = self.rg(&[x]);
        self.push(Tensor { shape, data }, Op::Unary(op, x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, x)
    }

    pub fn cosh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Cosh, x)
    }

    pub fn log_cosh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::LogCosh, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data.iter().map(|v| v * c).collect();
        let shape = t.shape.clone();
        let rg = self.rg(&[x]);
        self.push(Tensor { shape, data }, Op::Scale(x, c), rg)
    }

    /// Reduces over `axis`, or over every element when `axis` is `None`.
    pub fn reduce(&mut self, op: ReduceOp, x: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner, shape) = match axis {
            None => (1, t.numel(), 1, vec![]),
            Some(a) if a < t.rank() => {
                let (o, l, i) = axis_split(&t.shape, a);
                let mut s = t.shape.clone();
                s.remove(a);
                (o, l, i, s)
            }
            Some(a) => {
                return Err(Error::shape(
                    "reduce",
                    format!("axis {a} out of range for {:?}", t.shape),
                ))
            }
        };
        if len == 0 {
            return Err(Error::Empty("reduce over empty axis".into()));
        }
        let mut data = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            data[o * inner + i] += t.data[base + i];
                        }
                    }
                }
                if op == ReduceOp::Mean {
                    data.iter_mut().for_each(|v| *v /= len as f64);
                }
            }
            ReduceOp::Max => {
                argmax = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = o * len * inner + i;
                        for l in 1..len {
                            let idx = (o * len + l) * inner + i;
                            if t.data[idx] > t.data[best] {
                                best = idx;
                            }
                        }
                        data[o * inner + i] = t.data[best];
                        argmax[o * inner + i] = best;
                    }
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor { shape, data },
            Op::Reduce {
                op,
                x,
                axis,
                argmax,
            },
            rg,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x, None)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, x, None)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Empty("concat of zero tensors".into()))?;
        let base_shape = self.shape(*first).to_vec();
        if axis >= base_shape.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base_shape:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} incompatible with {base_shape:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let seg = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * seg..(o + 1) * seg]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let rg = self.rg(inputs);
        self.push(
            Tensor { shape, data },
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || len == 0 || start + len > t.shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, t.shape),
            ));
        }
        let (outer, full, inner) = axis_split(&t.shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner;
            data.extend_from_slice(&t.data[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = t.shape.clone();
        shape[axis] = len;
        let rg = self.rg(&[x]);
        self.push(Tensor { shape, data }, Op::Slice { x, axis, start }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push_ok(t, Op::Reshape(x), rg))
    }

    /// Valid 1-D cross-correlation: `x[B×Cin×L]`, `w[Cout×Cin×K]`, `b[Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(Error::shape("conv1d", format!("x {sx:?}, w {sw:?}, b {sb:?}")));
        }
        if sx[2] < sw[2] {
            return Err(Error::shape(
                "conv1d",
                format!("length {} shorter than kernel {}", sx[2], sw[2]),
            ));
        }
        let d = ConvDims {
            batch: sx[0],
            cin: sx[1],
            len: sx[2],
            cout: sw[0],
            k: sw[2],
        };
        let data = kernels::conv1d_forward(
            &self.value(x).data,
            &self.value(w).data,
            &self.value(b).data,
            &d,
        );
        let shape = vec![d.batch, d.cout, d.out_len()];
        let rg = self.rg(&[x, w, b]);
        self.push(Tensor { shape, data }, Op::Conv1d { x, w, b }, rg)
    }

    /// Non-overlapping average pooling over the last axis.
    pub fn avg_pool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let s = self.shape(x);
        let len = *s.last().unwrap_or(&0);
        if s.is_empty() || window == 0 || len < window {
            return Err(Error::shape("avg_pool1d", format!("window {window} over {s:?}")));
        }
        let rows = numel_of(&s[..s.len() - 1]);
        let data = kernels::avg_pool_forward(&self.value(x).data, rows, len, window);
        let mut shape = s.to_vec();
        *shape.last_mut().unwrap() = len / window;
        let rg = self.rg(&[x]);
        self.push(Tensor { shape, data }, Op::AvgPool1d { x, window }, rg)
    }

    /// Selects rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || idx.is_empty() || idx.iter().any(|&i| i >= t.shape[0]) {
            return Err(Error::shape(
                "gather_rows",
                format!("{} indices into {:?}", idx.len(), t.shape),
            ));
        }
        let d = t.shape[1];
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&t.data[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor {
                shape: vec![idx.len(), d],
                data,
            },
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    /// Reduces consecutive row segments `[offsets[s], offsets[s+1])` of a 2-D
    /// tensor. Empty segments produce zero rows. Mean sums rows in order then
    /// divides by the count; max keeps the first row on ties.
    pub fn segment_reduce(&mut self, op: SegmentOp, x: Var, offsets: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let ok = t.rank() == 2
            && offsets.len() >= 2
            && offsets[0] == 0
            && offsets.windows(2).all(|w| w[0] <= w[1])
            && *offsets.last().unwrap() == t.shape[0];
        if !ok {
            return Err(Error::shape(
                "segment_reduce",
                format!("offsets {offsets:?} over {:?}", t.shape),
            ));
        }
        let d = t.shape[1];
        let nseg = offsets.len() - 1;
        let mut data = vec![0.0; nseg * d];
        let mut argmax = Vec::new();
        match op {
            SegmentOp::Mean => {
                for s in 0..nseg {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    if lo == hi {
                        continue;
                    }
                    let out = &mut data[s * d..(s + 1) * d];
                    for r in lo..hi {
                        for (o, v) in out.iter_mut().zip(&t.data[r * d..(r + 1) * d]) {
                            *o += v;
                        }
                    }
                    let cnt = (hi - lo) as f64;
                    out.iter_mut().for_each(|v| *v /= cnt);
                }
            }
            SegmentOp::Max => {
                argmax = vec![usize::MAX; nseg * d];
                for s in 0..nseg {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    if lo == hi {
                        continue;
                    }
                    for j in 0..d {
                        let mut best = lo;
                        for r in lo + 1..hi {
                            if t.data[r * d + j] > t.data[best * d + j] {
                                best = r;
                            }
                        }
                        data[s * d + j] = t.data[best * d + j];
                        argmax[s * d + j] = best * d + j;
                    }
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor {
                shape: vec![nseg, d],
                data,
            },
            Op::Segment {
                op,
                x,
                offsets: offsets.to_vec(),
                argmax,
            },
            rg,
        )
    }

    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Propagates d(loss)/d(·) to every gradient-requiring leaf. Leaf gradients
    /// accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.accumulate(loss, vec![1.0]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            for (v, gin) in self.local_grads(i, &g) {
                if self.nodes[v.0].requires_grad {
                    self.accumulate(v, gin);
                }
            }
        }
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Leaf, Some(g)) = (&node.op, g) {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: "backward pass gradient".into(),
                    });
                }
            }
        }
        Ok(())
    }

    fn val(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradients of node `i`'s inputs given its output gradient `g`.
    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = &node.value.data;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut res = vec![];
                if self.needs(*a) {
                    res.push((*a, kernels::matmul_nt(g, self.val(*b), m, n, k)));
                }
                if self.needs(*b) {
                    res.push((*b, kernels::matmul_tn(self.val(*a), g, m, k, n)));
                }
                res
            }
            Op::Linear { x, w, b } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (rows, inp, outd) = (sx[0], sx[1], sw[0]);
                let mut res = vec![];
                if self.needs(*x) {
                    res.push((*x, kernels::matmul(g, self.val(*w), rows, outd, inp)));
                }
                if self.needs(*w) {
                    res.push((*w, kernels::matmul_tn(g, self.val(*x), rows, outd, inp)));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; outd];
                    for r in 0..rows {
                        for (d, gv) in db.iter_mut().zip(&g[r * outd..(r + 1) * outd]) {
                            *d += gv;
                        }
                    }
                    res.push((*b, db));
                }
                res
            }
            Op::Binary(op, a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let at = |s: &[f64], j: usize| if s.len() == 1 { s[0] } else { s[j] };
                let reduce_to = |full: Vec<f64>, len: usize| {
                    if len == 1 && full.len() != 1 {
                        vec![full.iter().sum()]
                    } else {
                        full
                    }
                };
                let mut res = vec![];
                if self.needs(*a) {
                    let ga: Vec<f64> = match op {
                        BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
                        BinaryOp::Mul => g.iter().enumerate().map(|(j, gv)| gv * at(vb, j)).collect(),
                    };
                    res.push((*a, reduce_to(ga, va.len())));
                }
                if self.needs(*b) {
                    let gb: Vec<f64> = match op {
                        BinaryOp::Add => g.to_vec(),
                        BinaryOp::Sub => g.iter().map(|v| -v).collect(),
                        BinaryOp::Mul => g.iter().enumerate().map(|(j, gv)| gv * at(va, j)).collect(),
                    };
                    res.push((*b, reduce_to(gb, vb.len())));
                }
                res
            }
            Op::Unary(op, x) => {
                let xv = self.val(*x);
                let d: Vec<f64> = match op {
                    UnaryOp::Neg => g.iter().map(|v| -v).collect(),
                    UnaryOp::Tanh => g.iter().zip(out).map(|(gv, y)| gv * (1.0 - y * y)).collect(),
                    UnaryOp::Sigmoid => g.iter().zip(out).map(|(gv, y)| gv * y * (1.0 - y)).collect(),
                    UnaryOp::Relu => g
                        .iter()
                        .zip(xv)
                        .map(|(gv, xi)| if *xi > 0.0 { *gv } else { 0.0 })
                        .collect(),
                    UnaryOp::Log => g.iter().zip(xv).map(|(gv, xi)| gv / xi).collect(),
                    UnaryOp::Cosh => g.iter().zip(xv).map(|(gv, xi)| gv * xi.sinh()).collect(),
                    UnaryOp::Exp => g.iter().zip(out).map(|(gv, y)| gv * y).collect(),
                    UnaryOp::LogCosh => g.iter().zip(xv).map(|(gv, xi)| gv * xi.tanh()).collect(),
                };
                vec![(*x, d)]
            }
            Op::Scale(x, c) => vec![(*x, g.iter().map(|v| v * c).collect())],
            Op::Reduce { op, x, axis, argmax } => {
                let xs = self.shape(*x);
                let n = numel_of(xs);
                let (outer, len, inner) = match axis {
                    None => (1, n, 1),
                    Some(a) => axis_split(xs, *a),
                };
                let mut d = vec![0.0; n];
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let s = if *op == ReduceOp::Mean { 1.0 / len as f64 } else { 1.0 };
                        for o in 0..outer {
                            for l in 0..len {
                                for k in 0..inner {
                                    d[(o * len + l) * inner + k] = g[o * inner + k] * s;
                                }
                            }
                        }
                    }
                    ReduceOp::Max => {
                        for (j, &src) in argmax.iter().enumerate() {
                            d[src] += g[j];
                        }
                    }
                }
                vec![(*x, d)]
            }
            Op::Concat { inputs, axis } => {
                let shape = &node.value.shape;
                let (outer, total, inner) = axis_split(shape, *axis);
                let mut res = vec![];
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis];
                    if self.needs(*v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            d.extend_from_slice(&g[base..base + len * inner]);
                        }
                        res.push((*v, d));
                    }
                    offset += len;
                }
                res
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, full, inner) = axis_split(xs, *axis);
                let len = node.value.shape[*axis];
                let mut d = vec![0.0; numel_of(xs)];
                for o in 0..outer {
                    let base = o * full * inner + start * inner;
                    d[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, d)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Conv1d { x, w, b } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let dims = ConvDims {
                    batch: sx[0],
                    cin: sx[1],
                    len: sx[2],
                    cout: sw[0],
                    k: sw[2],
                };
                let need_w = self.needs(*w) || self.needs(*b);
                let (dx, dw, db) =
                    kernels::conv1d_backward(self.val(*x), self.val(*w), g, &dims, self.needs(*x), need_w);
                let mut res = vec![];
                if let Some(dx) = dx {
                    res.push((*x, dx));
                }
                if let (Some(dw), true) = (dw, self.needs(*w)) {
                    res.push((*w, dw));
                }
                if let (Some(db), true) = (db, self.needs(*b)) {
                    res.push((*b, db));
                }
                res
            }
            Op::AvgPool1d { x, window } => {
                let xs = self.shape(*x);
                let len = *xs.last().unwrap();
                let rows = numel_of(&xs[..xs.len() - 1]);
                vec![(*x, kernels::avg_pool_backward(g, rows, len, *window))]
            }
            Op::GatherRows { x, idx } => {
                let xs = self.shape(*x);
                let d = xs[1];
                let mut dx = vec![0.0; xs[0] * d];
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in dx[src * d..(src + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *o += v;
                    }
                }
                vec![(*x, dx)]
            }
            Op::Segment {
                op,
                x,
                offsets,
                argmax,
            } => {
                let xs = self.shape(*x);
                let d = xs[1];
                let mut dx = vec![0.0; xs[0] * d];
                match op {
                    SegmentOp::Mean => {
                        for s in 0..offsets.len() - 1 {
                            let (lo, hi) = (offsets[s], offsets[s + 1]);
                            if lo == hi {
                                continue;
                            }
                            let cnt = (hi - lo) as f64;
                            for r in lo..hi {
                                for j in 0..d {
                                    dx[r * d + j] = g[s * d + j] / cnt;
                                }
                            }
                        }
                    }
                    SegmentOp::Max => {
                        for (j, &src) in argmax.iter().enumerate() {
                            if src != usize::MAX {
                                dx[src] += g[j];
                            }
                        }
                    }
                }
                vec![(*x, dx)]
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Linear { .. } => "linear",
        Op::Binary(..) => "elementwise",
        Op::Unary(..) => "elementwise",
        Op::Scale(..) => "scale",
        Op::Reduce { .. } => "reduce",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Reshape(..) => "reshape",
        Op::Conv1d { .. } => "conv1d",
        Op::AvgPool1d { .. } => "avg_pool1d",
        Op::GatherRows { .. } => "gather_rows",
        Op::Segment { .. } => "segment_reduce",
    }
}
