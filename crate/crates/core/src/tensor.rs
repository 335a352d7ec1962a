//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] during the forward pass and replayed
//! in reverse to compute gradients via the chain rule. The op set is exactly
//! what the world-model forward passes need: elementwise arithmetic, matmul,
//! "same"-padded 2D convolution, circular 1D convolution, pooling/cropping,
//! row-wise softmax / L2 normalization, and a handful of reductions.
//!
//! A tape is single-writer and confined to one thread between construction
//! and `backward`. Independent tapes may run in parallel.

use rayon::prelude::*;
use std::fmt;

pub type TensorResult<T> = Result<T, TensorError>;

/// Errors emitted by tape construction and backward passes.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Two operands had shapes that the op cannot combine.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Constructor data length does not match the product of the shape.
    DataLength { expected: usize, got: usize },
    /// backward() was called on a non-scalar tensor.
    NotScalar { shape: Vec<usize> },
    /// Convolution kernels must have odd side length.
    EvenKernel { size: usize },
    /// A circular kernel longer than the ring it convolves.
    KernelTooLarge { kernel: usize, len: usize },
    /// Input channel count does not match the kernel's.
    ChannelMismatch { input: usize, kernel: usize },
    /// An op received a tensor whose rank or extents it cannot handle.
    UnsupportedShape { op: &'static str, shape: Vec<usize> },
    /// A non-finite value where the op forbids it.
    NonFinite { op: &'static str },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} vs {right:?}")
            }
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::NotScalar { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            TensorError::EvenKernel { size } => write!(f, "kernel size {size} must be odd"),
            TensorError::KernelTooLarge { kernel, len } => {
                write!(f, "kernel size {kernel} exceeds ring length {len}")
            }
            TensorError::ChannelMismatch { input, kernel } => {
                write!(f, "input has {input} channels but kernel expects {kernel}")
            }
            TensorError::UnsupportedShape { op, shape } => {
                write!(f, "{op}: unsupported shape {shape:?}")
            }
            TensorError::NonFinite { op } => write!(f, "{op}: non-finite input"),
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense row-major tensor. Also used standalone for parameter storage.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    /// Lazily allocated by the first backward pass that reaches this tensor.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(values: Vec<f64>, shape: Vec<usize>) -> TensorResult<Self> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(TensorError::DataLength { expected, got: values.len() });
        }
        Ok(Tensor { shape, values, requires_grad: false, grad: None })
    }

    pub fn param(values: Vec<f64>, shape: Vec<usize>) -> TensorResult<Self> {
        let mut t = Self::new(values, shape)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, values: vec![0.0; n], requires_grad: false, grad: None }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], values: vec![v], requires_grad: false, grad: None }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(buf) => {
                for (b, gi) in buf.iter_mut().zip(g) {
                    *b += gi;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }
}

/// Handle to a tensor on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Recorded operation; indices refer to earlier tape entries.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Elementwise binary op; operands either share a shape or one is a
    /// single-element tensor broadcast against the other.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { a: Var, rows: usize, cols: usize },
    Conv2dSame { input: Var, kernel: Var, bias: Option<Var>, dims: Conv2dDims },
    Conv1dCircular { input: Var, kernel: Var, rows: usize, len: usize, k: usize },
    AvgPool2 { input: Var, b: usize, c: usize, h: usize, w: usize },
    CropCenter { input: Var, b: usize, c: usize, h: usize, w: usize, oh: usize, ow: usize },
    ConcatChannels { a: Var, b: Var, batch: usize, c1: usize, c2: usize, hw: usize },
    Reshape(Var),
    Relu(Var),
    AddRowBroadcast { a: Var, bias: Var, rows: usize, cols: usize },
    SoftmaxRows { input: Var, rows: usize, cols: usize },
    L2NormRows { input: Var, rows: usize, cols: usize },
    MeanAxis0 { input: Var, rows: usize, cols: usize },
    SumAll(Var),
    MeanAll(Var),
    DotRows { a: Var, b: Var, rows: usize, cols: usize },
    RollRows { input: Var, rows: usize, cols: usize, shift: usize },
}

#[derive(Debug, Clone, Copy)]
struct Conv2dDims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
}

struct Node {
    op: Op,
    tensor: Tensor,
}

/// Expression tape: append-only operation record plus the tensors it produced.
///
/// Construction order is the topological order, so backward is a single
/// reverse sweep touching each node once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

// L2 rows whose norm falls at or below this are treated as all-zero: the
// forward emits zeros and the backward emits no gradient, so a degenerate
// row cannot poison the graph with 1e12-scale values.
pub const L2_EPS: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, mut tensor: Tensor, requires_grad: bool) -> Var {
        tensor.requires_grad = requires_grad;
        self.nodes.push(Node { op, tensor });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    // ── Leaves and accessors ────────────────────────────────────────────

    /// Record a leaf tensor. `requires_grad` marks it as a differentiation root.
    pub fn leaf(&mut self, values: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> TensorResult<Var> {
        let t = Tensor::new(values, shape)?;
        Ok(self.push(Op::Leaf, t, requires_grad))
    }

    /// Leaf copied from a parameter tensor; gradient flows to the tape node,
    /// from which the optimizer reads it back.
    pub fn param(&mut self, p: &Tensor) -> Var {
        let t = Tensor {
            shape: p.shape.clone(),
            values: p.values.clone(),
            requires_grad: true,
            grad: None,
        };
        self.push(Op::Leaf, t, true)
    }

    pub fn constant(&mut self, values: Vec<f64>, shape: Vec<usize>) -> TensorResult<Var> {
        self.leaf(values, shape, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(Op::Leaf, Tensor::scalar(v), false)
    }

    /// Value copy detached from the gradient graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = Tensor {
            shape: self.shape(v).to_vec(),
            values: self.values(v).to_vec(),
            requires_grad: false,
            grad: None,
        };
        self.push(Op::Leaf, t, false)
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].tensor.values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].tensor.shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad.as_deref()
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    /// Overwrite a leaf's values in place (used by finite-difference probes).
    pub fn set_values(&mut self, v: Var, values: &[f64]) {
        assert_eq!(self.nodes[v.0].tensor.values.len(), values.len());
        self.nodes[v.0].tensor.values.copy_from_slice(values);
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.tensor.grad = None;
        }
    }

    // ── Elementwise arithmetic ──────────────────────────────────────────

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> TensorResult<Vec<usize>> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let na: usize = sa.iter().product();
        let nb: usize = sb.iter().product();
        if sa == sb {
            Ok(sa.to_vec())
        } else if na == 1 {
            Ok(sb.to_vec())
        } else if nb == 1 {
            Ok(sa.to_vec())
        } else {
            Err(TensorError::ShapeMismatch { op, left: sa.to_vec(), right: sb.to_vec() })
        }
    }

    fn binary<F: Fn(f64, f64) -> f64>(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: F,
        op: Op,
    ) -> TensorResult<Var> {
        let shape = self.binary_shapes(name, a, b)?;
        let va = self.values(a);
        let vb = self.values(b);
        let out = if va.len() == vb.len() {
            va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect()
        } else if va.len() == 1 {
            vb.iter().map(|y| f(va[0], *y)).collect()
        } else {
            va.iter().map(|x| f(*x, vb[0])).collect()
        };
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(op, Tensor::new(out, shape)?, req))
    }

    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise minimum; ties send the gradient to the first operand.
    pub fn min(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary("min", a, b, f64::min, Op::Min(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.values(a).iter().map(|x| x + c).collect();
        let t = Tensor { shape: self.shape(a).to_vec(), values: out, requires_grad: false, grad: None };
        let req = self.requires(a);
        self.push(Op::AddScalar(a), t, req)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.values(a).iter().map(|x| x * c).collect();
        let t = Tensor { shape: self.shape(a).to_vec(), values: out, requires_grad: false, grad: None };
        let req = self.requires(a);
        self.push(Op::Scale(a, c), t, req)
    }

    /// Add a [cols] bias to every row of a [rows, cols] matrix.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> TensorResult<Var> {
        let (rows, cols) = self.rows_cols("add_row_broadcast", a)?;
        let sb = self.shape(bias);
        if sb != [cols] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_broadcast",
                left: self.shape(a).to_vec(),
                right: sb.to_vec(),
            });
        }
        let va = self.values(a);
        let vb = self.values(bias);
        let mut out = vec![0.0; va.len()];
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] = va[r * cols + c] + vb[c];
            }
        }
        let req = self.requires(a) || self.requires(bias);
        let t = Tensor::new(out, self.shape(a).to_vec())?;
        Ok(self.push(Op::AddRowBroadcast { a, bias, rows, cols }, t, req))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.values(a).iter().map(|x| x.max(0.0)).collect();
        let t = Tensor { shape: self.shape(a).to_vec(), values: out, requires_grad: false, grad: None };
        let req = self.requires(a);
        self.push(Op::Relu(a), t, req)
    }

    // ── Linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch { op: "matmul", left: sa, right: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.values(a), self.values(b), m, k, n);
        let req = self.requires(a) || self.requires(b);
        let t = Tensor::new(out, vec![m, n])?;
        Ok(self.push(Op::MatMul { a, b, m, k, n }, t, req))
    }

    pub fn transpose(&mut self, a: Var) -> TensorResult<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 {
            return Err(TensorError::UnsupportedShape { op: "transpose", shape: sa });
        }
        let (rows, cols) = (sa[0], sa[1]);
        let out = transpose_raw(self.values(a), rows, cols);
        let req = self.requires(a);
        let t = Tensor::new(out, vec![cols, rows])?;
        Ok(self.push(Op::Transpose { a, rows, cols }, t, req))
    }

    // ── Convolutions, pooling, cropping ─────────────────────────────────

    /// Cross-correlation (no kernel flip) with zero "same" padding.
    /// input [B,Cin,H,W], kernel [Cout,Cin,k,k], optional bias [Cout].
    pub fn conv2d_same(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> TensorResult<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        if si.len() != 4 {
            return Err(TensorError::UnsupportedShape { op: "conv2d_same", shape: si });
        }
        if sk.len() != 4 || sk[2] != sk[3] {
            return Err(TensorError::UnsupportedShape { op: "conv2d_same", shape: sk });
        }
        if sk[2] % 2 == 0 {
            return Err(TensorError::EvenKernel { size: sk[2] });
        }
        if si[1] != sk[1] {
            return Err(TensorError::ChannelMismatch { input: si[1], kernel: sk[1] });
        }
        if let Some(bv) = bias {
            let sb = self.shape(bv);
            if sb != [sk[0]] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d_same bias",
                    left: sb.to_vec(),
                    right: vec![sk[0]],
                });
            }
        }
        let dims = Conv2dDims { batch: si[0], cin: si[1], h: si[2], w: si[3], cout: sk[0], k: sk[2] };
        let out = conv2d_forward(
            self.values(input),
            self.values(kernel),
            bias.map(|b| self.values(b)),
            dims,
        );
        let req = self.requires(input)
            || self.requires(kernel)
            || bias.map(|b| self.requires(b)).unwrap_or(false);
        let t = Tensor::new(out, vec![dims.batch, dims.cout, dims.h, dims.w])?;
        Ok(self.push(Op::Conv2dSame { input, kernel, bias, dims }, t, req))
    }

    /// 1D convolution with indices wrapping modulo the row length, so a
    /// normalized kernel conserves total mass exactly.
    /// input [B,N] (or [N]), kernel [k].
    pub fn conv1d_circular(&mut self, input: Var, kernel: Var) -> TensorResult<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        let (rows, len) = match si.len() {
            1 => (1, si[0]),
            2 => (si[0], si[1]),
            _ => return Err(TensorError::UnsupportedShape { op: "conv1d_circular", shape: si }),
        };
        if sk.len() != 1 {
            return Err(TensorError::UnsupportedShape { op: "conv1d_circular", shape: sk });
        }
        let k = sk[0];
        if k % 2 == 0 {
            return Err(TensorError::EvenKernel { size: k });
        }
        if k > len {
            return Err(TensorError::KernelTooLarge { kernel: k, len });
        }
        let out = conv1d_circular_forward(self.values(input), self.values(kernel), rows, len, k);
        let req = self.requires(input) || self.requires(kernel);
        let t = Tensor::new(out, si)?;
        Ok(self.push(Op::Conv1dCircular { input, kernel, rows, len, k }, t, req))
    }

    /// 2x2 average pooling with stride 2 on [B,C,H,W]; H and W must be even.
    pub fn avg_pool2(&mut self, input: Var) -> TensorResult<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(TensorError::UnsupportedShape { op: "avg_pool2", shape: s });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let vin = self.values(input);
        let mut out = vec![0.0; b * c * oh * ow];
        for bc in 0..b * c {
            let ibase = bc * h * w;
            let obase = bc * oh * ow;
            for y in 0..oh {
                for x in 0..ow {
                    let i = ibase + (2 * y) * w + 2 * x;
                    out[obase + y * ow + x] = 0.25 * (vin[i] + vin[i + 1] + vin[i + w] + vin[i + w + 1]);
                }
            }
        }
        let req = self.requires(input);
        let t = Tensor::new(out, vec![b, c, oh, ow])?;
        Ok(self.push(Op::AvgPool2 { input, b, c, h, w }, t, req))
    }

    /// Center crop of [B,C,H,W] down to [B,C,oh,ow].
    pub fn crop_center(&mut self, input: Var, oh: usize, ow: usize) -> TensorResult<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || oh > s[2] || ow > s[3] {
            return Err(TensorError::UnsupportedShape { op: "crop_center", shape: s });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (dy, dx) = ((h - oh) / 2, (w - ow) / 2);
        let vin = self.values(input);
        let mut out = vec![0.0; b * c * oh * ow];
        for bc in 0..b * c {
            for y in 0..oh {
                let src = bc * h * w + (y + dy) * w + dx;
                let dst = bc * oh * ow + y * ow;
                out[dst..dst + ow].copy_from_slice(&vin[src..src + ow]);
            }
        }
        let req = self.requires(input);
        let t = Tensor::new(out, vec![b, c, oh, ow])?;
        Ok(self.push(Op::CropCenter { input, b, c, h, w, oh, ow }, t, req))
    }

    /// Concatenate along the channel axis: [B,C1,H,W] ++ [B,C2,H,W].
    pub fn concat_channels(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(TensorError::ShapeMismatch { op: "concat_channels", left: sa, right: sb });
        }
        let (batch, c1, c2, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let va = self.values(a);
        let vb = self.values(b);
        let mut out = Vec::with_capacity((c1 + c2) * batch * hw);
        for i in 0..batch {
            out.extend_from_slice(&va[i * c1 * hw..(i + 1) * c1 * hw]);
            out.extend_from_slice(&vb[i * c2 * hw..(i + 1) * c2 * hw]);
        }
        let req = self.requires(a) || self.requires(b);
        let t = Tensor::new(out, vec![batch, c1 + c2, sa[2], sa[3]])?;
        Ok(self.push(Op::ConcatChannels { a, b, batch, c1, c2, hw }, t, req))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> TensorResult<Var> {
        let expected: usize = shape.iter().product();
        if expected != self.values(a).len() {
            return Err(TensorError::DataLength { expected, got: self.values(a).len() });
        }
        let t = Tensor::new(self.values(a).to_vec(), shape)?;
        let req = self.requires(a);
        Ok(self.push(Op::Reshape(a), t, req))
    }

    // ── Row-wise ops ────────────────────────────────────────────────────
    //
    // The last axis is the feature axis; all leading axes together form the
    // row index.

    fn rows_cols(&self, op: &'static str, v: Var) -> TensorResult<(usize, usize)> {
        let s = self.shape(v);
        if s.is_empty() {
            return Err(TensorError::UnsupportedShape { op, shape: s.to_vec() });
        }
        let cols = *s.last().unwrap();
        if cols == 0 {
            return Err(TensorError::UnsupportedShape { op, shape: s.to_vec() });
        }
        Ok((self.values(v).len() / cols, cols))
    }

    /// Row-wise softmax with max subtraction for overflow safety.
    pub fn softmax_rows(&mut self, input: Var) -> TensorResult<Var> {
        let (rows, cols) = self.rows_cols("softmax", input)?;
        let vin = self.values(input);
        let mut out = vec![0.0; vin.len()];
        for r in 0..rows {
            let row = &vin[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[r * cols..(r + 1) * cols];
            let mut sum = 0.0;
            for (o, x) in orow.iter_mut().zip(row) {
                *o = (x - m).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let req = self.requires(input);
        let t = Tensor::new(out, self.shape(input).to_vec())?;
        Ok(self.push(Op::SoftmaxRows { input, rows, cols }, t, req))
    }

    /// Row-wise L2 normalization; all-zero rows yield zeros (see [`L2_EPS`]).
    pub fn l2_normalize_rows(&mut self, input: Var) -> TensorResult<Var> {
        let (rows, cols) = self.rows_cols("l2_normalize", input)?;
        let vin = self.values(input);
        let mut out = vec![0.0; vin.len()];
        for r in 0..rows {
            let row = &vin[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(L2_EPS);
            for (o, x) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = x / norm;
            }
        }
        let req = self.requires(input);
        let t = Tensor::new(out, self.shape(input).to_vec())?;
        Ok(self.push(Op::L2NormRows { input, rows, cols }, t, req))
    }

    /// Mean over the first axis: [d0, rest..] -> [rest..].
    pub fn mean_axis0(&mut self, input: Var) -> TensorResult<Var> {
        let s = self.shape(input).to_vec();
        if s.is_empty() || s[0] == 0 {
            return Err(TensorError::UnsupportedShape { op: "mean_axis0", shape: s });
        }
        let rows = s[0];
        let cols = self.values(input).len() / rows;
        let vin = self.values(input);
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, x) in out.iter_mut().zip(&vin[r * cols..(r + 1) * cols]) {
                *o += x;
            }
        }
        let inv = 1.0 / rows as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
        let out_shape: Vec<usize> = if s.len() == 1 { vec![1] } else { s[1..].to_vec() };
        let req = self.requires(input);
        let t = Tensor::new(out, out_shape)?;
        Ok(self.push(Op::MeanAxis0 { input, rows, cols }, t, req))
    }

    pub fn sum_all(&mut self, input: Var) -> Var {
        let s: f64 = self.values(input).iter().sum();
        let req = self.requires(input);
        self.push(Op::SumAll(input), Tensor::scalar(s), req)
    }

    pub fn mean_all(&mut self, input: Var) -> Var {
        let v = self.values(input);
        let s: f64 = v.iter().sum::<f64>() / v.len() as f64;
        let req = self.requires(input);
        self.push(Op::MeanAll(input), Tensor::scalar(s), req)
    }

    /// Row-wise inner product of two equally shaped matrices -> [rows].
    pub fn dot_rows(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "dot_rows",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let (rows, cols) = self.rows_cols("dot_rows", a)?;
        let va = self.values(a);
        let vb = self.values(b);
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            out[r] = va[r * cols..(r + 1) * cols]
                .iter()
                .zip(&vb[r * cols..(r + 1) * cols])
                .map(|(x, y)| x * y)
                .sum();
        }
        let req = self.requires(a) || self.requires(b);
        let t = Tensor::new(out, vec![rows])?;
        Ok(self.push(Op::DotRows { a, b, rows, cols }, t, req))
    }

    /// Circular row shift: out[i] = in[(i + shift) mod rows].
    pub fn roll_rows(&mut self, input: Var, shift: usize) -> TensorResult<Var> {
        let s = self.shape(input).to_vec();
        if s.is_empty() || s[0] == 0 {
            return Err(TensorError::UnsupportedShape { op: "roll_rows", shape: s });
        }
        let rows = s[0];
        let cols = self.values(input).len() / rows;
        let vin = self.values(input);
        let mut out = vec![0.0; vin.len()];
        for i in 0..rows {
            let j = (i + shift) % rows;
            out[i * cols..(i + 1) * cols].copy_from_slice(&vin[j * cols..(j + 1) * cols]);
        }
        let req = self.requires(input);
        let t = Tensor::new(out, s)?;
        Ok(self.push(Op::RollRows { input, rows, cols, shift }, t, req))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients of `requires_grad`
    /// tensors accumulate across repeated calls; use [`Tape::zero_grads`]
    /// to reset.
    pub fn backward(&mut self, loss: Var) -> TensorResult<()> {
        if self.values(loss).len() != 1 {
            return Err(TensorError::NotScalar { shape: self.shape(loss).to_vec() });
        }
        let n = loss.0 + 1;
        let mut local: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
        local.resize_with(n, || None);
        local[loss.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let Some(g) = local[idx].take() else { continue };
            if !self.nodes[idx].tensor.requires_grad {
                continue;
            }
            self.nodes[idx].tensor.accumulate_grad(&g);
            let op = self.nodes[idx].op.clone();
            self.propagate(&op, idx, &g, &mut local);
        }
        Ok(())
    }

    fn add_local(&self, local: &mut [Option<Vec<f64>>], v: Var, contrib: impl FnOnce(&mut [f64])) {
        if !self.requires(v) {
            return;
        }
        let slot = &mut local[v.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.nodes[v.0].tensor.numel()]);
        }
        contrib(slot.as_mut().unwrap());
    }

    /// Reduce an output-shaped gradient onto a possibly single-element operand.
    fn add_local_broadcast(&self, local: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        let n = self.nodes[v.0].tensor.numel();
        self.add_local(local, v, |buf| {
            if n == g.len() {
                for (b, gi) in buf.iter_mut().zip(g) {
                    *b += gi;
                }
            } else {
                buf[0] += g.iter().sum::<f64>();
            }
        });
    }

    fn propagate(&self, op: &Op, idx: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_local_broadcast(local, a, g);
                self.add_local_broadcast(local, b, g);
            }
            Op::Sub(a, b) => {
                self.add_local_broadcast(local, a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.add_local_broadcast(local, b, &neg);
            }
            Op::Mul(a, b) => {
                let va = self.values(a);
                let vb = self.values(b);
                let ga = scaled_by(g, vb);
                let gb = scaled_by(g, va);
                self.add_local_broadcast(local, a, &ga);
                self.add_local_broadcast(local, b, &gb);
            }
            Op::Div(a, b) => {
                let va = self.values(a);
                let vb = self.values(b);
                let out_len = g.len();
                let mut ga = vec![0.0; out_len];
                let mut gb = vec![0.0; out_len];
                for i in 0..out_len {
                    let x = va[if va.len() == 1 { 0 } else { i }];
                    let y = vb[if vb.len() == 1 { 0 } else { i }];
                    ga[i] = g[i] / y;
                    gb[i] = -g[i] * x / (y * y);
                }
                self.add_local_broadcast(local, a, &ga);
                self.add_local_broadcast(local, b, &gb);
            }
            Op::Min(a, b) => {
                let va = self.values(a);
                let vb = self.values(b);
                let out_len = g.len();
                let mut ga = vec![0.0; out_len];
                let mut gb = vec![0.0; out_len];
                for i in 0..out_len {
                    let x = va[if va.len() == 1 { 0 } else { i }];
                    let y = vb[if vb.len() == 1 { 0 } else { i }];
                    if x <= y {
                        ga[i] = g[i];
                    } else {
                        gb[i] = g[i];
                    }
                }
                self.add_local_broadcast(local, a, &ga);
                self.add_local_broadcast(local, b, &gb);
            }
            Op::AddScalar(a) => self.add_local_broadcast(local, a, g),
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                self.add_local_broadcast(local, a, &ga);
            }
            Op::Relu(a) => {
                let va = self.values(a);
                let ga: Vec<f64> = g.iter().zip(va).map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 }).collect();
                self.add_local(local, a, |buf| {
                    for (b, gi) in buf.iter_mut().zip(&ga) {
                        *b += gi;
                    }
                });
            }
            Op::MatMul { a, b, m, k, n } => {
                // dA = G · Bᵀ ; dB = Aᵀ · G
                let va = self.values(a);
                let vb = self.values(b);
                if self.requires(a) {
                    let bt = transpose_raw(vb, k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    self.add_local(local, a, |buf| {
                        for (x, y) in buf.iter_mut().zip(&da) {
                            *x += y;
                        }
                    });
                }
                if self.requires(b) {
                    let at = transpose_raw(va, m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    self.add_local(local, b, |buf| {
                        for (x, y) in buf.iter_mut().zip(&db) {
                            *x += y;
                        }
                    });
                }
            }
            Op::Transpose { a, rows, cols } => {
                let ga = transpose_raw(g, cols, rows);
                self.add_local(local, a, |buf| {
                    for (x, y) in buf.iter_mut().zip(&ga) {
                        *x += y;
                    }
                });
            }
            Op::Conv2dSame { input, kernel, bias, dims } => {
                if self.requires(input) {
                    let di = conv2d_backward_input(g, self.values(kernel), dims);
                    self.add_local(local, input, |buf| {
                        for (x, y) in buf.iter_mut().zip(&di) {
                            *x += y;
                        }
                    });
                }
                if self.requires(kernel) {
                    let dk = conv2d_backward_kernel(g, self.values(input), dims);
                    self.add_local(local, kernel, |buf| {
                        for (x, y) in buf.iter_mut().zip(&dk) {
                            *x += y;
                        }
                    });
                }
                if let Some(bv) = bias {
                    if self.requires(bv) {
                        let plane = dims.h * dims.w;
                        self.add_local(local, bv, |buf| {
                            for b in 0..dims.batch {
                                for co in 0..dims.cout {
                                    let base = (b * dims.cout + co) * plane;
                                    buf[co] += g[base..base + plane].iter().sum::<f64>();
                                }
                            }
                        });
                    }
                }
            }
            Op::Conv1dCircular { input, kernel, rows, len, k } => {
                let p = k / 2;
                if self.requires(input) {
                    let kv = self.values(kernel);
                    self.add_local(local, input, |buf| {
                        for r in 0..rows {
                            for j in 0..len {
                                let gj = g[r * len + j];
                                if gj == 0.0 {
                                    continue;
                                }
                                for t in 0..k {
                                    let i = (j + t + len - p) % len;
                                    buf[r * len + i] += gj * kv[t];
                                }
                            }
                        }
                    });
                }
                if self.requires(kernel) {
                    let vin = self.values(input);
                    self.add_local(local, kernel, |buf| {
                        for r in 0..rows {
                            for j in 0..len {
                                let gj = g[r * len + j];
                                for (t, b) in buf.iter_mut().enumerate() {
                                    let i = (j + t + len - p) % len;
                                    *b += gj * vin[r * len + i];
                                }
                            }
                        }
                    });
                }
            }
            Op::AvgPool2 { input, b, c, h, w } => {
                let (oh, ow) = (h / 2, w / 2);
                self.add_local(local, input, |buf| {
                    for bc in 0..b * c {
                        for y in 0..oh {
                            for x in 0..ow {
                                let gv = 0.25 * g[bc * oh * ow + y * ow + x];
                                let i = bc * h * w + (2 * y) * w + 2 * x;
                                buf[i] += gv;
                                buf[i + 1] += gv;
                                buf[i + w] += gv;
                                buf[i + w + 1] += gv;
                            }
                        }
                    }
                });
            }
            Op::CropCenter { input, b, c, h, w, oh, ow } => {
                let (dy, dx) = ((h - oh) / 2, (w - ow) / 2);
                self.add_local(local, input, |buf| {
                    for bc in 0..b * c {
                        for y in 0..oh {
                            let dst = bc * h * w + (y + dy) * w + dx;
                            let src = bc * oh * ow + y * ow;
                            for x in 0..ow {
                                buf[dst + x] += g[src + x];
                            }
                        }
                    }
                });
            }
            Op::ConcatChannels { a, b, batch, c1, c2, hw } => {
                self.add_local(local, a, |buf| {
                    for i in 0..batch {
                        let src = i * (c1 + c2) * hw;
                        for j in 0..c1 * hw {
                            buf[i * c1 * hw + j] += g[src + j];
                        }
                    }
                });
                self.add_local(local, b, |buf| {
                    for i in 0..batch {
                        let src = i * (c1 + c2) * hw + c1 * hw;
                        for j in 0..c2 * hw {
                            buf[i * c2 * hw + j] += g[src + j];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                self.add_local(local, a, |buf| {
                    for (x, y) in buf.iter_mut().zip(g) {
                        *x += y;
                    }
                });
            }
            Op::AddRowBroadcast { a, bias, rows, cols } => {
                self.add_local(local, a, |buf| {
                    for (x, y) in buf.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                self.add_local(local, bias, |buf| {
                    for r in 0..rows {
                        for c in 0..cols {
                            buf[c] += g[r * cols + c];
                        }
                    }
                });
            }
            Op::SoftmaxRows { input, rows, cols } => {
                let y = self.values(Var(idx));
                self.add_local(local, input, |buf| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((b, yi), gi) in buf[r * cols..(r + 1) * cols].iter_mut().zip(yr).zip(gr) {
                            *b += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::L2NormRows { input, rows, cols } => {
                let vin = self.values(input);
                let y = self.values(Var(idx));
                self.add_local(local, input, |buf| {
                    for r in 0..rows {
                        let xr = &vin[r * cols..(r + 1) * cols];
                        let norm = xr.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm <= L2_EPS {
                            continue; // zero row: gradient defined as zero
                        }
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((b, yi), gi) in buf[r * cols..(r + 1) * cols].iter_mut().zip(yr).zip(gr) {
                            *b += (gi - yi * dot) / norm;
                        }
                    }
                });
            }
            Op::MeanAxis0 { input, rows, cols } => {
                let inv = 1.0 / rows as f64;
                self.add_local(local, input, |buf| {
                    for r in 0..rows {
                        for (b, gi) in buf[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                            *b += gi * inv;
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let gv = g[0];
                self.add_local(local, a, |buf| {
                    for b in buf.iter_mut() {
                        *b += gv;
                    }
                });
            }
            Op::MeanAll(a) => {
                let gv = g[0] / self.nodes[a.0].tensor.numel() as f64;
                self.add_local(local, a, |buf| {
                    for b in buf.iter_mut() {
                        *b += gv;
                    }
                });
            }
            Op::DotRows { a, b, rows, cols } => {
                let va = self.values(a);
                let vb = self.values(b);
                self.add_local(local, a, |buf| {
                    for r in 0..rows {
                        let gr = g[r];
                        for (x, y) in buf[r * cols..(r + 1) * cols].iter_mut().zip(&vb[r * cols..(r + 1) * cols]) {
                            *x += gr * y;
                        }
                    }
                });
                self.add_local(local, b, |buf| {
                    for r in 0..rows {
                        let gr = g[r];
                        for (x, y) in buf[r * cols..(r + 1) * cols].iter_mut().zip(&va[r * cols..(r + 1) * cols]) {
                            *x += gr * y;
                        }
                    }
                });
            }
            Op::RollRows { input, rows, cols, shift } => {
                self.add_local(local, input, |buf| {
                    for i in 0..rows {
                        let j = (i + shift) % rows;
                        for (x, y) in buf[j * cols..(j + 1) * cols].iter_mut().zip(&g[i * cols..(i + 1) * cols]) {
                            *x += y;
                        }
                    }
                });
            }
        }
    }
}

// ── Raw kernels ─────────────────────────────────────────────────────────

fn scaled_by(g: &[f64], v: &[f64]) -> Vec<f64> {
    if v.len() == 1 {
        g.iter().map(|x| x * v[0]).collect()
    } else if g.len() == v.len() {
        g.iter().zip(v).map(|(x, y)| x * y).collect()
    } else {
        // g is output-shaped, v is the broadcast side's counterpart
        g.iter().zip(v).map(|(x, y)| x * y).collect()
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn conv2d_forward(input: &[f64], kernel: &[f64], bias: Option<&[f64]>, d: Conv2dDims) -> Vec<f64> {
    let p = d.k / 2;
    let plane = d.h * d.w;
    let mut out = vec![0.0; d.batch * d.cout * plane];
    // parallel over samples: each task owns one sample's output slice, so
    // results are identical regardless of scheduling
    out.par_chunks_mut(d.cout * plane).enumerate().for_each(|(b, obuf)| {
        if let Some(bv) = bias {
            for co in 0..d.cout {
                obuf[co * plane..(co + 1) * plane].fill(bv[co]);
            }
        }
        for co in 0..d.cout {
            let obase = co * plane;
            for ci in 0..d.cin {
                let ibase = (b * d.cin + ci) * plane;
                for dy in 0..d.k {
                    for dx in 0..d.k {
                        let kv = kernel[((co * d.cin + ci) * d.k + dy) * d.k + dx];
                        if kv == 0.0 {
                            continue;
                        }
                        // out[y][x] += kv * in[y+dy-p][x+dx-p]
                        let y0 = p.saturating_sub(dy);
                        let y1 = (d.h + p - dy).min(d.h);
                        let x0 = p.saturating_sub(dx);
                        let x1 = (d.w + p - dx).min(d.w);
                        for y in y0..y1 {
                            let iy = y + dy - p;
                            let irow = ibase + iy * d.w;
                            let orow = obase + y * d.w;
                            let (ia, ib) = (irow + x0 + dx - p, irow + x1 + dx - p);
                            let src = &input[ia..ib];
                            let dst = &mut obuf[orow + x0..orow + x1];
                            for (o, s) in dst.iter_mut().zip(src) {
                                *o += kv * s;
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv2d_backward_input(g: &[f64], kernel: &[f64], d: Conv2dDims) -> Vec<f64> {
    let p = d.k / 2;
    let plane = d.h * d.w;
    let mut di = vec![0.0; d.batch * d.cin * plane];
    di.par_chunks_mut(d.cin * plane).enumerate().for_each(|(b, dbuf)| {
        for co in 0..d.cout {
            let gbase = (b * d.cout + co) * plane;
            for ci in 0..d.cin {
                let ibase = ci * plane;
                for dy in 0..d.k {
                    for dx in 0..d.k {
                        let kv = kernel[((co * d.cin + ci) * d.k + dy) * d.k + dx];
                        if kv == 0.0 {
                            continue;
                        }
                        let y0 = p.saturating_sub(dy);
                        let y1 = (d.h + p - dy).min(d.h);
                        let x0 = p.saturating_sub(dx);
                        let x1 = (d.w + p - dx).min(d.w);
                        for y in y0..y1 {
                            let iy = y + dy - p;
                            let grow = gbase + y * d.w;
                            let irow = ibase + iy * d.w;
                            let dst = &mut dbuf[irow + x0 + dx - p..irow + x1 + dx - p];
                            let src = &g[grow + x0..grow + x1];
                            for (o, s) in dst.iter_mut().zip(src) {
                                *o += kv * s;
                            }
                        }
                    }
                }
            }
        }
    });
    di
}

fn conv2d_backward_kernel(g: &[f64], input: &[f64], d: Conv2dDims) -> Vec<f64> {
    let p = d.k / 2;
    let plane = d.h * d.w;
    let ksz = d.cout * d.cin * d.k * d.k;
    // per-sample partials computed in parallel, then reduced in fixed
    // sample order so the sum is bitwise reproducible
    let partials: Vec<Vec<f64>> = (0..d.batch)
        .into_par_iter()
        .map(|b| {
            let mut dk = vec![0.0; ksz];
            for co in 0..d.cout {
                let gbase = (b * d.cout + co) * plane;
                for ci in 0..d.cin {
                    let ibase = (b * d.cin + ci) * plane;
                    for dy in 0..d.k {
                        for dx in 0..d.k {
                            let y0 = p.saturating_sub(dy);
                            let y1 = (d.h + p - dy).min(d.h);
                            let x0 = p.saturating_sub(dx);
                            let x1 = (d.w + p - dx).min(d.w);
                            let mut acc = 0.0;
                            for y in y0..y1 {
                                let iy = y + dy - p;
                                let grow = gbase + y * d.w;
                                let irow = ibase + iy * d.w;
                                let gs = &g[grow + x0..grow + x1];
                                let is = &input[irow + x0 + dx - p..irow + x1 + dx - p];
                                acc += gs.iter().zip(is).map(|(a, b)| a * b).sum::<f64>();
                            }
                            dk[((co * d.cin + ci) * d.k + dy) * d.k + dx] += acc;
                        }
                    }
                }
            }
            dk
        })
        .collect();
    let mut dk = vec![0.0; ksz];
    for partial in &partials {
        for (a, b) in dk.iter_mut().zip(partial) {
            *a += b;
        }
    }
    dk
}

fn conv1d_circular_forward(input: &[f64], kernel: &[f64], rows: usize, len: usize, k: usize) -> Vec<f64> {
    let p = k / 2;
    let mut out = vec![0.0; input.len()];
    for r in 0..rows {
        let irow = &input[r * len..(r + 1) * len];
        let orow = &mut out[r * len..(r + 1) * len];
        for (j, o) in orow.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                let i = (j + t + len - p) % len;
                acc += kv * irow[i];
            }
            *o = acc;
        }
    }
    out
}
