//! Reverse-mode tape over [`Array`] values.
//!
//! Every primitive appends one node holding its forward value and the
//! references needed to run its adjoint. `backward` walks the nodes in exact
//! reverse order of creation, so gradients are reproducible bit for bit for
//! a fixed op sequence.

use super::array::{broadcast_index_map, broadcast_shape, Array};
use super::fft::{fft2_planes, is_pow2};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// Pointwise primitives accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Log,
    Abs,
    Relu,
    Sigmoid,
    Tanh,
    Pow2,
    Sqrt,
    Neg,
    Sin,
    Cos,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Div)
    }

    fn name(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::Div => "div",
            Self::Exp => "exp",
            Self::Log => "log",
            Self::Abs => "abs",
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
            Self::Pow2 => "pow2",
            Self::Sqrt => "sqrt",
            Self::Neg => "neg",
            Self::Sin => "sin",
            Self::Cos => "cos",
        }
    }
}

/// Spatial padding policy for [`Tape::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `(k - 1) / 2` zeros on every side.
    Same,
    Valid,
}

/// Real/imaginary pair of tape variables.
#[derive(Clone, Copy, Debug)]
pub struct Spectrum {
    pub re: Var,
    pub im: Var,
}

/// Smallest divisor magnitude accepted by `div`.
pub const DIV_GUARD: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Unary {
        kind: ElementwiseOp,
        x: Var,
    },
    Binary {
        kind: ElementwiseOp,
        a: Var,
        b: Var,
        // flat index maps, present only when broadcasting
        map_a: Option<Vec<usize>>,
        map_b: Option<Vec<usize>>,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Offset {
        x: Var,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Sum {
        x: Var,
    },
    SumAxis {
        x: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    Reshape {
        x: Var,
    },
    Slice {
        x: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
        start: usize,
        len: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
        total: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Fft2 {
        re: Var,
        im: Option<Var>,
        inverse: bool,
    },
    Bilinear {
        field: Var,
        coords: Var,
    },
    Upsample2 {
        x: Var,
    },
    AvgPoolReflect {
        x: Var,
        window: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient of the seed w.r.t. `v`, `None` if `v` does not require grad.
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, a: &Array) -> Result<()> {
    if a.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
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

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Array, requires_grad: bool) -> Result<Var> {
        check_finite("leaf", &value)?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Array) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Array) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var> {
        self.constant(Array::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Copy of `v`'s value as a fresh constant (gradient stop).
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.constant(value)
    }

    // ------------------------------------------------------------------
    // pointwise

    /// Applies a pointwise primitive. Binary kinds need `b`.
    pub fn elementwise(&mut self, kind: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => self.unary(kind, a),
            (true, None) => Err(Error::shape(kind.name(), "binary op needs two operands")),
            (false, Some(_)) => Err(Error::shape(kind.name(), "unary op takes one operand")),
        }
    }

    fn unary(&mut self, kind: ElementwiseOp, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = match kind {
            ElementwiseOp::Log => {
                let bad: Vec<usize> = (0..xv.len()).filter(|&i| xv.data()[i] <= 0.0).collect();
                if !bad.is_empty() {
                    return Err(domain("log", bad));
                }
                xv.map(f64::ln)
            }
            ElementwiseOp::Sqrt => {
                let bad: Vec<usize> = (0..xv.len()).filter(|&i| xv.data()[i] < 0.0).collect();
                if !bad.is_empty() {
                    return Err(domain("sqrt", bad));
                }
                xv.map(f64::sqrt)
            }
            ElementwiseOp::Exp => xv.map(f64::exp),
            ElementwiseOp::Abs => xv.map(f64::abs),
            ElementwiseOp::Relu => xv.map(|v| if v > 0.0 { v } else { 0.0 }),
            ElementwiseOp::Sigmoid => xv.map(sigmoid),
            ElementwiseOp::Tanh => xv.map(f64::tanh),
            ElementwiseOp::Pow2 => xv.map(|v| v * v),
            ElementwiseOp::Neg => xv.map(|v| -v),
            ElementwiseOp::Sin => xv.map(f64::sin),
            ElementwiseOp::Cos => xv.map(f64::cos),
            _ => unreachable!("binary kind routed to unary"),
        };
        check_finite(kind.name(), &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Unary { kind, x }, rg))
    }

    fn binary(&mut self, kind: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let same = av.shape() == bv.shape();
        let out_shape = if same {
            av.shape().to_vec()
        } else {
            broadcast_shape(av.shape(), bv.shape()).ok_or_else(|| {
                Error::shape(kind.name(), format!("{:?} vs {:?}", av.shape(), bv.shape()))
            })?
        };
        let (map_a, map_b) = if same {
            (None, None)
        } else {
            let ma = (av.shape() != out_shape.as_slice()).then(|| broadcast_index_map(av.shape(), &out_shape));
            let mb = (bv.shape() != out_shape.as_slice()).then(|| broadcast_index_map(bv.shape(), &out_shape));
            (ma, mb)
        };
        let n: usize = out_shape.iter().product();
        let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
        let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
        let (ad, bd) = (av.data(), bv.data());
        let data: Vec<f64> = match kind {
            ElementwiseOp::Add => (0..n).map(|i| ad[ia(i)] + bd[ib(i)]).collect(),
            ElementwiseOp::Sub => (0..n).map(|i| ad[ia(i)] - bd[ib(i)]).collect(),
            ElementwiseOp::Mul => (0..n).map(|i| ad[ia(i)] * bd[ib(i)]).collect(),
            ElementwiseOp::Div => {
                let bad: Vec<usize> = (0..bd.len()).filter(|&i| bd[i].abs() < DIV_GUARD).collect();
                if !bad.is_empty() {
                    return Err(domain("div", bad));
                }
                (0..n).map(|i| ad[ia(i)] / bd[ib(i)]).collect()
            }
            _ => unreachable!("unary kind routed to binary"),
        };
        let out = Array::new(&out_shape, data)?;
        check_finite(kind.name(), &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            out,
            Op::Binary {
                kind,
                a,
                b,
                map_a,
                map_b,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Div, a, b)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Log, x)
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Abs, x)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Relu, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Sigmoid, x)
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Tanh, x)
    }
    pub fn pow2(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Pow2, x)
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Sqrt, x)
    }
    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Neg, x)
    }
    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Sin, x)
    }
    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Cos, x)
    }

    /// `x * factor` for a constant factor.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        check_finite("scale", &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Scale { x, factor }, rg))
    }

    /// `x + offset` for a constant offset.
    pub fn offset(&mut self, x: Var, offset: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v + offset);
        check_finite("offset", &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Offset { x }, rg))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Clamp { x, lo, hi }, rg))
    }

    // ------------------------------------------------------------------
    // reductions and layout

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let out = Array::scalar(s);
        check_finite("sum", &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Sum { x }, rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        (outer, shape[axis], inner)
    }

    /// Sums over `axis`, removing it from the shape (rank-1 inputs give `[1]`).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, axis_len, inner) = Self::axis_split(&shape, axis);
        let xd = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..axis_len {
                let src = &xd[(o * axis_len + a) * inner..(o * axis_len + a + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = Array::new(&out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::SumAxis {
                x,
                outer,
                axis_len,
                inner,
            },
            rg,
        ))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", format!("axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, axis_len, inner) = Self::axis_split(&shape, axis);
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Array::new(&out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::Slice {
                x,
                outer,
                axis_len,
                inner,
                start,
                len,
            },
            rg,
        ))
    }

    /// Joins arrays along `axis`; all other dims must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {first:?}")));
        }
        let mut total = 0;
        let mut parts = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::shape("concat", format!("{first:?} vs {s:?}")));
            }
            parts.push((v, s[axis]));
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(v, len) in &parts {
                let d = self.value(v).data();
                data.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut out_shape = first;
        out_shape[axis] = total;
        let out = Array::new(&out_shape, data)?;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            out,
            Op::Concat {
                parts,
                outer,
                inner,
                total,
            },
            rg,
        ))
    }

    // ------------------------------------------------------------------
    // linear algebra, convolution

    /// `[m, n] x [n, k] -> [m, k]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, n, k) = (sa[0], sa[1], sb[1]);
        let out = Array::new(&[m, k], matmul_raw(self.value(a).data(), self.value(b).data(), m, n, k))?;
        check_finite("matmul", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b }, rg))
    }

    /// 2-D cross-correlation: input `[C, H, W]`, kernel `[K, C, kh, kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 3 || sk.len() != 4 || si[0] != sk[1] {
            return Err(Error::shape("conv2d", format!("input {si:?}, kernel {sk:?}")));
        }
        let (kh, kw) = (sk[2], sk[3]);
        if kh % 2 == 0 || kw % 2 == 0 || stride == 0 {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} must be odd, stride {stride}")));
        }
        if kh != kw && padding == Padding::Same {
            return Err(Error::shape("conv2d", "same padding needs a square kernel"));
        }
        let pad = match padding {
            Padding::Same => (kh - 1) / 2,
            Padding::Valid => 0,
        };
        let (h, w) = (si[1], si[2]);
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let geo = ConvGeom::new(&si, &sk, stride, pad);
        let mut out = vec![0.0; geo.k * geo.oh * geo.ow];
        conv_forward(self.value(input).data(), self.value(kernel).data(), &mut out, &geo);
        let out = Array::new(&[geo.k, geo.oh, geo.ow], out)?;
        check_finite("conv2d", &out)?;
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            },
            rg,
        ))
    }

    // ------------------------------------------------------------------
    // spectral

    /// Forward 2-D transform over the last two axes of a real array.
    pub fn fft2(&mut self, x: Var) -> Result<Spectrum> {
        self.fft2_any(x, None, false)
    }

    /// Forward 2-D transform of a complex input.
    pub fn fft2_complex(&mut self, s: Spectrum) -> Result<Spectrum> {
        self.fft2_any(s.re, Some(s.im), false)
    }

    /// Inverse 2-D transform (with `1/(H*W)`).
    pub fn ifft2(&mut self, s: Spectrum) -> Result<Spectrum> {
        self.fft2_any(s.re, Some(s.im), true)
    }

    fn fft2_any(&mut self, re: Var, im: Option<Var>, inverse: bool) -> Result<Spectrum> {
        let shape = self.shape(re).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("fft2", format!("rank {} < 2", shape.len())));
        }
        if let Some(im) = im {
            if self.shape(im) != shape.as_slice() {
                return Err(Error::shape("fft2", "real/imag shapes differ"));
            }
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if !is_pow2(h) || !is_pow2(w) {
            return Err(Error::shape("fft2", format!("spatial dims {h}x{w} must be powers of two")));
        }
        let planes = shape[..shape.len() - 2].iter().product();
        let mut r = self.value(re).data().to_vec();
        let mut i = match im {
            Some(im) => self.value(im).data().to_vec(),
            None => vec![0.0; r.len()],
        };
        fft2_planes(&mut r, &mut i, planes, h, w, inverse);
        let n = r.len();
        r.extend_from_slice(&i);
        let mut out_shape = vec![2];
        out_shape.extend_from_slice(&shape);
        let out = Array::new(&out_shape, r)?;
        check_finite("fft2", &out)?;
        let rg = self.rg(re) || im.is_some_and(|v| self.rg(v));
        let joint = self.push(out, Op::Fft2 { re, im, inverse }, rg);
        let re_v = self.slice(joint, 0, 0, 1)?;
        let im_v = self.slice(joint, 0, 1, 1)?;
        debug_assert_eq!(self.value(re_v).len(), n);
        Ok(Spectrum {
            re: self.reshape(re_v, &shape)?,
            im: self.reshape(im_v, &shape)?,
        })
    }

    // ------------------------------------------------------------------
    // resampling

    /// Bilinear lookup of `field [C, H, W]` at pixel `coords [2, Ho, Wo]`
    /// (`coords[0]` = x/column, `coords[1]` = y/row). Samples outside
    /// `[0, W-1] x [0, H-1]` read zeros; the returned mask marks in-range
    /// coordinates.
    pub fn bilinear_sample(&mut self, field: Var, coords: Var) -> Result<(Var, Array)> {
        let (sf, sc) = (self.shape(field).to_vec(), self.shape(coords).to_vec());
        if sf.len() != 3 || sc.len() != 3 || sc[0] != 2 {
            return Err(Error::shape("bilinear_sample", format!("field {sf:?}, coords {sc:?}")));
        }
        check_finite("bilinear_sample", self.value(coords))?;
        let (c, h, w) = (sf[0], sf[1], sf[2]);
        let (oh, ow) = (sc[1], sc[2]);
        let fd = self.value(field).data();
        let cd = self.value(coords).data();
        let np = oh * ow;
        let mut out = vec![0.0; c * np];
        let mut mask = vec![0.0; np];
        for p in 0..np {
            let (x, y) = (cd[p], cd[np + p]);
            let t = BilinearTap::new(x, y, h, w);
            if t.in_range {
                mask[p] = 1.0;
            }
            for ch in 0..c {
                out[ch * np + p] = t.sample(&fd[ch * h * w..(ch + 1) * h * w], w);
            }
        }
        let out = Array::new(&[c, oh, ow], out)?;
        let rg = self.rg(field) || self.rg(coords);
        let v = self.push(out, Op::Bilinear { field, coords }, rg);
        Ok((v, Array::new(&[oh, ow], mask)?))
    }

    /// Nearest-neighbour 2x upsampling of `[C, H, W]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("upsample2", format!("{s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let xd = self.value(x).data();
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ch * 2 * h + y) * 2 * w + xx] = xd[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let out = Array::new(&[c, 2 * h, 2 * w], out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Upsample2 { x }, rg))
    }

    /// Stride-1 box mean over a `window x window` neighbourhood of `[C, H, W]`
    /// with reflection padding; output has the input's shape.
    pub fn avg_pool_reflect(&mut self, x: Var, window: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || window % 2 == 0 {
            return Err(Error::shape("avg_pool_reflect", format!("{s:?}, window {window}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        if window > h || window > w {
            return Err(Error::shape(
                "avg_pool_reflect",
                format!("window {window} larger than image {h}x{w}"),
            ));
        }
        let out = box_reflect(self.value(x).data(), c, h, w, window);
        let out = Array::new(&s, out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::AvgPoolReflect { x, window }, rg))
    }

    // ------------------------------------------------------------------
    // reverse sweep

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let seed = self.value(loss);
        if seed.len() != 1 {
            return Err(Error::NonScalarSeed(seed.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(seed.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        // drop intermediates: only leaves are of interest to callers
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) || !n.requires_grad {
                grads[i] = None;
            } else if grads[i].is_none() {
                grads[i] = Some(Array::zeros(n.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Unary { kind, x } => {
                if !self.rg(*x) {
                    return Ok(());
                }
                let xd = self.value(*x).data();
                let yd = node.value.data();
                let data: Vec<f64> = match kind {
                    ElementwiseOp::Exp => gd.iter().zip(yd).map(|(g, y)| g * y).collect(),
                    ElementwiseOp::Log => gd.iter().zip(xd).map(|(g, x)| g / x).collect(),
                    ElementwiseOp::Abs => gd
                        .iter()
                        .zip(xd)
                        .map(|(g, &x)| if x > 0.0 { *g } else if x < 0.0 { -g } else { 0.0 })
                        .collect(),
                    ElementwiseOp::Relu => gd.iter().zip(xd).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
                    ElementwiseOp::Sigmoid => gd.iter().zip(yd).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    ElementwiseOp::Tanh => gd.iter().zip(yd).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    ElementwiseOp::Pow2 => gd.iter().zip(xd).map(|(g, x)| 2.0 * g * x).collect(),
                    ElementwiseOp::Sqrt => gd.iter().zip(yd).map(|(g, y)| 0.5 * g / y).collect(),
                    ElementwiseOp::Neg => gd.iter().map(|g| -g).collect(),
                    ElementwiseOp::Sin => gd.iter().zip(xd).map(|(g, x)| g * x.cos()).collect(),
                    ElementwiseOp::Cos => gd.iter().zip(xd).map(|(g, x)| -g * x.sin()).collect(),
                    _ => unreachable!(),
                };
                acc(grads, *x, Array::new(node.value.shape(), data)?);
            }
            Op::Binary {
                kind,
                a,
                b,
                map_a,
                map_b,
            } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
                let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
                if self.rg(*a) {
                    let mut ga = vec![0.0; ad.len()];
                    for (i, &gv) in gd.iter().enumerate() {
                        ga[ia(i)] += match kind {
                            ElementwiseOp::Add | ElementwiseOp::Sub => gv,
                            ElementwiseOp::Mul => gv * bd[ib(i)],
                            ElementwiseOp::Div => gv / bd[ib(i)],
                            _ => unreachable!(),
                        };
                    }
                    acc(grads, *a, Array::new(self.shape(*a), ga)?);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; bd.len()];
                    for (i, &gv) in gd.iter().enumerate() {
                        let bv = bd[ib(i)];
                        gb[ib(i)] += match kind {
                            ElementwiseOp::Add => gv,
                            ElementwiseOp::Sub => -gv,
                            ElementwiseOp::Mul => gv * ad[ia(i)],
                            ElementwiseOp::Div => -gv * ad[ia(i)] / (bv * bv),
                            _ => unreachable!(),
                        };
                    }
                    acc(grads, *b, Array::new(self.shape(*b), gb)?);
                }
            }
            Op::Scale { x, factor } => {
                if self.rg(*x) {
                    acc(grads, *x, g.map(|v| v * factor));
                }
            }
            Op::Offset { x } => {
                if self.rg(*x) {
                    acc(grads, *x, g.clone());
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.rg(*x) {
                    let xd = self.value(*x).data();
                    let data = gd
                        .iter()
                        .zip(xd)
                        .map(|(g, &x)| if x > *lo && x < *hi { *g } else { 0.0 })
                        .collect();
                    acc(grads, *x, Array::new(node.value.shape(), data)?);
                }
            }
            Op::Sum { x } => {
                if self.rg(*x) {
                    acc(grads, *x, Array::full(self.shape(*x), gd[0]));
                }
            }
            Op::SumAxis {
                x,
                outer,
                axis_len,
                inner,
            } => {
                if self.rg(*x) {
                    let mut gx = vec![0.0; outer * axis_len * inner];
                    for o in 0..*outer {
                        for a in 0..*axis_len {
                            let dst = &mut gx[(o * axis_len + a) * inner..(o * axis_len + a + 1) * inner];
                            dst.copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                        }
                    }
                    acc(grads, *x, Array::new(self.shape(*x), gx)?);
                }
            }
            Op::Reshape { x } => {
                if self.rg(*x) {
                    acc(grads, *x, g.clone().reshape(self.shape(*x))?);
                }
            }
            Op::Slice {
                x,
                outer,
                axis_len,
                inner,
                start,
                len,
            } => {
                if self.rg(*x) {
                    let mut gx = vec![0.0; outer * axis_len * inner];
                    for o in 0..*outer {
                        let base = (o * axis_len + start) * inner;
                        gx[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                    }
                    acc(grads, *x, Array::new(self.shape(*x), gx)?);
                }
            }
            Op::Concat {
                parts,
                outer,
                inner,
                total,
            } => {
                let mut offset = 0;
                for &(v, len) in parts {
                    if self.rg(v) {
                        let mut gv = Vec::with_capacity(outer * len * inner);
                        for o in 0..*outer {
                            let base = (o * total + offset) * inner;
                            gv.extend_from_slice(&gd[base..base + len * inner]);
                        }
                        acc(grads, v, Array::new(self.shape(v), gv)?);
                    }
                    offset += len;
                }
            }
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, n, k) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    // g [m,k] * b^T [k,n]
                    let bd = self.value(*b).data();
                    let mut ga = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            let mut s = 0.0;
                            for l in 0..k {
                                s += gd[i * k + l] * bd[j * k + l];
                            }
                            ga[i * n + j] = s;
                        }
                    }
                    acc(grads, *a, Array::new(sa, ga)?);
                }
                if self.rg(*b) {
                    // a^T [n,m] * g [m,k]
                    let ad = self.value(*a).data();
                    let mut gb = vec![0.0; n * k];
                    for i in 0..m {
                        for j in 0..n {
                            let av = ad[i * n + j];
                            for l in 0..k {
                                gb[j * k + l] += av * gd[i * k + l];
                            }
                        }
                    }
                    acc(grads, *b, Array::new(sb, gb)?);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            } => {
                let (si, sk) = (self.shape(*input), self.shape(*kernel));
                let geo = ConvGeom::new(si, sk, *stride, *pad);
                let gi = self.rg(*input).then(|| vec![0.0; si.iter().product()]);
                let gk = self.rg(*kernel).then(|| vec![0.0; sk.iter().product()]);
                let (gi, gk) = conv_backward(
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    gd,
                    gi,
                    gk,
                    &geo,
                );
                if let Some(gi) = gi {
                    acc(grads, *input, Array::new(si, gi)?);
                }
                if let Some(gk) = gk {
                    acc(grads, *kernel, Array::new(sk, gk)?);
                }
            }
            Op::Fft2 { re, im, inverse } => {
                let shape = self.shape(*re);
                let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let n = gd.len() / 2;
                let planes = n / (h * w);
                let mut r = gd[..n].to_vec();
                let mut i = gd[n..].to_vec();
                // adjoint of the unnormalised DFT is N * inverse, and vice versa
                fft2_planes(&mut r, &mut i, planes, h, w, !inverse);
                let factor = if *inverse { 1.0 / (h * w) as f64 } else { (h * w) as f64 };
                if self.rg(*re) {
                    acc(grads, *re, Array::new(shape, r.iter().map(|v| v * factor).collect())?);
                }
                if let Some(im) = im {
                    if self.rg(*im) {
                        acc(grads, *im, Array::new(shape, i.iter().map(|v| v * factor).collect())?);
                    }
                }
            }
            Op::Bilinear { field, coords } => {
                let sf = self.shape(*field);
                let (c, h, w) = (sf[0], sf[1], sf[2]);
                let cd = self.value(*coords).data();
                let fd = self.value(*field).data();
                let np = cd.len() / 2;
                let mut gf = self.rg(*field).then(|| vec![0.0; c * h * w]);
                let mut gc = self.rg(*coords).then(|| vec![0.0; 2 * np]);
                for p in 0..np {
                    let t = BilinearTap::new(cd[p], cd[np + p], h, w);
                    for ch in 0..c {
                        let gv = gd[ch * np + p];
                        if gv == 0.0 {
                            continue;
                        }
                        let plane = ch * h * w;
                        if let Some(gf) = gf.as_mut() {
                            t.scatter(&mut gf[plane..plane + h * w], w, gv);
                        }
                        if let Some(gc) = gc.as_mut() {
                            let (dx, dy) = t.coord_grad(&fd[plane..plane + h * w], w);
                            gc[p] += gv * dx;
                            gc[np + p] += gv * dy;
                        }
                    }
                }
                if let Some(gf) = gf {
                    acc(grads, *field, Array::new(sf, gf)?);
                }
                if let Some(gc) = gc {
                    acc(grads, *coords, Array::new(self.shape(*coords), gc)?);
                }
            }
            Op::Upsample2 { x } => {
                if self.rg(*x) {
                    let s = self.shape(*x);
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let mut gx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                gx[(ch * h + y / 2) * w + xx / 2] += gd[(ch * 2 * h + y) * 2 * w + xx];
                            }
                        }
                    }
                    acc(grads, *x, Array::new(s, gx)?);
                }
            }
            Op::AvgPoolReflect { x, window } => {
                if self.rg(*x) {
                    let s = self.shape(*x);
                    let gx = box_reflect_adjoint(gd, s[0], s[1], s[2], *window);
                    acc(grads, *x, Array::new(s, gx)?);
                }
            }
        }
        Ok(())
    }
}

fn domain(op: &'static str, bad: Vec<usize>) -> Error {
    Error::Domain {
        op,
        count: bad.len(),
        positions: bad.into_iter().take(8).collect(),
    }
}

fn acc(grads: &mut [Option<Array>], v: Var, g: Array) {
    match &mut grads[v.0] {
        Some(existing) => existing.accumulate(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let row = &mut out[i * k..(i + 1) * k];
        for j in 0..n {
            let av = a[i * n + j];
            for (o, bv) in row.iter_mut().zip(&b[j * k..(j + 1) * k]) {
                *o += av * bv;
            }
        }
    }
    out
}

// ----------------------------------------------------------------------
// convolution kernels

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(si: &[usize], sk: &[usize], stride: usize, pad: usize) -> Self {
        let (c, h, w) = (si[0], si[1], si[2]);
        let (k, kh, kw) = (sk[0], sk[2], sk[3]);
        Self {
            c,
            h,
            w,
            k,
            kh,
            kw,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        }
    }

    /// Output index range `[lo, hi)` whose input tap `o*stride + t - pad`
    /// lands in `[0, n)`.
    fn valid_range(&self, t: usize, n: usize, on: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = t as isize - self.pad as isize;
        // o*s + off >= 0  and  o*s + off <= n-1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_incl = (n as isize - 1 - off).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, on as isize);
        (lo as usize, (hi as usize).max(lo as usize))
    }
}

fn conv_forward(inp: &[f64], ker: &[f64], out: &mut [f64], g: &ConvGeom) {
    let (oh, ow) = (g.oh, g.ow);
    for ko in 0..g.k {
        let oplane = &mut out[ko * oh * ow..(ko + 1) * oh * ow];
        for ci in 0..g.c {
            let iplane = &inp[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ti in 0..g.kh {
                let (ylo, yhi) = g.valid_range(ti, g.h, oh);
                for tj in 0..g.kw {
                    let wv = ker[((ko * g.c + ci) * g.kh + ti) * g.kw + tj];
                    if wv == 0.0 {
                        continue;
                    }
                    let (xlo, xhi) = g.valid_range(tj, g.w, ow);
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ti - g.pad;
                        let irow = &iplane[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                        let ix0 = xlo * g.stride + tj - g.pad;
                        if g.stride == 1 {
                            for (o, i) in orow[xlo..xhi].iter_mut().zip(&irow[ix0..ix0 + (xhi - xlo)]) {
                                *o += wv * i;
                            }
                        } else {
                            for (n, o) in orow[xlo..xhi].iter_mut().enumerate() {
                                *o += wv * irow[ix0 + n * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward(
    inp: &[f64],
    ker: &[f64],
    gout: &[f64],
    mut gin: Option<Vec<f64>>,
    mut gker: Option<Vec<f64>>,
    g: &ConvGeom,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (oh, ow) = (g.oh, g.ow);
    for ko in 0..g.k {
        let gplane = &gout[ko * oh * ow..(ko + 1) * oh * ow];
        for ci in 0..g.c {
            let ibase = ci * g.h * g.w;
            for ti in 0..g.kh {
                let (ylo, yhi) = g.valid_range(ti, g.h, oh);
                for tj in 0..g.kw {
                    let (xlo, xhi) = g.valid_range(tj, g.w, ow);
                    if xlo >= xhi {
                        continue;
                    }
                    let kidx = ((ko * g.c + ci) * g.kh + ti) * g.kw + tj;
                    let wv = ker[kidx];
                    let mut kacc = 0.0;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ti - g.pad;
                        let grow = &gplane[oy * ow + xlo..oy * ow + xhi];
                        let ix0 = ibase + iy * g.w + xlo * g.stride + tj - g.pad;
                        if g.stride == 1 {
                            let irow = &inp[ix0..ix0 + grow.len()];
                            if gker.is_some() {
                                kacc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if let Some(gi) = gin.as_mut() {
                                for (d, gv) in gi[ix0..ix0 + grow.len()].iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            }
                        } else {
                            for (n, gv) in grow.iter().enumerate() {
                                let ii = ix0 + n * g.stride;
                                kacc += gv * inp[ii];
                                if let Some(gi) = gin.as_mut() {
                                    gi[ii] += wv * gv;
                                }
                            }
                        }
                    }
                    if let Some(gk) = gker.as_mut() {
                        gk[kidx] += kacc;
                    }
                }
            }
        }
    }
    (gin, gker)
}

// ----------------------------------------------------------------------
// bilinear taps

struct BilinearTap {
    x0: isize,
    y0: isize,
    wx: f64,
    wy: f64,
    h: usize,
    w: usize,
    in_range: bool,
}

impl BilinearTap {
    fn new(x: f64, y: f64, h: usize, w: usize) -> Self {
        let xf = x.floor();
        let yf = y.floor();
        Self {
            x0: xf as isize,
            y0: yf as isize,
            wx: x - xf,
            wy: y - yf,
            h,
            w,
            in_range: x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64,
        }
    }

    fn at(&self, plane: &[f64], stride: usize, dy: isize, dx: isize) -> f64 {
        let (y, x) = (self.y0 + dy, self.x0 + dx);
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            0.0
        } else {
            plane[y as usize * stride + x as usize]
        }
    }

    fn sample(&self, plane: &[f64], stride: usize) -> f64 {
        let v00 = self.at(plane, stride, 0, 0);
        let v01 = self.at(plane, stride, 0, 1);
        let v10 = self.at(plane, stride, 1, 0);
        let v11 = self.at(plane, stride, 1, 1);
        (1.0 - self.wy) * ((1.0 - self.wx) * v00 + self.wx * v01) + self.wy * ((1.0 - self.wx) * v10 + self.wx * v11)
    }

    fn scatter(&self, plane: &mut [f64], stride: usize, g: f64) {
        let taps = [
            (0, 0, (1.0 - self.wy) * (1.0 - self.wx)),
            (0, 1, (1.0 - self.wy) * self.wx),
            (1, 0, self.wy * (1.0 - self.wx)),
            (1, 1, self.wy * self.wx),
        ];
        for (dy, dx, wgt) in taps {
            let (y, x) = (self.y0 + dy, self.x0 + dx);
            if y >= 0 && x >= 0 && y < self.h as isize && x < self.w as isize {
                plane[y as usize * stride + x as usize] += g * wgt;
            }
        }
    }

    fn coord_grad(&self, plane: &[f64], stride: usize) -> (f64, f64) {
        let v00 = self.at(plane, stride, 0, 0);
        let v01 = self.at(plane, stride, 0, 1);
        let v10 = self.at(plane, stride, 1, 0);
        let v11 = self.at(plane, stride, 1, 1);
        let dx = (1.0 - self.wy) * (v01 - v00) + self.wy * (v11 - v10);
        let dy = (1.0 - self.wx) * (v10 - v00) + self.wx * (v11 - v01);
        (dx, dy)
    }
}

// ----------------------------------------------------------------------
// reflection-padded box filter

fn reflect_table(n: usize, window: usize) -> Vec<usize> {
    let p = (window / 2) as isize;
    (-(p)..(n as isize + p)).map(|i| reflect(i, n)).collect()
}

fn box_reflect(x: &[f64], c: usize, h: usize, w: usize, window: usize) -> Vec<f64> {
    let rx = reflect_table(w, window);
    let ry = reflect_table(h, window);
    let inv = 1.0 / window as f64;
    let mut tmp = vec![0.0; c * h * w];
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            let row = &x[base + y * w..base + (y + 1) * w];
            for xx in 0..w {
                let s: f64 = rx[xx..xx + window].iter().map(|&i| row[i]).sum();
                tmp[base + y * w + xx] = s * inv;
            }
        }
        for y in 0..h {
            for &ys in &ry[y..y + window] {
                let src = &tmp[base + ys * w..base + (ys + 1) * w];
                for (o, s) in out[base + y * w..base + (y + 1) * w].iter_mut().zip(src) {
                    *o += s;
                }
            }
            for o in &mut out[base + y * w..base + (y + 1) * w] {
                *o *= inv;
            }
        }
    }
    out
}

fn box_reflect_adjoint(g: &[f64], c: usize, h: usize, w: usize, window: usize) -> Vec<f64> {
    let rx = reflect_table(w, window);
    let ry = reflect_table(h, window);
    let inv = 1.0 / window as f64;
    let mut gtmp = vec![0.0; c * h * w];
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for &ys in &ry[y..y + window] {
                for xx in 0..w {
                    gtmp[base + ys * w + xx] += g[base + y * w + xx] * inv;
                }
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let gv = gtmp[base + y * w + xx] * inv;
                for &i in &rx[xx..xx + window] {
                    gx[base + y * w + i] += gv;
                }
            }
        }
    }
    gx
}
