//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! The tape is rebuilt per forward pass (define-by-run). Every operation
//! appends one node holding the forward value; [`Tape::backward`] walks the
//! nodes in exact reverse append order and accumulates gradients into the
//! `requires_grad` leaves. Recurrent unrolling is plain repeated application
//! of ops on shared parameter leaves, so weight-sharing gradients come out
//! of the accumulation for free.

use crate::error::{Error, Result};
use crate::kernels as k;
use crate::tensor::{Scalar, Tensor};
use rand_chacha::ChaCha8Rng;

/// Handle to a node on a tape. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var),
    Abs(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, T),
    /// Softmax across axis 1 (channel axis).
    SoftmaxCh(Var),
    /// Select one channel on axis 1, dropping the axis.
    SelectCh(Var, usize),
    Sum(Var),
    Mean(Var),
    Matmul(Var, Var),
    /// `[r,c] + [c]` broadcast over rows.
    AddRow(Var, Var),
    Reshape(Var),
    /// Concatenate `[r, c_i]` blocks along axis 1.
    ConcatCols(Vec<Var>),
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        dims: k::Conv2dDims,
    },
    Conv3d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        dims: k::Conv3dDims,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<u32>,
    },
    DepthToSpace {
        x: Var,
        k: usize,
    },
    SpaceToDepth {
        x: Var,
        k: usize,
    },
    Upsample3d {
        x: Var,
        k: usize,
    },
    /// Straight-through binarizer: forward value is the sampled (or sign)
    /// code; backward passes the upstream gradient through unchanged.
    Binarize(Var),
    /// Mean binary cross-entropy of probabilities against a constant target.
    BceMean {
        p: Var,
        target: Vec<T>,
        eps: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Persistent accumulated gradient; populated on leaves by `backward`.
    grad: Option<Tensor<T>>,
}

/// Dynamic computation tape.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    parallel: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), parallel: true }
    }

    /// Force serial kernels (used by the benchmark harness).
    pub fn serial() -> Self {
        Tape { nodes: Vec::new(), parallel: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf (populated by `backward`).
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
    }

    // -- leaves ------------------------------------------------------------

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    // -- elementwise -------------------------------------------------------

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let t = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let t = self.nodes[a.0].value.map(|v| -v);
        let rg = self.req(a);
        self.push(t, Op::Neg(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.nodes[a.0].value.map(|v| v * c);
        let rg = self.req(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let t = self.nodes[a.0].value.map(|v| v + c);
        let rg = self.req(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    /// Affine map `a*x + b`, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: Var, a: T, b: T) -> Var {
        let s = self.scale(x, a);
        self.add_scalar(s, b)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.nodes[a.0].value.map(|v| v.abs());
        let rg = self.req(a);
        self.push(t, Op::Abs(a), rg)
    }

    // -- activations ---------------------------------------------------------

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = T::one();
        let t = self.nodes[a.0].value.map(|v| one / (one + (-v).exp()));
        let rg = self.req(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.nodes[a.0].value.map(|v| v.tanh());
        let rg = self.req(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Var {
        let t = self.nodes[a.0].value.map(|v| if v > T::zero() { v } else { v * alpha });
        let rg = self.req(a);
        self.push(t, Op::LeakyRelu(a, alpha), rg)
    }

    /// Softmax across axis 1. Used with two channels for voxel occupancy:
    /// outputs per position are in (0,1) and sum to 1.
    pub fn softmax_channels(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(Error::config("softmax", format!("needs a channel axis, got {shape:?}")));
        }
        let (b, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let x = self.nodes[a.0].value.data();
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..b {
            for pos in 0..inner {
                let base = bi * c * inner + pos;
                let mut mx = x[base];
                for ch in 1..c {
                    mx = mx.max(x[base + ch * inner]);
                }
                let mut denom = T::zero();
                for ch in 0..c {
                    denom = denom + (x[base + ch * inner] - mx).exp();
                }
                for ch in 0..c {
                    out[base + ch * inner] = (x[base + ch * inner] - mx).exp() / denom;
                }
            }
        }
        let t = Tensor::from_vec(shape, out)?;
        let rg = self.req(a);
        Ok(self.push(t, Op::SoftmaxCh(a), rg))
    }

    /// Select channel `c` on axis 1, dropping that axis.
    pub fn select_channel(&mut self, a: Var, ch: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 || ch >= shape[1] {
            return Err(Error::config(
                "select_channel",
                format!("channel {ch} out of range for {shape:?}"),
            ));
        }
        let (b, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let x = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(b * inner);
        for bi in 0..b {
            let base = (bi * c + ch) * inner;
            out.extend_from_slice(&x[base..base + inner]);
        }
        let mut new_shape = vec![b];
        new_shape.extend_from_slice(&shape[2..]);
        let t = Tensor::from_vec(new_shape, out)?;
        let rg = self.req(a);
        Ok(self.push(t, Op::SelectCh(a, ch), rg))
    }

    // -- reductions ----------------------------------------------------------

    /// Sum of all elements -> scalar (shape []). Accumulates in f64.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().map(|v| v.as_f64()).sum();
        let rg = self.req(a);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.numel();
        let s: f64 = self.nodes[a.0].value.data().iter().map(|v| v.as_f64()).sum();
        let rg = self.req(a);
        self.push(Tensor::scalar(T::from_f64(s / n as f64)), Op::Mean(a), rg)
    }

    /// Mean binary cross-entropy: probabilities clamped to [eps, 1-eps].
    pub fn bce_mean(&mut self, p: Var, target: &Tensor<T>, eps: T) -> Result<Var> {
        if self.shape(p) != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "bce_mean",
                lhs: self.shape(p).to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = target.numel() as f64;
        let e = eps.as_f64();
        let mut acc = 0.0f64;
        for (&pv, &tv) in self.nodes[p.0].value.data().iter().zip(target.data()) {
            let pc = pv.as_f64().clamp(e, 1.0 - e);
            let t = tv.as_f64();
            acc -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        let rg = self.req(p);
        Ok(self.push(
            Tensor::scalar(T::from_f64(acc / n)),
            Op::BceMean { p, target: target.data().to_vec(), eps },
            rg,
        ))
    }

    // -- linear algebra ------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, kk, n) = (sa[0], sa[1], sb[1]);
        let data = k::matmul(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            kk,
            n,
            self.parallel,
        );
        let t = Tensor::from_vec(vec![m, n], data)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(t, Op::Matmul(a, b), rg))
    }

    /// `[r,c] + [c]`: broadcast a row vector (bias) over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(bias).to_vec();
        if sa.len() != 2 || sb != vec![sa[1]] {
            return Err(Error::ShapeMismatch { op: "add_row", lhs: sa, rhs: sb });
        }
        let (r, c) = (sa[0], sa[1]);
        let x = self.nodes[a.0].value.data();
        let bv = self.nodes[bias.0].value.data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(x[i * c + j] + bv[j]);
            }
        }
        let t = Tensor::from_vec(vec![r, c], out)?;
        let rg = self.req(a) || self.req(bias);
        Ok(self.push(t, Op::AddRow(a, bias), rg))
    }

    // -- shape ops -----------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.nodes[a.0].value.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let t = Tensor::from_vec(shape, self.nodes[a.0].value.data().to_vec())?;
        let rg = self.req(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Concatenate 2D blocks `[r, c_i]` along axis 1.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::config("concat_cols", "empty input list"));
        }
        let r = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                let d = self.nodes[p.0].value.data();
                out.extend_from_slice(&d[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::from_vec(vec![r, total], out)?;
        let rg = parts.iter().any(|&p| self.req(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    // -- structured ops --------------------------------------------------------

    /// 2D cross-correlation with zero padding. Output extents must divide
    /// exactly: `(H + 2p - kh) % stride == 0`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::ShapeMismatch { op: "conv2d", lhs: sx, rhs: sw });
        }
        if stride == 0 {
            return Err(Error::config("conv2d", "stride must be >= 1"));
        }
        if let Some(b) = bias {
            let sb = self.shape(b);
            if sb != [sw[0]] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: sw,
                    rhs: sb.to_vec(),
                });
            }
        }
        let oh = k::conv_out_extent(sx[2], sw[2], stride, pad).ok_or_else(|| {
            Error::config(
                "conv2d",
                format!("non-integral output: input {}x{}, kernel {}x{}, stride {stride}, pad {pad}", sx[2], sx[3], sw[2], sw[3]),
            )
        })?;
        let ow = k::conv_out_extent(sx[3], sw[3], stride, pad).ok_or_else(|| {
            Error::config(
                "conv2d",
                format!("non-integral output: input {}x{}, kernel {}x{}, stride {stride}, pad {pad}", sx[2], sx[3], sw[2], sw[3]),
            )
        })?;
        let dims = k::Conv2dDims {
            batch: sx[0],
            c_in: sx[1],
            h: sx[2],
            w: sx[3],
            c_out: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
            oh,
            ow,
        };
        let data = k::conv2d_forward(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            bias.map(|b| self.nodes[b.0].value.data()),
            dims,
            self.parallel,
        );
        let t = Tensor::from_vec(vec![dims.batch, dims.c_out, oh, ow], data)?;
        let rg =
            self.req(x) || self.req(w) || bias.map(|b| self.req(b)).unwrap_or(false);
        Ok(self.push(t, Op::Conv2d { x, w, bias, dims }, rg))
    }

    /// 3D cross-correlation, same conventions as `conv2d`.
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 5 || sw.len() != 5 || sx[1] != sw[1] {
            return Err(Error::ShapeMismatch { op: "conv3d", lhs: sx, rhs: sw });
        }
        if stride == 0 {
            return Err(Error::config("conv3d", "stride must be >= 1"));
        }
        if let Some(b) = bias {
            let sb = self.shape(b);
            if sb != [sw[0]] {
                return Err(Error::ShapeMismatch {
                    op: "conv3d bias",
                    lhs: sw,
                    rhs: sb.to_vec(),
                });
            }
        }
        let od = k::conv_out_extent(sx[2], sw[2], stride, pad);
        let oh = k::conv_out_extent(sx[3], sw[3], stride, pad);
        let ow = k::conv_out_extent(sx[4], sw[4], stride, pad);
        let (od, oh, ow) = match (od, oh, ow) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::config(
                    "conv3d",
                    format!("non-integral output for input {sx:?}, kernel {sw:?}, stride {stride}, pad {pad}"),
                ))
            }
        };
        let dims = k::Conv3dDims {
            batch: sx[0],
            c_in: sx[1],
            d: sx[2],
            h: sx[3],
            w: sx[4],
            c_out: sw[0],
            kd: sw[2],
            kh: sw[3],
            kw: sw[4],
            stride,
            pad,
            od,
            oh,
            ow,
        };
        let data = k::conv3d_forward(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            bias.map(|b| self.nodes[b.0].value.data()),
            dims,
            self.parallel,
        );
        let t = Tensor::from_vec(vec![dims.batch, dims.c_out, od, oh, ow], data)?;
        let rg =
            self.req(x) || self.req(w) || bias.map(|b| self.req(b)).unwrap_or(false);
        Ok(self.push(t, Op::Conv3d { x, w, bias, dims }, rg))
    }

    /// Max-pool with window `k` and stride `stride`. Gradient routes to the
    /// argmax element only (first in row-major order on ties).
    pub fn maxpool2d(&mut self, x: Var, kk: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch { op: "maxpool2d", lhs: s, rhs: vec![] });
        }
        let (h, w) = (s[2], s[3]);
        if stride == 0 || h % stride != 0 || w % stride != 0 || (h - kk) % stride != 0 || (w - kk) % stride != 0 || kk > h || kk > w {
            return Err(Error::config(
                "maxpool2d",
                format!("extents {h}x{w} not divisible for window {kk}, stride {stride}"),
            ));
        }
        let (data, argmax) = k::maxpool2d_forward(
            self.nodes[x.0].value.data(),
            s[0] * s[1],
            h,
            w,
            kk,
            stride,
        );
        let (oh, ow) = ((h - kk) / stride + 1, (w - kk) / stride + 1);
        let t = Tensor::from_vec(vec![s[0], s[1], oh, ow], data)?;
        let rg = self.req(x);
        Ok(self.push(t, Op::MaxPool2d { x, argmax }, rg))
    }

    /// Pixel shuffle: `[B, C*k^2, H, W] -> [B, C, kH, kW]`, pure permutation.
    pub fn depth_to_space(&mut self, x: Var, kk: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch { op: "depth_to_space", lhs: s, rhs: vec![] });
        }
        if s[1] % (kk * kk) != 0 {
            return Err(Error::config(
                "depth_to_space",
                format!("channels {} not divisible by {}^2", s[1], kk),
            ));
        }
        let data =
            k::depth_to_space_forward(self.nodes[x.0].value.data(), s[0], s[1], s[2], s[3], kk);
        let t = Tensor::from_vec(vec![s[0], s[1] / (kk * kk), s[2] * kk, s[3] * kk], data)?;
        let rg = self.req(x);
        Ok(self.push(t, Op::DepthToSpace { x, k: kk }, rg))
    }

    /// Inverse of `depth_to_space`.
    pub fn space_to_depth(&mut self, x: Var, kk: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch { op: "space_to_depth", lhs: s, rhs: vec![] });
        }
        if s[2] % kk != 0 || s[3] % kk != 0 {
            return Err(Error::config(
                "space_to_depth",
                format!("extents {}x{} not divisible by {}", s[2], s[3], kk),
            ));
        }
        let data =
            k::space_to_depth_forward(self.nodes[x.0].value.data(), s[0], s[1], s[2], s[3], kk);
        let t = Tensor::from_vec(vec![s[0], s[1] * kk * kk, s[2] / kk, s[3] / kk], data)?;
        let rg = self.req(x);
        Ok(self.push(t, Op::SpaceToDepth { x, k: kk }, rg))
    }

    /// Nearest-neighbor upsampling of a 5D volume by factor `k`.
    pub fn upsample3d(&mut self, x: Var, kk: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 5 {
            return Err(Error::ShapeMismatch { op: "upsample3d", lhs: s, rhs: vec![] });
        }
        let data =
            k::upsample3d_forward(self.nodes[x.0].value.data(), s[0] * s[1], s[2], s[3], s[4], kk);
        let t = Tensor::from_vec(
            vec![s[0], s[1], s[2] * kk, s[3] * kk, s[4] * kk],
            data,
        )?;
        let rg = self.req(x);
        Ok(self.push(t, Op::Upsample3d { x, k: kk }, rg))
    }

    // -- binarizer -------------------------------------------------------------

    fn check_binarize_domain(&self, x: Var) -> Result<()> {
        for (i, v) in self.nodes[x.0].value.data().iter().enumerate() {
            let f = v.as_f64();
            if f < -1.0 - 1e-6 || f > 1.0 + 1e-6 {
                return Err(Error::Domain { index: i, value: f });
            }
        }
        Ok(())
    }

    /// Stochastic binarization: each element is +1 with probability
    /// `(1+x)/2` else -1, consuming RNG draws in row-major order. The
    /// backward pass is the straight-through identity.
    pub fn binarize_train(&mut self, x: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
        use rand::Rng;
        self.check_binarize_domain(x)?;
        let data: Vec<T> = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|v| {
                let p_plus = (1.0 + v.as_f64()) / 2.0;
                let u: f64 = rng.gen::<f64>();
                if u < p_plus {
                    T::one()
                } else {
                    -T::one()
                }
            })
            .collect();
        let t = Tensor::from_vec(self.shape(x).to_vec(), data)?;
        let rg = self.req(x);
        Ok(self.push(t, Op::Binarize(x), rg))
    }

    /// Deterministic binarization by sign; the tie at 0 maps to +1.
    pub fn binarize_infer(&mut self, x: Var) -> Result<Var> {
        self.check_binarize_domain(x)?;
        let data: Vec<T> = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|v| if *v >= T::zero() { T::one() } else { -T::one() })
            .collect();
        let t = Tensor::from_vec(self.shape(x).to_vec(), data)?;
        let rg = self.req(x);
        Ok(self.push(t, Op::Binarize(x), rg))
    }

    // -- backward ----------------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients accumulate into the
    /// `requires_grad` leaves' persistent `grad` buffers; repeated calls
    /// keep accumulating until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NonScalarLoss { shape: self.shape(loss).to_vec() });
        }
        // Transient per-node flow buffers for this sweep.
        let mut flow: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        flow[loss.0] = Some(vec![T::one()]);

        macro_rules! acc {
            ($flow:expr, $self:expr, $var:expr, $grad:expr) => {{
                if $self.nodes[$var.0].requires_grad {
                    let slot = &mut $flow[$var.0];
                    match slot {
                        Some(buf) => {
                            for (d, g) in buf.iter_mut().zip($grad.iter()) {
                                *d = *d + *g;
                            }
                        }
                        None => *slot = Some($grad),
                    }
                }
            }};
        }

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let dy = match flow[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {
                    // Accumulate into the persistent leaf gradient.
                    let shape = self.nodes[i].value.shape().to_vec();
                    let g = self.nodes[i]
                        .grad
                        .get_or_insert_with(|| Tensor::zeros(shape));
                    for (d, s) in g.data_mut().iter_mut().zip(dy.iter()) {
                        *d = *d + *s;
                    }
                    continue;
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    acc!(flow, self, a, dy.clone());
                    acc!(flow, self, b, dy);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    acc!(flow, self, a, dy.clone());
                    let gneg: Vec<T> = dy.iter().map(|&g| -g).collect();
                    acc!(flow, self, b, gneg);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da: Vec<T> = dy
                        .iter()
                        .zip(self.nodes[b.0].value.data())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    let db: Vec<T> = dy
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    acc!(flow, self, a, da);
                    acc!(flow, self, b, db);
                }
                Op::Neg(a) => {
                    let a = *a;
                    let g: Vec<T> = dy.iter().map(|&g| -g).collect();
                    acc!(flow, self, a, g);
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    let g: Vec<T> = dy.iter().map(|&g| g * c).collect();
                    acc!(flow, self, a, g);
                }
                Op::AddScalar(a) => {
                    let a = *a;
                    acc!(flow, self, a, dy);
                }
                Op::Abs(a) => {
                    let a = *a;
                    let g: Vec<T> = dy
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(&g, &v)| if v >= T::zero() { g } else { -g })
                        .collect();
                    acc!(flow, self, a, g);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let g: Vec<T> = dy
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(&g, &y)| g * y * (T::one() - y))
                        .collect();
                    acc!(flow, self, a, g);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let g: Vec<T> = dy
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(&g, &y)| g * (T::one() - y * y))
                        .collect();
                    acc!(flow, self, a, g);
                }
                Op::LeakyRelu(a, alpha) => {
                    let (a, alpha) = (*a, *alpha);
                    let g: Vec<T> = dy
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(&g, &v)| if v > T::zero() { g } else { g * alpha })
                        .collect();
                    acc!(flow, self, a, g);
                }
                Op::SoftmaxCh(a) => {
                    let a = *a;
                    let shape = self.nodes[i].value.shape();
                    let (b, c) = (shape[0], shape[1]);
                    let inner: usize = shape[2..].iter().product();
                    let y = self.nodes[i].value.data();
                    let mut g = vec![T::zero(); y.len()];
                    for bi in 0..b {
                        for pos in 0..inner {
                            let base = bi * c * inner + pos;
                            let mut dot = T::zero();
                            for ch in 0..c {
                                let idx = base + ch * inner;
                                dot = dot + dy[idx] * y[idx];
                            }
                            for ch in 0..c {
                                let idx = base + ch * inner;
                                g[idx] = y[idx] * (dy[idx] - dot);
                            }
                        }
                    }
                    acc!(flow, self, a, g);
                }
                Op::SelectCh(a, ch) => {
                    let (a, ch) = (*a, *ch);
                    let shape = self.nodes[a.0].value.shape();
                    let (b, c) = (shape[0], shape[1]);
                    let inner: usize = shape[2..].iter().product();
                    let mut g = vec![T::zero(); b * c * inner];
                    for bi in 0..b {
                        let dst = (bi * c + ch) * inner;
                        g[dst..dst + inner].copy_from_slice(&dy[bi * inner..(bi + 1) * inner]);
                    }
                    acc!(flow, self, a, g);
                }
                Op::Sum(a) => {
                    let a = *a;
                    let n = self.nodes[a.0].value.numel();
                    let g = vec![dy[0]; n];
                    acc!(flow, self, a, g);
                }
                Op::Mean(a) => {
                    let a = *a;
                    let n = self.nodes[a.0].value.numel();
                    let g = vec![dy[0] / T::from_f64(n as f64); n];
                    acc!(flow, self, a, g);
                }
                Op::BceMean { p, target, eps } => {
                    let p = *p;
                    let e = eps.as_f64();
                    let n = target.len() as f64;
                    let up = dy[0].as_f64();
                    let g: Vec<T> = self.nodes[p.0]
                        .value
                        .data()
                        .iter()
                        .zip(target.iter())
                        .map(|(&pv, &tv)| {
                            let pc = pv.as_f64().clamp(e, 1.0 - e);
                            let t = tv.as_f64();
                            T::from_f64(up * (-t / pc + (1.0 - t) / (1.0 - pc)) / n)
                        })
                        .collect();
                    acc!(flow, self, p, g);
                }
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let sa = self.nodes[a.0].value.shape().to_vec();
                    let sb = self.nodes[b.0].value.shape().to_vec();
                    let (m, kk, n) = (sa[0], sa[1], sb[1]);
                    // dA = dC * B^T ; dB = A^T * dC (computed as gathers)
                    if self.nodes[a.0].requires_grad {
                        let bv = self.nodes[b.0].value.data();
                        let mut da = vec![T::zero(); m * kk];
                        for ii in 0..m {
                            for p in 0..kk {
                                let mut acc = T::zero();
                                for j in 0..n {
                                    acc = acc + dy[ii * n + j] * bv[p * n + j];
                                }
                                da[ii * kk + p] = acc;
                            }
                        }
                        acc!(flow, self, a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let av = self.nodes[a.0].value.data();
                        let mut db = vec![T::zero(); kk * n];
                        for p in 0..kk {
                            for j in 0..n {
                                let mut acc = T::zero();
                                for ii in 0..m {
                                    acc = acc + av[ii * kk + p] * dy[ii * n + j];
                                }
                                db[p * n + j] = acc;
                            }
                        }
                        acc!(flow, self, b, db);
                    }
                }
                Op::AddRow(a, bias) => {
                    let (a, bias) = (*a, *bias);
                    let sa = self.nodes[a.0].value.shape().to_vec();
                    let (r, c) = (sa[0], sa[1]);
                    acc!(flow, self, a, dy.clone());
                    if self.nodes[bias.0].requires_grad {
                        let mut db = vec![T::zero(); c];
                        for ii in 0..r {
                            for j in 0..c {
                                db[j] = db[j] + dy[ii * c + j];
                            }
                        }
                        acc!(flow, self, bias, db);
                    }
                }
                Op::Reshape(a) => {
                    let a = *a;
                    acc!(flow, self, a, dy);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let r = self.nodes[i].value.shape()[0];
                    let total = self.nodes[i].value.shape()[1];
                    let mut offset = 0usize;
                    for p in parts {
                        let w = self.nodes[p.0].value.shape()[1];
                        if self.nodes[p.0].requires_grad {
                            let mut g = vec![T::zero(); r * w];
                            for ii in 0..r {
                                g[ii * w..(ii + 1) * w].copy_from_slice(
                                    &dy[ii * total + offset..ii * total + offset + w],
                                );
                            }
                            acc!(flow, self, p, g);
                        }
                        offset += w;
                    }
                }
                Op::Conv2d { x, w, bias, dims } => {
                    let (x, w, bias, dims) = (*x, *w, *bias, *dims);
                    if self.nodes[x.0].requires_grad {
                        let g = k::conv2d_backward_input(
                            &dy,
                            self.nodes[w.0].value.data(),
                            dims,
                            self.parallel,
                        );
                        acc!(flow, self, x, g);
                    }
                    if self.nodes[w.0].requires_grad {
                        let g = k::conv2d_backward_weight(
                            &dy,
                            self.nodes[x.0].value.data(),
                            dims,
                            self.parallel,
                        );
                        acc!(flow, self, w, g);
                    }
                    if let Some(b) = bias {
                        if self.nodes[b.0].requires_grad {
                            let g = k::conv2d_backward_bias(&dy, dims);
                            acc!(flow, self, b, g);
                        }
                    }
                }
                Op::Conv3d { x, w, bias, dims } => {
                    let (x, w, bias, dims) = (*x, *w, *bias, *dims);
                    if self.nodes[x.0].requires_grad {
                        let g = k::conv3d_backward_input(
                            &dy,
                            self.nodes[w.0].value.data(),
                            dims,
                            self.parallel,
                        );
                        acc!(flow, self, x, g);
                    }
                    if self.nodes[w.0].requires_grad {
                        let g = k::conv3d_backward_weight(
                            &dy,
                            self.nodes[x.0].value.data(),
                            dims,
                            self.parallel,
                        );
                        acc!(flow, self, w, g);
                    }
                    if let Some(b) = bias {
                        if self.nodes[b.0].requires_grad {
                            let g = k::conv3d_backward_bias(&dy, dims);
                            acc!(flow, self, b, g);
                        }
                    }
                }
                Op::MaxPool2d { x, argmax } => {
                    let x = *x;
                    let n = self.nodes[x.0].value.numel();
                    let mut g = vec![T::zero(); n];
                    for (j, &src) in argmax.iter().enumerate() {
                        g[src as usize] = g[src as usize] + dy[j];
                    }
                    acc!(flow, self, x, g);
                }
                Op::DepthToSpace { x, k: kk } => {
                    let (x, kk) = (*x, *kk);
                    let s = self.nodes[i].value.shape().to_vec();
                    // gradient is the inverse permutation
                    let g = k::space_to_depth_forward(&dy, s[0], s[1], s[2], s[3], kk);
                    acc!(flow, self, x, g);
                }
                Op::SpaceToDepth { x, k: kk } => {
                    let (x, kk) = (*x, *kk);
                    let s = self.nodes[i].value.shape().to_vec();
                    let g = k::depth_to_space_forward(&dy, s[0], s[1], s[2], s[3], kk);
                    acc!(flow, self, x, g);
                }
                Op::Upsample3d { x, k: kk } => {
                    let (x, kk) = (*x, *kk);
                    let s = self.nodes[x.0].value.shape().to_vec();
                    let g = k::upsample3d_backward(&dy, s[0] * s[1], s[2], s[3], s[4], kk);
                    acc!(flow, self, x, g);
                }
                Op::Binarize(x) => {
                    // Straight-through: upstream gradient passes unchanged.
                    let x = *x;
                    acc!(flow, self, x, dy);
                }
            }
        }
        Ok(())
    }
}
