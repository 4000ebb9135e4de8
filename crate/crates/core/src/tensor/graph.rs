//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is
//! a valid topological order. Shape mismatches are programming errors and
//! panic with the offending op; non-finite forward values are recorded and
//! surfaced through [`Graph::check_finite`].

use super::conv::{self, ConvGeom};
use super::gemm::{gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvT2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvT2d { .. } => "conv_transpose2d",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Square(..) => "square",
            Op::Clamp { .. } => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Reshape(..) => "reshape",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    first_nonfinite: Option<(usize, &'static str)>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.first_nonfinite.is_none() && !value.is_finite() {
            self.first_nonfinite = Some((id, op.name()));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Var(id)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Fails with the first op that produced a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_nonfinite {
            Some((node, op)) => Err(Error::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb);
        let out = zip_map(va, vb, |x, y| x + y);
        let ng = self.needs(&[a, b]);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb);
        let out = zip_map(va, vb, |x, y| x - y);
        let ng = self.needs(&[a, b]);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb);
        let out = zip_map(va, vb, |x, y| x * y);
        let ng = self.needs(&[a, b]);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let ng = self.needs(&[a]);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let ng = self.needs(&[a]);
        self.push(out, Op::AddScalar(a), ng)
    }

    /// Skip connection `a + b`; identical to [`Graph::add`].
    pub fn residual_add(&mut self, a: Var, b: Var) -> Var {
        self.add(a, b)
    }

    /// `[m, k] @ [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.shape().len() == 2 && vb.shape().len() == 2, "matmul expects matrices");
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        assert_eq!(k, vb.shape()[0], "matmul: inner dimension mismatch");
        let mut out = vec![0.0; m * n];
        gemm(1.0, MatRef::row_major(va.data(), m, k), MatRef::row_major(vb.data(), k, n), 0.0, &mut out);
        let ng = self.needs(&[a, b]);
        self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b), ng)
    }

    /// Affine map `x @ wᵀ + b` with `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vx.shape().len(), 2, "linear: input must be [N, in]");
        let (n, din) = (vx.shape()[0], vx.shape()[1]);
        assert_eq!(vw.shape(), &[vw.shape()[0], din], "linear: weight shape mismatch");
        let dout = vw.shape()[0];
        let mut out = vec![0.0; n * dout];
        gemm(
            1.0,
            MatRef::row_major(vx.data(), n, din),
            MatRef::row_major(vw.data(), dout, din).t(),
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let vb = self.value(b);
            assert_eq!(vb.shape(), &[dout], "linear: bias shape mismatch");
            for row in out.chunks_mut(dout) {
                for (o, bb) in row.iter_mut().zip(vb.data()) {
                    *o += bb;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.needs(&deps);
        self.push(Tensor::new(vec![n, dout], out), Op::Linear { x, w, b }, ng)
    }

    /// 2-D convolution, `x: [N, C_in, H, W]`, `w: [C_out, C_in, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vx.shape().len(), 4, "conv2d: input must be NCHW");
        assert_eq!(vw.shape().len(), 4, "conv2d: weight must be [C_out, C_in, k, k]");
        let (n, cin, h, wd) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let (cout, k) = (vw.shape()[0], vw.shape()[2]);
        assert_eq!(vw.shape()[1], cin, "conv2d: channel mismatch");
        assert_eq!(vw.shape()[3], k, "conv2d: kernel must be square");
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: kernel larger than input");
        let geom = ConvGeom { cin, h, w: wd, cout, k, stride, pad };
        let bias = b.map(|b| {
            let vb = self.value(b);
            assert_eq!(vb.shape(), &[cout], "conv2d: bias shape mismatch");
            vb.data()
        });
        let out = conv::conv2d_forward(vx.data(), &geom, vw.data(), bias);
        let shape = vec![n, cout, geom.ho(), geom.wo()];
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.needs(&deps);
        self.push(Tensor::new(shape, out), Op::Conv2d { x, w, b, geom }, ng)
    }

    /// Transposed convolution, `x: [N, C_in, H, W]`, `w: [C_in, C_out, k, k]`;
    /// output side is `(H - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vx.shape().len(), 4, "conv_transpose2d: input must be NCHW");
        let (n, cin, h, wd) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        assert_eq!(vw.shape()[0], cin, "conv_transpose2d: channel mismatch");
        let (cout, k) = (vw.shape()[1], vw.shape()[2]);
        let ho = (h - 1) * stride + k - 2 * pad;
        let wo = (wd - 1) * stride + k - 2 * pad;
        // Geometry of the adjoint forward convolution.
        let geom = ConvGeom { cin: cout, h: ho, w: wo, cout: cin, k, stride, pad };
        debug_assert_eq!((geom.ho(), geom.wo()), (h, wd));
        let bias = b.map(|b| {
            let vb = self.value(b);
            assert_eq!(vb.shape(), &[cout], "conv_transpose2d: bias shape mismatch");
            vb.data()
        });
        let out = conv::conv_transpose2d_forward(vx.data(), &geom, vw.data(), bias);
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.needs(&deps);
        self.push(Tensor::new(vec![n, cout, ho, wo], out), Op::ConvT2d { x, w, b, geom }, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(&[a]);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(&[a]);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.needs(&[a]);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.needs(&[a]);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let ng = self.needs(&[a]);
        self.push(out, Op::Ln(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let ng = self.needs(&[a]);
        self.push(out, Op::Square(a), ng)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.needs(&[a]);
        self.push(out, Op::Clamp { x: a, lo, hi }, ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshape(shape);
        let ng = self.needs(&[a]);
        self.push(out, Op::Reshape(a), ng)
    }

    /// Gradients of the scalar `loss` with respect to all parameter leaves.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward: loss must be a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        // Keep only leaf gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                grads[i] = None;
            }
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match self.nodes[i].op.clone() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                self.accumulate(grads, a, zip_map(g, vb, |x, y| x * y));
                self.accumulate(grads, b, zip_map(g, va, |x, y| x * y));
            }
            Op::Scale(a, c) => self.accumulate(grads, a, g.map(|x| x * c)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.value(a).shape().to_vec();
                self.accumulate(grads, a, g.clone().reshape(&shape));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let gm = MatRef::row_major(g.data(), m, n);
                if self.nodes[a.0].needs_grad {
                    let mut ga = vec![0.0; m * k];
                    gemm(1.0, gm, MatRef::row_major(vb.data(), k, n).t(), 0.0, &mut ga);
                    self.accumulate(grads, a, Tensor::new(vec![m, k], ga));
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = vec![0.0; k * n];
                    gemm(1.0, MatRef::row_major(va.data(), m, k).t(), gm, 0.0, &mut gb);
                    self.accumulate(grads, b, Tensor::new(vec![k, n], gb));
                }
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(x), self.value(w));
                let (n, din, dout) = (vx.shape()[0], vx.shape()[1], vw.shape()[0]);
                let gm = MatRef::row_major(g.data(), n, dout);
                if self.nodes[x.0].needs_grad {
                    let mut gx = vec![0.0; n * din];
                    gemm(1.0, gm, MatRef::row_major(vw.data(), dout, din), 0.0, &mut gx);
                    self.accumulate(grads, x, Tensor::new(vec![n, din], gx));
                }
                if self.nodes[w.0].needs_grad {
                    let mut gw = vec![0.0; dout * din];
                    gemm(1.0, gm.t(), MatRef::row_major(vx.data(), n, din), 0.0, &mut gw);
                    self.accumulate(grads, w, Tensor::new(vec![dout, din], gw));
                }
                if let Some(b) = b {
                    let mut gb = vec![0.0; dout];
                    for row in g.data().chunks(dout) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, b, Tensor::new(vec![dout], gb));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (vx, vw) = (self.value(x), self.value(w));
                let (dx, dw, db) =
                    conv::conv2d_backward(vx.data(), &geom, vw.data(), g.data(), self.nodes[x.0].needs_grad);
                if let Some(dx) = dx {
                    self.accumulate(grads, x, Tensor::new(vx.shape().to_vec(), dx));
                }
                self.accumulate(grads, w, Tensor::new(vw.shape().to_vec(), dw));
                if let Some(b) = b {
                    self.accumulate(grads, b, Tensor::new(vec![geom.cout], db));
                }
            }
            Op::ConvT2d { x, w, b, geom } => {
                let (vx, vw) = (self.value(x), self.value(w));
                let (dx, dw, db) = conv::conv_transpose2d_backward(
                    vx.data(),
                    &geom,
                    vw.data(),
                    g.data(),
                    self.nodes[x.0].needs_grad,
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, x, Tensor::new(vx.shape().to_vec(), dx));
                }
                self.accumulate(grads, w, Tensor::new(vw.shape().to_vec(), dw));
                if let Some(b) = b {
                    self.accumulate(grads, b, Tensor::new(vec![geom.cin], db));
                }
            }
            Op::Relu(a) => {
                let va = self.value(a);
                self.accumulate(grads, a, zip_map(g, va, |d, x| if x > 0.0 { d } else { 0.0 }));
            }
            Op::Sigmoid(a) => self.accumulate(grads, a, zip_map(g, out, |d, y| d * y * (1.0 - y))),
            Op::Tanh(a) => self.accumulate(grads, a, zip_map(g, out, |d, y| d * (1.0 - y * y))),
            Op::Exp(a) => self.accumulate(grads, a, zip_map(g, out, |d, y| d * y)),
            Op::Ln(a) => {
                let va = self.value(a);
                self.accumulate(grads, a, zip_map(g, va, |d, x| d / x));
            }
            Op::Square(a) => {
                let va = self.value(a);
                self.accumulate(grads, a, zip_map(g, va, |d, x| 2.0 * x * d));
            }
            Op::Clamp { x, lo, hi } => {
                let vx = self.value(x);
                self.accumulate(
                    grads,
                    x,
                    zip_map(g, vx, |d, v| if (lo..=hi).contains(&v) { d } else { 0.0 }),
                );
            }
            Op::Sum(a) => {
                let d = g.item();
                self.accumulate(grads, a, Tensor::full(self.value(a).shape(), d));
            }
            Op::Mean(a) => {
                let va = self.value(a);
                let d = g.item() / va.len() as f64;
                self.accumulate(grads, a, Tensor::full(va.shape(), d));
            }
        }
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
