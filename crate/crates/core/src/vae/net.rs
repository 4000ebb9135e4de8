//! Encoder/decoder architecture and its parameter layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Convolutional VAE geometry. Each encoder stage halves the image with a
/// stride-2 3x3 convolution and follows it with a residual block of two 3x3
/// convolutions; the decoder mirrors the stages with stride-2 transposed
/// convolutions and ends in one sigmoid channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeArch {
    pub image_size: usize,
    pub widths: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for VaeArch {
    fn default() -> Self {
        Self {
            image_size: 64,
            widths: vec![16, 32, 64, 128],
            latent_dim: 16,
        }
    }
}

/// Logvar is kept in this range.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

const ENC_PER_STAGE: usize = 6;

impl VaeArch {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.latent_dim == 0 {
            return Err(Error::Config(format!("bad VAE geometry {self:?}")));
        }
        let div = 1usize << self.widths.len();
        if self.image_size == 0 || self.image_size % div != 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by 2^{}",
                self.image_size,
                self.widths.len()
            )));
        }
        Ok(())
    }

    /// Side of the innermost feature map.
    pub fn bottleneck(&self) -> usize {
        self.image_size >> self.widths.len()
    }

    fn flat(&self) -> usize {
        let s = self.bottleneck();
        self.widths[self.widths.len() - 1] * s * s
    }

    /// Names and shapes of all parameters in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = 1;
        for (i, &w) in self.widths.iter().enumerate() {
            out.push((format!("enc.{i}.down.w"), vec![w, cin, 3, 3]));
            out.push((format!("enc.{i}.down.b"), vec![w]));
            out.push((format!("enc.{i}.res1.w"), vec![w, w, 3, 3]));
            out.push((format!("enc.{i}.res1.b"), vec![w]));
            out.push((format!("enc.{i}.res2.w"), vec![w, w, 3, 3]));
            out.push((format!("enc.{i}.res2.b"), vec![w]));
            cin = w;
        }
        let flat = self.flat();
        out.push(("enc.mu.w".into(), vec![self.latent_dim, flat]));
        out.push(("enc.mu.b".into(), vec![self.latent_dim]));
        out.push(("enc.logvar.w".into(), vec![self.latent_dim, flat]));
        out.push(("enc.logvar.b".into(), vec![self.latent_dim]));
        out.push(("dec.fc.w".into(), vec![flat, self.latent_dim]));
        out.push(("dec.fc.b".into(), vec![flat]));
        let n = self.widths.len();
        for i in 0..n {
            let cin = self.widths[n - 1 - i];
            let cout = if i + 1 < n { self.widths[n - 2 - i] } else { 1 };
            out.push((format!("dec.{i}.up.w"), vec![cin, cout, 4, 4]));
            out.push((format!("dec.{i}.up.b"), vec![cout]));
        }
        out
    }

    fn idx_head(&self) -> usize {
        self.widths.len() * ENC_PER_STAGE
    }

    fn idx_dec(&self) -> usize {
        self.idx_head() + 6
    }

    /// Number of encoder tensors (they come first in the layout).
    pub fn encoder_len(&self) -> usize {
        self.idx_head() + 4
    }
}

/// Named parameter tensors in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub arch: VaeArch,
    pub tensors: Vec<Tensor>,
}

impl VaeParams {
    /// He-style initialization. The second convolution of each residual
    /// block starts small so blocks begin close to the identity.
    pub fn init<R: Rng + ?Sized>(arch: &VaeArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let tensors = arch
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".b") {
                    return Tensor::zeros(&shape);
                }
                let std = if name.starts_with("enc.mu") || name.starts_with("enc.logvar") {
                    0.1 / (shape[1] as f64).sqrt()
                } else if name == "dec.fc.w" {
                    (2.0 / shape[1] as f64).sqrt()
                } else if name.contains(".up.") {
                    // Each output pixel of a k4 s2 transposed conv sums over
                    // cin * 2 * 2 inputs.
                    (2.0 / (shape[0] * 4) as f64).sqrt()
                } else {
                    let fan_in = shape[1] * shape[2] * shape[3];
                    let s = (2.0 / fan_in as f64).sqrt();
                    if name.contains(".res2.") {
                        0.1 * s
                    } else {
                        s
                    }
                };
                Tensor::randn(&shape, std, rng)
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            tensors,
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.arch.layout().into_iter().map(|(n, _)| n).collect()
    }

    /// Rebuilds from named tensors, checking names and shapes.
    pub fn from_named(arch: &VaeArch, named: Vec<(String, Tensor)>) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        if layout.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} VAE tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((want_name, want_shape), (name, t)) in layout.into_iter().zip(named) {
            if want_name != name || want_shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {:?} does not match layout entry {want_name} {want_shape:?}",
                    t.shape()
                )));
            }
            tensors.push(t);
        }
        Ok(Self {
            arch: arch.clone(),
            tensors,
        })
    }

    /// Puts every tensor on the graph, as parameters or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    pub fn round_to_f32(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            tensors: self.tensors.iter().map(Tensor::round_to_f32).collect(),
        }
    }
}

/// Encoder forward: `x: [N, 1, S, S]` to `(mu, logvar)`, each `[N, latent]`.
/// Logvar is clamped to `[LOGVAR_MIN, LOGVAR_MAX]`.
pub fn encode_graph(arch: &VaeArch, g: &mut Graph, p: &[Var], x: Var) -> (Var, Var) {
    let mut h = x;
    for i in 0..arch.widths.len() {
        let o = i * ENC_PER_STAGE;
        let d = g.conv2d(h, p[o], Some(p[o + 1]), 2, 1);
        let d = g.relu(d);
        let r = g.conv2d(d, p[o + 2], Some(p[o + 3]), 1, 1);
        let r = g.relu(r);
        let r = g.conv2d(r, p[o + 4], Some(p[o + 5]), 1, 1);
        let s = g.residual_add(d, r);
        h = g.relu(s);
    }
    let n = g.value(x).shape()[0];
    let flat = g.reshape(h, &[n, arch.flat()]);
    let hi = arch.idx_head();
    let mu = g.linear(flat, p[hi], Some(p[hi + 1]));
    let lv = g.linear(flat, p[hi + 2], Some(p[hi + 3]));
    let lv = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
    (mu, lv)
}

/// Decoder forward: `z: [N, latent]` to `[N, 1, S, S]` in (0, 1).
pub fn decode_graph(arch: &VaeArch, g: &mut Graph, p: &[Var], z: Var) -> Var {
    let di = arch.idx_dec();
    let n = g.value(z).shape()[0];
    let h = g.linear(z, p[di - 2], Some(p[di - 1]));
    let h = g.relu(h);
    let s = arch.bottleneck();
    let c = arch.widths[arch.widths.len() - 1];
    let mut h = g.reshape(h, &[n, c, s, s]);
    let stages = arch.widths.len();
    for i in 0..stages {
        let o = di + 2 * i;
        h = g.conv_transpose2d(h, p[o], Some(p[o + 1]), 2, 1);
        h = if i + 1 < stages { g.relu(h) } else { g.sigmoid(h) };
    }
    h
}

/// Reparameterized sample `mu + exp(logvar / 2) * eps` with `eps` given.
pub fn reparameterize_graph(g: &mut Graph, mu: Var, logvar: Var, eps: Tensor) -> Var {
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let e = g.constant(eps);
    let noise = g.mul(std, e);
    g.add(mu, noise)
}
