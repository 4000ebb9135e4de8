//! KL term, perceptual loss, β rule and the pre-training objective.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use super::net::{LOGVAR_MAX, LOGVAR_MIN};
use crate::tensor::{Graph, Tensor, Var};

/// `0.5 * sum_d (mu_d^2 + exp(lv_d) - lv_d - 1)`: KL from N(mu, diag(exp(lv)))
/// to the standard normal, for one code.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    assert_eq!(mu.len(), logvar.len(), "kl: length mismatch");
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

/// Batch-mean KL on the graph; `mu`, `logvar` are `[N, d]`.
pub fn kl_graph(g: &mut Graph, mu: Var, logvar: Var) -> Var {
    let n = g.value(mu).shape()[0] as f64;
    let m2 = g.square(mu);
    let e = g.exp(logvar);
    let t = g.add(m2, e);
    let t = g.sub(t, logvar);
    let t = g.add_scalar(t, -1.0);
    let s = g.sum(t);
    g.scale(s, 0.5 / n)
}

/// How feature-map differences are reduced within one layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptualReduction {
    /// Squared L2 norm of the difference (sum over all feature entries).
    #[default]
    Sum,
    /// Mean squared difference per layer.
    Mean,
}

/// Batch-mean perceptual loss between precomputed target features and the
/// features of `x_hat`.
pub fn perceptual_graph(
    g: &mut Graph,
    phi: &FeatureExtractor,
    target: &[Tensor],
    x_hat: Var,
    reduction: PerceptualReduction,
) -> Var {
    let n = g.value(x_hat).shape()[0] as f64;
    let feats = phi.forward_graph(g, x_hat);
    let mut total: Option<Var> = None;
    for (f, t) in feats.into_iter().zip(target) {
        let per_item = t.len() as f64 / n;
        let tv = g.constant(t.clone());
        let d = g.sub(f, tv);
        let sq = g.square(d);
        let s = g.sum(sq);
        let scale = match reduction {
            PerceptualReduction::Sum => 1.0 / n,
            PerceptualReduction::Mean => 1.0 / (n * per_item),
        };
        let layer = g.scale(s, scale);
        total = Some(match total {
            Some(acc) => g.add(acc, layer),
            None => layer,
        });
    }
    total.expect("feature extractor has at least one layer")
}

/// Perceptual loss per item of two `[N, 1, S, S]` batches.
pub fn perceptual_per_item(
    phi: &FeatureExtractor,
    a: &Tensor,
    b: &Tensor,
    reduction: PerceptualReduction,
) -> Vec<f64> {
    assert_eq!(a.shape(), b.shape(), "perceptual: shape mismatch");
    let n = a.shape()[0];
    let fa = phi.features(a);
    let fb = phi.features(b);
    let mut out = vec![0.0; n];
    for (x, y) in fa.iter().zip(&fb) {
        let per = x.len() / n;
        for (i, o) in out.iter_mut().enumerate() {
            let s: f64 = x.data()[i * per..(i + 1) * per]
                .iter()
                .zip(&y.data()[i * per..(i + 1) * per])
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            *o += match reduction {
                PerceptualReduction::Sum => s,
                PerceptualReduction::Mean => s / per as f64,
            };
        }
    }
    out
}

/// `(1 - beta) * perceptual + beta * kl`.
pub fn pretrain_loss(perceptual: f64, kl: f64, beta: f64) -> f64 {
    (1.0 - beta) * perceptual + beta * kl
}

/// The same combination on the graph; β is a constant.
pub fn pretrain_loss_graph(g: &mut Graph, perceptual: Var, kl: Var, beta: f64) -> Var {
    let a = g.scale(perceptual, 1.0 - beta);
    let b = g.scale(kl, beta);
    g.add(a, b)
}

/// The self-adjusting KL weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaState {
    pub beta: f64,
    pub lr: f64,
}

impl BetaState {
    pub fn new(beta: f64, lr: f64) -> Self {
        Self {
            beta: beta.clamp(0.0, 1.0),
            lr,
        }
    }

    /// `beta <- clamp(beta + lr * (mean_kl - mean_perceptual), 0, 1)`.
    pub fn update(self, mean_kl: f64, mean_perceptual: f64) -> Self {
        Self {
            beta: (self.beta + self.lr * (mean_kl - mean_perceptual)).clamp(0.0, 1.0),
            lr: self.lr,
        }
    }
}

/// Draws `z = mu + exp(logvar / 2) * eps` with `eps ~ N(0, I)`; logvar is
/// clamped to the encoder's range first.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], logvar: &[f64], rng: &mut R) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| {
            let e: f64 = StandardNormal.sample(rng);
            m + (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * e
        })
        .collect()
}

/// Standard-normal noise of the given shape.
pub fn gaussian_noise<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}
