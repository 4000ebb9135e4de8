//! Frozen feature extractor for the perceptual loss.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::read_tensor_file;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use crate::util::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

/// A pyramid of convolutions with fixed weights. Every stage's output is a
/// layer of the perceptual loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    /// `(weight [C_out, C_in, k, k], bias [C_out])` per stage.
    pub layers: Vec<(Tensor, Tensor)>,
    pub stride: usize,
    pub activation: Activation,
}

/// Source of the extractor weights, recorded in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureSpec {
    /// Seeded random 3x3 stride-2 tanh pyramid.
    Random { seed: u64, channels: Vec<usize> },
    /// Weights read from a tensor file (see [`FeatureExtractor::load`]).
    File { path: String },
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec::Random {
            seed: 0x5eed,
            channels: vec![8, 16, 32],
        }
    }
}

impl FeatureExtractor {
    pub fn from_spec(spec: &FeatureSpec) -> Result<Self> {
        match spec {
            FeatureSpec::Random { seed, channels } => Self::random(*seed, channels),
            FeatureSpec::File { path } => Self::load(Path::new(path)),
        }
    }

    pub fn random(seed: u64, channels: &[usize]) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) {
            return Err(Error::Config(format!("bad feature channels {channels:?}")));
        }
        let mut rng = substream(seed, 0);
        let mut cin = 1;
        let layers = channels
            .iter()
            .map(|&c| {
                let std = (1.0 / (cin * 9) as f64).sqrt();
                let w = Tensor::randn(&[c, cin, 3, 3], std, &mut rng);
                cin = c;
                (w, Tensor::zeros(&[c]))
            })
            .collect();
        Ok(Self {
            layers,
            stride: 2,
            activation: Activation::Tanh,
        })
    }

    /// One 1x1 unit-weight stage without nonlinearity: features are pixels.
    pub fn identity() -> Self {
        Self {
            layers: vec![(Tensor::new(vec![1, 1, 1, 1], vec![1.0]), Tensor::zeros(&[1]))],
            stride: 1,
            activation: Activation::Identity,
        }
    }

    /// Reads external weights from a tensor file with entries `phi.<i>.w`
    /// and `phi.<i>.b` (stride 2, ReLU). A three-channel first layer is
    /// folded to one channel: the gray image is treated as replicated across
    /// RGB, so summing the kernel over input channels is exact.
    pub fn load(path: &Path) -> Result<Self> {
        let named = read_tensor_file(path)?;
        let mut layers = Vec::new();
        for i in 0.. {
            let w = named.iter().find(|(n, _)| *n == format!("phi.{i}.w"));
            let b = named.iter().find(|(n, _)| *n == format!("phi.{i}.b"));
            match (w, b) {
                (Some((_, w)), Some((_, b))) => {
                    if w.shape().len() != 4 || b.shape() != [w.shape()[0]] {
                        return Err(Error::Checkpoint(format!("phi.{i}: bad shapes")));
                    }
                    layers.push((w.clone(), b.clone()));
                }
                _ => break,
            }
        }
        if layers.is_empty() {
            return Err(Error::Checkpoint(format!("{}: no phi.<i>.w/b tensors", path.display())));
        }
        let first = &layers[0].0;
        if first.shape()[1] == 3 {
            let s = first.shape().to_vec();
            let mut folded = vec![0.0; s[0] * s[2] * s[3]];
            for o in 0..s[0] {
                for c in 0..3 {
                    for k in 0..s[2] * s[3] {
                        folded[o * s[2] * s[3] + k] += first.data()[(o * 3 + c) * s[2] * s[3] + k];
                    }
                }
            }
            layers[0].0 = Tensor::new(vec![s[0], 1, s[2], s[3]], folded);
        }
        let mut cin = 1;
        for (i, (w, _)) in layers.iter().enumerate() {
            if w.shape()[1] != cin {
                return Err(Error::Checkpoint(format!("phi.{i}: expects {} input channels, previous layer gives {cin}", w.shape()[1])));
            }
            cin = w.shape()[0];
        }
        Ok(Self {
            layers,
            stride: 2,
            activation: Activation::Relu,
        })
    }

    /// Feature maps of `x: [N, 1, S, S]`, one per stage. Weights enter the
    /// graph as constants.
    pub fn forward_graph(&self, g: &mut Graph, x: Var) -> Vec<Var> {
        let mut h = x;
        let mut out = Vec::with_capacity(self.layers.len());
        for (w, b) in &self.layers {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            let pad = w.shape()[2] / 2;
            let c = g.conv2d(h, wv, Some(bv), self.stride, pad);
            h = match self.activation {
                Activation::Tanh => g.tanh(c),
                Activation::Relu => g.relu(c),
                Activation::Identity => c,
            };
            out.push(h);
        }
        out
    }

    /// Feature maps evaluated outside any training graph.
    pub fn features(&self, x: &Tensor) -> Vec<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let vars = self.forward_graph(&mut g, xv);
        vars.into_iter().map(|v| g.value(v).clone()).collect()
    }
}
