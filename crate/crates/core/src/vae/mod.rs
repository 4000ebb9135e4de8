//! Convolutional VAE over time-frequency images, its perceptual objective,
//! the pre-training loop and the checkpoint format.

mod checkpoint;
mod features;
mod net;
mod objective;
mod train;

pub use checkpoint::{
    load_checkpoint, read_tensor_file, save_checkpoint, write_tensor_file, Checkpoint, CheckpointHeader,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION, CLASSIFIER_TAG,
};
pub use features::{Activation, FeatureExtractor, FeatureSpec};
pub use net::{
    decode_graph, encode_graph, reparameterize_graph, VaeArch, VaeParams, LOGVAR_MAX, LOGVAR_MIN,
};
pub use objective::{
    gaussian_noise, kl_divergence, kl_graph, perceptual_graph, perceptual_per_item, pretrain_loss,
    pretrain_loss_graph, reparameterize, BetaState, PerceptualReduction,
};
pub use train::{pretrain, sample_epoch, write_training_log, EpochLog, PretrainConfig, PretrainOutcome, TrainItem};

use crate::par::*;
use crate::tensor::{Graph, Tensor};

/// Encoder output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// Images per forward pass in batched inference.
const INFER_CHUNK: usize = 64;

/// Stacks flat `S*S` images into `[N, 1, S, S]`.
pub fn image_batch(images: &[&[f64]], size: usize) -> Tensor {
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        assert_eq!(img.len(), size * size, "image must be {size}x{size}");
        data.extend_from_slice(img);
    }
    Tensor::new(vec![images.len(), 1, size, size], data)
}

impl Checkpoint {
    /// Freshly initialized weights (f32-rounded) with a neutral header.
    pub fn untrained(arch: &VaeArch, features: FeatureSpec, seed: u64) -> crate::Result<Self> {
        let vae = VaeParams::init(arch, &mut crate::util::substream(seed, 1))?.round_to_f32();
        Ok(Checkpoint {
            header: CheckpointHeader {
                arch: arch.clone(),
                latent_dim: arch.latent_dim,
                beta: BetaState::new(1.0, 1e-4),
                epoch: 0,
                seed,
                next_epoch: 0,
                features,
                perceptual: PerceptualReduction::Sum,
            },
            vae,
            classifier: None,
        })
    }

    pub fn arch(&self) -> &VaeArch {
        &self.vae.arch
    }

    pub fn feature_extractor(&self) -> crate::Result<FeatureExtractor> {
        FeatureExtractor::from_spec(&self.header.features)
    }

    /// Encoder means and clamped log-variances.
    pub fn encode(&self, images: &[&[f64]]) -> crate::Result<Vec<LatentGaussian>> {
        let arch = self.arch();
        let chunks: Vec<crate::Result<Vec<LatentGaussian>>> = images
            .par_chunks(INFER_CHUNK)
            .map(|chunk| {
                let mut g = Graph::new();
                let p = self.vae.bind(&mut g, false);
                let x = g.constant(image_batch(chunk, arch.image_size));
                let (mu, lv) = encode_graph(arch, &mut g, &p, x);
                g.check_finite()?;
                let d = arch.latent_dim;
                let (m, l) = (g.value(mu).data(), g.value(lv).data());
                Ok((0..chunk.len())
                    .map(|i| LatentGaussian {
                        mu: m[i * d..(i + 1) * d].to_vec(),
                        logvar: l[i * d..(i + 1) * d].to_vec(),
                    })
                    .collect())
            })
            .collect();
        let mut out = Vec::with_capacity(images.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Encoder means only.
    pub fn embed(&self, images: &[&[f64]]) -> crate::Result<Vec<Vec<f64>>> {
        Ok(self.encode(images)?.into_iter().map(|l| l.mu).collect())
    }

    /// Decoded images (flat `S*S`, values in (0,1)).
    pub fn decode(&self, codes: &[Vec<f64>]) -> crate::Result<Vec<Vec<f64>>> {
        let arch = self.arch();
        let d = arch.latent_dim;
        let px = arch.image_size * arch.image_size;
        let chunks: Vec<crate::Result<Vec<Vec<f64>>>> = codes
            .par_chunks(INFER_CHUNK)
            .map(|chunk| {
                let mut data = Vec::with_capacity(chunk.len() * d);
                for z in chunk {
                    assert_eq!(z.len(), d, "latent code must have {d} entries");
                    data.extend_from_slice(z);
                }
                let mut g = Graph::new();
                let p = self.vae.bind(&mut g, false);
                let z = g.constant(Tensor::new(vec![chunk.len(), d], data));
                let y = decode_graph(arch, &mut g, &p, z);
                g.check_finite()?;
                Ok(g.value(y).data().chunks(px).map(<[f64]>::to_vec).collect())
            })
            .collect();
        let mut out = Vec::with_capacity(codes.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Perceptual loss between each image and the decoding of its mean.
    pub fn reconstruction_losses(&self, images: &[&[f64]]) -> crate::Result<Vec<f64>> {
        let phi = self.feature_extractor()?;
        let size = self.arch().image_size;
        let mus = self.embed(images)?;
        let recon = self.decode(&mus)?;
        let pairs: Vec<(&[f64], &[f64])> = images.iter().copied().zip(recon.iter().map(Vec::as_slice)).collect();
        let per_chunk: Vec<Vec<f64>> = pairs
            .par_chunks(INFER_CHUNK)
            .map(|chunk| {
                let a: Vec<&[f64]> = chunk.iter().map(|p| p.0).collect();
                let b: Vec<&[f64]> = chunk.iter().map(|p| p.1).collect();
                perceptual_per_item(&phi, &image_batch(&a, size), &image_batch(&b, size), self.header.perceptual)
            })
            .collect();
        Ok(per_chunk.into_iter().flatten().collect())
    }
}

/// Per-event reconstruction loss (perceptual, decoded from the mean).
pub fn per_event_reconstruction_loss(ckpt: &Checkpoint, images: &[&[f64]]) -> crate::Result<Vec<f64>> {
    ckpt.reconstruction_losses(images)
}
