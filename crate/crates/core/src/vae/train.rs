//! Pre-training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, Checkpoint, CheckpointHeader};
use super::features::{FeatureExtractor, FeatureSpec};
use super::net::{decode_graph, encode_graph, reparameterize_graph, VaeArch, VaeParams};
use super::objective::{
    gaussian_noise, kl_graph, perceptual_graph, pretrain_loss_graph, BetaState, PerceptualReduction,
};
use super::{image_batch, LatentGaussian};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};
use crate::util::{stream_id, substream, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub arch: VaeArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta_init: f64,
    pub beta_lr: f64,
    /// Events drawn per training subject and epoch, at most.
    pub cap_per_subject: usize,
    pub features: FeatureSpec,
    pub perceptual: PerceptualReduction,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            arch: VaeArch::default(),
            epochs: 100,
            batch_size: 512,
            lr: 1e-3,
            weight_decay: 1e-5,
            beta_init: 1.0,
            beta_lr: 1e-4,
            cap_per_subject: 2500,
            features: FeatureSpec::default(),
            perceptual: PerceptualReduction::Sum,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.cap_per_subject == 0 {
            return Err(Error::Config("epochs, batch_size and cap_per_subject must be positive".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || self.beta_lr < 0.0 {
            return Err(Error::Config("lr must be positive, weight_decay and beta_lr non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_init) {
            return Err(Error::Config(format!("beta_init must lie in [0,1], got {}", self.beta_init)));
        }
        Ok(())
    }
}

/// One training example: the subject it belongs to and its flat image.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub subject: &'a str,
    pub image: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_perceptual: f64,
    pub mean_kl: f64,
    pub beta: f64,
    pub val_perceptual: f64,
    pub val_kl: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// β after every minibatch.
    pub beta_trace: Vec<f64>,
}

const EPOCH_TAG: u64 = 0x4550_4f43;
const NOISE_TAG: u64 = 0x4e4f_4953;
const INIT_TAG: u64 = 0x494e_4954;

/// Indices for one epoch: per subject, all items if at most `cap`, else
/// `cap` drawn uniformly without replacement; then shuffled together.
pub fn sample_epoch<R: Rng + ?Sized>(subjects: &[&str], cap: usize, rng: &mut R) -> Vec<usize> {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        by_subject.entry(s).or_default().push(i);
    }
    let mut out = Vec::new();
    for idx in by_subject.values() {
        if idx.len() <= cap {
            out.extend_from_slice(idx);
        } else {
            let mut picked: Vec<usize> = index::sample(rng, idx.len(), cap).into_iter().map(|k| idx[k]).collect();
            picked.sort_unstable();
            out.extend(picked);
        }
    }
    out.shuffle(rng);
    out
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "epoch,mean_perceptual,mean_kl,beta,val_perceptual,val_kl").expect("write to vec");
    for r in log {
        writeln!(
            buf,
            "{},{},{},{},{},{}",
            r.epoch, r.mean_perceptual, r.mean_kl, r.beta, r.val_perceptual, r.val_kl
        )
        .expect("write to vec");
    }
    write_atomic(path, &buf)
}

fn snapshot(cfg: &PretrainConfig, params: &[Tensor], beta: BetaState, epoch: usize) -> Checkpoint {
    Checkpoint {
        header: CheckpointHeader {
            arch: cfg.arch.clone(),
            latent_dim: cfg.arch.latent_dim,
            beta,
            epoch,
            seed: cfg.seed,
            next_epoch: epoch,
            features: cfg.features.clone(),
            perceptual: cfg.perceptual,
        },
        vae: VaeParams {
            arch: cfg.arch.clone(),
            tensors: params.to_vec(),
        }
        .round_to_f32(),
        classifier: None,
    }
}

/// Mean perceptual loss (decoded from the mean) and mean KL over `items`.
fn validation(ckpt: &Checkpoint, items: &[TrainItem]) -> Result<(f64, f64)> {
    if items.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let images: Vec<&[f64]> = items.iter().map(|t| t.image).collect();
    let latents: Vec<LatentGaussian> = ckpt.encode(&images)?;
    let kl = latents
        .iter()
        .map(|l| super::kl_divergence(&l.mu, &l.logvar))
        .sum::<f64>()
        / items.len() as f64;
    let perc = ckpt.reconstruction_losses(&images)?.iter().sum::<f64>() / items.len() as f64;
    Ok((perc, kl))
}

/// Trains the VAE. With `out_dir`, the checkpoint (`vae.ssld`) and the
/// training log (`training_log.csv`) are rewritten after every epoch, so a
/// divergence leaves the last good epoch on disk.
pub fn pretrain(
    train: &[TrainItem],
    val: &[TrainItem],
    cfg: &PretrainConfig,
    out_dir: Option<&Path>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("pre-training set has no events".into()));
    }
    let size = cfg.arch.image_size;
    let phi = FeatureExtractor::from_spec(&cfg.features)?;
    let mut params = VaeParams::init(&cfg.arch, &mut substream(cfg.seed, INIT_TAG))?.tensors;
    let mut adam = Adam::new(AdamConfig::new(cfg.lr, cfg.weight_decay), &params);
    let mut beta = BetaState::new(cfg.beta_init, cfg.beta_lr);
    let subjects: Vec<&str> = train.iter().map(|t| t.subject).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut beta_trace = Vec::new();
    let mut last = snapshot(cfg, &params, beta, 0);

    for epoch in 0..cfg.epochs {
        let mut rng = substream(cfg.seed, stream_id(&[EPOCH_TAG, epoch as u64]));
        let order = sample_epoch(&subjects, cfg.cap_per_subject, &mut rng);
        let (mut sum_perc, mut sum_kl, mut seen) = (0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<&[f64]> = batch.iter().map(|&i| train[i].image).collect();
            let x = image_batch(&images, size);
            let target = phi.features(&x);
            let mut g = Graph::new();
            let pv: Vec<_> = params.iter().map(|t| g.param(t.clone())).collect();
            let xv = g.constant(x);
            let (mu, lv) = encode_graph(&cfg.arch, &mut g, &pv, xv);
            let mut noise_rng = substream(cfg.seed, stream_id(&[NOISE_TAG, epoch as u64, b as u64]));
            let eps = gaussian_noise(&[batch.len(), cfg.arch.latent_dim], &mut noise_rng);
            let z = reparameterize_graph(&mut g, mu, lv, eps);
            let x_hat = decode_graph(&cfg.arch, &mut g, &pv, z);
            let perc = perceptual_graph(&mut g, &phi, &target, x_hat, cfg.perceptual);
            let kl = kl_graph(&mut g, mu, lv);
            let loss = pretrain_loss_graph(&mut g, perc, kl, beta.beta);
            let (perc_v, kl_v, loss_v) = (g.value(perc).item(), g.value(kl).item(), g.value(loss).item());
            if let Err(e) = g.check_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("batch {b}: {e}"),
                });
            }
            debug_assert!(loss_v >= 0.0);
            let grads = g.backward(loss);
            let grads: Vec<Tensor> = pv.iter().zip(&params).map(|(&v, t)| grads.get_or_zeros(v, t)).collect();
            if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("batch {b}: non-finite gradient for tensor {i}"),
                });
            }
            adam.step(&mut params, &grads);
            beta = beta.update(kl_v, perc_v);
            assert!((0.0..=1.0).contains(&beta.beta), "beta left [0,1]: {}", beta.beta);
            beta_trace.push(beta.beta);
            sum_perc += perc_v * batch.len() as f64;
            sum_kl += kl_v * batch.len() as f64;
            seen += batch.len();
        }
        let ckpt = snapshot(cfg, &params, beta, epoch + 1);
        let (val_perc, val_kl) = validation(&ckpt, val)?;
        let row = EpochLog {
            epoch: epoch + 1,
            mean_perceptual: sum_perc / seen as f64,
            mean_kl: sum_kl / seen as f64,
            beta: beta.beta,
            val_perceptual: val_perc,
            val_kl,
        };
        log::info!(
            "epoch {}: perceptual {:.4} kl {:.4} beta {:.4} val {:.4}/{:.4}",
            row.epoch,
            row.mean_perceptual,
            row.mean_kl,
            row.beta,
            row.val_perceptual,
            row.val_kl
        );
        log.push(row);
        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join("vae.ssld"), &ckpt)?;
            write_training_log(&dir.join("training_log.csv"), &log)?;
        }
        last = ckpt;
    }
    Ok(PretrainOutcome {
        checkpoint: last,
        log,
        beta_trace,
    })
}
