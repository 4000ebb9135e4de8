//! Classification head on the frozen encoder, trained on weak labels with
//! VAE-generated surrogates as augmentation.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::HfoEvent;
use crate::error::{Error, Result};
use crate::par::*;
use crate::tensor::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::util::{stream_id, substream, write_atomic};
use crate::vae::{reparameterize, Checkpoint, LatentGaussian};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Adds the surrogate BCE term; off reproduces the SD-only ablation.
    pub augment: bool,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 9,
            lr: 3e-4,
            weight_decay: 1e-5,
            batch_size: 4096,
            augment: true,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("classifier hidden, epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("classifier lr must be positive, weight_decay non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must lie in [0,1], got {}", self.threshold)));
        }
        Ok(())
    }
}

/// `latent -> hidden -> 1` with ReLU between and a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

const NAMES: [&str; 4] = ["cls.fc1.w", "cls.fc1.b", "cls.fc2.w", "cls.fc2.b"];

impl ClassifierParams {
    pub fn init<R: Rng + ?Sized>(latent_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w1: Tensor::randn(&[hidden, latent_dim], (2.0 / latent_dim as f64).sqrt(), rng),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::randn(&[1, hidden], (1.0 / hidden as f64).sqrt(), rng),
            b2: Tensor::zeros(&[1]),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn from_vec(mut t: Vec<Tensor>) -> Self {
        let b2 = t.pop().expect("four tensors");
        let w2 = t.pop().expect("four tensors");
        let b1 = t.pop().expect("four tensors");
        let w1 = t.pop().expect("four tensors");
        Self { w1, b1, w2, b2 }
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        NAMES.iter().zip(self.tensors()).map(|(n, t)| (n.to_string(), t.clone())).collect()
    }

    pub fn from_named(named: &[(String, Tensor)], latent_dim: usize) -> Result<Self> {
        let names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
        if names != NAMES {
            return Err(Error::Checkpoint(format!("classifier tensors {names:?}, expected {NAMES:?}")));
        }
        let p = Self::from_vec(named.iter().map(|(_, t)| t.clone()).collect());
        let h = p.b1.len();
        if p.w1.shape() != [h, latent_dim] || p.w2.shape() != [1, h] || p.b2.shape() != [1] {
            return Err(Error::Checkpoint(format!(
                "classifier shapes do not fit latent dimension {latent_dim}"
            )));
        }
        Ok(p)
    }

    /// Head stored in a checkpoint's classifier section.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let named = ckpt
            .classifier
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no classifier section".into()))?;
        Self::from_named(named, ckpt.arch().latent_dim)
    }

    pub fn round_to_f32(&self) -> Self {
        Self::from_vec(self.tensors().iter().map(|t| t.round_to_f32()).collect())
    }

    /// Binds the four tensors to `g` (trainable or constant).
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors()
            .iter()
            .map(|t| if trainable { g.param((*t).clone()) } else { g.constant((*t).clone()) })
            .collect()
    }

    /// Probability per code.
    pub fn probabilities(&self, codes: &[Vec<f64>]) -> Vec<f64> {
        if codes.is_empty() {
            return Vec::new();
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(codes_tensor(codes));
        let y = head_graph(&mut g, &p, x);
        g.value(y).data().to_vec()
    }
}

/// Copy of `ckpt` with the head attached as its classifier section.
pub fn attach_classifier(ckpt: &Checkpoint, params: &ClassifierParams) -> Checkpoint {
    Checkpoint {
        classifier: Some(params.round_to_f32().to_named()),
        ..ckpt.clone()
    }
}

pub fn codes_tensor(codes: &[Vec<f64>]) -> Tensor {
    let d = codes[0].len();
    let mut data = Vec::with_capacity(codes.len() * d);
    for c in codes {
        assert_eq!(c.len(), d, "codes must share a dimension");
        data.extend_from_slice(c);
    }
    Tensor::new(vec![codes.len(), d], data)
}

/// Head forward on `x: [N, d]`, returns probabilities `[N, 1]`.
pub fn head_graph(g: &mut Graph, p: &[Var], x: Var) -> Var {
    let h = g.linear(x, p[0], Some(p[1]));
    let h = g.relu(h);
    let o = g.linear(h, p[2], Some(p[3]));
    g.sigmoid(o)
}

/// Binary cross-entropy of one probability, clamped.
pub fn bce(p: f64, l: u8) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if l == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Batch mean of `BCE(p_real, l) + BCE(p_surr, l)`; without surrogates only
/// the first term.
pub fn classifier_loss(p_real: &[f64], p_surr: Option<&[f64]>, labels: &[u8]) -> f64 {
    assert_eq!(p_real.len(), labels.len(), "one label per probability");
    let n = labels.len() as f64;
    let mut s: f64 = p_real.iter().zip(labels).map(|(&p, &l)| bce(p, l)).sum();
    if let Some(ps) = p_surr {
        assert_eq!(ps.len(), labels.len(), "one label per surrogate probability");
        s += ps.iter().zip(labels).map(|(&p, &l)| bce(p, l)).sum::<f64>();
    }
    s / n
}

/// Batch-mean clamped BCE on the graph; `p: [N, 1]`.
pub fn bce_graph(g: &mut Graph, p: Var, labels: &[u8]) -> Var {
    let n = labels.len();
    let l = Tensor::new(vec![n, 1], labels.iter().map(|&v| f64::from(v)).collect());
    let one_minus_l = l.map(|v| 1.0 - v);
    let pc = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let lp = g.ln(pc);
    let q = g.scale(pc, -1.0);
    let q = g.add_scalar(q, 1.0);
    let lq = g.ln(q);
    let lv = g.constant(l);
    let mv = g.constant(one_minus_l);
    let a = g.mul(lp, lv);
    let b = g.mul(lq, mv);
    let s = g.add(a, b);
    let s = g.sum(s);
    g.scale(s, -1.0 / n as f64)
}

/// The classifier objective on the graph, given real and surrogate means.
pub fn classifier_loss_graph(g: &mut Graph, p: &[Var], mu_real: Var, mu_surr: Option<Var>, labels: &[u8]) -> Var {
    let pr = head_graph(g, p, mu_real);
    let loss = bce_graph(g, pr, labels);
    match mu_surr {
        Some(ms) => {
            let ps = head_graph(g, p, ms);
            let ls = bce_graph(g, ps, labels);
            g.add(loss, ls)
        }
        None => loss,
    }
}

/// One surrogate image: decode a sample of the posterior of `image`.
pub fn make_surrogate<R: Rng + ?Sized>(image: &[f64], ckpt: &Checkpoint, rng: &mut R) -> Result<Vec<f64>> {
    let lat = ckpt.encode(&[image])?.pop().expect("one latent");
    let z = reparameterize(&lat.mu, &lat.logvar, rng);
    Ok(ckpt.decode(&[z])?.pop().expect("one image"))
}

const SURROGATE_TAG: u64 = 0x5355_5252;
const SHUFFLE_TAG: u64 = 0x5348_5546;
const HEAD_INIT_TAG: u64 = 0x4845_4144;

/// Surrogate images for a batch of posteriors, one per event, each drawn
/// from the substream `(seed, key, epoch)`.
pub fn surrogates_from_latents(
    latents: &[LatentGaussian],
    keys: &[u64],
    epoch: usize,
    ckpt: &Checkpoint,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let codes: Vec<Vec<f64>> = latents
        .par_iter()
        .zip(keys.par_iter())
        .map(|(lat, &k)| {
            let mut rng = substream(seed, stream_id(&[SURROGATE_TAG, k, epoch as u64]));
            reparameterize(&lat.mu, &lat.logvar, &mut rng)
        })
        .collect();
    ckpt.decode(&codes)
}

/// Encoder posteriors of the training events, computed once; the VAE is
/// frozen so they never change.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub latents: Vec<LatentGaussian>,
    pub labels: Vec<u8>,
    pub keys: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct ClassifierOutcome {
    pub params: ClassifierParams,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Trains the head with Adam. Each epoch draws one fresh surrogate per
/// event; surrogates enter as data (their means are constants on the graph).
pub fn train_classifier(set: &TrainingSet, ckpt: &Checkpoint, cfg: &ClassifierConfig) -> Result<ClassifierOutcome> {
    cfg.validate()?;
    let n = set.latents.len();
    if n == 0 {
        return Err(Error::Empty("classifier training set has no events".into()));
    }
    if set.labels.len() != n || set.keys.len() != n {
        return Err(Error::Config("latents, labels and keys must align".into()));
    }
    let d = ckpt.arch().latent_dim;
    let hash_before = ckpt.vae_hash();
    let init = ClassifierParams::init(d, cfg.hidden, &mut substream(cfg.seed, HEAD_INIT_TAG));
    let mut flat: Vec<Tensor> = init.tensors().iter().map(|t| (*t).clone()).collect();
    let mut adam = Adam::new(AdamConfig::new(cfg.lr, cfg.weight_decay), &flat);
    let mu_real: Vec<Vec<f64>> = set.latents.iter().map(|l| l.mu.clone()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mu_surr = if cfg.augment {
            let images = surrogates_from_latents(&set.latents, &set.keys, epoch, ckpt, cfg.seed)?;
            let refs: Vec<&[f64]> = images.iter().map(Vec::as_slice).collect();
            Some(ckpt.embed(&refs)?)
        } else {
            None
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(cfg.seed, stream_id(&[SHUFFLE_TAG, epoch as u64])));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let labels: Vec<u8> = batch.iter().map(|&i| set.labels[i]).collect();
            let mut g = Graph::new();
            let pv: Vec<Var> = flat.iter().map(|t| g.param(t.clone())).collect();
            let xr: Vec<Vec<f64>> = batch.iter().map(|&i| mu_real[i].clone()).collect();
            let xr = g.constant(codes_tensor(&xr));
            let xs = mu_surr.as_ref().map(|ms| {
                let rows: Vec<Vec<f64>> = batch.iter().map(|&i| ms[i].clone()).collect();
                g.constant(codes_tensor(&rows))
            });
            let loss = classifier_loss_graph(&mut g, &pv, xr, xs, &labels);
            g.check_finite()?;
            total += g.value(loss).item() * batch.len() as f64;
            let grads = g.backward(loss);
            let grads: Vec<Tensor> = pv.iter().zip(&flat).map(|(&v, t)| grads.get_or_zeros(v, t)).collect();
            adam.step(&mut flat, &grads);
        }
        let mean = total / n as f64;
        log::info!("classifier epoch {}: loss {mean:.5}", epoch + 1);
        epoch_loss.push(mean);
    }
    let params = ClassifierParams::from_vec(flat);
    assert_eq!(hash_before, ckpt.vae_hash(), "VAE parameters changed during classifier training");
    Ok(ClassifierOutcome { params, epoch_loss })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub is_pathological: bool,
}

/// Strict threshold: exactly `threshold` is non-pathological.
pub fn decide(probability: f64, threshold: f64) -> bool {
    probability > threshold
}

/// Deterministic predictions from encoder means.
pub fn predict(images: &[&[f64]], ckpt: &Checkpoint, params: &ClassifierParams, threshold: f64) -> Result<Vec<Prediction>> {
    let mu = ckpt.embed(images)?;
    Ok(params
        .probabilities(&mu)
        .into_iter()
        .map(|p| Prediction {
            probability: p,
            is_pathological: decide(p, threshold),
        })
        .collect())
}

/// Writes `predictions.csv` sorted by (subject, channel, start, end).
pub fn write_predictions(path: &Path, rows: &[(HfoEvent, Prediction)]) -> Result<()> {
    let mut sorted: Vec<&(HfoEvent, Prediction)> = rows.iter().collect();
    sorted.sort_by(|a, b| a.0.sort_key_cmp(&b.0));
    let mut buf = Vec::new();
    writeln!(buf, "subject,channel,start_ms,end_ms,probability,label").expect("write to vec");
    for (e, p) in sorted {
        writeln!(
            buf,
            "{},{},{},{},{},{}",
            e.subject_id,
            e.channel_id,
            e.start_ms,
            e.end_ms,
            p.probability,
            u8::from(p.is_pathological)
        )
        .expect("write to vec");
    }
    write_atomic(path, &buf)
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    subject: String,
    channel: String,
    start_ms: f64,
    end_ms: f64,
    probability: f64,
    label: u8,
}

pub fn read_predictions(path: &Path) -> Result<Vec<(HfoEvent, Prediction)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<PredictionRow>() {
        let r = row.map_err(|e| Error::csv(path, e))?;
        out.push((
            HfoEvent {
                subject_id: r.subject,
                channel_id: r.channel,
                start_ms: r.start_ms,
                end_ms: r.end_ms,
                detector_tag: String::new(),
            },
            Prediction {
                probability: r.probability,
                is_pathological: r.label == 1,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use crate::vae::{FeatureSpec, VaeArch, LOGVAR_MIN};

    fn toy() -> Checkpoint {
        let arch = VaeArch {
            image_size: 8,
            widths: vec![2, 3],
            latent_dim: 3,
        };
        Checkpoint::untrained(&arch, FeatureSpec::Random { seed: 3, channels: vec![2] }, 7).unwrap()
    }

    fn images(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = substream(seed, 0);
        (0..n).map(|_| (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
    }

    #[test]
    fn loss_examples() {
        let perfect = classifier_loss(&[1.0, 0.0], Some(&[1.0, 0.0]), &[1, 0]);
        let expect = -2.0 * (1.0 - PROB_EPS).ln();
        assert!((perfect - expect).abs() < 1e-15);
        assert!((perfect - 2e-7).abs() < 1e-12);
        for l in [0, 1] {
            let v = classifier_loss(&[0.5], Some(&[0.5]), &[l]);
            assert!((v - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        }
        let a = classifier_loss(&[0.2, 0.9], Some(&[0.7, 0.4]), &[1, 0]);
        let b = classifier_loss(&[0.7, 0.4], Some(&[0.2, 0.9]), &[1, 0]);
        assert_eq!(a, b);
        assert!(classifier_loss(&[0.3], None, &[0]) >= 0.0);
    }

    #[test]
    fn graph_loss_matches_scalar_and_gradient() {
        let mut rng = substream(2, 0);
        let p = ClassifierParams::init(3, 5, &mut rng);
        let p = ClassifierParams {
            b1: Tensor::randn(&[5], 0.3, &mut rng),
            b2: Tensor::randn(&[1], 0.3, &mut rng),
            ..p
        };
        let xr = Tensor::randn(&[6, 3], 1.0, &mut rng);
        let xs = Tensor::randn(&[6, 3], 1.0, &mut rng);
        let labels = [1, 0, 0, 1, 1, 0];
        let mut g = Graph::new();
        let pv = p.bind(&mut g, false);
        let (a, b) = (g.constant(xr.clone()), g.constant(xs.clone()));
        let loss = classifier_loss_graph(&mut g, &pv, a, Some(b), &labels);
        let rows = |t: &Tensor| t.data().chunks(3).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let pr = p.probabilities(&rows(&xr));
        let ps = p.probabilities(&rows(&xs));
        assert!((g.value(loss).item() - classifier_loss(&pr, Some(&ps), &labels)).abs() < 1e-12);

        let params: Vec<Tensor> = p.tensors().iter().map(|t| (*t).clone()).collect();
        let report = grad_check(
            |g, v| {
                let a = g.constant(xr.clone());
                let b = g.constant(xs.clone());
                classifier_loss_graph(g, v, a, Some(b), &labels)
            },
            &params,
            1e-6,
            None,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn surrogates() {
        let ck = toy();
        let img = images(1, 1).pop().unwrap();
        let a = make_surrogate(&img, &ck, &mut substream(5, 5)).unwrap();
        let b = make_surrogate(&img, &ck, &mut substream(5, 5)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));

        // Minimum log-variance: the sample is the mean plus e^-5 noise pushed
        // through the decoder, so to first order the deviation from decode(mu)
        // grows linearly with the posterior std.
        let with_logvar = |lv: f64| {
            let mut c = ck.clone();
            let names = c.vae.names();
            for (name, t) in names.iter().zip(c.vae.tensors.iter_mut()) {
                if name == "enc.logvar.w" {
                    *t = Tensor::zeros(t.shape());
                } else if name == "enc.logvar.b" {
                    *t = Tensor::full(t.shape(), lv);
                } else if name == "enc.mu.b" {
                    // keep the decoder away from its ReLU kinks
                    *t = Tensor::new(t.shape().to_vec(), vec![1.0, -0.7, 0.5]);
                }
            }
            c
        };
        let deviation = |c: &Checkpoint| {
            let lat = c.encode(&[&img]).unwrap();
            let s = make_surrogate(&img, c, &mut substream(1, 1)).unwrap();
            let m = c.decode(&[lat[0].mu.clone()]).unwrap().pop().unwrap();
            (lat, s.iter().zip(&m).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        };
        let (lat, d_min) = deviation(&with_logvar(2.0 * LOGVAR_MIN));
        assert!(lat[0].logvar.iter().all(|&v| v == LOGVAR_MIN));
        let (_, d_up) = deviation(&with_logvar(LOGVAR_MIN + 2.0));
        let ratio = d_up / d_min;
        assert!((ratio - std::f64::consts::E).abs() < 0.05 * std::f64::consts::E, "{d_min} {d_up}");
        assert!(d_min < 1e-2, "{d_min}");
    }

    #[test]
    fn threshold_is_strict() {
        assert!(decide(0.7, 0.5));
        assert!(!decide(0.5, 0.5));
        assert!(!decide(0.2, 0.5));
    }

    fn training_set(ck: &Checkpoint, n: usize, label: impl Fn(&LatentGaussian) -> u8) -> (TrainingSet, Vec<Vec<f64>>) {
        let imgs = images(n, 11);
        let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
        let latents = ck.encode(&refs).unwrap();
        let labels = latents.iter().map(&label).collect();
        let keys = (0..n as u64).map(|i| stream_id(&[i])).collect();
        (TrainingSet { latents, labels, keys }, imgs)
    }

    #[test]
    fn all_zero_labels_and_frozen_encoder() {
        let ck = toy();
        let (set, imgs) = training_set(&ck, 64, |_| 0);
        let cfg = ClassifierConfig {
            epochs: 60,
            batch_size: 16,
            lr: 1e-2,
            ..Default::default()
        };
        let hash = ck.vae_hash();
        let out = train_classifier(&set, &ck, &cfg).unwrap();
        assert_eq!(hash, ck.vae_hash());
        let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
        let preds = predict(&refs, &ck, &out.params, 0.5).unwrap();
        assert!(preds.iter().all(|p| p.probability < 0.1));
    }

    #[test]
    fn loss_decreases_and_section_round_trips() {
        let ck = toy();
        let (set, _) = training_set(&ck, 128, |l| u8::from(l.mu[0] > 0.0));
        let cfg = ClassifierConfig {
            epochs: 3,
            batch_size: 16,
            lr: 3e-3,
            ..Default::default()
        };
        let out = train_classifier(&set, &ck, &cfg).unwrap();
        assert!(out.epoch_loss.windows(2).all(|w| w[1] < w[0]), "{:?}", out.epoch_loss);
        let again = train_classifier(&set, &ck, &cfg).unwrap();
        assert_eq!(out.params, again.params);

        let with = attach_classifier(&ck, &out.params);
        let back = Checkpoint::from_bytes(&with.to_bytes()).unwrap();
        assert_eq!(back.vae_hash(), ck.vae_hash());
        assert_eq!(ClassifierParams::from_checkpoint(&back).unwrap(), out.params.round_to_f32());
        assert!(ClassifierParams::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn predictions_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("predictions.csv");
        let e = |s: &str, t: f64| HfoEvent {
            subject_id: s.into(),
            channel_id: "ch00".into(),
            start_ms: t,
            end_ms: t + 20.0,
            detector_tag: "x".into(),
        };
        let rows = vec![
            (e("b", 0.0), Prediction { probability: 0.25, is_pathological: false }),
            (e("a", 5.0), Prediction { probability: 0.75, is_pathological: true }),
        ];
        write_predictions(&p, &rows).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "subject,channel,start_ms,end_ms,probability,label\na,ch00,5,25,0.75,1\nb,ch00,0,20,0.25,0\n"
        );
        let back = read_predictions(&p).unwrap();
        assert_eq!(back[0].1.probability, 0.75);
        assert!(back[0].1.is_pathological);
    }
}
