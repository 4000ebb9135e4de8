//! The hot loops give the same bits on one worker and on several.

use hfo_distill::labels::{kmeans, KMeansConfig};
use hfo_distill::par::with_threads;
use hfo_distill::vae::{pretrain, Checkpoint, FeatureSpec, PretrainConfig, TrainItem, VaeArch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch() -> VaeArch {
    VaeArch {
        image_size: 64,
        widths: vec![4, 8, 16, 32],
        latent_dim: 16,
    }
}

fn images(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..64 * 64).map(|_| rng.random::<f64>()).collect()).collect()
}

#[test]
fn encode_matches_across_thread_counts() {
    let imgs = images(12, 1);
    let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
    let ckpt = Checkpoint::untrained(&arch(), FeatureSpec::default(), 3).unwrap();
    let one = with_threads(1, || ckpt.encode(&refs).unwrap());
    let three = with_threads(3, || ckpt.encode(&refs).unwrap());
    assert_eq!(one, three);
}

#[test]
fn pretrain_epoch_matches_across_thread_counts() {
    let imgs = images(16, 2);
    let items: Vec<TrainItem> = imgs.iter().map(|im| TrainItem { subject: "s", image: im }).collect();
    let cfg = PretrainConfig {
        arch: arch(),
        epochs: 1,
        batch_size: 8,
        ..Default::default()
    };
    let one = with_threads(1, || pretrain(&items, &[], &cfg, None).unwrap());
    let three = with_threads(3, || pretrain(&items, &[], &cfg, None).unwrap());
    let codes = |c: &Checkpoint| {
        let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
        c.encode(&refs).unwrap()
    };
    assert_eq!(one.beta_trace, three.beta_trace);
    assert_eq!(codes(&one.checkpoint), codes(&three.checkpoint));
}

#[test]
fn kmeans_matches_across_thread_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<Vec<f64>> = (0..600)
        .map(|i| (0..8).map(|_| rng.random::<f64>() + (i % 3) as f64).collect())
        .collect();
    let keys: Vec<u64> = (0..pts.len() as u64).collect();
    let cfg = KMeansConfig::default();
    let one = with_threads(1, || kmeans(&pts, &keys, &cfg).unwrap());
    let three = with_threads(3, || kmeans(&pts, &keys, &cfg).unwrap());
    assert_eq!(one.assignment, three.assignment);
    assert_eq!(one.inertia.to_bits(), three.inertia.to_bits());
}
