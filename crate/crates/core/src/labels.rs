//! Weak-label discovery by two-stage k-means on encoder means.
//!
//! Stage 1 splits all events into background noise and HFOs; the cluster
//! whose members reconstruct worse is the noise. Stage 2 splits the HFOs of
//! resection-annotated subjects; the cluster with the larger share of
//! members in resected channels is pathological. Events of unannotated
//! subjects take the nearest stage-2 centroid.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EventKey, HfoEvent, SubjectRecord};
use crate::error::{Error, Result};
use crate::par::*;
use crate::util::{stream_id, substream, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub n_restarts: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 2,
            n_restarts: 10,
            max_iter: 300,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input point, in input order.
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.centroids.len()];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    /// Nearest centroid, lowest index on ties.
    pub fn nearest(&self, p: &[f64]) -> usize {
        nearest(&self.centroids, p).0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding over points already in canonical order.
fn seed_centroids<R: Rng + ?Sized>(pts: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = pts.len();
    let mut centroids = vec![pts[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = pts[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(pts) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

struct Run {
    centroids: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    inertia: f64,
    iterations: usize,
}

fn assign(pts: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    pts.par_iter().map(|p| nearest(centroids, p)).unzip()
}

fn lloyd(pts: &[&[f64]], mut centroids: Vec<Vec<f64>>, cfg: &KMeansConfig) -> Run {
    let dim = pts[0].len();
    let mut iterations = 0;
    let (mut assignment, mut dists) = assign(pts, &centroids);
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (p, &a) in pts.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s.into_iter().map(|v| v / c.max(1) as f64).collect())
            .collect();
        for j in 0..cfg.k {
            if counts[j] == 0 {
                // Empty cluster: move it onto the point worst served by its
                // current centroid (lowest canonical index on ties).
                let far = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &d)| if d > b.1 { (i, d) } else { b })
                    .0;
                next[j] = pts[far].to_vec();
                dists[far] = 0.0;
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        let (a, d) = assign(pts, &centroids);
        let changed = a != assignment;
        assignment = a;
        dists = d;
        if shift <= cfg.tol && !changed {
            break;
        }
    }
    let inertia = dists.iter().sum();
    Run {
        centroids,
        assignment,
        inertia,
        iterations,
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

const KMEANS_TAG: u64 = 0x4b4d_4541;

/// Lloyd's algorithm with k-means++ seeding, best of `n_restarts` by inertia.
///
/// Points are processed in the order of their `keys` (ties broken by the
/// coordinates), so the result does not depend on input order. Fewer than
/// `k` distinct points are accepted: surplus clusters are re-seeded onto
/// the farthest point and end up sharing a location, in which case every
/// point goes to the lowest-index centroid.
pub fn kmeans(points: &[Vec<f64>], keys: &[u64], cfg: &KMeansConfig) -> Result<ClusterModel> {
    if cfg.k == 0 || cfg.n_restarts == 0 {
        return Err(Error::Config("k-means needs k >= 1 and at least one restart".into()));
    }
    if points.len() != keys.len() {
        return Err(Error::Clustering("one key per point required".into()));
    }
    if points.len() < cfg.k {
        return Err(Error::Clustering(format!("{} points cannot form {} clusters", points.len(), cfg.k)));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Clustering("points must share a positive dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Clustering("non-finite coordinate".into()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then_with(|| lex_cmp(&points[a], &points[b])));
    let pts: Vec<&[f64]> = order.iter().map(|&i| points[i].as_slice()).collect();
    let distinct = {
        let mut sorted = pts.clone();
        sorted.sort_by(|a, b| lex_cmp(a, b));
        sorted.dedup();
        sorted.len()
    };
    if distinct < cfg.k {
        log::warn!("k-means: only {distinct} distinct points for k = {}", cfg.k);
    }

    let mut best: Option<Run> = None;
    for r in 0..cfg.n_restarts {
        let mut rng = substream(cfg.seed, stream_id(&[KMEANS_TAG, r as u64]));
        let init = seed_centroids(&pts, cfg.k, &mut rng);
        let run = lloyd(&pts, init, cfg);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let mut assignment = vec![0; points.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = best.assignment[pos];
    }
    Ok(ClusterModel {
        centroids: best.centroids,
        assignment,
        inertia: best.inertia,
        iterations: best.iterations,
    })
}

fn cluster_means(model: &ClusterModel, values: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; model.centroids.len()];
    let mut cnt = vec![0usize; model.centroids.len()];
    for (&a, &v) in model.assignment.iter().zip(values) {
        sum[a] += v;
        cnt[a] += 1;
    }
    sum.iter()
        .zip(&cnt)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSplit {
    pub model: ClusterModel,
    pub noise_cluster: usize,
    /// Mean reconstruction loss per cluster.
    pub mean_loss: Vec<f64>,
    pub tie: bool,
    /// Per input event.
    pub is_noise: Vec<bool>,
}

/// Stage 1: two clusters on μ; the one with the higher mean reconstruction
/// loss is background noise. Equal means pick the smaller cluster (lower
/// index if sizes match too). If one cluster came out empty there is no
/// evidence of background, and the empty cluster is named noise.
pub fn split_background(codes: &[Vec<f64>], recon_losses: &[f64], keys: &[u64], cfg: &KMeansConfig) -> Result<BackgroundSplit> {
    if codes.len() != recon_losses.len() {
        return Err(Error::Clustering("one reconstruction loss per code required".into()));
    }
    let cfg = KMeansConfig { k: 2, ..*cfg };
    let model = kmeans(codes, keys, &cfg)?;
    let mean_loss = cluster_means(&model, recon_losses);
    let sizes = model.sizes();
    let mut tie = false;
    let noise_cluster = if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        log::warn!("background split: cluster {empty} is empty; no events marked as noise");
        empty
    } else if mean_loss[0] > mean_loss[1] {
        0
    } else if mean_loss[1] > mean_loss[0] {
        1
    } else {
        tie = true;
        log::warn!("background split: equal mean reconstruction loss, smaller cluster taken as noise");
        usize::from(sizes[1] < sizes[0])
    };
    let is_noise = model.assignment.iter().map(|&a| a == noise_cluster).collect();
    Ok(BackgroundSplit {
        model,
        noise_cluster,
        mean_loss,
        tie,
        is_noise,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathologicalSplit {
    pub model: ClusterModel,
    pub pathological_cluster: usize,
    /// Share of each cluster's members in resected channels.
    pub resected_fraction: Vec<f64>,
    pub tie: bool,
}

/// Stage 2: two clusters on the μ of annotated-subject HFOs; the cluster
/// with the strictly higher share of members in resected channels is
/// pathological. On a tie the cluster with the higher mean reconstruction
/// loss wins, and the tie is reported at error level.
pub fn split_pathological(
    codes: &[Vec<f64>],
    resected: &[bool],
    recon_losses: &[f64],
    keys: &[u64],
    cfg: &KMeansConfig,
) -> Result<PathologicalSplit> {
    if codes.len() != resected.len() || codes.len() != recon_losses.len() {
        return Err(Error::Clustering("one resection flag and loss per code required".into()));
    }
    let cfg = KMeansConfig { k: 2, ..*cfg };
    let model = kmeans(codes, keys, &cfg)?;
    let flags: Vec<f64> = resected.iter().map(|&r| f64::from(u8::from(r))).collect();
    let resected_fraction: Vec<f64> = cluster_means(&model, &flags).into_iter().map(|f| if f.is_nan() { 0.0 } else { f }).collect();
    let (f0, f1) = (resected_fraction[0], resected_fraction[1]);
    let mut tie = false;
    let pathological_cluster = match f0.partial_cmp(&f1).expect("fractions are finite") {
        Ordering::Greater => 0,
        Ordering::Less => 1,
        Ordering::Equal => {
            tie = true;
            let loss = cluster_means(&model, recon_losses);
            let pick = usize::from(loss[1] > loss[0]);
            log::error!(
                "pathological split: both clusters have resected fraction {f0}; \
                 falling back to higher reconstruction loss (cluster {pick})"
            );
            pick
        }
    };
    Ok(PathologicalSplit {
        model,
        pathological_cluster,
        resected_fraction,
        tie,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Noise,
    Physiological,
    Pathological,
}

impl StageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::Noise => "noise",
            StageTag::Physiological => "physiological",
            StageTag::Pathological => "pathological",
        }
    }

    pub fn label(self) -> u8 {
        u8::from(self == StageTag::Pathological)
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(StageTag::Noise),
            "physiological" => Ok(StageTag::Physiological),
            "pathological" => Ok(StageTag::Pathological),
            other => Err(Error::Clustering(format!("unknown stage tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakLabel {
    pub event: HfoEvent,
    pub tag: StageTag,
}

impl WeakLabel {
    pub fn l(&self) -> u8 {
        self.tag.label()
    }
}

/// Tags every event: noise from stage 1, otherwise pathological or
/// physiological by the stage-2 cluster. `stage2_cluster[i]` is the stage-2
/// assignment of event `i` if it took part in stage 2; the other HFOs are
/// assigned to the nearest stage-2 centroid.
pub fn assign_weak_labels(
    events: &[HfoEvent],
    codes: &[Vec<f64>],
    is_noise: &[bool],
    stage2_cluster: &[Option<usize>],
    split: &PathologicalSplit,
) -> Vec<WeakLabel> {
    assert!(events.len() == codes.len() && events.len() == is_noise.len() && events.len() == stage2_cluster.len());
    events
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            let tag = if is_noise[i] {
                StageTag::Noise
            } else {
                let c = stage2_cluster[i].unwrap_or_else(|| split.model.nearest(&codes[i]));
                if c == split.pathological_cluster {
                    StageTag::Pathological
                } else {
                    StageTag::Physiological
                }
            };
            WeakLabel { event: ev.clone(), tag }
        })
        .collect()
}

/// Full discovery result.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub labels: Vec<WeakLabel>,
    pub background: BackgroundSplit,
    pub pathological: PathologicalSplit,
}

/// Runs both stages over `events` with their encoder means and
/// reconstruction losses. Only subjects with a resection annotation take
/// part in stage 2.
pub fn discover(
    events: &[HfoEvent],
    codes: &[Vec<f64>],
    recon_losses: &[f64],
    subjects: &BTreeMap<String, SubjectRecord>,
    cfg: &KMeansConfig,
) -> Result<Discovery> {
    if events.is_empty() {
        return Err(Error::Empty("no events to label".into()));
    }
    if events.len() != codes.len() || events.len() != recon_losses.len() {
        return Err(Error::Clustering("events, codes and losses must align".into()));
    }
    let keys: Vec<u64> = events.iter().map(|e| e.key().0).collect();
    let background = split_background(codes, recon_losses, &keys, cfg)?;

    let annotated = |e: &HfoEvent| subjects.get(&e.subject_id).and_then(|s| s.resected_channels.as_ref()).is_some();
    let stage2: Vec<usize> = (0..events.len())
        .filter(|&i| !background.is_noise[i] && annotated(&events[i]))
        .collect();
    if stage2.len() < 2 {
        return Err(Error::Clustering(format!(
            "stage 2 needs at least two HFO events from annotated subjects, found {}",
            stage2.len()
        )));
    }
    let s2_codes: Vec<Vec<f64>> = stage2.iter().map(|&i| codes[i].clone()).collect();
    let s2_resected: Vec<bool> = stage2
        .iter()
        .map(|&i| subjects[&events[i].subject_id].is_resected(&events[i].channel_id))
        .collect();
    let s2_losses: Vec<f64> = stage2.iter().map(|&i| recon_losses[i]).collect();
    let s2_keys: Vec<u64> = stage2.iter().map(|&i| keys[i]).collect();
    let stage2_cfg = KMeansConfig {
        seed: stream_id(&[cfg.seed, 2]),
        ..*cfg
    };
    let pathological = split_pathological(&s2_codes, &s2_resected, &s2_losses, &s2_keys, &stage2_cfg)?;
    let mut cluster = vec![None; events.len()];
    for (pos, &i) in stage2.iter().enumerate() {
        cluster[i] = Some(pathological.model.assignment[pos]);
    }
    let labels = assign_weak_labels(events, codes, &background.is_noise, &cluster, &pathological);
    Ok(Discovery {
        labels,
        background,
        pathological,
    })
}

/// Writes `weak_labels.csv` sorted by (subject, channel, start, end).
pub fn write_weak_labels(path: &Path, labels: &[WeakLabel]) -> Result<()> {
    let mut sorted: Vec<&WeakLabel> = labels.iter().collect();
    sorted.sort_by(|a, b| a.event.sort_key_cmp(&b.event));
    let mut buf = Vec::new();
    writeln!(buf, "subject,channel,start_ms,end_ms,stage_tag,l").expect("write to vec");
    for w in sorted {
        writeln!(
            buf,
            "{},{},{},{},{},{}",
            w.event.subject_id,
            w.event.channel_id,
            w.event.start_ms,
            w.event.end_ms,
            w.tag,
            w.l()
        )
        .expect("write to vec");
    }
    write_atomic(path, &buf)
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    subject: String,
    channel: String,
    start_ms: f64,
    end_ms: f64,
    stage_tag: String,
    l: u8,
}

/// Reads `weak_labels.csv` into a map keyed by event identity.
pub fn read_weak_labels(path: &Path) -> Result<BTreeMap<EventKey, StageTag>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize::<LabelRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let tag: StageTag = row.stage_tag.parse()?;
        if tag.label() != row.l {
            return Err(Error::Parse {
                path: path.into(),
                message: format!("stage tag {tag} disagrees with l = {}", row.l),
            });
        }
        let ev = HfoEvent {
            subject_id: row.subject,
            channel_id: row.channel,
            start_ms: row.start_ms,
            end_ms: row.end_ms,
            detector_tag: String::new(),
        };
        out.insert(ev.key(), tag);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = substream(seed, 1);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..n {
            let b = i % 2;
            let p: Vec<f64> = (0..16)
                .map(|d| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + if d == 0 { sep * b as f64 } else { 0.0 }
                })
                .collect();
            pts.push(p);
            truth.push(b);
        }
        (pts, truth)
    }

    fn keys(n: usize) -> Vec<u64> {
        (0..n as u64).map(|i| stream_id(&[i])).collect()
    }

    #[test]
    fn recovers_separated_blobs() {
        let (pts, truth) = blobs(400, 10.0, 3);
        let m = kmeans(&pts, &keys(400), &KMeansConfig::default()).unwrap();
        // brute-force oracle: nearest generating blob center
        let centers = [vec![0.0; 16], {
            let mut c = vec![0.0; 16];
            c[0] = 10.0;
            c
        }];
        let oracle: Vec<usize> = pts.iter().map(|p| nearest(&centers, p).0).collect();
        assert_eq!(oracle, truth);
        let flip = m.assignment[0] != oracle[0];
        for (a, o) in m.assignment.iter().zip(&oracle) {
            assert_eq!(*a == *o, !flip);
        }
    }

    #[test]
    fn identical_points() {
        let pts = vec![vec![1.0, 2.0]; 5];
        let m = kmeans(&pts, &keys(5), &KMeansConfig::default()).unwrap();
        assert!(m.assignment.iter().all(|&a| a == 0));
        assert_eq!(m.inertia, 0.0);
        assert_eq!(m.centroids[0], vec![1.0, 2.0]);
    }

    #[test]
    fn too_few_points() {
        assert!(kmeans(&[vec![1.0]], &[1], &KMeansConfig::default()).is_err());
    }

    #[test]
    fn lloyd_never_increases_inertia() {
        let (pts, _) = blobs(120, 1.5, 9);
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let mut rng = substream(1, 2);
        let init = seed_centroids(&refs, 2, &mut rng);
        let one = lloyd(&refs, init.clone(), &KMeansConfig { max_iter: 1, ..Default::default() });
        let full = lloyd(&refs, init, &KMeansConfig::default());
        assert!(full.inertia <= one.inertia + 1e-12);
    }

    #[test]
    fn background_rules() {
        let (pts, truth) = blobs(40, 10.0, 5);
        let losses: Vec<f64> = truth.iter().map(|&b| if b == 1 { 5.0 } else { 1.0 }).collect();
        let s = split_background(&pts, &losses, &keys(40), &KMeansConfig::default()).unwrap();
        assert!(!s.tie);
        for (n, b) in s.is_noise.iter().zip(&truth) {
            assert_eq!(*n, *b == 1);
        }
        // equal losses: smaller cluster is noise
        let keep: Vec<usize> = (0..40).filter(|&i| truth[i] == 0 || i < 10).collect();
        let pts2: Vec<Vec<f64>> = keep.iter().map(|&i| pts[i].clone()).collect();
        let s = split_background(&pts2, &vec![2.0; pts2.len()], &keys(pts2.len()), &KMeansConfig::default()).unwrap();
        assert!(s.tie);
        let n_noise = s.is_noise.iter().filter(|&&b| b).count();
        assert_eq!(n_noise, keep.iter().filter(|&&i| truth[i] == 1).count());
    }

    #[test]
    fn pathological_rules() {
        let (pts, truth) = blobs(40, 10.0, 6);
        // one cluster fully resected, the other never
        let res: Vec<bool> = truth.iter().map(|&b| b == 1).collect();
        let s = split_pathological(&pts, &res, &vec![0.0; 40], &keys(40), &KMeansConfig::default()).unwrap();
        let c = s.pathological_cluster;
        assert_eq!(s.resected_fraction[c], 1.0);
        assert_eq!(s.resected_fraction[1 - c], 0.0);
        // 0.6 vs 0.4
        let res: Vec<bool> = (0..40).map(|i| if truth[i] == 0 { (i / 2) % 5 < 3 } else { (i / 2) % 5 < 2 }).collect();
        let s = split_pathological(&pts, &res, &vec![0.0; 40], &keys(40), &KMeansConfig::default()).unwrap();
        let c = s.pathological_cluster;
        assert!((s.resected_fraction[c] - 0.6).abs() < 1e-12);
        assert_eq!(s.model.assignment.iter().zip(&truth).filter(|(a, t)| **a == c && **t == 0).count(), 20);
        // tie falls back to reconstruction loss
        let res: Vec<bool> = (0..40).map(|i| (i / 2) % 2 == 0).collect();
        let losses: Vec<f64> = truth.iter().map(|&b| b as f64).collect();
        let s = split_pathological(&pts, &res, &losses, &keys(40), &KMeansConfig::default()).unwrap();
        assert!(s.tie);
        let c = s.pathological_cluster;
        assert!(s.model.assignment.iter().zip(&truth).all(|(a, t)| (*a == c) == (*t == 1)));
    }

    fn ev(s: &str, c: &str, t: f64) -> HfoEvent {
        HfoEvent {
            subject_id: s.into(),
            channel_id: c.into(),
            start_ms: t,
            end_ms: t + 10.0,
            detector_tag: "synthetic".into(),
        }
    }

    #[test]
    fn labels_partition_and_unannotated_nearest() {
        let split = PathologicalSplit {
            model: ClusterModel {
                centroids: vec![vec![0.0], vec![10.0]],
                assignment: vec![],
                inertia: 0.0,
                iterations: 0,
            },
            pathological_cluster: 1,
            resected_fraction: vec![0.2, 0.8],
            tie: false,
        };
        let events = vec![ev("a", "x", 0.0), ev("a", "x", 20.0), ev("b", "y", 0.0), ev("b", "y", 20.0)];
        let codes = vec![vec![9.0], vec![1.0], vec![8.0], vec![2.0]];
        let labels = assign_weak_labels(&events, &codes, &[true, false, false, false], &[None, Some(0), None, None], &split);
        let tags: Vec<StageTag> = labels.iter().map(|w| w.tag).collect();
        assert_eq!(tags, vec![StageTag::Noise, StageTag::Physiological, StageTag::Pathological, StageTag::Physiological]);
        assert!(labels.iter().all(|w| (w.l() == 1) == (w.tag == StageTag::Pathological)));
    }

    #[test]
    fn weak_label_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("weak_labels.csv");
        let labels = vec![
            WeakLabel { event: ev("b", "y", 1.5), tag: StageTag::Pathological },
            WeakLabel { event: ev("a", "x", 0.25), tag: StageTag::Noise },
        ];
        write_weak_labels(&p, &labels).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "subject,channel,start_ms,end_ms,stage_tag,l\na,x,0.25,10.25,noise,0\nb,y,1.5,11.5,pathological,1\n"
        );
        let back = read_weak_labels(&p).unwrap();
        assert_eq!(back[&labels[0].event.key()], StageTag::Pathological);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn order_free(seed in 0u64..1000, rot in 0usize..60) {
            let (pts, _) = blobs(60, 3.0, seed);
            let ks = keys(60);
            let cfg = KMeansConfig { n_restarts: 3, seed, ..Default::default() };
            let a = kmeans(&pts, &ks, &cfg).unwrap();
            let mut p2 = pts.clone();
            let mut k2 = ks.clone();
            p2.rotate_left(rot);
            k2.rotate_left(rot);
            let b = kmeans(&p2, &k2, &cfg).unwrap();
            for i in 0..60 {
                prop_assert_eq!(a.assignment[(i + rot) % 60], b.assignment[i]);
            }
            prop_assert_eq!(a.inertia, b.inertia);
        }

        #[test]
        fn every_point_at_nearest_centroid(seed in 0u64..1000) {
            let (pts, _) = blobs(50, 2.0, seed);
            let m = kmeans(&pts, &keys(50), &KMeansConfig { seed, ..Default::default() }).unwrap();
            for (p, &a) in pts.iter().zip(&m.assignment) {
                prop_assert_eq!(m.nearest(p), a);
            }
        }
    }
}
