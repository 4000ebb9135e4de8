//! Latent-space diagnostics: per-dimension interpolation sweeps decoded
//! from a pathological seed code, and knockout of single dimensions
//! followed by a fresh 2-D PCA and a k-NN label-mixing score.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::*;
use crate::util::{encode_pgm, write_atomic};
use crate::vae::Checkpoint;

/// Linear-interpolation percentile on the sorted values, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of no values".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile must lie in [0,1], got {q}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// How sweep bounds such as `0.001` are read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileScale {
    /// `0.001` is the quantile 0.001.
    #[default]
    Fraction,
    /// `0.001` is 0.001 percent, the quantile 0.00001.
    Percent,
}

impl QuantileScale {
    pub fn to_quantile(self, q: f64) -> f64 {
        match self {
            QuantileScale::Fraction => q,
            QuantileScale::Percent => q / 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub seed_code: Vec<f64>,
    pub dim: usize,
    pub steps: usize,
    pub lo_q: f64,
    pub hi_q: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Config(format!("a sweep needs at least 2 steps, got {}", self.steps)));
        }
        if !(0.0 <= self.lo_q && self.lo_q < self.hi_q && self.hi_q <= 1.0) {
            return Err(Error::Config(format!("need 0 <= lo_q < hi_q <= 1, got {} and {}", self.lo_q, self.hi_q)));
        }
        if self.dim >= self.seed_code.len() {
            return Err(Error::Config(format!("dimension {} out of range", self.dim)));
        }
        Ok(())
    }
}

/// Mean code of the events flagged pathological.
pub fn pathological_seed(codes: &[Vec<f64>], pathological: &[bool]) -> Result<Vec<f64>> {
    let picked: Vec<&Vec<f64>> = codes.iter().zip(pathological).filter(|(_, &p)| p).map(|(c, _)| c).collect();
    if picked.is_empty() {
        return Err(Error::Empty("no pathological predictions to seed the sweep".into()));
    }
    let mut mean = vec![0.0; picked[0].len()];
    for c in &picked {
        for (m, v) in mean.iter_mut().zip(c.iter()) {
            *m += v;
        }
    }
    Ok(mean.into_iter().map(|m| m / picked.len() as f64).collect())
}

/// The values a sweep visits: `steps` points from the `lo_q` to the `hi_q`
/// percentile of dimension `dim` over `codes`.
pub fn sweep_values(spec: &SweepSpec, codes: &[Vec<f64>]) -> Result<Vec<f64>> {
    spec.validate()?;
    let column: Vec<f64> = codes.iter().map(|c| c[spec.dim]).collect();
    let lo = percentile(&column, spec.lo_q)?;
    let hi = percentile(&column, spec.hi_q)?;
    let last = (spec.steps - 1) as f64;
    Ok((0..spec.steps)
        .map(|i| if i == spec.steps - 1 { hi } else { lo + (hi - lo) * i as f64 / last })
        .collect())
}

/// Decoded images along one dimension; the seed and `codes` are untouched.
pub fn interpolate_dimension(spec: &SweepSpec, codes: &[Vec<f64>], ckpt: &Checkpoint) -> Result<Vec<Vec<f64>>> {
    let values = sweep_values(spec, codes)?;
    let sweep: Vec<Vec<f64>> = values
        .iter()
        .map(|&v| {
            let mut z = spec.seed_code.clone();
            z[spec.dim] = v;
            z
        })
        .collect();
    ckpt.decode(&sweep)
}

/// Copies of `codes` with coordinate `dim` set to zero.
pub fn knockout(codes: &[Vec<f64>], dim: usize) -> Result<Vec<Vec<f64>>> {
    codes
        .iter()
        .map(|c| {
            let mut c = c.clone();
            *c.get_mut(dim).ok_or_else(|| Error::Config(format!("dimension {dim} out of range")))? = 0.0;
            Ok(c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    /// Two unit principal axes, each with its largest-magnitude entry positive.
    pub components: [Vec<f64>; 2],
    pub projected: Vec<[f64; 2]>,
    /// Share of the total variance along each axis.
    pub explained: [f64; 2],
}

/// Top-2 principal components of the mean-centered points.
pub fn pca2(points: &[Vec<f64>]) -> Result<Pca2> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Empty(format!("PCA needs at least 3 points, got {n}")));
    }
    let d = points[0].len();
    if d < 2 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Config("PCA needs points of a common dimension >= 2".into()));
    }
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in points {
        for i in 0..d {
            let a = p[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += a * (p[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let total: f64 = (0..d).map(|i| cov[(i, i)]).sum();
    if !(total > 0.0) {
        return Err(Error::Empty("PCA of identical points".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |k: usize| -> Vec<f64> {
        let col: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let lead = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |b, (i, &v)| if v.abs() > b.1.abs() { (i, v) } else { b })
            .1;
        if lead < 0.0 {
            col.into_iter().map(|v| -v).collect()
        } else {
            col
        }
    };
    let components = [axis(0), axis(1)];
    let explained = [
        eig.eigenvalues[order[0]].max(0.0) / total,
        eig.eigenvalues[order[1]].max(0.0) / total,
    ];
    let projected = points
        .iter()
        .map(|p| {
            let mut out = [0.0; 2];
            for (o, c) in out.iter_mut().zip(&components) {
                *o = p.iter().zip(&mean).zip(c).map(|((x, m), w)| (x - m) * w).sum();
            }
            out
        })
        .collect();
    Ok(Pca2 {
        mean,
        components,
        projected,
        explained,
    })
}

/// Fraction of (point, neighbor) pairs among each point's `k` nearest
/// neighbors in the plane whose labels differ. Distance ties go to the
/// lower index.
pub fn knn_mixing(points: &[[f64; 2]], labels: &[bool], k: usize) -> Result<f64> {
    let n = points.len();
    if n != labels.len() {
        return Err(Error::Config("one label per point required".into()));
    }
    if n < 2 || k == 0 {
        return Err(Error::Empty("k-NN mixing needs at least two points and k >= 1".into()));
    }
    let k = k.min(n - 1);
    let per_point: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dx = points[i][0] - points[j][0];
                    let dy = points[i][1] - points[j][1];
                    (dx * dx + dy * dy, j)
                })
                .collect();
            d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d[..k].iter().filter(|(_, j)| labels[*j] != labels[i]).count()
        })
        .collect();
    Ok(per_point.iter().sum::<usize>() as f64 / (n * k) as f64)
}

/// Tiles the images of one sweep left to right into a single PGM.
pub fn sweep_grid_pgm(images: &[Vec<f64>], size: usize) -> Vec<u8> {
    let w = size * images.len();
    let mut px = vec![0.0; w * size];
    for (t, img) in images.iter().enumerate() {
        for y in 0..size {
            px[y * w + t * size..y * w + (t + 1) * size].copy_from_slice(&img[y * size..(y + 1) * size]);
        }
    }
    encode_pgm(w, size, &px)
}

/// One knockout: the PCA of the knocked-out codes and its mixing score.
#[derive(Debug, Clone, PartialEq)]
pub struct KnockoutResult {
    /// `None` for the baseline without knockout.
    pub dim: Option<usize>,
    pub pca: Pca2,
    pub mixing: f64,
}

pub const MIXING_K: usize = 10;

/// Baseline plus one knockout per dimension. Labels are the classifier's
/// predictions on the original codes.
pub fn knockout_all(codes: &[Vec<f64>], labels: &[bool], k: usize) -> Result<Vec<KnockoutResult>> {
    let d = codes.first().map_or(0, Vec::len);
    let mut dims: Vec<Option<usize>> = vec![None];
    dims.extend((0..d).map(Some));
    dims.into_iter()
        .map(|dim| {
            let c = match dim {
                Some(i) => knockout(codes, i)?,
                None => codes.to_vec(),
            };
            let pca = pca2(&c)?;
            let mixing = knn_mixing(&pca.projected, labels, k)?;
            Ok(KnockoutResult { dim, pca, mixing })
        })
        .collect()
}

/// Writes `knockout/dim_<i>.csv` per knockout and `knockout/summary.csv`.
pub fn write_knockouts(
    dir: &Path,
    results: &[KnockoutResult],
    event_ids: &[String],
    probabilities: &[f64],
    labels: &[bool],
) -> Result<()> {
    let mut summary = Vec::new();
    writeln!(summary, "dimension,mixing").expect("write to vec");
    for r in results {
        let name = r.dim.map_or_else(|| "baseline".to_string(), |d| d.to_string());
        writeln!(summary, "{name},{}", r.mixing).expect("write to vec");
        let Some(d) = r.dim else { continue };
        let mut buf = Vec::new();
        writeln!(buf, "event_id,pc1,pc2,probability,label").expect("write to vec");
        for (((id, p), prob), l) in event_ids.iter().zip(&r.pca.projected).zip(probabilities).zip(labels) {
            writeln!(buf, "{id},{},{},{prob},{}", p[0], p[1], u8::from(*l)).expect("write to vec");
        }
        write_atomic(&dir.join(format!("dim_{d}.csv")), &buf)?;
    }
    write_atomic(&dir.join("summary.csv"), &summary)
}

/// Writes `sweeps/dim_<i>.pgm` for every dimension.
pub fn write_sweeps(
    dir: &Path,
    seed_code: &[f64],
    codes: &[Vec<f64>],
    ckpt: &Checkpoint,
    steps: usize,
    lo_q: f64,
    hi_q: f64,
) -> Result<()> {
    let size = ckpt.arch().image_size;
    let grids: Vec<Result<Vec<u8>>> = (0..seed_code.len())
        .into_par_iter()
        .map(|dim| {
            let spec = SweepSpec {
                seed_code: seed_code.to_vec(),
                dim,
                steps,
                lo_q,
                hi_q,
            };
            Ok(sweep_grid_pgm(&interpolate_dimension(&spec, codes, ckpt)?, size))
        })
        .collect();
    for (dim, g) in grids.into_iter().enumerate() {
        write_atomic(&dir.join(format!("dim_{dim}.pgm")), &g?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::substream;
    use crate::vae::{FeatureSpec, VaeArch};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 1.0).unwrap(), 3.0);
        assert!((percentile(&[0.0, 10.0], 0.25).unwrap() - 2.5).abs() < 1e-12);
        assert!(percentile(&[], 0.5).is_err());
        assert_eq!(QuantileScale::Percent.to_quantile(0.001), 0.00001);
    }

    fn toy() -> Checkpoint {
        let arch = VaeArch {
            image_size: 8,
            widths: vec![2, 3],
            latent_dim: 3,
        };
        Checkpoint::untrained(&arch, FeatureSpec::Random { seed: 1, channels: vec![2] }, 4).unwrap()
    }

    #[test]
    fn sweeps() {
        let ck = toy();
        let mut rng = substream(3, 3);
        let codes: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let before = codes.clone();
        let seed = pathological_seed(&codes, &(0..50).map(|i| i % 3 == 0).collect::<Vec<_>>()).unwrap();
        let seed_before = seed.clone();
        let spec = SweepSpec { seed_code: seed.clone(), dim: 1, steps: 2, lo_q: 0.001, hi_q: 0.999 };
        let imgs = interpolate_dimension(&spec, &codes, &ck).unwrap();
        assert_eq!(imgs.len(), 2);
        let vals = sweep_values(&spec, &codes).unwrap();
        let col: Vec<f64> = codes.iter().map(|c| c[1]).collect();
        assert_eq!(vals, vec![percentile(&col, 0.001).unwrap(), percentile(&col, 0.999).unwrap()]);
        let ends: Vec<Vec<f64>> = vals.iter().map(|&v| { let mut z = seed.clone(); z[1] = v; z }).collect();
        assert_eq!(imgs, ck.decode(&ends).unwrap());
        assert_eq!(codes, before);
        assert_eq!(seed, seed_before);

        // a step landing on the seed's own value decodes the seed exactly
        let mut flat = codes.clone();
        for c in &mut flat {
            c[0] = seed[0];
        }
        let spec = SweepSpec { dim: 0, steps: 8, ..spec };
        let imgs = interpolate_dimension(&spec, &flat, &ck).unwrap();
        let at_seed = ck.decode(&[seed.clone()]).unwrap().pop().unwrap();
        assert!(imgs.iter().all(|im| *im == at_seed));
        assert!(pathological_seed(&codes, &[false; 50]).is_err());
    }

    #[test]
    fn knockout_properties() {
        let codes = vec![vec![1.0, 0.0, -2.0], vec![0.5, 0.0, 3.0]];
        let once = knockout(&codes, 1).unwrap();
        assert_eq!(once, codes);
        let k = knockout(&codes, 2).unwrap();
        assert_eq!(knockout(&k, 2).unwrap(), k);
        for (a, b) in k.iter().zip(&codes) {
            let na: f64 = a.iter().map(|v| v * v).sum();
            let nb: f64 = b.iter().map(|v| v * v).sum();
            assert!(na <= nb);
        }
        assert!(knockout(&codes, 3).is_err());
    }

    #[test]
    fn pca_line_and_centering() {
        let dir = [0.6, -0.8, 0.0, 0.0];
        let pts: Vec<Vec<f64>> = (0..10).map(|i| dir.iter().map(|d| d * i as f64 + 1.0).collect()).collect();
        let p = pca2(&pts).unwrap();
        assert!((p.explained[0] - 1.0).abs() < 1e-12);
        assert!(p.explained[1].abs() < 1e-12);
        // sign convention: largest-magnitude entry positive
        assert!((p.components[0][1] - 0.8).abs() < 1e-12);
        let mean_proj: f64 = p.projected.iter().map(|q| q[0]).sum::<f64>() / 10.0;
        assert!(mean_proj.abs() < 1e-12);
        assert!(pca2(&vec![vec![1.0, 1.0]; 4]).is_err());
        assert!(pca2(&pts[..2]).is_err());
    }

    #[test]
    fn mixing_extremes() {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            pts.push([i as f64 * 0.01, 0.0]);
            labels.push(false);
            pts.push([100.0 + i as f64 * 0.01, 0.0]);
            labels.push(true);
        }
        assert_eq!(knn_mixing(&pts, &labels, 10).unwrap(), 0.0);
        let alt: Vec<[f64; 2]> = (0..40).map(|i| [i as f64, 0.0]).collect();
        let lab: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        // interior points: both neighbors differ; the two ends: one of two
        assert_eq!(knn_mixing(&alt, &lab, 2).unwrap(), 78.0 / 80.0);
    }

    #[test]
    fn render_counts_and_determinism() {
        let ck = toy();
        let mut rng = substream(8, 8);
        let codes: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<bool> = codes.iter().map(|c| c[0] > 0.0).collect();
        let probs: Vec<f64> = codes.iter().map(|c| (c[0] + 1.0) / 2.0).collect();
        let ids: Vec<String> = (0..30).map(|i| format!("{i:016x}")).collect();
        let dir = tempfile::tempdir().unwrap();
        let seed = pathological_seed(&codes, &labels).unwrap();
        write_sweeps(&dir.path().join("sweeps"), &seed, &codes, &ck, 8, 0.001, 0.999).unwrap();
        let res = knockout_all(&codes, &labels, MIXING_K).unwrap();
        write_knockouts(&dir.path().join("knockout"), &res, &ids, &probs, &labels).unwrap();
        let pgm = std::fs::read(dir.path().join("sweeps/dim_2.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n64 8\n255\n"));
        assert_eq!(std::fs::read_dir(dir.path().join("sweeps")).unwrap().count(), 3);
        let csv = std::fs::read_to_string(dir.path().join("knockout/dim_0.csv")).unwrap();
        assert_eq!(csv.lines().count(), 31);
        let summary = std::fs::read_to_string(dir.path().join("knockout/summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 5);
        write_knockouts(&dir.path().join("knockout"), &res, &ids, &probs, &labels).unwrap();
        assert_eq!(csv, std::fs::read_to_string(dir.path().join("knockout/dim_0.csv")).unwrap());
    }

    proptest! {
        #[test]
        fn pca_rotation_invariant(seed in 0u64..500, angle in 0.0f64..6.28) {
            let mut rng = substream(seed, 0);
            let pts: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)]).collect();
            let (c, s) = (angle.cos(), angle.sin());
            let rot: Vec<Vec<f64>> = pts.iter().map(|p| vec![c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]).collect();
            let a = pca2(&pts).unwrap();
            let b = pca2(&rot).unwrap();
            prop_assert!((a.explained[0] - b.explained[0]).abs() < 1e-9);
            prop_assert!((a.explained[1] - b.explained[1]).abs() < 1e-9);
        }

        #[test]
        fn percentile_within_range(v in proptest::collection::vec(-100.0f64..100.0, 1..40), q in 0.0f64..=1.0) {
            let p = percentile(&v, q).unwrap();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p >= lo && p <= hi);
        }
    }
}
