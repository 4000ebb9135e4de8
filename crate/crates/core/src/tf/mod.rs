//! Time-frequency images: Morlet scalogram, bilinear resize, normalization.
//!
//! Frequency rows run from `f_max` (row 0) down to `f_min` (last row) on a
//! logarithmic grid, so images read like a spectrogram with high frequencies
//! on top. Time columns are offsets in milliseconds from the window center.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{encode_pgm, write_atomic};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Scalogram and image geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub n_freqs: usize,
    /// Morlet center parameter ω₀ (cycles-ish; 6 is customary).
    pub omega0: f64,
    pub out_h: usize,
    pub out_w: usize,
}

impl Default for TfConfig {
    fn default() -> Self {
        Self {
            f_min: 10.0,
            f_max: 290.0,
            n_freqs: 64,
            omega0: 6.0,
            out_h: 64,
            out_w: 64,
        }
    }
}

impl TfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_max > self.f_min && self.f_max.is_finite()) {
            return Err(Error::Config(format!(
                "frequency range must satisfy 0 < f_min < f_max, got {}..{}",
                self.f_min, self.f_max
            )));
        }
        if self.n_freqs < 2 {
            return Err(Error::Config(format!("n_freqs must be at least 2, got {}", self.n_freqs)));
        }
        if self.out_h == 0 || self.out_w == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if !(self.omega0 > 0.0) {
            return Err(Error::Config(format!("omega0 must be positive, got {}", self.omega0)));
        }
        Ok(())
    }
}

/// Logarithmic frequency grid, descending from `f_max` to `f_min`.
pub fn frequency_grid(f_min: f64, f_max: f64, n: usize) -> Vec<f64> {
    let (a, b) = (f_max.ln(), f_min.ln());
    (0..n)
        .map(|j| {
            if j == 0 {
                f_max
            } else if j == n - 1 {
                f_min
            } else {
                (a + (b - a) * j as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Precomputed FFT plans and wavelet frequency responses for one
/// (sample rate, window length) pair. Cheap to share across threads.
pub struct MorletPlan {
    fs: f64,
    len: usize,
    nfft: usize,
    freqs: Vec<f64>,
    /// `freqs.len()` rows of `nfft / 2` response values for bins `0..nfft/2`.
    responses: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl MorletPlan {
    pub fn new(fs: f64, len: usize, f_min: f64, f_max: f64, n_freqs: usize, omega0: f64) -> Result<Self> {
        if !(fs > 2.0 * f_max) {
            return Err(Error::Nyquist { fs, f_max });
        }
        if n_freqs < 2 || !(f_min > 0.0 && f_max > f_min) {
            return Err(Error::Config(format!(
                "bad frequency grid: {n_freqs} frequencies over {f_min}..{f_max} Hz"
            )));
        }
        if len == 0 {
            return Err(Error::Window("empty window".into()));
        }
        let nfft = (2 * len).next_power_of_two();
        let freqs = frequency_grid(f_min, f_max, n_freqs);
        let half = nfft / 2;
        let mut responses = vec![0.0; n_freqs * half];
        for (j, &f) in freqs.iter().enumerate() {
            // Analytic Morlet at scale s: H(ω) = 2·exp(-(sω - ω₀)²/2) for
            // ω > 0. The factor 2 makes a unit sine at f map to magnitude ~1.
            let s = omega0 / (2.0 * PI * f);
            for k in 1..half {
                let w = 2.0 * PI * k as f64 * fs / nfft as f64;
                responses[j * half + k] = 2.0 * (-0.5 * (s * w - omega0).powi(2)).exp();
            }
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            fs,
            len,
            nfft,
            freqs,
            responses,
            forward: planner.plan_fft_forward(nfft),
            inverse: planner.plan_fft_inverse(nfft),
        })
    }

    pub fn from_config(fs: f64, len: usize, cfg: &TfConfig) -> Result<Self> {
        Self::new(fs, len, cfg.f_min, cfg.f_max, cfg.n_freqs, cfg.omega0)
    }

    pub fn sample_rate(&self) -> f64 {
        self.fs
    }

    pub fn window_len(&self) -> usize {
        self.len
    }

    /// Center frequencies of the rows, descending.
    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// Magnitude scalogram, `n_freqs x len`.
    pub fn scalogram(&self, window: &[f64]) -> Result<Matrix> {
        if window.len() != self.len {
            return Err(Error::Window(format!(
                "plan expects {} samples, got {}",
                self.len,
                window.len()
            )));
        }
        if let Some(i) = window.iter().position(|v| !v.is_finite()) {
            return Err(Error::Window(format!("non-finite sample at index {i}")));
        }
        let n = self.nfft;
        let half = n / 2;
        let mut spectrum: Vec<Complex<f64>> = window
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(n)
            .collect();
        self.forward.process(&mut spectrum);
        let mut out = Matrix::zeros(self.freqs.len(), self.len);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for j in 0..self.freqs.len() {
            let resp = &self.responses[j * half..(j + 1) * half];
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for k in 1..half {
                buf[k] = spectrum[k] * resp[k];
            }
            self.inverse.process(&mut buf);
            let row = &mut out.data[j * self.len..(j + 1) * self.len];
            for (dst, c) in row.iter_mut().zip(&buf) {
                *dst = c.norm() * scale;
            }
        }
        Ok(out)
    }
}

/// One-shot scalogram with a freshly built plan.
pub fn morlet_scalogram(window: &[f64], fs: f64, f_min: f64, f_max: f64, n_freqs: usize) -> Result<Matrix> {
    MorletPlan::new(fs, window.len(), f_min, f_max, n_freqs, TfConfig::default().omega0)?.scalogram(window)
}

/// Bilinear resize with corner-aligned sampling: output corners coincide with
/// input corners.
pub fn resize_bilinear(m: &Matrix, out_h: usize, out_w: usize) -> Matrix {
    assert!(m.rows >= 1 && m.cols >= 1 && out_h >= 1 && out_w >= 1, "resize of empty matrix");
    let pos = |i: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out == 1 || inp == 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (inp - 1) as f64 / (out - 1) as f64;
        let lo = (x.floor() as usize).min(inp - 1);
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, x - lo as f64)
    };
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|c| pos(c, out_w, m.cols)).collect();
    let mut out = Matrix::zeros(out_h, out_w);
    for r in 0..out_h {
        let (r0, r1, fr) = pos(r, out_h, m.rows);
        for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
            let top = m.get(r0, c0) * (1.0 - fc) + m.get(r0, c1) * fc;
            let bottom = m.get(r1, c0) * (1.0 - fc) + m.get(r1, c1) * fc;
            out.data[r * out_w + c] = top * (1.0 - fr) + bottom * fr;
        }
    }
    out
}

/// Normalized time-frequency image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TfImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Row center frequencies in Hz, descending.
    pub freq_axis: Vec<f64>,
    /// Column times in ms relative to the window center, ascending.
    pub time_axis: Vec<f64>,
    /// `log1p` minimum and maximum before scaling.
    pub log_min: f64,
    pub log_max: f64,
}

/// `log1p` followed by per-image min-max scaling; a constant image maps to
/// all zeros. Axes are left empty.
pub fn normalize(m: &Matrix) -> Result<TfImage> {
    if let Some(i) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "normalize",
            node: i,
        });
    }
    let logs: Vec<f64> = m.data.iter().map(|&v| v.ln_1p()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = if hi > lo {
        logs.iter().map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; logs.len()]
    };
    Ok(TfImage {
        height: m.rows,
        width: m.cols,
        values,
        freq_axis: Vec::new(),
        time_axis: Vec::new(),
        log_min: lo,
        log_max: hi,
    })
}

/// Full window → image transform, with axes filled in.
pub fn window_to_image(plan: &MorletPlan, window: &[f64], cfg: &TfConfig) -> Result<TfImage> {
    let raw = plan.scalogram(window)?;
    let resized = resize_bilinear(&raw, cfg.out_h, cfg.out_w);
    let mut img = normalize(&resized)?;
    img.freq_axis = resample_log_axis(plan.freqs(), cfg.out_h);
    let n = plan.window_len();
    let half = (n / 2) as f64;
    img.time_axis = (0..cfg.out_w)
        .map(|c| {
            let x = if cfg.out_w == 1 { 0.0 } else { c as f64 * (n - 1) as f64 / (cfg.out_w - 1) as f64 };
            (x - half) * 1000.0 / plan.sample_rate()
        })
        .collect();
    Ok(img)
}

/// Frequencies at the resized row positions, interpolated on the log scale.
fn resample_log_axis(freqs: &[f64], out: usize) -> Vec<f64> {
    let n = freqs.len();
    (0..out)
        .map(|r| {
            if out == 1 || n == 1 {
                return freqs[0];
            }
            let x = r as f64 * (n - 1) as f64 / (out - 1) as f64;
            let lo = (x.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let t = x - lo as f64;
            (freqs[lo].ln() * (1.0 - t) + freqs[hi].ln() * t).exp()
        })
        .collect()
}

/// Writes `<stem>.pgm` (rows top = highest frequency) and `<stem>_axes.csv`
/// (`axis,index,value`).
pub fn dump_image(img: &TfImage, dir: &Path, stem: &str) -> Result<()> {
    write_atomic(
        &dir.join(format!("{stem}.pgm")),
        &encode_pgm(img.width, img.height, &img.values),
    )?;
    let mut csv = Vec::new();
    writeln!(csv, "axis,index,value").expect("write to vec");
    for (i, f) in img.freq_axis.iter().enumerate() {
        writeln!(csv, "freq_hz,{i},{f}").expect("write to vec");
    }
    for (i, t) in img.time_axis.iter().enumerate() {
        writeln!(csv, "time_ms,{i},{t}").expect("write to vec");
    }
    write_atomic(&dir.join(format!("{stem}_axes.csv")), &csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn nearest_bin(freqs: &[f64], f: f64) -> usize {
        (0..freqs.len())
            .min_by(|&a, &b| (freqs[a] - f).abs().total_cmp(&(freqs[b] - f).abs()))
            .unwrap()
    }

    fn argmax_row(m: &Matrix, col: usize) -> usize {
        (0..m.rows).max_by(|&a, &b| m.get(a, col).total_cmp(&m.get(b, col))).unwrap()
    }

    #[test]
    fn grid_is_log_spaced_and_descending() {
        let f = frequency_grid(10.0, 290.0, 64);
        assert_eq!((f[0], f[63]), (290.0, 10.0));
        let ratio = f[0] / f[1];
        for w in f.windows(2) {
            assert!(w[0] > w[1]);
            assert!((w[0] / w[1] - ratio).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_window_gives_zero_scalogram() {
        let m = morlet_scalogram(&vec![0.0; 1140], 2000.0, 10.0, 290.0, 64).unwrap();
        assert_eq!((m.rows, m.cols), (64, 1140));
        assert!(m.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_peak_tracks_frequency() {
        let plan = MorletPlan::new(2000.0, 1140, 10.0, 290.0, 64, 6.0).unwrap();
        for f in [20.0, 50.0, 100.0, 200.0, 250.0] {
            let m = plan.scalogram(&sine(f, 2000.0, 1140, 1.0)).unwrap();
            let want = nearest_bin(plan.freqs(), f);
            // Columns far enough from the edges that the zero padding does
            // not reach the wavelet support.
            for col in 400..740 {
                let got = argmax_row(&m, col);
                assert!(got.abs_diff(want) <= 1, "{f} Hz col {col}: row {got} vs {want}");
            }
        }
    }

    #[test]
    fn unit_sine_has_unit_magnitude_at_its_row() {
        let plan = MorletPlan::new(2000.0, 1140, 10.0, 290.0, 64, 6.0).unwrap();
        let f = plan.freqs()[20];
        let m = plan.scalogram(&sine(f, 2000.0, 1140, 1.0)).unwrap();
        assert!((m.get(20, 570) - 1.0).abs() < 0.01, "{}", m.get(20, 570));
    }

    #[test]
    fn nyquist_is_enforced() {
        assert!(matches!(
            morlet_scalogram(&[0.0; 16], 580.0, 10.0, 290.0, 4),
            Err(Error::Nyquist { .. })
        ));
        assert!(morlet_scalogram(&[0.0; 16], 581.0, 10.0, 290.0, 4).is_ok());
    }

    #[test]
    fn resize_examples() {
        let m = Matrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let r = resize_bilinear(&m, 3, 3);
        assert_eq!(r.get(1, 1), 0.5);
        assert_eq!((r.get(0, 0), r.get(0, 2), r.get(2, 0)), (0.0, 1.0, 1.0));
        let same = resize_bilinear(&Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 2, 3);
        assert_eq!(same.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = resize_bilinear(&Matrix::new(3, 5, vec![0.7; 15]), 64, 64);
        assert!(c.data.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn normalize_examples() {
        let e = std::f64::consts::E;
        let img = normalize(&Matrix::new(2, 2, vec![0.0, e - 1.0, e * e - 1.0, 0.0])).unwrap();
        let want = [0.0, 0.5, 1.0, 0.0];
        for (a, b) in img.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = normalize(&Matrix::zeros(3, 3)).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        assert!(normalize(&Matrix::new(1, 2, vec![0.0, f64::NAN])).is_err());
    }

    #[test]
    fn image_axes_and_range() {
        let cfg = TfConfig::default();
        let plan = MorletPlan::from_config(2000.0, 1140, &cfg).unwrap();
        let img = window_to_image(&plan, &sine(120.0, 2000.0, 1140, 3.0), &cfg).unwrap();
        assert_eq!(img.values.len(), 64 * 64);
        assert_eq!(img.freq_axis.len(), 64);
        assert!((img.freq_axis[0] - 290.0).abs() < 1e-9 && (img.freq_axis[63] - 10.0).abs() < 1e-9);
        assert!(img.time_axis.windows(2).all(|w| w[1] > w[0]));
        assert!((img.time_axis[0] + 285.0).abs() < 1e-9);
        let (lo, hi) = img.values.iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert_eq!((lo, hi), (0.0, 1.0));
        let again = window_to_image(&plan, &sine(120.0, 2000.0, 1140, 3.0), &cfg).unwrap();
        assert_eq!(img, again);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn homogeneous_and_subadditive(
            a in prop::collection::vec(-5.0f64..5.0, 64),
            b in prop::collection::vec(-5.0f64..5.0, 64),
        ) {
            let plan = MorletPlan::new(1000.0, 64, 20.0, 400.0, 8, 6.0).unwrap();
            let sa = plan.scalogram(&a).unwrap();
            let sb = plan.scalogram(&b).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let ss = plan.scalogram(&sum).unwrap();
            for i in 0..ss.data.len() {
                prop_assert!(ss.data[i] <= sa.data[i] + sb.data[i] + 1e-9);
            }
            let doubled: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
            let sd = plan.scalogram(&doubled).unwrap();
            for i in 0..sd.data.len() {
                prop_assert!((sd.data[i] - 2.0 * sa.data[i]).abs() <= 1e-9 * (1.0 + sa.data[i]));
            }
        }
    }
}
