//! Synthetic datasets with planted event classes, resection maps and
//! outcomes.
//!
//! Every channel carries a 1/f-amplitude noise floor. Events are one of three
//! morphologies: a fast ripple (250-290 Hz) riding on a sharp spike
//! (pathological), a ripple (90-150 Hz, physiological), or a broadband
//! artifact of varying shape (noise). For seizure-free subjects most
//! pathological events sit in resected channels; for the others they are
//! split between resected and preserved channels, which plants the
//! resection-ratio/outcome relationship the evaluation looks for.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_manifest, write_events, write_waveform, Dataset, DatasetManifest, EventKey, HfoEvent, Outcome,
    Recording, SubjectRecord,
};
use crate::error::{Error, Result};
use crate::par::*;
use crate::util::{stream_id, substream, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    Pathological,
    Physiological,
    Noise,
}

impl EventClass {
    pub const ALL: [EventClass; 3] = [EventClass::Pathological, EventClass::Physiological, EventClass::Noise];

    pub fn as_str(self) -> &'static str {
        match self {
            EventClass::Pathological => "pathological",
            EventClass::Physiological => "physiological",
            EventClass::Noise => "noise",
        }
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown event class {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub events_per_subject: usize,
    pub channels_per_subject: usize,
    /// Channels `0..resected_channels` of each subject are resected.
    pub resected_channels: usize,
    pub sample_rate: u32,
    /// Proportions of pathological, physiological and noise events.
    pub class_mix: [f64; 3],
    /// Burst RMS over floor RMS, in dB.
    pub snr_db: f64,
    /// Share of pathological events in resected channels, seizure-free subjects.
    pub resection_coverage: f64,
    /// Same share for subjects who are not seizure-free.
    pub failure_coverage: f64,
    pub institutions: usize,
    /// RMS of the noise floor in µV.
    pub floor_rms: f64,
    /// Events are spaced at least this far apart (the analysis window).
    pub window_ms: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 20,
            events_per_subject: 200,
            channels_per_subject: 8,
            resected_channels: 3,
            sample_rate: 2000,
            class_mix: [0.3, 0.4, 0.3],
            snr_db: 12.0,
            resection_coverage: 0.9,
            failure_coverage: 0.4,
            institutions: 2,
            floor_rms: 10.0,
            window_ms: 570.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_subjects == 0 || self.events_per_subject == 0 || self.channels_per_subject == 0 {
            return bad("subject, event and channel counts must be positive".into());
        }
        if self.resected_channels == 0 || self.resected_channels >= self.channels_per_subject {
            return bad(format!(
                "resected_channels must lie in 1..{}, got {}",
                self.channels_per_subject, self.resected_channels
            ));
        }
        if self.institutions == 0 {
            return bad("institutions must be positive".into());
        }
        let sum: f64 = self.class_mix.iter().sum();
        if self.class_mix.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!("class_mix must be proportions summing to 1, got {:?}", self.class_mix));
        }
        for (name, v) in [("resection_coverage", self.resection_coverage), ("failure_coverage", self.failure_coverage)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0,1], got {v}"));
            }
        }
        if self.sample_rate as f64 <= 2.0 * 290.0 {
            return bad(format!("sample_rate {} Hz cannot carry 290 Hz fast ripples", self.sample_rate));
        }
        if !(self.floor_rms > 0.0) || !(self.window_ms > 0.0) || self.snr_db.is_nan() {
            return bad("floor_rms and window_ms must be positive, snr_db a number".into());
        }
        Ok(())
    }

    /// Number of events per class for one subject (largest remainder).
    pub fn class_counts(&self) -> [usize; 3] {
        let exact: Vec<f64> = self.class_mix.iter().map(|p| p * self.events_per_subject as f64).collect();
        let mut out = [0usize; 3];
        for i in 0..3 {
            out[i] = exact[i].floor() as usize;
        }
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let mut left = self.events_per_subject - out.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            out[i] += 1;
            left -= 1;
        }
        out
    }

    pub fn subject_id(&self, i: usize) -> String {
        format!("sub{i:03}")
    }

    pub fn outcome(&self, i: usize) -> Outcome {
        if i % 3 == 2 {
            Outcome::NotSeizureFree
        } else {
            Outcome::SeizureFree
        }
    }
}

/// Unit-free 1/f-amplitude noise with the requested RMS.
pub fn pink_noise<R: Rng + ?Sized>(n: usize, fs: f64, rms: f64, rng: &mut R) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        *c = if bin == 0 {
            Complex::new(0.0, 0.0)
        } else {
            let f = bin as f64 * fs / n as f64;
            *c / f.max(1.0)
        };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let cur = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if cur > 0.0 {
        out.iter_mut().for_each(|v| *v *= rms / cur);
    }
    out
}

fn hann(i: usize, n: usize) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// The burst of one event class, with RMS `amp` over its duration.
pub fn generate_burst<R: Rng + ?Sized>(class: EventClass, fs: f64, amp: f64, rng: &mut R) -> Vec<f64> {
    let ms = |lo: f64, hi: f64, rng: &mut R| ((rng.random_range(lo..hi)) * fs / 1000.0).round().max(4.0) as usize;
    match class {
        EventClass::Pathological | EventClass::Physiological => {
            let (band, n) = if class == EventClass::Pathological {
                ((250.0, 290.0), ms(20.0, 40.0, rng))
            } else {
                ((90.0, 150.0), ms(40.0, 80.0, rng))
            };
            let f = rng.random_range(band.0..band.1);
            let phase = rng.random_range(0.0..2.0 * PI);
            let mut osc: Vec<f64> = (0..n)
                .map(|i| hann(i, n) * (2.0 * PI * f * i as f64 / fs + phase).sin())
                .collect();
            let r = rms(&osc);
            osc.iter_mut().for_each(|v| *v *= amp / r);
            if class == EventClass::Pathological {
                // Biphasic spike (derivative of a Gaussian, ~3 ms wide) at the
                // burst center, peaking at three times the burst RMS.
                let sigma = rng.random_range(2.0..4.0) * fs / 1000.0;
                let peak = 3.0 * amp;
                let c = n as f64 / 2.0;
                let norm = (-0.5f64).exp();
                for (i, v) in osc.iter_mut().enumerate() {
                    let t = (i as f64 - c) / sigma;
                    *v += -peak * t * (-0.5 * t * t).exp() / norm;
                }
            }
            osc
        }
        EventClass::Noise => {
            let n = ms(60.0, 250.0, rng);
            let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            let shaped: Vec<f64> = match rng.random_range(0..3) {
                0 => white,
                1 => {
                    let w = rng.random_range(2..10usize);
                    (0..n)
                        .map(|i| white[i.saturating_sub(w - 1)..=i].iter().sum::<f64>() / w as f64)
                        .collect()
                }
                _ => (0..n).map(|i| white[i] - if i > 0 { white[i - 1] } else { 0.0 }).collect(),
            };
            let taper = (n / 10).max(1);
            let mut out: Vec<f64> = shaped
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let edge = i.min(n - 1 - i);
                    v * if edge < taper { edge as f64 / taper as f64 } else { 1.0 }
                })
                .collect();
            let r = rms(&out);
            if r > 0.0 {
                out.iter_mut().for_each(|v| *v *= amp / r);
            }
            out
        }
    }
}

/// A standalone event: `len` samples of noise floor with a burst centered in
/// it. `snr_db = -inf` yields the floor alone.
#[derive(Debug, Clone, PartialEq)]
pub struct EventWaveform {
    pub samples: Vec<f64>,
    pub burst_start: usize,
    pub burst_len: usize,
}

pub fn generate_event_waveform<R: Rng + ?Sized>(
    class: EventClass,
    fs: f64,
    snr_db: f64,
    floor_rms: f64,
    len: usize,
    rng: &mut R,
) -> EventWaveform {
    let mut samples = pink_noise(len, fs, floor_rms, rng);
    let amp = floor_rms * 10f64.powf(snr_db / 20.0);
    let burst = generate_burst(class, fs, amp, rng);
    let burst_len = burst.len().min(len);
    let burst_start = (len - burst_len) / 2;
    for (i, v) in burst.iter().take(burst_len).enumerate() {
        samples[burst_start + i] += v;
    }
    EventWaveform {
        samples,
        burst_start,
        burst_len,
    }
}

/// A generated dataset held in memory together with its planted truth.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dataset: Dataset,
    /// Planted class per event, for scoring only.
    pub truth: Vec<(HfoEvent, EventClass)>,
}

impl SynthDataset {
    pub fn class_of(&self, key: EventKey) -> Option<EventClass> {
        self.truth.iter().find(|(e, _)| e.key() == key).map(|(_, c)| *c)
    }

    pub fn truth_map(&self) -> std::collections::BTreeMap<EventKey, EventClass> {
        self.truth.iter().map(|(e, c)| (e.key(), *c)).collect()
    }
}

struct SubjectOutput {
    record: SubjectRecord,
    recordings: Vec<Recording>,
    truth: Vec<(HfoEvent, EventClass)>,
}

fn channel_name(c: usize) -> String {
    format!("ch{c:02}")
}

fn generate_subject(cfg: &SynthConfig, index: usize) -> SubjectOutput {
    let mut rng = substream(cfg.seed, stream_id(&[0x5359_4e54, index as u64]));
    let fs = cfg.sample_rate as f64;
    let subject = cfg.subject_id(index);
    let outcome = cfg.outcome(index);
    let n_ch = cfg.channels_per_subject;
    let n_res = cfg.resected_channels;
    let [n_path, n_phys, n_noise] = cfg.class_counts();

    // Channel of each event.
    let coverage = match outcome {
        Outcome::SeizureFree => cfg.resection_coverage,
        _ => cfg.failure_coverage,
    };
    let n_path_res = (coverage * n_path as f64).round() as usize;
    let mut per_channel: Vec<Vec<EventClass>> = vec![Vec::new(); n_ch];
    for i in 0..n_path {
        let ch = if i < n_path_res {
            rng.random_range(0..n_res)
        } else {
            rng.random_range(n_res..n_ch)
        };
        per_channel[ch].push(EventClass::Pathological);
    }
    for (class, count) in [(EventClass::Physiological, n_phys), (EventClass::Noise, n_noise)] {
        for _ in 0..count {
            per_channel[rng.random_range(0..n_ch)].push(class);
        }
    }

    let window = (cfg.window_ms * fs / 1000.0).round() as usize;
    let slot = window + window / 4;
    let amp = cfg.floor_rms * 10f64.powf(cfg.snr_db / 20.0);
    let mut recordings = Vec::with_capacity(n_ch);
    let mut truth = Vec::new();
    for (c, classes) in per_channel.iter_mut().enumerate() {
        classes.shuffle(&mut rng);
        let len = slot * (classes.len() + 1);
        let mut samples = pink_noise(len, fs, cfg.floor_rms, &mut rng);
        let channel = channel_name(c);
        for (j, &class) in classes.iter().enumerate() {
            let jitter = rng.random_range(0..=slot / 10) as i64 - (slot / 20) as i64;
            let center = (slot / 2 + slot * j + slot / 2) as i64 + jitter;
            let burst = generate_burst(class, fs, amp, &mut rng);
            let start = center - (burst.len() / 2) as i64;
            for (i, v) in burst.iter().enumerate() {
                samples[(start + i as i64) as usize] += v;
            }
            let ev = HfoEvent {
                subject_id: subject.clone(),
                channel_id: channel.clone(),
                start_ms: start as f64 * 1000.0 / fs,
                end_ms: (start + burst.len() as i64) as f64 * 1000.0 / fs,
                detector_tag: "synthetic".into(),
            };
            truth.push((ev, class));
        }
        // Waveforms are stored as f32; keep the in-memory copy identical.
        samples.iter_mut().for_each(|v| *v = *v as f32 as f64);
        recordings.push(Recording {
            subject_id: subject.clone(),
            channel_id: channel,
            sample_rate: cfg.sample_rate,
            samples,
        });
    }
    let resected: BTreeSet<String> = (0..n_res).map(channel_name).collect();
    SubjectOutput {
        record: SubjectRecord {
            subject_id: subject,
            institution: format!("site{}", index % cfg.institutions),
            outcome,
            resected_channels: Some(resected),
        },
        recordings,
        truth,
    }
}

/// Generates the whole dataset. Subjects are independent substreams, so the
/// result does not depend on thread count.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let subjects: Vec<SubjectOutput> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| generate_subject(cfg, i))
        .collect();
    let mut records = Vec::new();
    let mut recordings = std::collections::BTreeMap::new();
    let mut truth = Vec::new();
    for s in subjects {
        records.push(s.record);
        for r in s.recordings {
            recordings.insert((r.subject_id.clone(), r.channel_id.clone()), r);
        }
        truth.extend(s.truth);
    }
    truth.sort_by(|a, b| a.0.sort_key_cmp(&b.0));
    let events = truth.iter().map(|(e, _)| e.clone()).collect();
    Ok(SynthDataset {
        dataset: Dataset {
            subjects: records,
            events,
            recordings,
        },
        truth,
    })
}

/// Writes manifest, event CSVs, waveforms and `ground_truth.csv` under `dir`
/// and returns the re-loaded manifest.
pub fn write_dataset(synth: &SynthDataset, dir: &Path) -> Result<DatasetManifest> {
    let ds = &synth.dataset;
    let mut manifest = DatasetManifest {
        root: dir.to_path_buf(),
        subjects: Vec::new(),
    };
    for rec in &ds.subjects {
        let id = &rec.subject_id;
        let events: Vec<HfoEvent> = ds.events.iter().filter(|e| &e.subject_id == id).cloned().collect();
        let events_path = dir.join("events").join(format!("{id}.csv"));
        let mut buf = Vec::new();
        write_events(&mut buf, &events)?;
        write_atomic(&events_path, &buf)?;
        let mut waveforms = std::collections::BTreeMap::new();
        for ((s, ch), r) in ds.recordings.range((id.clone(), String::new())..) {
            if s != id {
                break;
            }
            let p = dir.join("waveforms").join(format!("{id}_{ch}.hfow"));
            write_waveform(&p, r.sample_rate, &r.samples)?;
            waveforms.insert(ch.clone(), p);
        }
        manifest.subjects.push(crate::data::SubjectEntry {
            record: rec.clone(),
            events_path,
            waveforms,
            n_events: events.len(),
        });
    }
    let manifest_path = dir.join("manifest.toml");
    write_atomic(&manifest_path, manifest.to_toml().as_bytes())?;
    write_ground_truth(&dir.join("ground_truth.csv"), &synth.truth)?;
    load_manifest(&manifest_path)
}

#[derive(Serialize, Deserialize)]
struct TruthRow {
    subject: String,
    channel: String,
    start_ms: f64,
    end_ms: f64,
    true_class: EventClass,
}

pub fn write_ground_truth(path: &Path, truth: &[(HfoEvent, EventClass)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (e, c) in truth {
        w.serialize(TruthRow {
            subject: e.subject_id.clone(),
            channel: e.channel_id.clone(),
            start_ms: e.start_ms,
            end_ms: e.end_ms,
            true_class: *c,
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    write_atomic(path, &bytes)
}

/// Reads `ground_truth.csv` into a map keyed like [`HfoEvent::key`].
pub fn load_ground_truth(path: &Path) -> Result<std::collections::BTreeMap<EventKey, EventClass>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = std::collections::BTreeMap::new();
    for row in rdr.deserialize::<TruthRow>() {
        let r = row.map_err(|e| Error::csv(path, e))?;
        let ev = HfoEvent {
            subject_id: r.subject,
            channel_id: r.channel,
            start_ms: r.start_ms,
            end_ms: r.end_ms,
            detector_tag: String::new(),
        };
        out.insert(ev.key(), r.true_class);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{extract_window, load_dataset};
    use crate::tf::MorletPlan;

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 4,
            events_per_subject: 30,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn counts_follow_the_mix() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.class_counts(), [60, 80, 60]);
        let odd = SynthConfig {
            events_per_subject: 7,
            ..cfg
        };
        assert_eq!(odd.class_counts().iter().sum::<usize>(), 7);
    }

    #[test]
    fn twenty_by_two_hundred() {
        let cfg = SynthConfig {
            seed: 3,
            ..SynthConfig::default()
        };
        let s = generate_dataset(&cfg).unwrap();
        assert_eq!(s.dataset.events.len(), 4000);
        let path = s.truth.iter().filter(|(_, c)| *c == EventClass::Pathological).count();
        assert_eq!(path, 1200);
    }

    #[test]
    fn full_coverage_keeps_preserved_channels_clean() {
        let cfg = SynthConfig {
            resection_coverage: 1.0,
            ..small()
        };
        let s = generate_dataset(&cfg).unwrap();
        for rec in s.dataset.subjects.iter().filter(|r| r.outcome == Outcome::SeizureFree) {
            let dirty = s
                .truth
                .iter()
                .filter(|(e, c)| {
                    e.subject_id == rec.subject_id && *c == EventClass::Pathological && !rec.is_resected(&e.channel_id)
                })
                .count();
            assert_eq!(dirty, 0);
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a.dataset.recordings, b.dataset.recordings);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn floor_only_has_unit_rms_ratio() {
        let mut rng = substream(1, 1);
        let w = generate_event_waveform(EventClass::Physiological, 2000.0, f64::NEG_INFINITY, 10.0, 1140, &mut rng);
        let burst = &w.samples[w.burst_start..w.burst_start + w.burst_len];
        let ratio = rms(burst) / rms(&w.samples);
        assert!((ratio - 1.0).abs() < 0.5, "{ratio}");
        assert!((rms(&w.samples) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_signatures() {
        let plan = MorletPlan::new(2000.0, 1140, 10.0, 290.0, 64, 6.0).unwrap();
        let freqs = plan.freqs().to_vec();
        let mut rng = substream(7, 0);
        let trials = 40;
        let (mut phys_ok, mut path_ok) = (0, 0);
        for _ in 0..trials {
            let w = generate_event_waveform(EventClass::Physiological, 2000.0, 12.0, 10.0, 1140, &mut rng);
            let m = plan.scalogram(&w.samples).unwrap();
            let row = (0..64).max_by(|&a, &b| m.get(a, 570).total_cmp(&m.get(b, 570))).unwrap();
            if (90.0..=150.0).contains(&freqs[row]) {
                phys_ok += 1;
            }
            let w = generate_event_waveform(EventClass::Pathological, 2000.0, 12.0, 10.0, 1140, &mut rng);
            let m = plan.scalogram(&w.samples).unwrap();
            let center = w.burst_start + w.burst_len / 2;
            // Energy above 250 Hz and a broadband spike column at the burst
            // center, both well above the same bands away from the event.
            let band = |lo: f64, hi: f64, col: usize| {
                (0..64).filter(|&j| freqs[j] >= lo && freqs[j] <= hi).map(|j| m.get(j, col)).fold(0.0, f64::max)
            };
            let quiet_col = (center + 400) % 1140;
            if band(250.0, 290.0, center) > 4.0 * band(250.0, 290.0, quiet_col)
                && band(40.0, 120.0, center) > 4.0 * band(40.0, 120.0, quiet_col)
            {
                path_ok += 1;
            }
        }
        assert!(phys_ok * 100 >= 95 * trials, "physiological {phys_ok}/{trials}");
        assert!(path_ok * 100 >= 95 * trials, "pathological {path_ok}/{trials}");
    }

    #[test]
    fn written_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_dataset(&small()).unwrap();
        let m = write_dataset(&s, dir.path()).unwrap();
        assert_eq!(m.total_events(), 120);
        let loaded = load_dataset(&m).unwrap();
        assert_eq!(loaded.events, s.dataset.events);
        assert_eq!(loaded.recordings, s.dataset.recordings);
        let truth = load_ground_truth(&dir.path().join("ground_truth.csv")).unwrap();
        assert_eq!(truth, s.truth_map());
        for ev in &loaded.events {
            let w = extract_window(loaded.recording(ev).unwrap(), ev, 570.0).unwrap();
            assert_eq!(w.samples.len(), 1140);
        }
    }
}
