//! Stage orchestration over a work directory.
//!
//! Layout of a work dir:
//!
//! ```text
//! data/                 synthetic dataset (synth stage only)
//! tf/images.ssld        scalograms of every event, f32, one row per event
//! tf/events.csv         event order of the image rows
//! tf/fingerprint.txt    hash of the inputs the images were computed from
//! subjects.json         subject records
//! folds.json            subject-wise folds
//! fold_<i>/             vae.ssld, training_log.csv, weak_labels.csv,
//!                       discovery.json, classifier.ssld, classifier_log.csv,
//!                       predictions.csv, sweeps/, knockout/
//! predictions.csv       held-out predictions of every fold
//! report.json, report.md, outcome_model.csv
//! run_meta.json         config hash and seeds per stage
//! ```
//!
//! Every stage reads the artifacts of earlier stages, replaces only its own
//! outputs, and names the first missing input if one is absent.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{
    attach_classifier, predict, read_predictions, train_classifier, write_predictions, ClassifierParams, Prediction,
    TrainingSet,
};
use crate::config::{PositiveClass, RunConfig, Stage};
use crate::data::{
    extract_window, load_dataset, load_manifest, make_folds_with_sizes, read_events, write_events,
    FoldSplit, HfoEvent, SubjectRecord,
};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_fold, read_report, report_markdown, write_report, EventCall, MetricsReport};
use crate::labels::{discover, read_weak_labels, write_weak_labels, StageTag};
use crate::latent::{knockout_all, pathological_seed, write_knockouts, write_sweeps};
use crate::par::*;
use crate::synth::{generate_dataset, load_ground_truth, write_dataset, EventClass, SynthConfig};
use crate::tensor::Tensor;
use crate::tf::{dump_image, window_to_image, MorletPlan};
use crate::util::write_atomic;
use crate::vae::{load_checkpoint, pretrain, read_tensor_file, save_checkpoint, write_tensor_file, Checkpoint, TrainItem};

/// Paths of every artifact under one work dir.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn images(&self) -> PathBuf {
        self.root.join("tf").join("images.ssld")
    }
    pub fn image_events(&self) -> PathBuf {
        self.root.join("tf").join("events.csv")
    }
    pub fn fingerprint(&self) -> PathBuf {
        self.root.join("tf").join("fingerprint.txt")
    }
    pub fn subjects(&self) -> PathBuf {
        self.root.join("subjects.json")
    }
    pub fn folds(&self) -> PathBuf {
        self.root.join("folds.json")
    }
    pub fn fold_dir(&self, fold: usize) -> PathBuf {
        self.root.join(format!("fold_{fold}"))
    }
    pub fn vae(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("vae.ssld")
    }
    pub fn weak_labels(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("weak_labels.csv")
    }
    pub fn discovery(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("discovery.json")
    }
    pub fn classifier(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("classifier.ssld")
    }
    pub fn classifier_log(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("classifier_log.csv")
    }
    pub fn fold_predictions(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("predictions.csv")
    }
    pub fn sweeps(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("sweeps")
    }
    pub fn knockouts(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("knockout")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn run_meta(&self) -> PathBuf {
        self.root.join("run_meta.json")
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            what: what.to_string(),
        })
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    require(path, what)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("json serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Appends one stage entry to `run_meta.json`, keeping the others.
fn record_stage(cfg: &RunConfig, stage: &str, seeds: BTreeMap<String, u64>) -> Result<()> {
    let path = Layout::new(&cfg.work_dir).run_meta();
    let mut meta: serde_json::Value = if path.exists() {
        read_json(&path, "run metadata")?
    } else {
        serde_json::json!({})
    };
    let obj = meta.as_object_mut().ok_or_else(|| Error::Parse {
        path: path.clone(),
        message: "expected a JSON object".into(),
    })?;
    obj.insert("package".into(), env!("CARGO_PKG_NAME").into());
    obj.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    obj.insert("seed".into(), cfg.seed.into());
    let stages = obj.entry("stages").or_insert_with(|| serde_json::json!({}));
    stages[stage] = serde_json::json!({
        "config_hash": cfg.hash(),
        "seeds": seeds,
        "reference_mode": cfg.reference_mode,
        "threads": if cfg.reference_mode { 1 } else { cfg.threads },
        "parallel_feature": cfg!(feature = "parallel"),
    });
    write_json(&path, &meta)
}

/// Runs `f` with the thread count the config asks for.
pub fn in_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> T + Send) -> T {
    let threads = if cfg.reference_mode { 1 } else { cfg.threads };
    with_threads(threads, f)
}

// ---------------------------------------------------------------- synth

/// Writes a synthetic dataset to `<work>/data` and returns its manifest path.
pub fn run_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let layout = Layout::new(&cfg.work_dir);
    let synth_cfg = SynthConfig {
        seed: cfg.stage_seed(Stage::Synth, None),
        ..cfg.synth.clone()
    };
    let synth = generate_dataset(&synth_cfg)?;
    write_dataset(&synth, &layout.data_dir())?;
    record_stage(cfg, "synth", BTreeMap::from([("synth".into(), synth_cfg.seed)]))?;
    Ok(layout.data_dir().join("manifest.toml"))
}

/// The manifest named in the config, else the synthetic one in the work dir.
pub fn resolve_manifest(cfg: &RunConfig) -> Result<PathBuf> {
    let path = match &cfg.manifest {
        Some(p) => p.clone(),
        None => Layout::new(&cfg.work_dir).data_dir().join("manifest.toml"),
    };
    require(&path, "dataset manifest (set `manifest` or run `synth` first)")?;
    Ok(path)
}

// ---------------------------------------------------------------- ingest

/// Scalograms of every event, in the event order of the dataset.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub events: Vec<HfoEvent>,
    pub images: Vec<Vec<f64>>,
    pub size: usize,
}

impl ImageSet {
    /// Indices of the events of the given subjects.
    pub fn indices_of(&self, subjects: &[String]) -> Vec<usize> {
        let set: BTreeSet<&str> = subjects.iter().map(String::as_str).collect();
        (0..self.events.len())
            .filter(|&i| set.contains(self.events[i].subject_id.as_str()))
            .collect()
    }

    pub fn slices(&self, idx: &[usize]) -> Vec<&[f64]> {
        idx.iter().map(|&i| self.images[i].as_slice()).collect()
    }

    pub fn all_slices(&self) -> Vec<&[f64]> {
        self.images.iter().map(Vec::as_slice).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub n_subjects: usize,
    pub n_events: usize,
    /// Images were reused from an earlier ingest of the same inputs.
    pub cached: bool,
}

fn fingerprint(cfg: &RunConfig, ds: &crate::data::Dataset) -> String {
    let mut h = Sha256::new();
    h.update(toml::to_string(&cfg.tf).expect("tf config serializes"));
    h.update(cfg.window_ms.to_le_bytes());
    for e in &ds.events {
        h.update(e.key().0.to_le_bytes());
    }
    for ((s, c), r) in &ds.recordings {
        h.update(s.as_bytes());
        h.update([0]);
        h.update(c.as_bytes());
        h.update([0]);
        h.update(r.sample_rate.to_le_bytes());
        for x in &r.samples {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn event_stem(e: &HfoEvent) -> String {
    format!("{}_{}_{}", e.subject_id, e.channel_id, e.start_ms)
}

/// Loads the manifest, computes (or reuses) the scalogram of every event,
/// and writes the subject records and folds. With `dump_tf`, every image is
/// also written there as PGM with its axes.
pub fn ingest(cfg: &RunConfig, dump_tf: Option<&Path>) -> Result<IngestSummary> {
    let layout = Layout::new(&cfg.work_dir);
    let manifest = load_manifest(&resolve_manifest(cfg)?)?;
    let ds = load_dataset(&manifest)?;
    if ds.events.is_empty() {
        return Err(Error::Empty("manifest lists no events".into()));
    }
    let fp = fingerprint(cfg, &ds);
    let cached = layout.images().exists()
        && layout.image_events().exists()
        && std::fs::read_to_string(layout.fingerprint()).is_ok_and(|s| s.trim() == fp);

    if !cached || dump_tf.is_some() {
        let mut plans: BTreeMap<u32, MorletPlan> = BTreeMap::new();
        for r in ds.recordings.values() {
            if let std::collections::btree_map::Entry::Vacant(v) = plans.entry(r.sample_rate) {
                let len = 2 * crate::data::window_half_samples(cfg.window_ms, r.sample_rate);
                v.insert(MorletPlan::from_config(r.sample_rate as f64, len, &cfg.tf)?);
            }
        }
        let images: Vec<Result<crate::tf::TfImage>> = ds
            .events
            .par_iter()
            .map(|e| {
                let rec = ds.recording(e).ok_or_else(|| Error::Manifest(format!(
                    "no waveform for {}/{}",
                    e.subject_id, e.channel_id
                )))?;
                let w = extract_window(rec, e, cfg.window_ms)?;
                window_to_image(&plans[&rec.sample_rate], &w.samples, &cfg.tf)
            })
            .collect();
        let images: Vec<crate::tf::TfImage> = images.into_iter().collect::<Result<_>>()?;
        if let Some(dir) = dump_tf {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            for (e, img) in ds.events.iter().zip(&images) {
                dump_image(img, dir, &event_stem(e))?;
            }
        }
        if !cached {
            let px = cfg.tf.out_h * cfg.tf.out_w;
            let mut flat = Vec::with_capacity(images.len() * px);
            for img in &images {
                flat.extend_from_slice(&img.values);
            }
            let t = Tensor::new(vec![images.len(), px], flat);
            write_tensor_file(&layout.images(), &[("images".into(), t)])?;
            let mut buf = Vec::new();
            write_events(&mut buf, &ds.events)?;
            write_atomic(&layout.image_events(), &buf)?;
            write_atomic(&layout.fingerprint(), format!("{fp}\n").as_bytes())?;
        }
    } else {
        log::info!("scalograms unchanged, reusing {}", layout.images().display());
    }

    let folds_seed = cfg.stage_seed(Stage::Folds, None);
    let folds = make_folds_with_sizes(&ds.subjects, cfg.folds.k, folds_seed, cfg.folds.sizes)?;
    write_json(&layout.subjects(), &ds.subjects)?;
    write_json(&layout.folds(), &folds)?;
    record_stage(cfg, "ingest", BTreeMap::from([("folds".into(), folds_seed)]))?;
    Ok(IngestSummary {
        n_subjects: ds.subjects.len(),
        n_events: ds.events.len(),
        cached,
    })
}

pub fn load_images(layout: &Layout) -> Result<ImageSet> {
    require(&layout.images(), "scalogram cache (run `ingest`)")?;
    require(&layout.image_events(), "scalogram event list (run `ingest`)")?;
    let path = layout.image_events();
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let events = read_events(file, &path)?;
    let tensors = read_tensor_file(&layout.images())?;
    let t = tensors
        .into_iter()
        .find(|(n, _)| n == "images")
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Checkpoint("scalogram cache has no `images` table".into()))?;
    let (n, px) = (t.shape()[0], t.shape()[1]);
    if n != events.len() {
        return Err(Error::Checkpoint(format!("{n} images for {} events", events.len())));
    }
    let size = (px as f64).sqrt().round() as usize;
    if size * size != px {
        return Err(Error::Checkpoint(format!("image rows of {px} pixels are not square")));
    }
    let images = t.data().chunks(px).map(<[f64]>::to_vec).collect();
    Ok(ImageSet { events, images, size })
}

pub fn load_folds(layout: &Layout) -> Result<Vec<FoldSplit>> {
    read_json(&layout.folds(), "fold assignment (run `ingest`)")
}

pub fn load_subjects(layout: &Layout) -> Result<BTreeMap<String, SubjectRecord>> {
    let v: Vec<SubjectRecord> = read_json(&layout.subjects(), "subject records (run `ingest`)")?;
    Ok(v.into_iter().map(|s| (s.subject_id.clone(), s)).collect())
}

/// The requested folds, or all of them.
pub fn fold_selection(folds: &[FoldSplit], only: Option<usize>) -> Result<Vec<FoldSplit>> {
    match only {
        None => Ok(folds.to_vec()),
        Some(i) => folds
            .iter()
            .find(|f| f.fold_id == i)
            .cloned()
            .map(|f| vec![f])
            .ok_or_else(|| Error::Config(format!("fold {i} does not exist ({} folds)", folds.len()))),
    }
}

fn load_vae(layout: &Layout, fold: usize) -> Result<Checkpoint> {
    let p = layout.vae(fold);
    require(&p, "VAE checkpoint (run `pretrain`)")?;
    load_checkpoint(&p)
}

fn load_classifier(layout: &Layout, fold: usize) -> Result<(Checkpoint, ClassifierParams)> {
    let p = layout.classifier(fold);
    require(&p, "classifier checkpoint (run `train`)")?;
    let ckpt = load_checkpoint(&p)?;
    let params = ClassifierParams::from_checkpoint(&ckpt)?;
    Ok((ckpt, params))
}

// ---------------------------------------------------------------- pretrain

/// Pre-trains the VAE of each selected fold on its training subjects, with
/// the validation subjects as the monitoring set.
pub fn run_pretrain(cfg: &RunConfig, only: Option<usize>) -> Result<()> {
    let layout = Layout::new(&cfg.work_dir);
    let images = load_images(&layout)?;
    if images.size != cfg.pretrain.arch.image_size {
        return Err(Error::Config(format!(
            "cached images are {0}x{0} but the VAE expects {1}x{1}; re-run `ingest`",
            images.size, cfg.pretrain.arch.image_size
        )));
    }
    let mut seeds = BTreeMap::new();
    for fold in fold_selection(&load_folds(&layout)?, only)? {
        let items = |ids: &[String]| -> Vec<TrainItem> {
            images
                .indices_of(ids)
                .into_iter()
                .map(|i| TrainItem {
                    subject: images.events[i].subject_id.as_str(),
                    image: images.images[i].as_slice(),
                })
                .collect()
        };
        let train = items(&fold.train);
        let val = items(&fold.val);
        let pcfg = crate::vae::PretrainConfig {
            seed: cfg.stage_seed(Stage::Pretrain, Some(fold.fold_id)),
            ..cfg.pretrain.clone()
        };
        log::info!("fold {}: pre-training on {} events ({} validation)", fold.fold_id, train.len(), val.len());
        pretrain(&train, &val, &pcfg, Some(&layout.fold_dir(fold.fold_id)))?;
        seeds.insert(format!("fold_{}", fold.fold_id), pcfg.seed);
    }
    record_stage(cfg, "pretrain", seeds)
}

// ---------------------------------------------------------------- discover

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverySummary {
    pub fold: usize,
    pub n_events: usize,
    pub noise_cluster: usize,
    pub stage1_sizes: Vec<usize>,
    pub stage1_mean_loss: Vec<f64>,
    pub stage1_tie: bool,
    pub pathological_cluster: usize,
    pub stage2_sizes: Vec<usize>,
    pub stage2_resected_fraction: Vec<f64>,
    pub stage2_tie: bool,
    pub n_noise: usize,
    pub n_physiological: usize,
    pub n_pathological: usize,
}

/// Weak-label discovery on the training subjects of each selected fold.
pub fn run_discover(cfg: &RunConfig, only: Option<usize>) -> Result<Vec<DiscoverySummary>> {
    let layout = Layout::new(&cfg.work_dir);
    let images = load_images(&layout)?;
    let subjects = load_subjects(&layout)?;
    let mut out = Vec::new();
    let mut seeds = BTreeMap::new();
    for fold in fold_selection(&load_folds(&layout)?, only)? {
        let ckpt = load_vae(&layout, fold.fold_id)?;
        let idx = images.indices_of(&fold.train);
        let events: Vec<HfoEvent> = idx.iter().map(|&i| images.events[i].clone()).collect();
        let slices = images.slices(&idx);
        let codes = ckpt.embed(&slices)?;
        let losses = ckpt.reconstruction_losses(&slices)?;
        let kcfg = crate::labels::KMeansConfig {
            seed: cfg.stage_seed(Stage::Discover, Some(fold.fold_id)),
            ..cfg.discovery
        };
        let d = discover(&events, &codes, &losses, &subjects, &kcfg)?;
        write_weak_labels(&layout.weak_labels(fold.fold_id), &d.labels)?;
        let count = |t: StageTag| d.labels.iter().filter(|w| w.tag == t).count();
        let summary = DiscoverySummary {
            fold: fold.fold_id,
            n_events: events.len(),
            noise_cluster: d.background.noise_cluster,
            stage1_sizes: d.background.model.sizes(),
            stage1_mean_loss: d.background.mean_loss.clone(),
            stage1_tie: d.background.tie,
            pathological_cluster: d.pathological.pathological_cluster,
            stage2_sizes: d.pathological.model.sizes(),
            stage2_resected_fraction: d.pathological.resected_fraction.clone(),
            stage2_tie: d.pathological.tie,
            n_noise: count(StageTag::Noise),
            n_physiological: count(StageTag::Physiological),
            n_pathological: count(StageTag::Pathological),
        };
        write_json(&layout.discovery(fold.fold_id), &summary)?;
        seeds.insert(format!("fold_{}", fold.fold_id), kcfg.seed);
        out.push(summary);
    }
    record_stage(cfg, "discover", seeds)?;
    Ok(out)
}

// ---------------------------------------------------------------- train

/// Trains the classification head of each selected fold on its weak labels.
pub fn run_train(cfg: &RunConfig, only: Option<usize>) -> Result<()> {
    let layout = Layout::new(&cfg.work_dir);
    let images = load_images(&layout)?;
    let mut seeds = BTreeMap::new();
    for fold in fold_selection(&load_folds(&layout)?, only)? {
        let f = fold.fold_id;
        let ckpt = load_vae(&layout, f)?;
        let wl_path = layout.weak_labels(f);
        require(&wl_path, "weak labels (run `discover`)")?;
        let weak = read_weak_labels(&wl_path)?;
        let idx: Vec<usize> = (0..images.events.len())
            .filter(|&i| weak.contains_key(&images.events[i].key()))
            .collect();
        if idx.len() != weak.len() {
            return Err(Error::Config(format!(
                "{} weak labels of fold {f} name events missing from the scalogram cache",
                weak.len() - idx.len()
            )));
        }
        let set = TrainingSet {
            latents: ckpt.encode(&images.slices(&idx))?,
            labels: idx.iter().map(|&i| weak[&images.events[i].key()].label()).collect(),
            keys: idx.iter().map(|&i| images.events[i].key().0).collect(),
        };
        let ccfg = crate::classifier::ClassifierConfig {
            seed: cfg.stage_seed(Stage::Classifier, Some(f)),
            ..cfg.classifier
        };
        log::info!(
            "fold {f}: training head on {} events ({} pathological), augment = {}",
            set.labels.len(),
            set.labels.iter().filter(|&&l| l == 1).count(),
            ccfg.augment
        );
        let outcome = train_classifier(&set, &ckpt, &ccfg)?;
        save_checkpoint(&layout.classifier(f), &attach_classifier(&ckpt, &outcome.params))?;
        let mut log_csv = Vec::new();
        writeln!(log_csv, "epoch,loss").expect("write to vec");
        for (e, l) in outcome.epoch_loss.iter().enumerate() {
            writeln!(log_csv, "{e},{l}").expect("write to vec");
        }
        write_atomic(&layout.classifier_log(f), &log_csv)?;
        seeds.insert(format!("fold_{f}"), ccfg.seed);
    }
    record_stage(cfg, "train", seeds)
}

// ---------------------------------------------------------------- evaluate

fn predict_all(images: &ImageSet, layout: &Layout, fold: usize, threshold: f64) -> Result<Vec<Prediction>> {
    let (ckpt, params) = load_classifier(layout, fold)?;
    predict(&images.all_slices(), &ckpt, &params, threshold)
}

/// Predicts every event with each fold's classifier, then scores the folds
/// clinically and writes the report.
pub fn run_evaluate(cfg: &RunConfig) -> Result<MetricsReport> {
    let layout = Layout::new(&cfg.work_dir);
    let folds = load_folds(&layout)?;
    for f in &folds {
        require(&layout.classifier(f.fold_id), "classifier checkpoint (run `train`)")?;
    }
    let images = load_images(&layout)?;
    let subjects = load_subjects(&layout)?;
    let mut held_out = Vec::new();
    let mut fold_metrics = Vec::with_capacity(folds.len());
    for fold in &folds {
        let preds = predict_all(&images, &layout, fold.fold_id, cfg.classifier.threshold)?;
        let rows: Vec<(HfoEvent, Prediction)> = images.events.iter().cloned().zip(preds).collect();
        write_predictions(&layout.fold_predictions(fold.fold_id), &rows)?;
        let mut calls: BTreeMap<String, Vec<EventCall>> = BTreeMap::new();
        for (e, p) in &rows {
            calls.entry(e.subject_id.clone()).or_default().push(EventCall {
                channel: e.channel_id.clone(),
                pathological: p.is_pathological,
            });
        }
        let test: BTreeSet<&str> = fold.test.iter().map(String::as_str).collect();
        held_out.extend(rows.into_iter().filter(|(e, _)| test.contains(e.subject_id.as_str())));
        fold_metrics.push(evaluate_fold(
            fold,
            &subjects,
            &calls,
            cfg.eval.f1_positive == PositiveClass::Success,
        )?);
    }
    write_predictions(&layout.predictions(), &held_out)?;
    let report = aggregate(fold_metrics, cfg.eval.f1_positive == PositiveClass::Success)?;
    write_report(&cfg.work_dir, &report)?;
    record_stage(cfg, "evaluate", BTreeMap::new())?;
    Ok(report)
}

// ---------------------------------------------------------------- latent diagnostics

fn latent_inputs(cfg: &RunConfig, fold: usize) -> Result<(ImageSet, Checkpoint, Vec<Vec<f64>>, Vec<f64>)> {
    let layout = Layout::new(&cfg.work_dir);
    let images = load_images(&layout)?;
    let (ckpt, params) = load_classifier(&layout, fold)?;
    let codes = ckpt.embed(&images.all_slices())?;
    let probs = params.probabilities(&codes);
    Ok((images, ckpt, codes, probs))
}

/// Decoded sweeps of every latent dimension around the mean code of the
/// predicted-pathological events.
pub fn run_sweep(cfg: &RunConfig, fold: usize) -> Result<PathBuf> {
    let (_, ckpt, codes, probs) = latent_inputs(cfg, fold)?;
    let flags: Vec<bool> = probs
        .iter()
        .map(|&p| crate::classifier::decide(p, cfg.classifier.threshold))
        .collect();
    let seed = pathological_seed(&codes, &flags)?;
    let dir = Layout::new(&cfg.work_dir).sweeps(fold);
    let lo = cfg.latent.quantile_scale.to_quantile(cfg.latent.lo_q);
    let hi = cfg.latent.quantile_scale.to_quantile(cfg.latent.hi_q);
    write_sweeps(&dir, &seed, &codes, &ckpt, cfg.latent.steps, lo, hi)?;
    record_stage(cfg, "sweep", BTreeMap::new())?;
    Ok(dir)
}

/// PCA of the codes with each dimension knocked out, coloured by the
/// predictions on the unmodified codes.
pub fn run_knockout(cfg: &RunConfig, fold: usize) -> Result<PathBuf> {
    let (images, _, codes, probs) = latent_inputs(cfg, fold)?;
    let labels: Vec<bool> = probs
        .iter()
        .map(|&p| crate::classifier::decide(p, cfg.classifier.threshold))
        .collect();
    let results = knockout_all(&codes, &labels, cfg.latent.mixing_k)?;
    let ids: Vec<String> = images.events.iter().map(event_stem).collect();
    let dir = Layout::new(&cfg.work_dir).knockouts(fold);
    write_knockouts(&dir, &results, &ids, &probs, &labels)?;
    record_stage(cfg, "knockout", BTreeMap::new())?;
    Ok(dir)
}

// ---------------------------------------------------------------- planted truth

/// Agreement of the stage outputs with a synthetic dataset's planted classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthScores {
    /// Share of events in the noise clusters that were planted as noise.
    pub stage1_noise_purity: f64,
    /// Share of planted noise events that landed in a noise cluster.
    pub stage1_noise_recall: f64,
    /// Agreement of the stage-2 pathological/physiological split with the
    /// planted pathological class, over the events reaching stage 2.
    pub stage2_agreement: f64,
    /// Per-event agreement of held-out predictions with the planted
    /// pathological class.
    pub classifier_agreement: f64,
}

/// Locates `ground_truth.csv` in the work dir (forked runs) or next to the
/// manifest.
pub fn ground_truth_path(cfg: &RunConfig) -> Option<PathBuf> {
    let local = cfg.work_dir.join("ground_truth.csv");
    if local.exists() {
        return Some(local);
    }
    let m = resolve_manifest(cfg).ok()?;
    let p = m.parent()?.join("ground_truth.csv");
    p.exists().then_some(p)
}

/// Scores weak labels and held-out predictions against planted classes.
pub fn score_against_truth(cfg: &RunConfig, truth_path: &Path) -> Result<TruthScores> {
    let layout = Layout::new(&cfg.work_dir);
    let truth = load_ground_truth(truth_path)?;
    let class = |e: &HfoEvent| {
        truth.get(&e.key()).copied().ok_or_else(|| {
            Error::Evaluation(format!("{}/{} at {} ms has no planted class", e.subject_id, e.channel_id, e.start_ms))
        })
    };
    let (mut noise_cluster, mut noise_pure, mut noise_total, mut noise_found) = (0usize, 0usize, 0usize, 0usize);
    let (mut s2, mut s2_agree) = (0usize, 0usize);
    let folds = load_folds(&layout)?;
    let images = load_images(&layout)?;
    let by_key: BTreeMap<_, _> = images.events.iter().map(|e| (e.key(), e)).collect();
    for f in &folds {
        let path = layout.weak_labels(f.fold_id);
        require(&path, "weak labels (run `discover`)")?;
        for (key, tag) in read_weak_labels(&path)? {
            let e = by_key.get(&key).ok_or_else(|| Error::Evaluation("weak label for an unknown event".into()))?;
            let c = class(e)?;
            let is_noise = c == EventClass::Noise;
            noise_total += usize::from(is_noise);
            if tag == StageTag::Noise {
                noise_cluster += 1;
                noise_pure += usize::from(is_noise);
                noise_found += usize::from(is_noise);
            } else {
                s2 += 1;
                s2_agree += usize::from((tag == StageTag::Pathological) == (c == EventClass::Pathological));
            }
        }
    }
    require(&layout.predictions(), "held-out predictions (run `evaluate`)")?;
    let preds = read_predictions(&layout.predictions())?;
    let mut agree = 0usize;
    for (e, p) in &preds {
        agree += usize::from(p.is_pathological == (class(e)? == EventClass::Pathological));
    }
    let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    Ok(TruthScores {
        stage1_noise_purity: ratio(noise_pure, noise_cluster),
        stage1_noise_recall: ratio(noise_found, noise_total),
        stage2_agreement: ratio(s2_agree, s2),
        classifier_agreement: ratio(agree, preds.len()),
    })
}

// ---------------------------------------------------------------- report

/// Re-renders `report.md` from `report.json`, adding planted-truth scores
/// when the dataset carries them.
pub fn run_report(cfg: &RunConfig) -> Result<String> {
    let layout = Layout::new(&cfg.work_dir);
    require(&layout.report(), "metrics report (run `evaluate`)")?;
    let report = read_report(&layout.report())?;
    let mut md = report_markdown(&report);
    if let Some(gt) = ground_truth_path(cfg) {
        let s = score_against_truth(cfg, &gt)?;
        md.push_str(&format!(
            "\n## Planted truth\n\n| score | value |\n|---|---|\n\
             | stage-1 noise purity | {:.4} |\n| stage-1 noise recall | {:.4} |\n\
             | stage-2 agreement | {:.4} |\n| held-out classifier agreement | {:.4} |\n",
            s.stage1_noise_purity, s.stage1_noise_recall, s.stage2_agreement, s.classifier_agreement
        ));
    }
    write_atomic(&cfg.work_dir.join("report.md"), md.as_bytes())?;
    Ok(md)
}

// ---------------------------------------------------------------- whole runs

/// ingest, pretrain, discover, train, evaluate, report.
pub fn run_all(cfg: &RunConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    ingest(cfg, None)?;
    run_pretrain(cfg, None)?;
    run_discover(cfg, None)?;
    run_train(cfg, None)?;
    let report = run_evaluate(cfg)?;
    run_report(cfg)?;
    Ok(report)
}

/// Copies the upstream artifacts (scalograms, folds, VAEs and weak labels)
/// into `dest`, so downstream stages can be re-run there with other
/// settings while the source stays untouched.
pub fn fork_upstream(src: &Path, dest: &Path) -> Result<()> {
    let (from, to) = (Layout::new(src), Layout::new(dest));
    let folds = load_folds(&from)?;
    let mut pairs = vec![
        (from.images(), to.images()),
        (from.image_events(), to.image_events()),
        (from.fingerprint(), to.fingerprint()),
        (from.subjects(), to.subjects()),
        (from.folds(), to.folds()),
    ];
    for f in &folds {
        pairs.push((from.vae(f.fold_id), to.vae(f.fold_id)));
        pairs.push((from.weak_labels(f.fold_id), to.weak_labels(f.fold_id)));
    }
    let gt = from.data_dir().join("ground_truth.csv");
    for (a, b) in pairs {
        require(&a, "upstream artifact")?;
        let bytes = std::fs::read(&a).map_err(|e| Error::io(&a, e))?;
        write_atomic(&b, &bytes)?;
    }
    if gt.exists() {
        write_atomic(&to.root.join("ground_truth.csv"), &std::fs::read(&gt).map_err(|e| Error::io(&gt, e))?)?;
    }
    Ok(())
}
