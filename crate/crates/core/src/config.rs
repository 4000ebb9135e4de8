//! Run configuration: every stage's hyperparameters in one TOML-loadable
//! structure, the default (full-scale) values and a desk-scale preset.
//!
//! Stage seeds are not set individually; they are derived from the
//! top-level `seed` (and the fold index) by [`RunConfig::stage_seed`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::data::FoldSizes;
use crate::error::{Error, Result};
use crate::labels::KMeansConfig;
use crate::latent::QuantileScale;
use crate::synth::SynthConfig;
use crate::tf::TfConfig;
use crate::util::{sha256_hex, stream_id};
use crate::vae::{PretrainConfig, VaeArch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldConfig {
    pub k: usize,
    pub sizes: FoldSizes,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self {
            k: 5,
            sizes: FoldSizes::Partition,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveClass {
    #[default]
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Positive class of F1.
    pub f1_positive: PositiveClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentConfig {
    pub steps: usize,
    pub lo_q: f64,
    pub hi_q: f64,
    pub quantile_scale: QuantileScale,
    pub mixing_k: usize,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            steps: 8,
            lo_q: 0.001,
            hi_q: 0.999,
            quantile_scale: QuantileScale::Fraction,
            mixing_k: crate::latent::MIXING_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub seed: u64,
    /// Single thread; results are identical to the parallel path either way.
    pub reference_mode: bool,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    /// Total window length around each event midpoint.
    pub window_ms: f64,
    pub folds: FoldConfig,
    pub tf: TfConfig,
    pub pretrain: PretrainConfig,
    pub discovery: KMeansConfig,
    pub classifier: ClassifierConfig,
    pub eval: EvalConfig,
    pub latent: LatentConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            work_dir: PathBuf::from("work"),
            seed: 0,
            reference_mode: false,
            threads: 0,
            window_ms: 570.0,
            folds: FoldConfig::default(),
            tf: TfConfig::default(),
            pretrain: PretrainConfig::default(),
            discovery: KMeansConfig::default(),
            classifier: ClassifierConfig::default(),
            eval: EvalConfig::default(),
            latent: LatentConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Which named preset a config starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full-scale defaults.
    Full,
    /// Narrow VAE and small batches, sized for a CPU and the synthetic
    /// 20-subject dataset.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset {other:?} (full, desk)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth = 1,
    Folds,
    Pretrain,
    Discover,
    Classifier,
    Shuffle,
    Sweep,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => Self::default(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Desk-scale preset. The network is narrower and the batches smaller
    /// so that ten epochs over ~2,400 events still take a few hundred
    /// optimizer steps on one CPU core.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.pretrain.arch = VaeArch {
            image_size: 64,
            widths: vec![4, 8, 16, 32],
            latent_dim: 16,
        };
        c.pretrain.epochs = 10;
        c.pretrain.batch_size = 32;
        c.classifier.batch_size = 32;
        c.classifier.lr = 1e-3;
        c
    }

    /// Seed of one stage, optionally per fold.
    pub fn stage_seed(&self, stage: Stage, fold: Option<usize>) -> u64 {
        stream_id(&[self.seed, stage as u64, fold.map_or(u64::MAX, |f| f as u64)])
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_over(path, &Self::default())
    }

    /// Loads `path` on top of a preset: keys present in the file replace the
    /// preset's values, absent keys keep them.
    pub fn load_over(path: &Path, base: &RunConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overlay: toml::Table = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut merged = toml::Table::try_from(base).expect("config serializes");
        check_known("", &merged, &overlay).map_err(|k| Error::Config(format!("{}: unknown config key {k:?}", path.display())))?;
        merge_tables(&mut merged, overlay);
        let merged = toml::to_string(&merged).expect("table serializes");
        toml::from_str(&merged).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Sets one dotted key (`pretrain.epochs`, `classifier.augment`...) from
    /// its TOML text; bare words are taken as strings.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut table = toml::Table::try_from(&*self).expect("config serializes");
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields one part");
        let mut node = &mut table;
        for p in parents {
            node = match node.get_mut(*p) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
            };
        }
        if !node.contains_key(*last) && !(parents.is_empty() && *last == "manifest") {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        node.insert(last.to_string(), parsed);
        let text = toml::to_string(&table).expect("table serializes");
        *self = toml::from_str(&text).map_err(|e| Error::Config(format!("{key} = {value}: {e}")))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// Checks every stage's preconditions before anything runs.
    pub fn validate(&self) -> Result<()> {
        if !(self.window_ms > 0.0 && self.window_ms.is_finite()) {
            return Err(Error::Config(format!("window_ms must be positive, got {}", self.window_ms)));
        }
        self.tf.validate()?;
        self.pretrain.validate()?;
        self.classifier.validate()?;
        if self.tf.out_h != self.pretrain.arch.image_size || self.tf.out_w != self.pretrain.arch.image_size {
            return Err(Error::Config(format!(
                "tf image {}x{} does not match the VAE input size {}",
                self.tf.out_h, self.tf.out_w, self.pretrain.arch.image_size
            )));
        }
        if self.folds.k < 2 {
            return Err(Error::Config(format!("folds.k must be at least 2, got {}", self.folds.k)));
        }
        if self.discovery.n_restarts == 0 || self.discovery.max_iter == 0 || !(self.discovery.tol >= 0.0) {
            return Err(Error::Config("discovery needs restarts, iterations and a non-negative tol".into()));
        }
        if self.discovery.k != 2 {
            return Err(Error::Config(format!("discovery.k must be 2, got {}", self.discovery.k)));
        }
        let lo = self.latent.quantile_scale.to_quantile(self.latent.lo_q);
        let hi = self.latent.quantile_scale.to_quantile(self.latent.hi_q);
        if self.latent.steps < 2 || !(0.0 <= lo && lo < hi && hi <= 1.0) || self.latent.mixing_k == 0 {
            return Err(Error::Config(
                "latent: steps >= 2, 0 <= lo_q < hi_q <= 1 and mixing_k >= 1 required".into(),
            ));
        }
        self.synth.validate()?;
        Ok(())
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// One documented configuration key.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyDoc {
    pub key: String,
    pub default: String,
    pub note: &'static str,
}

const NOTES: &[(&str, &str)] = &[
    ("manifest", "dataset manifest (TOML)"),
    ("work_dir", "stage artifacts are written here"),
    ("seed", "drives every random draw; stage seeds derive from it"),
    ("reference_mode", "single thread, bitwise reproducible"),
    ("threads", "worker threads, 0 = all cores"),
    ("window_ms", "window around each event midpoint (reference value 570 ms)"),
    ("folds.k", "subject-wise folds (reference value 5)"),
    ("folds.sizes.kind", "partition = test sets cover all subjects; fixed = set val/test sizes (reference value 30/36)"),
    ("tf.f_min", "lowest scalogram frequency (reference value 10 Hz)"),
    ("tf.f_max", "highest scalogram frequency (reference value 290 Hz)"),
    ("tf.n_freqs", "log-spaced scalogram rows before resizing"),
    ("tf.omega0", "Morlet center parameter"),
    ("tf.out_h", "image height (reference value 64)"),
    ("tf.out_w", "image width (reference value 64)"),
    ("pretrain.arch.image_size", "VAE input size (reference value 64)"),
    ("pretrain.arch.widths", "encoder channels per stage"),
    ("pretrain.arch.latent_dim", "latent dimension (reference value 16); latent-dim ablation"),
    ("pretrain.epochs", "pre-training epochs (reference value 100)"),
    ("pretrain.batch_size", "pre-training batch (reference value 512)"),
    ("pretrain.lr", "Adam learning rate (reference value 1e-3)"),
    ("pretrain.weight_decay", "decoupled weight decay (reference value 1e-5)"),
    ("pretrain.beta_init", "initial KL weight"),
    ("pretrain.beta_lr", "step size of the KL-weight rule (reference value 1e-4)"),
    ("pretrain.cap_per_subject", "events per subject and epoch (reference value 2,500)"),
    ("pretrain.features.kind", "perceptual feature extractor: random or file"),
    ("pretrain.features.seed", "seed of the random extractor"),
    ("pretrain.features.channels", "channels of the random extractor"),
    ("pretrain.perceptual", "sum = squared L2 per layer, mean = mean squared"),
    ("pretrain.seed", "derived from seed"),
    ("discovery.k", "clusters per stage (reference value 2)"),
    ("discovery.n_restarts", "k-means++ restarts"),
    ("discovery.max_iter", "Lloyd iterations"),
    ("discovery.tol", "centroid-shift tolerance"),
    ("discovery.seed", "derived from seed"),
    ("classifier.hidden", "head width (16 -> hidden -> 1)"),
    ("classifier.epochs", "head epochs (reference value 9)"),
    ("classifier.lr", "head learning rate (reference value 3e-4)"),
    ("classifier.weight_decay", "head weight decay (reference value 1e-5)"),
    ("classifier.batch_size", "head batch (reference value 4096)"),
    ("classifier.augment", "surrogate BCE term; false = SD-only ablation"),
    ("classifier.threshold", "pathological iff probability > threshold"),
    ("classifier.seed", "derived from seed"),
    ("eval.f1_positive", "positive class of F1: success or failure"),
    ("latent.steps", "decoded images per sweep"),
    ("latent.lo_q", "lower sweep bound (reference value 0.001)"),
    ("latent.hi_q", "upper sweep bound (reference value 0.999)"),
    ("latent.quantile_scale", "fraction or percent reading of lo_q/hi_q"),
    ("latent.mixing_k", "neighbors in the knockout mixing score"),
    ("synth.n_subjects", "synthetic subjects"),
    ("synth.events_per_subject", "synthetic events per subject"),
    ("synth.channels_per_subject", "channels per subject"),
    ("synth.resected_channels", "leading channels marked resected"),
    ("synth.sample_rate", "synthetic sampling rate (Hz)"),
    ("synth.class_mix", "pathological / physiological / noise shares"),
    ("synth.snr_db", "burst-to-floor ratio"),
    ("synth.resection_coverage", "pathological share in resected channels, seizure-free"),
    ("synth.failure_coverage", "pathological share in resected channels, not seizure-free"),
    ("synth.institutions", "institution tags cycled over subjects"),
    ("synth.floor_rms", "background noise level (µV)"),
    ("synth.window_ms", "spacing unit of planted events"),
    ("synth.seed", "derived from seed"),
];

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Every key of `cfg` with its value and a short note.
/// First key of `overlay` with no counterpart in `base`. Tables carrying a
/// `kind` tag are taken whole since their fields depend on the variant.
fn check_known(prefix: &str, base: &toml::Table, overlay: &toml::Table) -> std::result::Result<(), String> {
    for (k, v) in overlay {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get(k), v) {
            (None, _) if key == "manifest" => {}
            (None, _) => return Err(key),
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") => {
                check_known(&key, b, o)?
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn documented_keys(cfg: &RunConfig) -> Vec<KeyDoc> {
    let mut flat = Vec::new();
    let mut table = toml::Table::try_from(cfg).expect("config serializes");
    table.entry("manifest").or_insert_with(|| toml::Value::String("(none)".into()));
    flatten("", &toml::Value::Table(table), &mut flat);
    flat.into_iter()
        .map(|(key, default)| {
            let note = NOTES.iter().find(|(k, _)| *k == key).map_or("", |(_, n)| n);
            KeyDoc { key, default, note }
        })
        .collect()
}

pub fn help_table(cfg: &RunConfig) -> String {
    let keys = documented_keys(cfg);
    let w = keys.iter().map(|k| k.key.len()).max().unwrap_or(0);
    let dw = keys.iter().map(|k| k.default.len()).max().unwrap_or(0).min(28);
    keys.iter()
        .map(|k| format!("  {:w$}  {:dw$}  {}\n", k.key, k.default, k.note))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_documented() {
        for preset in [Preset::Full, Preset::Desk] {
            for k in documented_keys(&RunConfig::preset(preset)) {
                assert!(!k.note.is_empty(), "undocumented key {}", k.key);
            }
        }
    }

    #[test]
    fn defaults_mirror_reference_constants() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.window_ms, 570.0);
        assert_eq!((c.tf.f_min, c.tf.f_max), (10.0, 290.0));
        assert_eq!(c.pretrain.arch.latent_dim, 16);
        assert_eq!((c.pretrain.batch_size, c.pretrain.cap_per_subject), (512, 2500));
        assert_eq!((c.classifier.batch_size, c.classifier.epochs), (4096, 9));
        assert_eq!(c.classifier.lr, 3e-4);
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_overlay() {
        let c = RunConfig::desk();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 9\n[pretrain]\nepochs = 3\n").unwrap();
        let o = RunConfig::load_over(&p, &c).unwrap();
        assert_eq!((o.seed, o.pretrain.epochs, o.pretrain.batch_size), (9, 3, 32));
        std::fs::write(&p, "bogus = 1\n").unwrap();
        assert!(RunConfig::load_over(&p, &c).is_err());
        std::fs::write(&p, "[pretrain]\nepochz = 3\n").unwrap();
        assert!(RunConfig::load_over(&p, &c).is_err());
        std::fs::write(&p, "[folds.sizes]\nkind = \"fixed\"\nval = 30\ntest = 36\n").unwrap();
        let o = RunConfig::load_over(&p, &c).unwrap();
        assert_eq!(o.folds.sizes, crate::data::FoldSizes::Fixed { val: 30, test: 36 });
    }

    #[test]
    fn set_key_overrides_one_value() {
        let mut c = RunConfig::default();
        c.set_key("pretrain.epochs", "3").unwrap();
        c.set_key("classifier.augment", "false").unwrap();
        c.set_key("eval.f1_positive", "failure").unwrap();
        c.set_key("manifest", "data/m.toml").unwrap();
        assert_eq!(c.pretrain.epochs, 3);
        assert!(!c.classifier.augment);
        assert_eq!(c.eval.f1_positive, PositiveClass::Failure);
        assert_eq!(c.manifest.as_deref(), Some(Path::new("data/m.toml")));
        assert!(c.set_key("pretrain.nope", "1").is_err());
        assert!(c.set_key("pretrain.epochs", "\"x\"").is_err());
    }

    #[test]
    fn validation_catches_mismatch() {
        let mut c = RunConfig::default();
        c.tf.out_h = 32;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.latent.lo_q = 0.9;
        c.latent.hi_q = 0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let c = RunConfig::default();
        assert_ne!(c.stage_seed(Stage::Pretrain, Some(0)), c.stage_seed(Stage::Pretrain, Some(1)));
        assert_ne!(c.stage_seed(Stage::Pretrain, Some(0)), c.stage_seed(Stage::Classifier, Some(0)));
    }
}
