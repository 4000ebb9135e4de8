//! Core domain types: recordings, detector events, windows, subjects,
//! manifests and subject-wise fold splits.

mod events;
mod folds;
mod manifest;
mod waveform;
mod window;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use events::{load_events, read_events, write_events};
pub use folds::{make_folds, make_folds_with_sizes, FoldSizes, FoldSplit};
pub use manifest::{load_dataset, load_manifest, Dataset, DatasetManifest, SubjectEntry};
pub use waveform::{read_waveform, write_waveform, WAVEFORM_MAGIC, WAVEFORM_VERSION};
pub use window::{extract_window, window_half_samples, Window};

use crate::util::stable_key;

/// One channel of one subject's recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub channel_id: String,
    /// Sampling rate in Hz.
    pub sample_rate: u32,
    /// Amplitudes in µV.
    pub samples: Vec<f64>,
}

impl Recording {
    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.sample_rate as f64
    }
}

/// A candidate event emitted by a legacy detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HfoEvent {
    #[serde(rename = "subject")]
    pub subject_id: String,
    #[serde(rename = "channel")]
    pub channel_id: String,
    pub start_ms: f64,
    pub end_ms: f64,
    #[serde(rename = "detector")]
    pub detector_tag: String,
}

impl HfoEvent {
    pub fn midpoint_ms(&self) -> f64 {
        (self.start_ms + self.end_ms) / 2.0
    }

    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }

    /// Stable identity of the event, independent of its position in any list.
    pub fn key(&self) -> EventKey {
        let mut bytes = Vec::with_capacity(self.subject_id.len() + self.channel_id.len() + 18);
        bytes.extend_from_slice(self.subject_id.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(self.channel_id.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&self.start_ms.to_bits().to_le_bytes());
        bytes.extend_from_slice(&self.end_ms.to_bits().to_le_bytes());
        EventKey(stable_key(&bytes))
    }

    pub(crate) fn validate(&self) -> crate::Result<()> {
        if !(self.start_ms.is_finite() && self.end_ms.is_finite()) {
            return Err(crate::Error::InvalidEvent(format!(
                "{}/{}: non-finite bounds",
                self.subject_id, self.channel_id
            )));
        }
        if self.start_ms < 0.0 || self.start_ms >= self.end_ms {
            return Err(crate::Error::InvalidEvent(format!(
                "{}/{}: need 0 <= start < end, got [{}, {}]",
                self.subject_id, self.channel_id, self.start_ms, self.end_ms
            )));
        }
        Ok(())
    }

    pub(crate) fn sort_key_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.subject_id
            .cmp(&other.subject_id)
            .then_with(|| self.channel_id.cmp(&other.channel_id))
            .then_with(|| self.start_ms.total_cmp(&other.start_ms))
            .then_with(|| self.end_ms.total_cmp(&other.end_ms))
            .then_with(|| self.detector_tag.cmp(&other.detector_tag))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventKey(pub u64);

impl fmt::Display for EventKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    SeizureFree,
    NotSeizureFree,
    Unknown,
}

impl Outcome {
    /// `Some(true)` for surgical success, `None` when unknown.
    pub fn is_success(self) -> Option<bool> {
        match self {
            Outcome::SeizureFree => Some(true),
            Outcome::NotSeizureFree => Some(false),
            Outcome::Unknown => None,
        }
    }
}

/// Clinical metadata of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub institution: String,
    pub outcome: Outcome,
    /// `None` when the subject carries no resection annotation.
    pub resected_channels: Option<BTreeSet<String>>,
}

impl SubjectRecord {
    pub fn is_resected(&self, channel: &str) -> bool {
        self.resected_channels
            .as_ref()
            .is_some_and(|set| set.contains(channel))
    }
}
