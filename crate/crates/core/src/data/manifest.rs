//! TOML dataset manifest.
//!
//! ```toml
//! version = 1
//!
//! [[subject]]
//! id = "s00"
//! institution = "A"
//! outcome = "seizure_free"            # seizure_free | not_seizure_free | unknown
//! resected_channels = ["ch0", "ch1"]  # omit when the subject has no resection map
//! events = "events/s00.csv"
//!
//! [subject.waveforms]
//! ch0 = "waveforms/s00_ch0.hfow"
//! ch1 = "waveforms/s00_ch1.hfow"
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_events, read_waveform, HfoEvent, Outcome, Recording, SubjectRecord};
use crate::error::{Error, Result};
use crate::par::*;

#[derive(Debug, Serialize, Deserialize)]
struct RawManifest {
    #[serde(default = "one")]
    version: u32,
    #[serde(default)]
    subject: Vec<RawSubject>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSubject {
    id: String,
    institution: String,
    outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resected_channels: Option<BTreeSet<String>>,
    events: PathBuf,
    #[serde(default)]
    waveforms: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectEntry {
    pub record: SubjectRecord,
    /// Event CSV of this subject (absolute or manifest-relative, as resolved).
    pub events_path: PathBuf,
    /// Waveform file per channel.
    pub waveforms: BTreeMap<String, PathBuf>,
    pub n_events: usize,
}

/// Resolved, validated dataset description.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub subjects: Vec<SubjectEntry>,
}

impl DatasetManifest {
    pub fn total_events(&self) -> usize {
        self.subjects.iter().map(|s| s.n_events).sum()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectEntry> {
        self.subjects.iter().find(|s| s.record.subject_id == id)
    }

    pub fn records(&self) -> Vec<SubjectRecord> {
        self.subjects.iter().map(|s| s.record.clone()).collect()
    }

    /// Serializes the manifest with paths made relative to `root` where possible.
    pub fn to_toml(&self) -> String {
        let rel = |p: &Path| p.strip_prefix(&self.root).unwrap_or(p).to_path_buf();
        let raw = RawManifest {
            version: 1,
            subject: self
                .subjects
                .iter()
                .map(|s| RawSubject {
                    id: s.record.subject_id.clone(),
                    institution: s.record.institution.clone(),
                    outcome: s.record.outcome,
                    resected_channels: s.record.resected_channels.clone(),
                    events: rel(&s.events_path),
                    waveforms: s.waveforms.iter().map(|(k, v)| (k.clone(), rel(v))).collect(),
                })
                .collect(),
        };
        toml::to_string(&raw).expect("manifest serializes")
    }
}

/// Parses and validates a manifest: every referenced file must exist, every
/// event must name a known subject and channel, subject ids must be unique.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawManifest = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if raw.version != 1 {
        return Err(Error::Manifest(format!("unsupported manifest version {}", raw.version)));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut seen = BTreeSet::new();
    let mut subjects = Vec::with_capacity(raw.subject.len());
    for s in raw.subject {
        if !seen.insert(s.id.clone()) {
            return Err(Error::Manifest(format!("duplicate subject id {}", s.id)));
        }
        let events_path = root.join(&s.events);
        if !events_path.is_file() {
            return Err(Error::Manifest(format!(
                "subject {}: event file {} not found",
                s.id,
                events_path.display()
            )));
        }
        let mut waveforms = BTreeMap::new();
        for (ch, p) in &s.waveforms {
            let full = root.join(p);
            if !full.is_file() {
                return Err(Error::Manifest(format!(
                    "subject {} channel {}: waveform file {} not found",
                    s.id,
                    ch,
                    full.display()
                )));
            }
            waveforms.insert(ch.clone(), full);
        }
        if let Some(res) = &s.resected_channels {
            if let Some(ch) = res.iter().find(|c| !waveforms.contains_key(*c)) {
                return Err(Error::Manifest(format!(
                    "subject {}: resected channel {} has no waveform",
                    s.id, ch
                )));
            }
        }
        let events = load_events(&events_path)?;
        for ev in &events {
            if ev.subject_id != s.id {
                return Err(Error::Manifest(format!(
                    "event file {} lists subject {} under subject {}",
                    events_path.display(),
                    ev.subject_id,
                    s.id
                )));
            }
            if !waveforms.contains_key(&ev.channel_id) {
                return Err(Error::Manifest(format!(
                    "subject {} channel {}: events reference a channel without waveform",
                    s.id, ev.channel_id
                )));
            }
        }
        subjects.push(SubjectEntry {
            record: SubjectRecord {
                subject_id: s.id,
                institution: s.institution,
                outcome: s.outcome,
                resected_channels: s.resected_channels,
            },
            events_path,
            waveforms,
            n_events: events.len(),
        });
    }
    log::info!(
        "manifest {}: {} subjects, {} events",
        path.display(),
        subjects.len(),
        subjects.iter().map(|s| s.n_events).sum::<usize>()
    );
    Ok(DatasetManifest { root, subjects })
}

/// Events and waveforms of a whole manifest, held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub subjects: Vec<SubjectRecord>,
    /// All events, sorted by (subject, channel, start).
    pub events: Vec<HfoEvent>,
    pub recordings: BTreeMap<(String, String), Recording>,
}

impl Dataset {
    pub fn recording(&self, ev: &HfoEvent) -> Option<&Recording> {
        self.recordings
            .get(&(ev.subject_id.clone(), ev.channel_id.clone()))
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }
}

/// Loads every event and waveform referenced by the manifest. Subjects are
/// read in parallel; the output order does not depend on scheduling.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    let per_subject: Vec<Result<(Vec<HfoEvent>, Vec<Recording>)>> = manifest
        .subjects
        .par_iter()
        .map(|s| {
            let events = load_events(&s.events_path)?;
            let mut recs = Vec::with_capacity(s.waveforms.len());
            for (ch, p) in &s.waveforms {
                let (fs, samples) = read_waveform(p)?;
                recs.push(Recording {
                    subject_id: s.record.subject_id.clone(),
                    channel_id: ch.clone(),
                    sample_rate: fs,
                    samples,
                });
            }
            Ok((events, recs))
        })
        .collect();
    let mut events = Vec::new();
    let mut recordings = BTreeMap::new();
    for r in per_subject {
        let (ev, recs) = r?;
        events.extend(ev);
        for rec in recs {
            recordings.insert((rec.subject_id.clone(), rec.channel_id.clone()), rec);
        }
    }
    events.sort_by(|a, b| a.sort_key_cmp(b));
    Ok(Dataset {
        subjects: manifest.records(),
        events,
        recordings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_events, write_waveform};

    fn write_subject(dir: &Path, id: &str, channels: &[&str]) {
        std::fs::create_dir_all(dir.join("events")).unwrap();
        let events: Vec<HfoEvent> = channels
            .iter()
            .map(|c| HfoEvent {
                subject_id: id.into(),
                channel_id: (*c).into(),
                start_ms: 100.0,
                end_ms: 150.0,
                detector_tag: "STE".into(),
            })
            .collect();
        let f = std::fs::File::create(dir.join(format!("events/{id}.csv"))).unwrap();
        write_events(f, &events).unwrap();
        for c in channels {
            write_waveform(&dir.join(format!("waveforms/{id}_{c}.hfow")), 1000, &[0.0; 500]).unwrap();
        }
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.toml");
        std::fs::write(&p, "version = 1\n").unwrap();
        let m = load_manifest(&p).unwrap();
        assert!(m.subjects.is_empty());
        assert_eq!(m.total_events(), 0);
    }

    #[test]
    fn resolves_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_subject(dir.path(), "s1", &["a", "b"]);
        let p = dir.path().join("manifest.toml");
        std::fs::write(
            &p,
            r#"
[[subject]]
id = "s1"
institution = "A"
outcome = "seizure_free"
resected_channels = ["a"]
events = "events/s1.csv"
[subject.waveforms]
a = "waveforms/s1_a.hfow"
b = "waveforms/s1_b.hfow"
"#,
        )
        .unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.subjects.len(), 1);
        assert_eq!(m.total_events(), 2);
        assert!(m.subjects[0].record.is_resected("a"));
        let ds = load_dataset(&m).unwrap();
        assert_eq!(ds.events.len(), 2);
        assert_eq!(ds.recordings.len(), 2);

        // Round trip through the serializer.
        std::fs::write(&p, m.to_toml()).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
    }

    #[test]
    fn missing_waveform_names_subject_and_channel() {
        let dir = tempfile::tempdir().unwrap();
        write_subject(dir.path(), "s1", &["a"]);
        let p = dir.path().join("manifest.toml");
        std::fs::write(
            &p,
            r#"
[[subject]]
id = "s1"
institution = "A"
outcome = "unknown"
events = "events/s1.csv"
[subject.waveforms]
a = "waveforms/missing.hfow"
"#,
        )
        .unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("s1") && err.contains("channel a"), "{err}");
    }

    #[test]
    fn dangling_event_channel_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        write_subject(dir.path(), "s1", &["a", "b"]);
        let p = dir.path().join("manifest.toml");
        std::fs::write(
            &p,
            r#"
[[subject]]
id = "s1"
institution = "A"
outcome = "unknown"
events = "events/s1.csv"
[subject.waveforms]
a = "waveforms/s1_a.hfow"
"#,
        )
        .unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("channel b"), "{err}");

        std::fs::write(
            &p,
            r#"
[[subject]]
id = "s1"
institution = "A"
outcome = "unknown"
events = "events/s1.csv"
waveforms = { a = "waveforms/s1_a.hfow", b = "waveforms/s1_b.hfow" }
[[subject]]
id = "s1"
institution = "B"
outcome = "unknown"
events = "events/s1.csv"
waveforms = { a = "waveforms/s1_a.hfow", b = "waveforms/s1_b.hfow" }
"#,
        )
        .unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_manifest(Path::new("/nonexistent/manifest.toml")),
            Err(Error::Io { .. })
        ));
    }
}
