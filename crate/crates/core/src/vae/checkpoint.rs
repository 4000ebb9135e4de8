//! Binary checkpoint container.
//!
//! Layout, all integers u32 little-endian:
//!
//! ```text
//! "SSLD" | version | header_len | header (JSON, UTF-8)
//! tensor table: count, then per tensor
//!     name_len | name | rank | dims[rank] | f32 LE data
//! zero or more tagged sections: tag_len | tag | tensor table
//! ```
//!
//! The classifier head is stored as a section tagged `classifier`. External
//! feature-extractor weights use the same container with `phi.<i>.w` and
//! `phi.<i>.b` in the main table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::FeatureSpec;
use super::net::{VaeArch, VaeParams};
use super::objective::{BetaState, PerceptualReduction};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::util::{sha256_hex, write_atomic};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSLD";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CLASSIFIER_TAG: &str = "classifier";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: VaeArch,
    pub latent_dim: usize,
    pub beta: BetaState,
    /// Epochs completed.
    pub epoch: usize,
    pub seed: u64,
    /// Epoch sampling and noise draw from substreams keyed by
    /// `(seed, epoch, batch)`; resuming continues at this epoch.
    pub next_epoch: usize,
    pub features: FeatureSpec,
    pub perceptual: PerceptualReduction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub vae: VaeParams,
    /// Named classifier tensors, once a head has been trained.
    pub classifier: Option<Vec<(String, Tensor)>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(&header);
        let named: Vec<(String, &Tensor)> = self.vae.names().into_iter().zip(&self.vae.tensors).collect();
        write_table(&mut out, &named);
        if let Some(cls) = &self.classifier {
            put_str(&mut out, CLASSIFIER_TAG);
            let named: Vec<(String, &Tensor)> = cls.iter().map(|(n, t)| (n.clone(), t)).collect();
            write_table(&mut out, &named);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, main, sections) = parse_container(bytes)?;
        let header: CheckpointHeader = serde_json::from_slice(header)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.latent_dim != header.arch.latent_dim {
            return Err(Error::Checkpoint("latent_dim disagrees with architecture".into()));
        }
        let vae = VaeParams::from_named(&header.arch, main)?;
        let mut classifier = None;
        for (tag, table) in sections {
            if tag == CLASSIFIER_TAG {
                classifier = Some(table);
            } else {
                return Err(Error::Checkpoint(format!("unknown section {tag:?}")));
            }
        }
        Ok(Self {
            header,
            vae,
            classifier,
        })
    }

    /// SHA-256 of the VAE tensors only (the part the classifier must not touch).
    pub fn vae_hash(&self) -> String {
        let mut bytes = Vec::new();
        let named: Vec<(String, &Tensor)> = self.vae.names().into_iter().zip(&self.vae.tensors).collect();
        write_table(&mut bytes, &named);
        sha256_hex(&bytes)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes a bare tensor file (empty JSON header, one table).
pub fn write_tensor_file(path: &Path, named: &[(String, Tensor)]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, 2);
    out.extend_from_slice(b"{}");
    let refs: Vec<(String, &Tensor)> = named.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_table(&mut out, &refs);
    write_atomic(path, &out)
}

/// Main tensor table of any container file.
pub fn read_tensor_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, main, _) = parse_container(&bytes)?;
    Ok(main)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn write_table(out: &mut Vec<u8>, named: &[(String, &Tensor)]) {
    put_u32(out, named.len() as u32);
    for (name, t) in named {
        put_str(out, name);
        put_u32(out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(out, d as u32);
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }

    fn table(&mut self) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = self.string()?;
            let rank = self.u32()? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("tensor {name}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len
                .filter(|l| l.checked_mul(4).is_some_and(|b| b <= self.bytes.len() - self.pos))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name}: truncated data")))?;
            let data = self
                .take(len * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            out.push((name, Tensor::new(shape, data)));
        }
        Ok(out)
    }
}

type Sections = Vec<(String, Vec<(String, Tensor)>)>;

fn parse_container(bytes: &[u8]) -> Result<(&[u8], Vec<(String, Tensor)>, Sections)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = r.u32()? as usize;
    let header = r.take(hlen)?;
    let main = r.table()?;
    let mut sections = Vec::new();
    while r.pos < bytes.len() {
        let tag = r.string()?;
        sections.push((tag, r.table()?));
    }
    Ok((header, main, sections))
}
