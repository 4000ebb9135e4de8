use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub const WAVEFORM_MAGIC: &[u8; 4] = b"HFOW";
pub const WAVEFORM_VERSION: u32 = 1;

/// Encodes one channel: 16-byte header (magic, version, sample rate, sample
/// count, all u32 little-endian) followed by f32 little-endian samples.
pub fn write_waveform(path: &Path, sample_rate: u32, samples: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + samples.len() * 4);
    bytes.extend_from_slice(WAVEFORM_MAGIC);
    bytes.extend_from_slice(&WAVEFORM_VERSION.to_le_bytes());
    bytes.extend_from_slice(&sample_rate.to_le_bytes());
    let count = u32::try_from(samples.len()).map_err(|_| Error::Waveform {
        path: path.to_path_buf(),
        message: "too many samples".into(),
    })?;
    bytes.extend_from_slice(&count.to_le_bytes());
    for &s in samples {
        bytes.extend_from_slice(&(s as f32).to_le_bytes());
    }
    crate::util::write_atomic(path, &bytes)
}

/// Returns `(sample_rate, samples)`.
pub fn read_waveform(path: &Path) -> Result<(u32, Vec<f64>)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let bad = |message: &str| Error::Waveform {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 16 {
        return Err(bad("truncated header"));
    }
    if &bytes[..4] != WAVEFORM_MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != WAVEFORM_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let sample_rate = word(8);
    let count = word(12) as usize;
    if sample_rate == 0 {
        return Err(bad("sample rate must be positive"));
    }
    if count == 0 {
        return Err(bad("no samples"));
    }
    if bytes.len() != 16 + 4 * count {
        return Err(bad(&format!(
            "expected {} sample bytes, found {}",
            4 * count,
            bytes.len() - 16
        )));
    }
    let samples: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(bad("non-finite sample"));
    }
    Ok((sample_rate, samples))
}
