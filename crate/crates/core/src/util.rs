//! Small shared helpers: seeded substreams, stable hashing, file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Counter-based substream: `seed` selects the key, `stream` the ChaCha
/// stream id, so substreams never overlap and can be drawn in any order.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a stream id from an arbitrary list of integer keys.
pub fn stream_id(parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Stable 64-bit key of a byte string (first 8 bytes of SHA-256).
pub fn stable_key(bytes: &[u8]) -> u64 {
    let out = Sha256::digest(bytes);
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// reader never observes a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Encodes an 8-bit binary PGM (P5). `pixels` are row-major values in [0,1].
pub fn encode_pgm(width: usize, height: usize, pixels: &[f64]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pgm pixel count");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Population mean and standard deviation (N denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn substreams_are_independent_of_draw_order() {
        let mut a = substream(7, 1);
        let mut b = substream(7, 2);
        let a1 = a.next_u64();
        let b1 = b.next_u64();
        let mut b2 = substream(7, 2);
        let mut a2 = substream(7, 1);
        assert_eq!(b2.next_u64(), b1);
        assert_eq!(a2.next_u64(), a1);
        assert_ne!(a1, b1);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 0.5]);
        assert_eq!(m, 0.75);
        assert_eq!(s, 0.25);
        assert_eq!(mean_std(&[0.3, 0.3, 0.3]).1, 0.0);
    }

    #[test]
    fn pgm_header() {
        let bytes = encode_pgm(2, 1, &[0.0, 1.0]);
        assert_eq!(&bytes[..11], b"P5\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 255]);
    }
}
