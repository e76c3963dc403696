//! LIDF feature files: `"LIDF"`, u32 version (1), u32 frame count, u32
//! coefficient count, then frame-major f32 values. All integers and reals are
//! little-endian.

use std::path::Path;

use super::FeatureSequence;
use crate::error::{LidError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LIDF";
const VERSION: u32 = 1;

pub fn encode_lidf(features: &FeatureSequence) -> Vec<u8> {
    let (t, d) = (features.num_frames(), features.dim());
    let mut out = Vec::with_capacity(16 + 4 * t * d);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in features.frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_lidf(bytes: &[u8]) -> Result<FeatureSequence> {
    let fail = |section: &str, detail: String| LidError::Format {
        kind: "LIDF",
        section: section.to_string(),
        detail,
    };
    if bytes.len() < 16 {
        return Err(fail("header", format!("{} bytes, need 16", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail("magic", format!("found {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(LidError::UnsupportedVersion {
            kind: "LIDF",
            found: version,
            expected: VERSION,
        });
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    if t == 0 || d == 0 {
        return Err(fail("header", format!("empty shape {t}x{d}")));
    }
    let body = &bytes[16..];
    if body.len() != 4 * t * d {
        return Err(fail(
            "data",
            format!("expected {} bytes for {t}x{d}, found {}", 4 * t * d, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureSequence::new(Tensor::new(vec![t, d], data)?)
}

pub fn write_lidf(path: impl AsRef<Path>, features: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_lidf(features)).map_err(|e| LidError::io(path, e))
}

pub fn read_lidf(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| LidError::io(path, e))?;
    decode_lidf(&bytes)
}
