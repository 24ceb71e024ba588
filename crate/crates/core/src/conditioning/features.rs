use std::io::{Read, Write};
use std::path::Path;

use vf_tensor::Tensor;

use crate::{CoreError, Result};

pub const MAGIC: [u8; 4] = *b"VFFE";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Time-major `[t × c]` matrix of per-frame conditioning vectors.
pub type FeatureSequence = Tensor<f32>;

pub fn encode_features(features: &FeatureSequence) -> Result<Vec<u8>> {
    let (t, c) = features.dims2()?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t * c);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    for v in features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(CoreError::Format(format!("feature file truncated: {} byte header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(CoreError::Format(format!("bad feature magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice"));
    let (version, t, c) = (word(4), word(8) as usize, word(12) as usize);
    if version != VERSION {
        return Err(CoreError::Format(format!("unsupported feature version {version}")));
    }
    if t == 0 || c == 0 {
        return Err(CoreError::Format(format!("feature header has empty dims {t}x{c}")));
    }
    let expected = HEADER_LEN + 4 * t * c;
    if bytes.len() != expected {
        return Err(CoreError::Format(format!(
            "feature header declares {t}x{c} ({expected} bytes) but file has {} bytes",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect();
    Ok(Tensor::new(vec![t, c], data)?)
}

pub fn save_features(path: impl AsRef<Path>, features: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(features)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| CoreError::io(path, e))
}

pub fn load_precomputed_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CoreError::io(path, e))?;
    decode_features(&bytes)
}

/// Checks that features have the model's channel width.
pub fn check_width(features: &FeatureSequence, c: usize) -> Result<()> {
    let (_, got) = features.dims2()?;
    if got != c {
        return Err(CoreError::Config(format!("feature width {got} does not match model width c = {c}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureSequence {
        Tensor::new(vec![3, 2], vec![0.5, -1.25, f32::MIN_POSITIVE, 3.0e7, -0.0, 1.0]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        save_features(&p, &sample()).unwrap();
        let back = load_precomputed_features(&p).unwrap();
        let bits = |t: &FeatureSequence| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(back.shape(), &[3, 2]);
        assert_eq!(bits(&back), bits(&sample()));
    }

    #[test]
    fn inconsistent_header_rejected() {
        let mut b = encode_features(&sample()).unwrap();
        b.truncate(b.len() - 4);
        assert!(matches!(decode_features(&b), Err(CoreError::Format(_))));
        let mut b = encode_features(&sample()).unwrap();
        b[0] = b'X';
        assert!(matches!(decode_features(&b), Err(CoreError::Format(_))));
    }

    #[test]
    fn width_mismatch_names_both_values() {
        let msg = check_width(&sample(), 64).unwrap_err().to_string();
        assert!(msg.contains('2') && msg.contains("64"), "{msg}");
    }
}
