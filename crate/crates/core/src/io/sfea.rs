//! SFEA feature-map dumps: magic `SFEA`, version u32 = 1, height, width,
//! channels as u32, then f32 data row-major in (row, col, channel),
//! little-endian.

use std::path::Path;

use crate::sift::FeatureMap;

use super::{FormatError, Reader};

const MAGIC: [u8; 4] = *b"SFEA";
const VERSION: u32 = 1;

pub fn save_feature_map(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(20 + 4 * fm.data().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(fm.height() as u32).to_le_bytes());
    out.extend_from_slice(&(fm.width() as u32).to_le_bytes());
    out.extend_from_slice(&(fm.channels() as u32).to_le_bytes());
    for &v in fm.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap, FormatError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch { expected: VERSION, found: version });
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    if w == 0 || h == 0 || c == 0 {
        return Err(FormatError::CorruptPayload("empty feature map".into()));
    }
    if r.remaining() != 4 * w * h * c {
        return Err(FormatError::CorruptPayload(format!(
            "payload is {} bytes, expected {} for {w}x{h}x{c}",
            r.remaining(),
            4 * w * h * c
        )));
    }
    let mut data = Vec::with_capacity(w * h * c);
    for _ in 0..w * h * c {
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(FormatError::CorruptPayload("non-finite descriptor value".into()));
        }
        data.push(v);
    }
    Ok(FeatureMap::new(w, h, c, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fm =
            FeatureMap::new(6, 5, 4, (0..120).map(|_| rng.random::<f32>()).collect());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.sfea");
        save_feature_map(&fm, &path).unwrap();
        assert_eq!(load_feature_map(&path).unwrap(), fm);
    }

    #[test]
    fn shape_mismatch_is_corrupt() {
        let fm = FeatureMap::zeros(3, 3, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.sfea");
        save_feature_map(&fm, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_feature_map(&path), Err(FormatError::CorruptPayload(_))));
    }
}
