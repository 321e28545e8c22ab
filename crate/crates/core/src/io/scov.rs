//! SCOV statistics files.
//!
//! Layout, all little-endian: magic `SCOV`, version u32 = 1, channels u32,
//! bandwidth u32, n_images u64, per-displacement-bin pair counts (u64 each),
//! per-channel sums, the raw product tensor over the canonical displacement
//! half (2^-64 fixed-point i128 each, exactly the accumulator storage), and
//! a CRC32 of everything after the magic. Round-trips are bit-exact.

use std::path::Path;

use crate::stats::{n_canonical_bins, StatsAccumulator};

use super::{FormatError, Reader};

const MAGIC: [u8; 4] = *b"SCOV";
const VERSION: u32 = 1;

pub fn save_stats(acc: &StatsAccumulator, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let (counts, csums, psums) = acc.raw_parts();
    let mut payload = Vec::with_capacity(24 + counts.len() * 8 + (csums.len() + psums.len()) * 16);
    payload.extend_from_slice(&VERSION.to_le_bytes());
    payload.extend_from_slice(&(acc.channels() as u32).to_le_bytes());
    payload.extend_from_slice(&(acc.bandwidth() as u32).to_le_bytes());
    payload.extend_from_slice(&acc.n_images().to_le_bytes());
    for &c in counts {
        payload.extend_from_slice(&c.to_le_bytes());
    }
    for &s in csums {
        payload.extend_from_slice(&s.to_le_bytes());
    }
    for &s in psums {
        payload.extend_from_slice(&s.to_le_bytes());
    }
    let crc = crc32fast::hash(&payload);
    let mut out = Vec::with_capacity(4 + payload.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<StatsAccumulator, FormatError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf);
    r.magic(MAGIC)?;
    if buf.len() < 8 {
        return Err(FormatError::CorruptPayload("file shorter than its checksum".into()));
    }
    let payload = &buf[4..buf.len() - 4];
    let stored_crc = u32::from_le_bytes(buf[buf.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored_crc {
        return Err(FormatError::CorruptPayload("checksum mismatch".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch { expected: VERSION, found: version });
    }
    let channels = r.u32()? as usize;
    let bandwidth = r.u32()? as usize;
    let n_images = r.u64()?;
    if channels == 0 {
        return Err(FormatError::CorruptPayload("zero channels".into()));
    }
    let bins = n_canonical_bins(bandwidth);
    let expected = bins * 8 + channels * 16 + bins * channels * channels * 16 + 4;
    if r.remaining() != expected {
        return Err(FormatError::CorruptPayload(format!(
            "payload is {} bytes, expected {expected} for {channels} channels at bandwidth {bandwidth}",
            r.remaining()
        )));
    }
    let mut counts = Vec::with_capacity(bins);
    for _ in 0..bins {
        counts.push(r.u64()?);
    }
    let mut csums = Vec::with_capacity(channels);
    for _ in 0..channels {
        csums.push(r.i128()?);
    }
    let mut psums = Vec::with_capacity(bins * channels * channels);
    for _ in 0..bins * channels * channels {
        psums.push(r.i128()?);
    }
    Ok(StatsAccumulator::from_raw_parts(channels, bandwidth, n_images, counts, csums, psums))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sift::FeatureMap;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_acc() -> StatsAccumulator {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut acc = StatsAccumulator::new(3, 2);
        for _ in 0..3 {
            let fm = FeatureMap::new(
                7,
                6,
                3,
                (0..7 * 6 * 3).map(|_| rng.random::<f32>()).collect(),
            );
            acc.accumulate(&fm).unwrap();
        }
        acc
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let acc = sample_acc();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.scov");
        save_stats(&acc, &path).unwrap();
        let loaded = load_stats(&path).unwrap();
        assert_eq!(loaded, acc);
        // and the file itself is stable under a second round trip
        let path2 = dir.path().join("stats2.scov");
        save_stats(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let acc = sample_acc();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.scov");
        save_stats(&acc, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_stats(&path), Err(FormatError::CorruptPayload(_))));
    }

    #[test]
    fn flipped_byte_fails_the_checksum() {
        let acc = sample_acc();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.scov");
        save_stats(&acc, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_stats(&path), Err(FormatError::CorruptPayload(_))));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.scov");
        std::fs::write(&path, b"SFLOxxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(load_stats(&path), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn future_version_is_rejected() {
        let acc = sample_acc();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.scov");
        save_stats(&acc, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9; // version field
        let crc = crc32fast::hash(&bytes[4..bytes.len() - 4]);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_stats(&path), Err(FormatError::VersionMismatch { found: 9, .. })));
    }
}
