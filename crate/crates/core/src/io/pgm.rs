//! 16-bit binary PGM (P5) dumps of scalar maps in `[0, 1]`, for inspecting
//! posterior estimates. Samples are big-endian per the netpbm convention.

use std::io::Write;
use std::path::Path;

use super::FormatError;

pub fn write_pgm16(
    values: &[f64],
    width: usize,
    height: usize,
    path: impl AsRef<Path>,
) -> Result<(), FormatError> {
    assert_eq!(values.len(), width * height, "value buffer does not match dimensions");
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n65535\n")?;
    for &v in values {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        f.write_all(&q.to_be_bytes())?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::load_image;

    #[test]
    fn written_pgm_loads_back_with_16_bit_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pgm");
        let values = vec![0.0, 0.25, 0.5, 1.0];
        write_pgm16(&values, 2, 2, &path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        for (got, want) in img.data().iter().zip(&values) {
            assert!((*got as f64 - want).abs() < 1.0 / 65535.0);
        }
    }
}
