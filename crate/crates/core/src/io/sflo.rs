//! SFLO flow files: magic `SFLO`, version u32 = 1, height u32, width u32,
//! then one (u, v) i16 pair per pixel, little-endian, row-major. Invalid
//! pixels store `i16::MIN` in both components. Plus the `r,c,u,v` CSV dump.

use std::io::Write;
use std::path::Path;

use crate::flow::FlowField;

use super::{FormatError, Reader};

const MAGIC: [u8; 4] = *b"SFLO";
const VERSION: u32 = 1;
const INVALID: i16 = i16::MIN;

pub fn save_flow(flow: &FlowField, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let (w, h) = (flow.width(), flow.height());
    let mut out = Vec::with_capacity(16 + 4 * w * h);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for r in 0..h {
        for c in 0..w {
            let (u, v) = if flow.is_valid(r, c) { flow.uv(r, c) } else { (INVALID as i32, INVALID as i32) };
            assert!(
                (u > INVALID as i32 && u <= i16::MAX as i32 || !flow.is_valid(r, c))
                    && (v > INVALID as i32 && v <= i16::MAX as i32 || !flow.is_valid(r, c)),
                "displacement ({u},{v}) at ({r},{c}) not representable as i16"
            );
            out.extend_from_slice(&(u as i16).to_le_bytes());
            out.extend_from_slice(&(v as i16).to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<FlowField, FormatError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch { expected: VERSION, found: version });
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    if w == 0 || h == 0 {
        return Err(FormatError::CorruptPayload("empty flow field".into()));
    }
    if r.remaining() != 4 * w * h {
        return Err(FormatError::CorruptPayload(format!(
            "payload is {} bytes, expected {} for {w}x{h}",
            r.remaining(),
            4 * w * h
        )));
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let uu = r.i16()?;
        let vv = r.i16()?;
        let ok = uu != INVALID && vv != INVALID;
        valid.push(ok);
        u.push(if ok { uu as i32 } else { 0 });
        v.push(if ok { vv as i32 } else { 0 });
    }
    Ok(FlowField::from_parts(w, h, u, v, valid))
}

/// Writes the `r,c,u,v` text form (invalid pixels are skipped).
pub fn write_flow_csv(flow: &FlowField, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "r,c,u,v")?;
    for r in 0..flow.height() {
        for c in 0..flow.width() {
            if flow.is_valid(r, c) {
                let (u, v) = flow.uv(r, c);
                writeln!(f, "{r},{c},{u},{v}")?;
            }
        }
    }
    f.flush()?;
    Ok(())
}
