//! Estimate files ("SWCE"): a 16-byte header (magic, version u16, H u16,
//! W u16, C u16, 4 pad bytes), then f32 little-endian values in flat
//! channel-fastest order.

use std::io::{Read, Write};
use std::path::Path;

use swiftchannel::RealTensor;

use crate::CliError;

pub const ESTIMATE_MAGIC: &[u8; 4] = b"SWCE";
pub const ESTIMATE_VERSION: u16 = 1;

pub fn estimate_file_name(index: usize) -> String {
    format!("est_{index:04}.swce")
}

pub fn write_estimate(path: &Path, t: &RealTensor) -> Result<(), CliError> {
    let mut buf = Vec::with_capacity(16 + t.data.len() * 4);
    buf.extend_from_slice(ESTIMATE_MAGIC);
    buf.extend_from_slice(&ESTIMATE_VERSION.to_le_bytes());
    for dim in [t.height, t.width, t.channels] {
        buf.extend_from_slice(&(dim as u16).to_le_bytes());
    }
    buf.extend_from_slice(&[0u8; 4]);
    for &v in &t.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(&buf)
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))?;
    Ok(())
}

pub fn read_estimate(path: &Path) -> Result<RealTensor, CliError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| CliError::Runtime(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::Runtime(format!("read {}: {e}", path.display())))?;
    let bad = |m: &str| CliError::Runtime(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[0..4] != ESTIMATE_MAGIC {
        return Err(bad("not an estimate file"));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != ESTIMATE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let h = u16::from_le_bytes(bytes[6..8].try_into().unwrap()) as usize;
    let w = u16::from_le_bytes(bytes[8..10].try_into().unwrap()) as usize;
    let c = u16::from_le_bytes(bytes[10..12].try_into().unwrap()) as usize;
    let n = h * w * c;
    if bytes.len() != 16 + n * 4 {
        return Err(bad("truncated payload"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(RealTensor::from_vec(h, w, c, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let dir = std::env::temp_dir().join(format!("swce_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(estimate_file_name(3));
        let t = RealTensor::from_vec(2, 3, 2, (0..12).map(|i| i as f64 * 0.25).collect());
        write_estimate(&path, &t).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 12 * 4);
        let back = read_estimate(&path).unwrap();
        assert_eq!(back, t);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_bad_files() {
        let dir = std::env::temp_dir().join(format!("swce_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.swce");
        std::fs::write(&path, b"JUNKJUNKJUNKJUNK").unwrap();
        assert!(read_estimate(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
