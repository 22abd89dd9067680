use super::Spectrogram;
use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

// Cache file layout: "MSPC" magic, u16 version, u32 mels, u32 frames,
// then row-major little-endian f32 values.
const MAGIC: &[u8; 4] = b"MSPC";
const VERSION: u16 = 1;

fn fmt_err(path: &Path, offset: u64, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset,
        detail: detail.into(),
    }
}

/// Writes a spectrogram cache file (lossless for the f32 payload).
pub fn save_spectrogram(spec: &Spectrogram, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(14 + spec.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let mels = u32::try_from(spec.mels)
        .map_err(|_| fmt_err(path, 6, format!("mel count {} overflows u32", spec.mels)))?;
    let frames = u32::try_from(spec.frames)
        .map_err(|_| fmt_err(path, 10, format!("frame count {} overflows u32", spec.frames)))?;
    out.extend_from_slice(&mels.to_le_bytes());
    out.extend_from_slice(&frames.to_le_bytes());
    for v in &spec.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    file.write_all(&out)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

/// Reads a spectrogram cache file, validating magic, version, and that
/// the payload length matches the header dimensions exactly.
pub fn load_spectrogram(path: &Path) -> Result<Spectrogram> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if bytes.len() < 14 {
        return Err(fmt_err(path, bytes.len() as u64, "truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fmt_err(path, 0, "bad magic, not a spectrogram cache"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fmt_err(path, 4, format!("unsupported version {version}")));
    }
    let mels = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as u64;
    let frames = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as u64;
    let count = mels
        .checked_mul(frames)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fmt_err(path, 6, format!("dimensions {mels}x{frames} overflow")))?;
    let expected = 14 + count;
    if bytes.len() as u64 != expected {
        return Err(fmt_err(
            path,
            14,
            format!(
                "header says {mels}x{frames} ({count} payload bytes) but file has {}",
                bytes.len() as u64 - 14
            ),
        ));
    }
    let values: Vec<f32> = bytes[14..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Spectrogram::new(mels as usize, frames as usize, values)
}
