use super::PcmSignal;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;

fn fmt_err(offset: u64, detail: impl Into<String>) -> Error {
    Error::Format {
        path: "wav".into(),
        offset,
        detail: detail.into(),
    }
}

fn need(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    bytes
        .get(offset..offset + len)
        .ok_or_else(|| fmt_err(offset as u64, format!("truncated: need {len} bytes")))
}

fn read_u16(bytes: &[u8], offset: usize) -> Result<u16> {
    let b = need(bytes, offset, 2)?;
    Ok(u16::from_le_bytes([b[0], b[1]]))
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let b = need(bytes, offset, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses a RIFF/WAVE byte stream into normalized mono PCM.
///
/// Accepts 16-bit integer PCM and 32-bit IEEE float, mono or stereo;
/// stereo is downmixed by channel mean. Anything else is a format error
/// carrying the byte offset of the offending field.
pub fn decode_wav(bytes: &[u8]) -> Result<PcmSignal> {
    if need(bytes, 0, 4)? != b"RIFF" {
        return Err(fmt_err(0, "missing RIFF magic"));
    }
    if need(bytes, 8, 4)? != b"WAVE" {
        return Err(fmt_err(8, "missing WAVE form type"));
    }

    let mut fmt: Option<(u16, u16, u32, u16, usize)> = None; // format, channels, rate, bits, offset
    let mut data: Option<(usize, usize)> = None; // offset, len

    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = need(bytes, pos, 4)?;
        let size = read_u32(bytes, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fmt_err(pos as u64, format!("fmt chunk too short ({size} bytes)")));
                }
                need(bytes, body, 16)?;
                let format = read_u16(bytes, body)?;
                let channels = read_u16(bytes, body + 2)?;
                let rate = read_u32(bytes, body + 4)?;
                let bits = read_u16(bytes, body + 14)?;
                fmt = Some((format, channels, rate, bits, body));
            }
            b"data" => {
                need(bytes, body, size)?;
                data = Some((body, size));
            }
            _ => {} // skip unknown chunks
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body + size + (size & 1);
    }

    let (format, channels, rate, bits, fmt_off) =
        fmt.ok_or_else(|| fmt_err(12, "no fmt chunk"))?;
    let (data_off, data_len) = data.ok_or_else(|| fmt_err(12, "no data chunk"))?;

    if format != FORMAT_PCM && format != FORMAT_IEEE_FLOAT {
        return Err(fmt_err(
            fmt_off as u64,
            format!("unsupported codec tag {format} (only PCM and IEEE float)"),
        ));
    }
    if channels == 0 || channels > 2 {
        return Err(fmt_err(fmt_off as u64 + 2, format!("unsupported channel count {channels}")));
    }
    if rate == 0 {
        return Err(fmt_err(fmt_off as u64 + 4, "zero sample rate"));
    }
    if data_len == 0 {
        return Err(fmt_err(data_off as u64, "zero-length data chunk"));
    }

    let ch = channels as usize;
    let samples: Vec<f64> = match (format, bits) {
        (FORMAT_PCM, 16) => {
            if data_len % (2 * ch) != 0 {
                return Err(fmt_err(
                    data_off as u64,
                    format!("data length {data_len} not a multiple of the {ch}-channel 16-bit frame"),
                ));
            }
            let frames = data_len / (2 * ch);
            (0..frames)
                .map(|i| {
                    let mut acc = 0.0;
                    for c in 0..ch {
                        let off = data_off + (i * ch + c) * 2;
                        let v = i16::from_le_bytes([bytes[off], bytes[off + 1]]);
                        acc += v as f64 / 32768.0;
                    }
                    acc / ch as f64
                })
                .collect()
        }
        (FORMAT_IEEE_FLOAT, 32) => {
            if data_len % (4 * ch) != 0 {
                return Err(fmt_err(
                    data_off as u64,
                    format!("data length {data_len} not a multiple of the {ch}-channel float frame"),
                ));
            }
            let frames = data_len / (4 * ch);
            (0..frames)
                .map(|i| {
                    let mut acc = 0.0;
                    for c in 0..ch {
                        let off = data_off + (i * ch + c) * 4;
                        let v = f32::from_le_bytes([
                            bytes[off],
                            bytes[off + 1],
                            bytes[off + 2],
                            bytes[off + 3],
                        ]);
                        acc += (v as f64).clamp(-1.0, 1.0);
                    }
                    acc / ch as f64
                })
                .collect()
        }
        _ => {
            return Err(fmt_err(
                fmt_off as u64 + 14,
                format!("unsupported bit depth {bits} for codec {format}"),
            ))
        }
    };

    if samples.iter().any(|v| !v.is_finite()) {
        return Err(fmt_err(data_off as u64, "non-finite sample value"));
    }
    Ok(PcmSignal {
        samples,
        sample_rate: rate,
    })
}

/// Serializes mono samples in [-1, 1] as a 16-bit PCM WAV byte stream.
/// Mostly used to build fixtures and round-trip tests.
pub fn write_wav_i16(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}
