use super::{PcmSignal, Spectrogram, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// HTK mel scale: `mel(f) = 2595 * log10(1 + f / 700)`.
pub fn mel_from_hz(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn hz_from_mel(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequency (Hz) of each triangular filter.
pub fn mel_filter_centers(cfg: &SpectrogramConfig) -> Vec<f64> {
    let (mel_lo, mel_hi) = (mel_from_hz(cfg.fmin), mel_from_hz(cfg.fmax));
    (1..=cfg.n_mels)
        .map(|i| hz_from_mel(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular mel filterbank `[n_mels x (n_fft/2 + 1)]` with centers
/// uniformly spaced on the mel scale between `fmin` and `fmax`.
pub fn mel_filterbank(cfg: &SpectrogramConfig, sample_rate: u32) -> Result<Tensor> {
    cfg.validate()?;
    let nyquist = sample_rate as f64 / 2.0;
    if cfg.fmax > nyquist {
        return Err(Error::Param {
            op: "mel_filterbank",
            detail: format!("fmax {} exceeds Nyquist {nyquist}", cfg.fmax),
        });
    }
    let bins = cfg.n_fft / 2 + 1;
    let (mel_lo, mel_hi) = (mel_from_hz(cfg.fmin), mel_from_hz(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| hz_from_mel(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();

    let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
    let mut fb = Tensor::zeros(&[bins * cfg.n_mels]).reshaped(vec![cfg.n_mels, bins])?;
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..bins {
            let f = b as f64 * bin_hz;
            let w = if f <= left || f >= right {
                0.0
            } else if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            fb.data_mut()[m * bins + b] = w;
        }
    }
    Ok(fb)
}

/// Full extraction: Hann STFT -> power -> mel projection -> dB with a
/// floor. Output frame count follows the STFT; use [`fit_to_grid`] to
/// land on the model's fixed grid.
pub fn log_mel_spectrogram(sig: &PcmSignal, cfg: &SpectrogramConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if sig.sample_rate != cfg.sample_rate {
        return Err(Error::Param {
            op: "log_mel_spectrogram",
            detail: format!(
                "signal rate {} does not match configured rate {} (resampling not supported)",
                sig.sample_rate, cfg.sample_rate
            ),
        });
    }
    let mag = super::stft_magnitude(sig, cfg)?;
    let fb = mel_filterbank(cfg, sig.sample_rate)?;
    let (bins, frames) = (mag.shape()[0], mag.shape()[1]);
    let mut values = vec![0.0f32; cfg.n_mels * frames];
    for m in 0..cfg.n_mels {
        let fb_row = &fb.data()[m * bins..(m + 1) * bins];
        for f in 0..frames {
            let mut power = 0.0;
            for b in 0..bins {
                let a = mag.data()[b * frames + f];
                power += fb_row[b] * a * a;
            }
            let db = 10.0 * (power + 1e-10).log10();
            values[m * frames + f] = db.max(cfg.floor_db) as f32;
        }
    }
    Spectrogram::new(cfg.n_mels, frames, values)
}

/// Fits a raw spectrogram onto a fixed `mels x frames` grid: the time
/// axis is center-cropped when too long and right-padded with the floor
/// value when too short. The mel axis must already match.
pub fn fit_to_grid(spec: &Spectrogram, grid_mels: usize, grid_frames: usize, floor_db: f64) -> Result<Spectrogram> {
    if spec.mels != grid_mels {
        return Err(Error::Config(format!(
            "spectrogram has {} mel bands, grid expects {grid_mels}; re-extract with matching n_mels",
            spec.mels
        )));
    }
    let mut values = vec![floor_db as f32; grid_mels * grid_frames];
    if spec.frames >= grid_frames {
        let start = (spec.frames - grid_frames) / 2;
        for m in 0..grid_mels {
            let src = &spec.values[m * spec.frames + start..m * spec.frames + start + grid_frames];
            values[m * grid_frames..(m + 1) * grid_frames].copy_from_slice(src);
        }
    } else {
        for m in 0..grid_mels {
            let src = &spec.values[m * spec.frames..(m + 1) * spec.frames];
            values[m * grid_frames..m * grid_frames + spec.frames].copy_from_slice(src);
        }
    }
    Spectrogram::new(grid_mels, grid_frames, values)
}
