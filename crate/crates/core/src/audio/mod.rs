//! Audio front end: PCM decoding, log-mel spectrogram extraction, and
//! the binary spectrogram cache.
//!
//! The model consumes a fixed pictorial grid (500 mel bands x 1500 time
//! frames by default); [`fit_to_grid`] crops or pads the raw spectrogram
//! onto it.

mod cache;
mod mel;
mod stft;
mod wav;

pub use cache::{load_spectrogram, save_spectrogram};
pub use mel::{fit_to_grid, log_mel_spectrogram, mel_filter_centers, mel_filterbank, mel_from_hz};
pub use stft::{hann_window, stft_magnitude, stft_with_window};
pub use wav::{decode_wav, write_wav_i16};

use crate::error::{Error, Result};

/// Decoded mono PCM audio with samples normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PcmSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Log-power mel spectrogram, stored as f32 row-major (mel x frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub mels: usize,
    pub frames: usize,
    pub values: Vec<f32>,
}

impl Spectrogram {
    pub fn new(mels: usize, frames: usize, values: Vec<f32>) -> Result<Self> {
        if mels * frames != values.len() {
            return Err(Error::Shape {
                op: "spectrogram",
                detail: format!("{mels}x{frames} grid vs {} values", values.len()),
            });
        }
        Ok(Self { mels, frames, values })
    }

    pub fn at(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.frames + frame]
    }
}

/// Parameters of the spectrogram extraction stage.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub floor_db: f64,
}

impl Default for SpectrogramConfig {
    /// 30 s of 22.05 kHz audio at hop 441 lands on ~1500 frames, and 500
    /// mel bands fill the 500-pixel frequency axis of the model input.
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 2048,
            hop: 441,
            n_mels: 500,
            fmin: 20.0,
            fmax: 11025.0,
            floor_db: -80.0,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::Param {
                op: "spectrogram_config",
                detail: format!("hop {} must be in 1..=n_fft ({})", self.hop, self.n_fft),
            });
        }
        if self.n_mels < 2 {
            return Err(Error::Param {
                op: "spectrogram_config",
                detail: format!("n_mels {} must be at least 2", self.n_mels),
            });
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax) {
            return Err(Error::Param {
                op: "spectrogram_config",
                detail: format!("fmin {} must be below fmax {}", self.fmin, self.fmax),
            });
        }
        if self.fmax > nyquist {
            return Err(Error::Param {
                op: "spectrogram_config",
                detail: format!("fmax {} exceeds Nyquist {nyquist}", self.fmax),
            });
        }
        Ok(())
    }
}
