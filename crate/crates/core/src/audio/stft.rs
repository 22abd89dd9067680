use super::{PcmSignal, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rustfft::{num_complex::Complex, FftPlanner};

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided magnitude STFT with an explicit window (its length sets the
/// frame size). Frame count is `1 + (len - n_fft) / hop`; no padding.
///
/// Returns a `[(n_fft/2 + 1) x frames]` tensor.
pub fn stft_with_window(samples: &[f64], window: &[f64], hop: usize) -> Result<Tensor> {
    let n_fft = window.len();
    if hop == 0 {
        return Err(Error::Param {
            op: "stft",
            detail: "hop must be positive".into(),
        });
    }
    if samples.len() < n_fft {
        return Err(Error::Shape {
            op: "stft",
            detail: format!("signal of {} samples is shorter than one {n_fft}-sample frame", samples.len()),
        });
    }
    let frames = 1 + (samples.len() - n_fft) / hop;
    let bins = n_fft / 2 + 1;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut out = Tensor::zeros(&[bins, frames]);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for f in 0..frames {
        let start = f * hop;
        for i in 0..n_fft {
            buf[i] = Complex::new(samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for b in 0..bins {
            out.data_mut()[b * frames + f] = buf[b].norm();
        }
    }
    Ok(out)
}

/// Hann-windowed magnitude spectrogram per the config.
pub fn stft_magnitude(sig: &PcmSignal, cfg: &SpectrogramConfig) -> Result<Tensor> {
    cfg.validate()?;
    stft_with_window(&sig.samples, &hann_window(cfg.n_fft), cfg.hop)
}
