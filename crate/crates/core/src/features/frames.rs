use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::AudioSignal;
use crate::error::{Error, Result};

/// Analysis window and hop, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrameConfig {
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            window_s: 0.025,
            hop_s: 0.010,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0 && self.hop_s > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "window and hop must be positive (window {} s, hop {} s)",
                self.window_s, self.hop_s
            )));
        }
        Ok(())
    }
}

/// Framing resolved against a concrete sample rate and signal length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub frame_len: usize,
    pub hop: usize,
    pub n_frames: usize,
    pub n_fft: usize,
}

impl Framing {
    pub fn new(config: &FrameConfig, sample_rate: u32, len: usize) -> Result<Self> {
        config.validate()?;
        let sr = f64::from(sample_rate);
        let frame_len = ((config.window_s * sr).round() as usize).max(1);
        let hop = ((config.hop_s * sr).round() as usize).max(1);
        if len < frame_len {
            return Err(Error::SignalTooShort {
                len,
                needed: frame_len,
            });
        }
        Ok(Self {
            frame_len,
            hop,
            n_frames: (len - frame_len) / hop + 1,
            n_fft: frame_len.next_power_of_two(),
        })
    }

    pub fn frame<'a>(&self, samples: &'a [f64], index: usize) -> &'a [f64] {
        let start = index * self.hop;
        &samples[start..start + self.frame_len]
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn bin_hz(&self, sample_rate: u32, bin: usize) -> f64 {
        bin as f64 * f64::from(sample_rate) / self.n_fft as f64
    }
}

/// Periodic Hann window.
pub(crate) fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Computes per-frame one-sided power spectra, normalized by window energy.
pub(crate) struct SpectrumAnalyzer {
    window: Vec<f64>,
    window_energy: f64,
    fft: Arc<dyn Fft<f64>>,
    n_fft: usize,
}

impl SpectrumAnalyzer {
    pub(crate) fn new(framing: &Framing) -> Self {
        let window = hann(framing.frame_len);
        let window_energy = window.iter().map(|w| w * w).sum::<f64>().max(f64::MIN_POSITIVE);
        let fft = FftPlanner::new().plan_fft_forward(framing.n_fft);
        Self {
            window,
            window_energy,
            fft,
            n_fft: framing.n_fft,
        }
    }

    pub(crate) fn power(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex::new(x * w, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.n_fft)
            .collect();
        self.fft.process(&mut buf);
        buf[..self.n_fft / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr() / self.window_energy)
            .collect()
    }
}

/// Power spectra of every frame of `signal`.
pub(crate) fn power_spectra(signal: &AudioSignal, framing: &Framing) -> Vec<Vec<f64>> {
    let analyzer = SpectrumAnalyzer::new(framing);
    (0..framing.n_frames)
        .map(|t| analyzer.power(framing.frame(signal.samples(), t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_formula() {
        let f = Framing::new(&FrameConfig::default(), 16_000, 16_000).unwrap();
        assert_eq!((f.frame_len, f.hop, f.n_fft), (400, 160, 512));
        assert_eq!(f.n_frames, 98);
    }

    #[test]
    fn short_signal_rejected() {
        let err = Framing::new(&FrameConfig::default(), 16_000, 399).unwrap_err();
        assert!(err.to_string().contains("signal too short"));
    }

    #[test]
    fn exactly_one_window_gives_one_frame() {
        let f = Framing::new(&FrameConfig::default(), 16_000, 400).unwrap();
        assert_eq!(f.n_frames, 1);
    }
}
