use ndarray::Array2;

use super::frames::{power_spectra, FrameConfig, Framing};
use super::{AudioSignal, LOG_FLOOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MelConfig {
    pub bands: usize,
    pub frame: FrameConfig,
    pub fmin_hz: f64,
    /// Upper band edge; `None` means Nyquist.
    pub fmax_hz: Option<f64>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            bands: 80,
            frame: FrameConfig::default(),
            fmin_hz: 0.0,
            fmax_hz: None,
        }
    }
}

/// Log-power Mel spectrogram, `bands × frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub frame_period: f64,
}

impl MelSpectrogram {
    pub fn bands(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `bands × n_bins`, unit peak.
pub(crate) fn mel_filterbank(
    bands: usize,
    n_fft: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz = f64::from(sample_rate) / n_fft as f64;
    Array2::from_shape_fn((bands, n_bins), |(b, k)| {
        let f = k as f64 * bin_hz;
        let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    })
}

/// Computes `ln(mel_power + ε)` per band and frame.
pub fn mel_spectrogram(signal: &AudioSignal, config: &MelConfig) -> Result<MelSpectrogram> {
    if config.bands == 0 {
        return Err(Error::InvalidParameter("mel band count must be positive".into()));
    }
    let sr = signal.sample_rate();
    let nyquist = f64::from(sr) / 2.0;
    let fmax = config.fmax_hz.unwrap_or(nyquist).min(nyquist);
    if !(config.fmin_hz >= 0.0 && config.fmin_hz < fmax) {
        return Err(Error::InvalidParameter(format!(
            "mel frequency range [{}, {fmax}] is empty",
            config.fmin_hz
        )));
    }
    let framing = Framing::new(&config.frame, sr, signal.len())?;
    let fb = mel_filterbank(config.bands, framing.n_fft, sr, config.fmin_hz, fmax);
    let spectra = power_spectra(signal, &framing);

    let mut values = Array2::zeros((config.bands, framing.n_frames));
    for (t, power) in spectra.iter().enumerate() {
        for (b, filter) in fb.outer_iter().enumerate() {
            let energy: f64 = filter.iter().zip(power).map(|(w, p)| w * p).sum();
            values[[b, t]] = (energy + LOG_FLOOR).ln();
        }
    }
    Ok(MelSpectrogram {
        values,
        frame_period: framing.hop as f64 / f64::from(sr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(hz: f64, secs: f64) -> AudioSignal {
        let n = (secs * 16_000.0) as usize;
        let s = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 / 16_000.0).sin())
            .collect();
        AudioSignal::new(s, 16_000).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames_and_80_bands() {
        let mel = mel_spectrogram(&tone(440.0, 1.0), &MelConfig::default()).unwrap();
        assert_eq!(mel.frames(), 98);
        assert_eq!(mel.bands(), 80);
        assert!((mel.frame_period - 0.01).abs() < 1e-12);
        assert!(mel.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn silence_is_log_floor() {
        let s = AudioSignal::new(vec![0.0; 8000], 16_000).unwrap();
        let mel = mel_spectrogram(&s, &MelConfig::default()).unwrap();
        let floor = LOG_FLOOR.ln();
        assert!(mel.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short() {
        let s = AudioSignal::new(vec![0.1; 100], 16_000).unwrap();
        let err = mel_spectrogram(&s, &MelConfig::default()).unwrap_err();
        assert!(err.to_string().contains("signal too short"));
    }

    #[test]
    fn tone_energy_peaks_in_matching_band() {
        let mel = mel_spectrogram(&tone(1000.0, 0.5), &MelConfig::default()).unwrap();
        let col = mel.values.column(10);
        let peak = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let fb = mel_filterbank(80, 512, 16_000, 0.0, 8000.0);
        // the 1 kHz bin (index 32) must carry weight in the peak band
        assert!(fb[[peak, 32]] > 0.0);
    }
}
