use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate every file is brought to before analysis.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// A mono waveform with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidSignal("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidSignal("empty signal".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidSignal("non-finite sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Reads a 16-bit PCM WAV file, downmixes to mono and resamples to 16 kHz.
pub fn read_wav(path: &Path) -> Result<AudioSignal> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::InvalidSignal(format!(
            "{}: expected 16-bit PCM, got {:?} {} bits",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let channels = usize::from(spec.channels.max(1));
    let raw = reader
        .samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    let mono: Vec<f64> = raw
        .chunks(channels)
        .map(|frame| frame.iter().map(|&s| f64::from(s) / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    let signal = AudioSignal::new(mono, spec.sample_rate)?;
    Ok(resample(&signal, TARGET_SAMPLE_RATE))
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
pub fn resample(signal: &AudioSignal, target_rate: u32) -> AudioSignal {
    if signal.sample_rate == target_rate {
        return signal.clone();
    }
    const HALF_TAPS: f64 = 16.0;
    let ratio = f64::from(target_rate) / f64::from(signal.sample_rate);
    let cutoff = ratio.min(1.0);
    let half_width = HALF_TAPS / cutoff;
    let x = &signal.samples;
    let out_len = ((x.len() as f64) * ratio).floor().max(1.0) as usize;

    let samples = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(x.len() - 1);
            let mut acc = 0.0;
            for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let window = 0.5 * (1.0 + (PI * d / half_width).cos());
                acc += xk * cutoff * sinc(cutoff * d) * window;
            }
            acc
        })
        .collect();
    AudioSignal {
        samples,
        sample_rate: target_rate,
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}
