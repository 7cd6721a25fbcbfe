use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;

use super::frames::{power_spectra, FrameConfig, Framing};
use super::{AudioSignal, LOG_FLOOR};
use crate::error::{Error, Result};

/// Candidate pretext-task labels that can be computed from audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PretextTask {
    F0,
    Voicing,
    Loudness,
    AlphaRatio,
    Zcr,
    RastaL1,
    LogHnr,
    SpectralCentroid,
    SpectralKurtosis,
    Hammarberg,
}

impl PretextTask {
    pub const ALL: [PretextTask; 10] = [
        PretextTask::F0,
        PretextTask::Voicing,
        PretextTask::Loudness,
        PretextTask::AlphaRatio,
        PretextTask::Zcr,
        PretextTask::RastaL1,
        PretextTask::LogHnr,
        PretextTask::SpectralCentroid,
        PretextTask::SpectralKurtosis,
        PretextTask::Hammarberg,
    ];

    pub fn id(self) -> &'static str {
        match self {
            PretextTask::F0 => "f0",
            PretextTask::Voicing => "voicing",
            PretextTask::Loudness => "loudness",
            PretextTask::AlphaRatio => "alpha_ratio",
            PretextTask::Zcr => "zcr",
            PretextTask::RastaL1 => "rasta_l1",
            PretextTask::LogHnr => "log_hnr",
            PretextTask::SpectralCentroid => "spectral_centroid",
            PretextTask::SpectralKurtosis => "spectral_kurtosis",
            PretextTask::Hammarberg => "hammarberg",
        }
    }
}

impl fmt::Display for PretextTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PretextTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PretextTask::ALL
            .into_iter()
            .find(|t| t.id() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExtractionConfig {
    pub frame: FrameConfig,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Periodicity strength above which a frame counts as voiced.
    pub voicing_threshold: f64,
    /// Absolute threshold on the cumulative-mean-normalized difference.
    pub yin_threshold: f64,
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        if !(self.f0_min_hz > 0.0 && self.f0_min_hz < self.f0_max_hz && self.f0_max_hz.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "F0 search range must satisfy 0 < min < max, got {}..{}",
                self.f0_min_hz, self.f0_max_hz
            )));
        }
        if !(0.0..=1.0).contains(&self.voicing_threshold) || !(0.0..=1.0).contains(&self.yin_threshold) {
            return Err(Error::InvalidParameter("thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            frame: FrameConfig::default(),
            f0_min_hz: 60.0,
            f0_max_hz: 500.0,
            voicing_threshold: 0.45,
            yin_threshold: 0.1,
        }
    }
}

/// Per-frame values of one label for one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub task_id: String,
    pub values: Vec<f64>,
    pub frame_period: f64,
    /// Voicing mask; set for F0 so the summary averages voiced frames only.
    pub voiced: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretextScalar {
    pub task_id: String,
    pub value: f64,
}

/// Mean of the frame values (voiced frames only when a voicing mask is set).
pub fn summarize_task_label(series: &FrameSeries) -> Result<PretextScalar> {
    if series.values.is_empty() {
        return Err(Error::EmptySeries(series.task_id.clone()));
    }
    let value = match &series.voiced {
        Some(mask) => {
            if mask.len() != series.values.len() {
                return Err(Error::ShapeMismatch(format!(
                    "voicing mask has {} frames, series has {}",
                    mask.len(),
                    series.values.len()
                )));
            }
            let (sum, count) = series
                .values
                .iter()
                .zip(mask)
                .filter(|(_, &v)| v)
                .fold((0.0, 0usize), |(s, c), (x, _)| (s + x, c + 1));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        }
        None => series.values.iter().sum::<f64>() / series.values.len() as f64,
    };
    Ok(PretextScalar {
        task_id: series.task_id.clone(),
        value,
    })
}

/// Extracts a single label series.
pub fn extract_frame_feature(
    signal: &AudioSignal,
    task: PretextTask,
    config: &ExtractionConfig,
) -> Result<FrameSeries> {
    FrameAnalysis::new(signal, config)?.series(task)
}

/// Extracts several label series, sharing spectra and pitch analysis.
pub fn extract_features(
    signal: &AudioSignal,
    tasks: &[PretextTask],
    config: &ExtractionConfig,
) -> Result<Vec<FrameSeries>> {
    let analysis = FrameAnalysis::new(signal, config)?;
    tasks.iter().map(|&t| analysis.series(t)).collect()
}

#[derive(Debug, Clone, Copy)]
struct PitchFrame {
    f0: f64,
    strength: f64,
    /// Peak normalized autocorrelation over the pitch lag range.
    peak_corr: f64,
}

struct FrameAnalysis<'a> {
    signal: &'a AudioSignal,
    config: &'a ExtractionConfig,
    framing: Framing,
    spectra: OnceCell<Vec<Vec<f64>>>,
    pitch: OnceCell<Vec<PitchFrame>>,
}

impl<'a> FrameAnalysis<'a> {
    fn new(signal: &'a AudioSignal, config: &'a ExtractionConfig) -> Result<Self> {
        config.validate()?;
        let framing = Framing::new(&config.frame, signal.sample_rate(), signal.len())?;
        Ok(Self {
            signal,
            config,
            framing,
            spectra: OnceCell::new(),
            pitch: OnceCell::new(),
        })
    }

    fn frame_period(&self) -> f64 {
        self.framing.hop as f64 / f64::from(self.signal.sample_rate())
    }

    fn spectra(&self) -> &[Vec<f64>] {
        self.spectra
            .get_or_init(|| power_spectra(self.signal, &self.framing))
    }

    fn pitch(&self) -> &[PitchFrame] {
        self.pitch.get_or_init(|| {
            (0..self.framing.n_frames)
                .map(|t| {
                    pitch_frame(
                        self.framing.frame(self.signal.samples(), t),
                        self.signal.sample_rate(),
                        self.config,
                    )
                })
                .collect()
        })
    }

    fn bin_freqs(&self) -> Vec<f64> {
        (0..self.framing.n_bins())
            .map(|k| self.framing.bin_hz(self.signal.sample_rate(), k))
            .collect()
    }

    fn series(&self, task: PretextTask) -> Result<FrameSeries> {
        let mut voiced = None;
        let values = match task {
            PretextTask::F0 => {
                let mask: Vec<bool> = self.voicing_mask();
                let v = self
                    .pitch()
                    .iter()
                    .zip(&mask)
                    .map(|(p, &on)| if on { p.f0 } else { 0.0 })
                    .collect();
                voiced = Some(mask);
                v
            }
            PretextTask::Voicing => self
                .voicing_mask()
                .into_iter()
                .map(|v| if v { 1.0 } else { 0.0 })
                .collect(),
            PretextTask::LogHnr => self.pitch().iter().map(|p| log_hnr(p.peak_corr)).collect(),
            PretextTask::Zcr => (0..self.framing.n_frames)
                .map(|t| zero_crossing_rate(self.framing.frame(self.signal.samples(), t)))
                .collect(),
            PretextTask::Loudness => self.loudness(),
            PretextTask::AlphaRatio => self.alpha_ratio(),
            PretextTask::RastaL1 => self.rasta_l1(),
            PretextTask::SpectralCentroid => self.spectral_moments().0,
            PretextTask::SpectralKurtosis => self.spectral_moments().1,
            PretextTask::Hammarberg => self.hammarberg(),
        };
        debug_assert!(values.iter().all(|v: &f64| v.is_finite()));
        Ok(FrameSeries {
            task_id: task.id().to_string(),
            values,
            frame_period: self.frame_period(),
            voiced,
        })
    }

    fn voicing_mask(&self) -> Vec<bool> {
        self.pitch()
            .iter()
            .map(|p| p.f0 > 0.0 && p.strength > self.config.voicing_threshold)
            .collect()
    }

    fn loudness(&self) -> Vec<f64> {
        let gains: Vec<f64> = self.bin_freqs().iter().map(|&f| a_weight_power(f)).collect();
        self.spectra()
            .iter()
            .map(|p| {
                let e: f64 = p.iter().zip(&gains).map(|(p, g)| p * g).sum();
                10.0 * (e + LOG_FLOOR).log10()
            })
            .collect()
    }

    fn alpha_ratio(&self) -> Vec<f64> {
        let freqs = self.bin_freqs();
        self.spectra()
            .iter()
            .map(|p| {
                let (mut lo, mut hi) = (0.0, 0.0);
                for (&f, &pk) in freqs.iter().zip(p) {
                    if f < 1000.0 {
                        lo += pk;
                    } else {
                        hi += pk;
                    }
                }
                (10.0 * ((lo + LOG_FLOOR) / (hi + LOG_FLOOR)).log10()).max(-60.0)
            })
            .collect()
    }

    fn hammarberg(&self) -> Vec<f64> {
        let freqs = self.bin_freqs();
        self.spectra()
            .iter()
            .map(|p| {
                let (mut lo, mut hi) = (0.0f64, 0.0f64);
                let mut hi_present = false;
                for (&f, &pk) in freqs.iter().zip(p) {
                    if f <= 2000.0 {
                        lo = lo.max(pk);
                    } else if f <= 5000.0 {
                        hi = hi.max(pk);
                        hi_present = true;
                    }
                }
                if hi_present {
                    10.0 * ((lo + LOG_FLOOR) / (hi + LOG_FLOOR)).log10()
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Spectral centroid (Hz) and spectral kurtosis per frame.
    fn spectral_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let freqs = self.bin_freqs();
        self.spectra()
            .iter()
            .map(|p| {
                let total: f64 = p.iter().sum();
                if total <= 0.0 {
                    return (0.0, 0.0);
                }
                let centroid = freqs.iter().zip(p).map(|(f, pk)| f * pk).sum::<f64>() / total;
                let (m2, m4) = freqs.iter().zip(p).fold((0.0, 0.0), |(m2, m4), (f, pk)| {
                    let d2 = (f - centroid).powi(2);
                    (m2 + d2 * pk / total, m4 + d2 * d2 * pk / total)
                });
                let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) } else { 0.0 };
                (centroid, kurtosis)
            })
            .unzip()
    }

    fn rasta_l1(&self) -> Vec<f64> {
        let freqs = self.bin_freqs();
        let nyquist_bark = bark(f64::from(self.signal.sample_rate()) / 2.0);
        let n_bands = (nyquist_bark.floor() as usize).max(1);
        let weights: Vec<Vec<f64>> = (1..=n_bands)
            .map(|z| {
                freqs
                    .iter()
                    .map(|&f| (1.0 - (bark(f) - z as f64).abs()).max(0.0))
                    .collect()
            })
            .collect();
        let log_bands: Vec<Vec<f64>> = self
            .spectra()
            .iter()
            .map(|p| {
                weights
                    .iter()
                    .map(|w| (w.iter().zip(p).map(|(w, p)| w * p).sum::<f64>() + LOG_FLOOR).ln())
                    .collect()
            })
            .collect();

        let n_frames = log_bands.len();
        let mut l1 = vec![0.0; n_frames];
        for band in 0..n_bands {
            let track: Vec<f64> = log_bands.iter().map(|row| row[band]).collect();
            for (t, y) in rasta_filter(&track).into_iter().enumerate() {
                l1[t] += y.abs();
            }
        }
        l1
    }
}

/// Bark scale, `6·asinh(f/600)`.
fn bark(hz: f64) -> f64 {
    6.0 * (hz / 600.0).asinh()
}

/// RASTA band-pass along time: `0.1·(2 + z⁻¹ − z⁻³ − 2z⁻⁴) / (1 − 0.98 z⁻¹)`.
///
/// History before the first frame replicates the first input, so a stationary
/// track filters to zero.
fn rasta_filter(x: &[f64]) -> Vec<f64> {
    const NUM: [f64; 5] = [0.2, 0.1, 0.0, -0.1, -0.2];
    const POLE: f64 = 0.98;
    let at = |i: isize| x[i.max(0) as usize];
    let mut y = Vec::with_capacity(x.len());
    let mut prev = 0.0;
    for t in 0..x.len() as isize {
        let fir: f64 = NUM.iter().enumerate().map(|(k, c)| c * at(t - k as isize)).sum();
        prev = fir + POLE * prev;
        y.push(prev);
    }
    y
}

/// A-weighting as a power gain.
fn a_weight_power(f: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    let f2 = f * f;
    let ra = 12194.0f64.powi(2) * f2 * f2
        / ((f2 + 20.6f64.powi(2))
            * ((f2 + 107.7f64.powi(2)) * (f2 + 737.9f64.powi(2))).sqrt()
            * (f2 + 12194.0f64.powi(2)));
    // +2.0 dB normalizes the gain to unity at 1 kHz
    (ra * 10f64.powf(2.0 / 20.0)).powi(2)
}

fn zero_crossing_rate(frame: &[f64]) -> f64 {
    if frame.len() < 2 {
        return 0.0;
    }
    let crossings = frame
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count();
    crossings as f64 / (frame.len() - 1) as f64
}

fn log_hnr(r: f64) -> f64 {
    if r <= 0.0 {
        return -60.0;
    }
    if r >= 1.0 {
        return 60.0;
    }
    (10.0 * (r / (1.0 - r)).log10()).clamp(-60.0, 60.0)
}

/// YIN-style pitch estimate on one frame.
fn pitch_frame(frame: &[f64], sample_rate: u32, config: &ExtractionConfig) -> PitchFrame {
    let silent = PitchFrame {
        f0: 0.0,
        strength: 0.0,
        peak_corr: 0.0,
    };
    let n = frame.len();
    let energy: f64 = frame.iter().map(|x| x * x).sum();
    if energy <= LOG_FLOOR {
        return silent;
    }
    let sr = f64::from(sample_rate);
    let tau_min = ((sr / config.f0_max_hz).floor() as usize).max(2);
    let tau_max = ((sr / config.f0_min_hz).ceil() as usize).min(n - n / 4 - 1);
    if tau_max <= tau_min + 1 {
        return silent;
    }

    // difference function averaged over the overlap, lags 0..=tau_max+1
    let mut diff = vec![0.0; tau_max + 2];
    let mut peak_corr = f64::NEG_INFINITY;
    for (tau, d) in diff.iter_mut().enumerate().skip(1) {
        let overlap = n - tau;
        let (mut sq, mut cross, mut e0, mut e1) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..overlap {
            let (a, b) = (frame[j], frame[j + tau]);
            sq += (a - b) * (a - b);
            cross += a * b;
            e0 += a * a;
            e1 += b * b;
        }
        *d = sq / overlap as f64;
        if (tau_min..=tau_max).contains(&tau) && e0 > 0.0 && e1 > 0.0 {
            peak_corr = peak_corr.max(cross / (e0 * e1).sqrt());
        }
    }

    let mut cmnd = vec![1.0; diff.len()];
    let mut running = 0.0;
    for tau in 1..diff.len() {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    let mut best = None;
    let mut tau = tau_min;
    while tau <= tau_max {
        if cmnd[tau] < config.yin_threshold {
            while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            best = Some(tau);
            break;
        }
        tau += 1;
    }
    let tau = best.unwrap_or_else(|| {
        (tau_min..=tau_max)
            .min_by(|&a, &b| cmnd[a].total_cmp(&cmnd[b]))
            .unwrap_or(tau_min)
    });

    let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom > 0.0 {
        (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    PitchFrame {
        f0: sr / (tau as f64 + shift),
        strength: (1.0 - b).clamp(0.0, 1.0),
        peak_corr: if peak_corr.is_finite() { peak_corr } else { 0.0 },
    }
}
