//! Frame-level pretext-task label extraction from raw audio.
//!
//! All extractors share one framing ([`FrameConfig`]) so their series line up
//! frame by frame with each other and with the Mel spectrogram.

mod audio;
mod extract;
mod frames;
mod mel;

pub use audio::{read_wav, resample, AudioSignal, TARGET_SAMPLE_RATE};
pub use extract::{
    extract_features, extract_frame_feature, summarize_task_label, ExtractionConfig, FrameSeries,
    PretextScalar, PretextTask,
};
pub use frames::{FrameConfig, Framing};
pub use mel::{mel_spectrogram, MelConfig, MelSpectrogram};

/// Floor added to every power quantity before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-10;
