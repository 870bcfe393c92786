//! Speech front end: WAV → log-Mel frames → per-speaker standardization.

pub mod io;
mod mel;
mod normalize;

pub use mel::{hann_window, hz_to_mel, log_mel, mel_to_hz, LogMel, MelConfig, MelFilterbank};
pub use normalize::{normalize_per_speaker, speaker_stats, SpeakerStats, MIN_VARIANCE};

use crate::numerics::Tensor;

/// Mono 16-bit PCM audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

/// `T × D` model input frames for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub utterance_id: String,
    pub speaker_id: String,
    pub frames: Tensor<f32>,
}

impl FeatureSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}
