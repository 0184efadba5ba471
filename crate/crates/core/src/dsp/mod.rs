//! Signal-processing primitives: audio I/O, filter design, 2x resampling,
//! log-mel analysis and pitch tracking.

pub mod audio;
pub mod filter;
pub mod mel;
pub mod pitch;
pub mod resample;

pub use audio::{load_wav, read_wav, write_wav, WavEncoding, Waveform, DEFAULT_SAMPLE_RATE};
pub use filter::{design_lowpass, FirFilter};
pub use mel::{mel_spectrogram, MelAnalyzer, MelConfig, MelFrames};
pub use pitch::{pitch_correlation, track_pitch, track_pitch_with, PitchConfig, PitchContour};
pub use resample::{default_resampler_filter, downsample2x, resample, upsample2x};
