//! Shared fixtures for the benchmark suite.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use dereverb_core::{speech_like, stft, split, StftConfig, Waveform};

/// Random non-negative matrix with entries in `[0, scale)`.
pub fn random_nonneg(rows: usize, cols: usize, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() * scale)
}

/// Magnitude spectrogram of a two-second generated utterance at the default
/// analysis configuration.
pub fn utterance_magnitude(seed: u64) -> Array2<f64> {
    let w = speech_like(seed, 16_000, 2.0);
    let cfg = StftConfig::default_16k();
    let (mag, _) = split(&stft(&w, &cfg).expect("fits one window"));
    mag.mag
}

/// A two-second generated utterance.
pub fn utterance(seed: u64) -> Waveform {
    speech_like(seed, 16_000, 2.0)
}
