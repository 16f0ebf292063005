//! Single-channel blind speech dereverberation on magnitude spectrograms.
//!
//! The crate factorizes the magnitude spectrogram of a reverberant recording
//! to estimate the underlying dry speech: plain and convolutive NMF with
//! multiplicative updates, sub-band deconvolution (NMFD) with per-frequency
//! smearing filters, three speech-model extensions of NMFD, and a pipeline
//! that deconvolves NMF activations instead of the spectrogram itself.
//! Supporting modules cover WAV I/O, STFT analysis/synthesis with
//! reverberant-phase reconstruction, synthetic room impulse responses with a
//! target decay time, and cepstral-distortion scoring for experiments.

pub mod activation_deconv;
pub mod error;
pub mod export;
pub mod metrics;
pub mod nmf;
pub mod nmfd;
pub mod rir;
pub mod signal;
pub mod spectrogram;
pub mod speech_models;
pub mod synth;

pub use activation_deconv::{
    activation_deconvolve, ActivationDeconvParams, ActivationDeconvResult, ActivationFilter,
};
pub use error::{Error, Result};
pub use metrics::{cepstral_distortion, import_pesq, MetricReport};
pub use nmf::{conv_nmf, conv_reconstruct, kl_divergence, nmf, ConvNmfFactors, NmfFactors};
pub use nmfd::{
    dereverb_nmfd, nmfd, nmfd_cost, subband_convolve, NmfdParams, NmfdResult, SubbandFilter,
};
pub use rir::{measure_t60, synth_rir, RirSpec};
pub use signal::{convolve, read_wav, write_wav, Waveform};
pub use spectrogram::{
    cola_deviation, enhance_magnitude, istft, recombine, split, stft, ComplexSpectrogram,
    MagnitudeSpectrogram, PhaseMatrix, StftConfig, WindowKind,
};
pub use speech_models::{
    nmfd_convnmf, nmfd_nmf, nmfd_stacked, spectral_gain, stack_frames, ConvBasisResult,
    NmfdNmfResult, SpeechModelParams, StackedModelResult, StackedSpectrogram, GAIN_MAX,
};
pub use synth::speech_like;
