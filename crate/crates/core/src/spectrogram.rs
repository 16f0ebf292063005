//! Short-time Fourier analysis and synthesis.
//!
//! Enhancement happens on the magnitude spectrogram only; the reverberant
//! phase is kept aside by [`split`] and stitched back by [`recombine`] before
//! overlap-add resynthesis.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::export;
use crate::signal::Waveform;

/// Analysis/synthesis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Square root of a periodic Hann window; used for both analysis and
    /// synthesis so their product is Hann and overlap-add is constant.
    SqrtHann,
    /// Periodic Hann window.
    Hann,
}

/// STFT framing parameters.
///
/// Constructing a config validates `0 < hop <= window_len <= fft_size` and,
/// for [`WindowKind::SqrtHann`], that the chosen hop satisfies the
/// constant-overlap-add condition within `1e-6` relative deviation. Hann
/// windows skip the COLA check because synthesis normalizes by the
/// accumulated squared window instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
    pub window_kind: WindowKind,
}

/// Maximum relative deviation of the overlap-added window product accepted
/// for sqrt-Hann configurations.
pub const COLA_TOLERANCE: f64 = 1e-6;

impl StftConfig {
    pub fn new(
        window_len: usize,
        hop: usize,
        fft_size: usize,
        sample_rate: u32,
        window_kind: WindowKind,
    ) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if hop == 0 || hop > window_len || window_len > fft_size {
            return Err(Error::InvalidConfig(format!(
                "need 0 < hop ({hop}) <= window_len ({window_len}) <= fft_size ({fft_size})"
            )));
        }
        let cfg = Self {
            window_len,
            hop,
            fft_size,
            sample_rate,
            window_kind,
        };
        if window_kind == WindowKind::SqrtHann {
            let dev = cola_deviation(&cfg);
            if dev > COLA_TOLERANCE {
                return Err(Error::InvalidConfig(format!(
                    "sqrt-hann with hop {hop}/{window_len} misses constant overlap-add \
                     (deviation {dev:.2e}); use a hop dividing the window length evenly \
                     or a hann window"
                )));
            }
        }
        Ok(cfg)
    }

    /// 64 ms sqrt-Hann window with a 16 ms hop at 16 kHz, the default for all
    /// dereverberation runs.
    pub fn default_16k() -> Self {
        Self::new(1024, 256, 1024, 16_000, WindowKind::SqrtHann).expect("valid default")
    }

    /// Hann window of 1024 samples with 756-sample overlap (hop 268), the
    /// framing used by the factorization demos on music/speech snippets.
    pub fn demo_preset() -> Self {
        Self::new(1024, 1024 - 756, 1024, 16_000, WindowKind::Hann).expect("valid preset")
    }

    /// Number of frequency bins (`fft_size / 2 + 1`).
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of complete frames available in a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        if len < self.window_len {
            None
        } else {
            Some((len - self.window_len) / self.hop + 1)
        }
    }

    /// Hop duration in seconds.
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    /// The analysis window (also used for synthesis).
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len as f64;
        (0..self.window_len)
            .map(|i| {
                let hann = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n).cos());
                match self.window_kind {
                    WindowKind::SqrtHann => hann.sqrt(),
                    WindowKind::Hann => hann,
                }
            })
            .collect()
    }
}

/// Relative deviation from a constant of the overlap-added product of the
/// analysis and synthesis windows, measured over the fully overlapped
/// interior of a long signal.
pub fn cola_deviation(cfg: &StftConfig) -> f64 {
    let win = cfg.window();
    let product: Vec<f64> = win.iter().map(|w| w * w).collect();
    // Enough shifts that the middle hop-length stretch is fully covered.
    let frames = 2 * cfg.window_len / cfg.hop + 3;
    let len = (frames - 1) * cfg.hop + cfg.window_len;
    let mut acc = vec![0.0; len];
    for f in 0..frames {
        for (i, &p) in product.iter().enumerate() {
            acc[f * cfg.hop + i] += p;
        }
    }
    let mid = len / 2;
    let interior = &acc[mid..mid + cfg.hop];
    let max = interior.iter().cloned().fold(f64::MIN, f64::max);
    let min = interior.iter().cloned().fold(f64::MAX, f64::min);
    if max <= 0.0 {
        return f64::INFINITY;
    }
    (max - min) / max
}

/// Complex STFT matrix: `bins() x frames`, frame `n` covering samples
/// `[n*hop, n*hop + window_len)`.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub bins: Array2<Complex64>,
    pub config: StftConfig,
}

/// Non-negative magnitude matrix with the framing that produced it.
#[derive(Debug, Clone)]
pub struct MagnitudeSpectrogram {
    pub mag: Array2<f64>,
    pub config: StftConfig,
}

/// Per-bin phase angles matching a magnitude matrix.
#[derive(Debug, Clone)]
pub struct PhaseMatrix {
    pub phase: Array2<f64>,
}

impl MagnitudeSpectrogram {
    /// Dumps the magnitude matrix as CSV, one row per frequency bin.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        export::write_matrix_csv(path, &self.mag)
    }
}

/// Computes the STFT of a waveform. Frames are windowed, zero-padded to
/// `fft_size` and transformed; tail samples that do not fill a whole window
/// are dropped.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let frames = cfg.num_frames(w.len()).ok_or(Error::SignalTooShort {
        len: w.len(),
        window_len: cfg.window_len,
    })?;
    let window = cfg.window();
    let bins = cfg.bins();

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut buf = vec![0.0; cfg.fft_size];
    let mut spec = fft.make_output_vec();

    let mut out = Array2::zeros((bins, frames));
    for n in 0..frames {
        let start = n * cfg.hop;
        buf.fill(0.0);
        for (i, &win) in window.iter().enumerate() {
            buf[i] = w.samples[start + i] * win;
        }
        fft.process(&mut buf, &mut spec).expect("fft length mismatch");
        for (k, &v) in spec.iter().enumerate() {
            out[(k, n)] = v;
        }
    }
    Ok(ComplexSpectrogram {
        bins: out,
        config: cfg.clone(),
    })
}

/// Inverse STFT by weighted overlap-add: each frame is inverse-transformed,
/// multiplied by the synthesis window and accumulated, then the result is
/// normalized by the accumulated squared window.
///
/// Output covers exactly the analyzed span, `(frames-1)*hop + window_len`
/// samples, so it may be shorter than the original input.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = &s.config;
    let (bins, frames) = s.bins.dim();
    if bins != cfg.bins() {
        return Err(Error::ShapeMismatch {
            left: (bins, frames),
            right: (cfg.bins(), frames),
        });
    }
    if frames == 0 {
        return Err(Error::EmptyAudio);
    }
    let window = cfg.window();
    let len = (frames - 1) * cfg.hop + cfg.window_len;

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_size);
    let mut spec = ifft.make_input_vec();
    let mut buf = ifft.make_output_vec();
    let norm = 1.0 / cfg.fft_size as f64;

    let mut acc = vec![0.0; len];
    let mut wsum = vec![0.0; len];
    for n in 0..frames {
        for (k, slot) in spec.iter_mut().enumerate() {
            *slot = s.bins[(k, n)];
        }
        // DC and Nyquist bins are real by conjugate symmetry; drop the
        // rounding residue phase reconstruction leaves there, which the
        // inverse transform rejects.
        spec[0] = Complex64::new(spec[0].re, 0.0);
        if cfg.fft_size.is_multiple_of(2) {
            spec[bins - 1] = Complex64::new(spec[bins - 1].re, 0.0);
        }
        ifft.process(&mut spec, &mut buf)
            .expect("fft length mismatch");
        let start = n * cfg.hop;
        for (i, &win) in window.iter().enumerate() {
            acc[start + i] += buf[i] * norm * win;
            wsum[start + i] += win * win;
        }
    }
    let floor = wsum.iter().cloned().fold(0.0_f64, f64::max) * 1e-12;
    for (a, &d) in acc.iter_mut().zip(&wsum) {
        if d > floor {
            *a /= d;
        } else {
            *a = 0.0;
        }
    }
    Waveform::new(acc, cfg.sample_rate)
}

/// Splits a complex spectrogram into magnitude and phase.
pub fn split(s: &ComplexSpectrogram) -> (MagnitudeSpectrogram, PhaseMatrix) {
    let mag = s.bins.mapv(|c| c.norm());
    let phase = s.bins.mapv(|c| c.arg());
    (
        MagnitudeSpectrogram {
            mag,
            config: s.config.clone(),
        },
        PhaseMatrix { phase },
    )
}

/// Runs a magnitude-domain enhancement inside the full audio pipeline:
/// STFT, enhance the magnitude matrix, recombine with the input's phase,
/// overlap-add back to audio.
pub fn enhance_magnitude(
    w: &Waveform,
    cfg: &StftConfig,
    enhance: impl FnOnce(&Array2<f64>) -> crate::error::Result<Array2<f64>>,
) -> Result<Waveform> {
    let spec = stft(w, cfg)?;
    let (mag, phase) = split(&spec);
    let enhanced = MagnitudeSpectrogram {
        mag: enhance(&mag.mag)?,
        config: cfg.clone(),
    };
    istft(&recombine(&enhanced, &phase)?)
}

/// Rebuilds a complex spectrogram as `mag * exp(i*phase)`.
pub fn recombine(mag: &MagnitudeSpectrogram, phase: &PhaseMatrix) -> Result<ComplexSpectrogram> {
    if mag.mag.dim() != phase.phase.dim() {
        return Err(Error::ShapeMismatch {
            left: mag.mag.dim(),
            right: phase.phase.dim(),
        });
    }
    let bins = ndarray::Zip::from(&mag.mag)
        .and(&phase.phase)
        .map_collect(|&m, &p| Complex64::from_polar(m, p));
    Ok(ComplexSpectrogram {
        bins,
        config: mag.config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Waveform::new(
            (0..len).map(|_| rng.random::<f64>() * 1.6 - 0.8).collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn default_config_satisfies_cola() {
        let cfg = StftConfig::default_16k();
        assert!(cola_deviation(&cfg) < COLA_TOLERANCE);
    }

    #[test]
    fn sqrt_hann_with_bad_hop_is_rejected() {
        // hop = 3/4 of the window does not overlap-add to a constant.
        let err = StftConfig::new(1024, 768, 1024, 16_000, WindowKind::SqrtHann);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
        // The same hop is constructible with a hann window for analysis use.
        assert!(StftConfig::new(1024, 768, 1024, 16_000, WindowKind::Hann).is_ok());
    }

    #[test]
    fn zero_signal_gives_zero_bins() {
        let cfg = StftConfig::default_16k();
        let w = Waveform::new(vec![0.0; 16_000], 16_000).unwrap();
        let s = stft(&w, &cfg).unwrap();
        assert_eq!(s.bins.nrows(), 513);
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn frame_count_matches_formula() {
        let cfg = StftConfig::default_16k();
        let w = noise(16_000, 1);
        let s = stft(&w, &cfg).unwrap();
        assert_eq!(s.bins.ncols(), (16_000 - 1024) / 256 + 1);
        assert!(stft(&noise(500, 2), &cfg).is_err());
    }

    #[test]
    fn round_trip_recovers_interior() {
        for cfg in [StftConfig::default_16k(), StftConfig::demo_preset()] {
            let w = noise(8192, 7);
            let s = stft(&w, &cfg).unwrap();
            let back = istft(&s).unwrap();
            assert_eq!(back.len(), (s.bins.ncols() - 1) * cfg.hop + cfg.window_len);
            // Fully overlapped interior: skip one window at each edge.
            for i in cfg.window_len..back.len() - cfg.window_len {
                let denom = w.samples[i].abs().max(1e-3);
                assert!(
                    (back.samples[i] - w.samples[i]).abs() / denom < 1e-6,
                    "cfg {:?} sample {i}: {} vs {}",
                    cfg.window_kind,
                    back.samples[i],
                    w.samples[i]
                );
            }
        }
    }

    #[test]
    fn single_frame_synthesis_is_windowed_frame() {
        let cfg = StftConfig::default_16k();
        let w = noise(1024, 9);
        let s = stft(&w, &cfg).unwrap();
        assert_eq!(s.bins.ncols(), 1);
        let back = istft(&s).unwrap();
        // One frame: acc = x*w^2, normalized by w^2 -> x wherever w > 0.
        for i in 1..1024 {
            assert!((back.samples[i] - w.samples[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_spectrogram_synthesizes_zeros() {
        let cfg = StftConfig::default_16k();
        let s = ComplexSpectrogram {
            bins: Array2::zeros((cfg.bins(), 5)),
            config: cfg,
        };
        let w = istft(&s).unwrap();
        assert!(w.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bin_centered_sinusoid_concentrates_energy() {
        // With a plain hann window the DFT of a bin-centered sinusoid is
        // exactly three bins: amplitude N/4 at k0 +- 1 and N/2 at k0.
        let cfg = StftConfig::demo_preset();
        let k0 = 64usize;
        let f = k0 as f64 * 16_000.0 / 1024.0;
        let w = Waveform::new(
            (0..4096)
                .map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / 16_000.0).sin())
                .collect(),
            16_000,
        )
        .unwrap();
        let s = stft(&w, &cfg).unwrap();
        let frame = s.bins.column(1);
        let total: f64 = frame.iter().map(|c| c.norm_sqr()).sum();
        let near: f64 = (k0 - 1..=k0 + 1).map(|k| frame[k].norm_sqr()).sum();
        assert!(near / total > 0.99, "concentration {}", near / total);
        // Closed form for the windowed DFT at the center bin: |X[k0]| = N/4
        // for a unit sine (hann halves the amplitude, DFT gives N/2 again).
        let expect = 1024.0 / 4.0;
        assert!(
            (frame[k0].norm() - expect).abs() / expect < 1e-10,
            "{} vs {expect}",
            frame[k0].norm()
        );
        assert!((frame[k0 - 1].norm() - expect / 2.0).abs() / expect < 1e-9);
        assert!((frame[k0 + 1].norm() - expect / 2.0).abs() / expect < 1e-9);
    }

    #[test]
    fn parseval_energy_matches_per_frame() {
        let cfg = StftConfig::default_16k();
        let w = noise(4096, 21);
        let s = stft(&w, &cfg).unwrap();
        let window = cfg.window();
        for n in 0..s.bins.ncols() {
            let time_energy: f64 = (0..cfg.window_len)
                .map(|i| {
                    let v = w.samples[n * cfg.hop + i] * window[i];
                    v * v
                })
                .sum();
            let col = s.bins.column(n);
            let mut freq_energy = col[0].norm_sqr() + col[cfg.bins() - 1].norm_sqr();
            for k in 1..cfg.bins() - 1 {
                freq_energy += 2.0 * col[k].norm_sqr();
            }
            freq_energy /= cfg.fft_size as f64;
            let denom = time_energy.max(1e-30);
            assert!(
                (freq_energy - time_energy).abs() / denom < 1e-9,
                "frame {n}: {freq_energy} vs {time_energy}"
            );
        }
    }

    #[test]
    fn split_recombine_is_exact_inverse() {
        let cfg = StftConfig::default_16k();
        let w = noise(4096, 33);
        let s = stft(&w, &cfg).unwrap();
        let (mag, phase) = split(&s);
        assert!(mag.mag.iter().all(|&m| m >= 0.0 && m.is_finite()));
        let back = recombine(&mag, &phase).unwrap();
        for (a, b) in back.bins.iter().zip(s.bins.iter()) {
            assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn split_phase_conventions() {
        let cfg = StftConfig::default_16k();
        let mut bins = Array2::from_elem((cfg.bins(), 2), Complex64::new(2.0, 0.0));
        bins[(3, 1)] = Complex64::new(0.0, 5.0);
        let s = ComplexSpectrogram {
            bins,
            config: cfg.clone(),
        };
        let (mag, phase) = split(&s);
        assert_eq!(phase.phase[(0, 0)], 0.0);
        assert!((phase.phase[(3, 1)] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(mag.mag[(3, 1)], 5.0);

        // Zero magnitude wipes any phase.
        let zeros = MagnitudeSpectrogram {
            mag: Array2::zeros((cfg.bins(), 2)),
            config: cfg,
        };
        let rec = recombine(&zeros, &phase).unwrap();
        assert!(rec.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn recombine_rejects_shape_mismatch() {
        let cfg = StftConfig::default_16k();
        let mag = MagnitudeSpectrogram {
            mag: Array2::zeros((cfg.bins(), 3)),
            config: cfg,
        };
        let phase = PhaseMatrix {
            phase: Array2::zeros((4, 4)),
        };
        assert!(matches!(
            recombine(&mag, &phase),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ones_magnitude_zero_phase_gives_real_ones() {
        let cfg = StftConfig::default_16k();
        let mag = MagnitudeSpectrogram {
            mag: Array2::ones((cfg.bins(), 2)),
            config: cfg,
        };
        let phase = PhaseMatrix {
            phase: Array2::zeros((mag.config.bins(), 2)),
        };
        let rec = recombine(&mag, &phase).unwrap();
        assert!(rec.bins.iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() == 0.0));
    }
}
