//! Time-domain audio: WAV I/O and convolution.
//!
//! Reverberant speech is modeled as the convolution of a dry source with a
//! room impulse response, so besides reading and writing mono WAV files this
//! module provides a full linear convolution used to synthesize test inputs.

use std::path::Path;

use realfft::RealFftPlanner;

use crate::error::{Error, Result};

/// A mono audio signal. Samples are kept as `f64` in roughly `[-1, 1]`;
/// quantization happens only when writing to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    /// Wraps samples, rejecting empty input, NaN/Inf and a zero sample rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if let Some(bad) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample(bad));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |acc, s| acc.max(s.abs()))
    }
}

/// Reads a PCM or float WAV file and returns its first channel with samples
/// normalized to `[-1, 1]`.
///
/// Accepts 16/24/32-bit integer PCM and 32-bit float encodings. For
/// multichannel files only channel 0 is kept and a notice is printed, since
/// the algorithms here are single-channel.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::WavDecode {
            path: path.into(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::WavDecode {
            path: path.into(),
            reason: "zero channels".into(),
        });
    }

    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .step_by(channels)
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
        (format, bits) => {
            return Err(Error::WavDecode {
                path: path.into(),
                reason: format!("unsupported encoding: {bits}-bit {format:?}"),
            })
        }
    }
    .map_err(|e| Error::WavDecode {
        path: path.into(),
        reason: e.to_string(),
    })?;

    if channels > 1 {
        eprintln!(
            "note: {} has {channels} channels; using channel 0 only",
            path.display()
        );
    }
    if samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a waveform as 16-bit PCM WAV. Values outside `[-1, 1]` are clipped
/// before quantization.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::WavDecode {
            path: path.into(),
            reason: other.to_string(),
        },
    })?;
    for &s in &w.samples {
        let clipped = s.clamp(-1.0, 1.0);
        // Same 2^15 scale the reader uses, so a round trip stays within
        // half an LSB (full scale +1.0 saturates at 32767).
        let q = (clipped * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| Error::WavDecode {
            path: path.into(),
            reason: e.to_string(),
        })?;
    }
    writer.finalize().map_err(|e| Error::WavDecode {
        path: path.into(),
        reason: e.to_string(),
    })?;
    Ok(())
}

/// Full linear convolution of two signals at the same sample rate. The result
/// has length `|s| + |h| - 1`.
///
/// Long inputs go through FFT-based overlap-add blocks; short ones are
/// convolved directly.
pub fn convolve(s: &Waveform, h: &Waveform) -> Result<Waveform> {
    if s.sample_rate != h.sample_rate {
        return Err(Error::SampleRateMismatch {
            left: s.sample_rate,
            right: h.sample_rate,
        });
    }
    let out = if s.len().min(h.len()) <= 64 {
        convolve_direct(&s.samples, &h.samples)
    } else {
        convolve_fft(&s.samples, &h.samples)
    };
    Waveform::new(out, s.sample_rate)
}

fn convolve_direct(s: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.len() + h.len() - 1];
    for (i, &si) in s.iter().enumerate() {
        if si == 0.0 {
            continue;
        }
        for (j, &hj) in h.iter().enumerate() {
            out[i + j] += si * hj;
        }
    }
    out
}

/// Overlap-add convolution: the shorter input acts as the filter and the
/// longer one is processed in blocks.
fn convolve_fft(a: &[f64], b: &[f64]) -> Vec<f64> {
    let (signal, filter) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let m = filter.len();
    let fft_len = (4 * m.next_power_of_two()).max(256);
    let block = fft_len - m + 1;

    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(fft_len);
    let inverse = planner.plan_fft_inverse(fft_len);

    let mut filter_pad = vec![0.0; fft_len];
    filter_pad[..m].copy_from_slice(filter);
    let mut filter_spec = forward.make_output_vec();
    forward
        .process(&mut filter_pad, &mut filter_spec)
        .expect("fft length mismatch");

    let mut out = vec![0.0; signal.len() + m - 1];
    let mut buf = vec![0.0; fft_len];
    let mut spec = forward.make_output_vec();
    let mut time = inverse.make_output_vec();
    let norm = 1.0 / fft_len as f64;

    for (chunk_idx, chunk) in signal.chunks(block).enumerate() {
        buf.fill(0.0);
        buf[..chunk.len()].copy_from_slice(chunk);
        forward
            .process(&mut buf, &mut spec)
            .expect("fft length mismatch");
        for (x, f) in spec.iter_mut().zip(&filter_spec) {
            *x *= f;
        }
        inverse
            .process(&mut spec, &mut time)
            .expect("fft length mismatch");
        let start = chunk_idx * block;
        let take = (chunk.len() + m - 1).min(out.len() - start);
        for i in 0..take {
            out[start + i] += time[i] * norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16_000).unwrap()
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Waveform::new(vec![], 16_000),
            Err(Error::EmptyAudio)
        ));
        assert!(matches!(
            Waveform::new(vec![0.0, f64::NAN], 16_000),
            Err(Error::NonFiniteSample(1))
        ));
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn convolve_with_unit_impulse_is_identity() {
        let s = wave(vec![0.3, -0.5, 0.9, 0.1]);
        let delta = wave(vec![1.0]);
        let out = convolve(&s, &delta).unwrap();
        assert_eq!(out.samples, s.samples);
    }

    #[test]
    fn convolve_with_scaled_impulse_scales() {
        let s = wave(vec![0.2, 0.4, -0.6]);
        let half = wave(vec![0.5]);
        let out = convolve(&s, &half).unwrap();
        for (o, e) in out.samples.iter().zip(&s.samples) {
            assert!((o - 0.5 * e).abs() < 1e-15);
        }
    }

    #[test]
    fn convolve_matches_naive_oracle() {
        // Direct O(n^2) sum as the reference.
        let s = wave(vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, -0.7, 0.8]);
        let h = wave(vec![0.5, 0.25, -0.125]);
        let expect = convolve_direct(&s.samples, &h.samples);
        let out = convolve(&s, &h).unwrap();
        assert_eq!(out.len(), s.len() + h.len() - 1);
        for (o, e) in out.samples.iter().zip(&expect) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_path_matches_naive_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let s: Vec<f64> = (0..4000).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let h: Vec<f64> = (0..300).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let fast = convolve(&wave(s.clone()), &wave(h.clone())).unwrap();
        let slow = convolve_direct(&s, &h);
        assert_eq!(fast.len(), slow.len());
        let max_err = fast
            .samples
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(max_err < 1e-8, "max_err = {max_err}");
    }

    #[test]
    fn convolve_is_linear_in_signal() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s1: Vec<f64> = (0..200).map(|_| rng.random::<f64>() - 0.5).collect();
        let s2: Vec<f64> = (0..200).map(|_| rng.random::<f64>() - 0.5).collect();
        let h: Vec<f64> = (0..80).map(|_| rng.random::<f64>() - 0.5).collect();
        let (a, b) = (0.7, -1.3);
        let mixed: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
        let lhs = convolve(&wave(mixed), &wave(h.clone())).unwrap();
        let c1 = convolve(&wave(s1), &wave(h.clone())).unwrap();
        let c2 = convolve(&wave(s2), &wave(h)).unwrap();
        for i in 0..lhs.len() {
            let rhs = a * c1.samples[i] + b * c2.samples[i];
            let denom = rhs.abs().max(1.0);
            assert!((lhs.samples[i] - rhs).abs() / denom < 1e-10);
        }
    }

    #[test]
    fn convolve_rejects_rate_mismatch() {
        let s = wave(vec![1.0, 2.0]);
        let h = Waveform::new(vec![1.0], 8_000).unwrap();
        assert!(matches!(
            convolve(&s, &h),
            Err(Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn wav_round_trip_is_within_one_lsb() {
        use rand::prelude::*;
        let dir = std::env::temp_dir().join("dereverb-signal-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.wav");

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let samples: Vec<f64> = (0..5000).map(|_| rng.random::<f64>() * 1.6 - 0.8).collect();
        let w = wave(samples);
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), w.len());
        assert_eq!(back.sample_rate, w.sample_rate);
        let lsb = 1.0 / 32768.0;
        for (a, b) in back.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() <= lsb, "{a} vs {b}");
        }
    }

    #[test]
    fn write_clips_out_of_range_values() {
        let dir = std::env::temp_dir().join("dereverb-signal-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("clip.wav");
        let w = wave(vec![2.0, -3.0, 0.0]);
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert!((back.samples[0] - 1.0).abs() < 1e-4);
        assert!((back.samples[1] + 1.0).abs() < 2e-4);
        assert_eq!(back.samples[2], 0.0);
    }

    #[test]
    fn read_silence_gives_zeros() {
        let dir = std::env::temp_dir().join("dereverb-signal-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("silence.wav");
        let w = wave(vec![0.0; 16_000]);
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 16_000);
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_file_takes_channel_zero() {
        let dir = std::env::temp_dir().join("dereverb-signal-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..100i16 {
            writer.write_sample(i).unwrap(); // channel 0
            writer.write_sample(-i).unwrap(); // channel 1
        }
        writer.finalize().unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 100);
        assert!(back.samples[10] > 0.0);
        assert!((back.samples[10] - 10.0 / 32768.0).abs() < 1e-9);
    }

    #[test]
    fn read_missing_file_fails() {
        assert!(matches!(
            read_wav("/nonexistent/never.wav"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn reads_float_and_24bit() {
        let dir = std::env::temp_dir().join("dereverb-signal-tests");
        std::fs::create_dir_all(&dir).unwrap();

        let path = dir.join("float32.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..10 {
            writer.write_sample(i as f32 / 10.0).unwrap();
        }
        writer.finalize().unwrap();
        let back = read_wav(&path).unwrap();
        assert!((back.samples[5] - 0.5).abs() < 1e-7);

        let path = dir.join("pcm24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..2i32 {
            writer.write_sample(i * (1 << 22)).unwrap();
        }
        writer.finalize().unwrap();
        let back = read_wav(&path).unwrap();
        assert!((back.samples[1] - 0.5).abs() < 1e-9); // 2^22 / 2^23
    }
}
