//! Synthetic room impulse responses and reverberation-time measurement.
//!
//! Recorded impulse responses are not bundled, so experiments synthesize
//! their own: a unit direct path followed by Gaussian noise under an
//! exponential envelope chosen to hit a target T60. The measurement side
//! estimates T60 by Schroeder backward integration with a line fit on the
//! -5..-25 dB decay range, extrapolated to -60 dB, and doubles as the
//! validation oracle for the synthesis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Standard deviation of the noise tail relative to the unit direct path.
/// Puts the direct-to-reverberant ratio in the -6..-11 dB range over
/// T60 0.25..0.7 s, the distant-microphone regime these algorithms target.
const TAIL_LEVEL: f64 = 0.12;

/// Parameters for [`synth_rir`].
#[derive(Debug, Clone)]
pub struct RirSpec {
    /// Target reverberation time in seconds.
    pub t60: f64,
    pub sample_rate: u32,
    /// Total length in seconds; must cover at least one T60.
    pub duration: f64,
    /// Offset of the direct-path impulse in samples.
    pub direct_delay: usize,
    pub seed: u64,
}

impl RirSpec {
    /// Spec with a duration of `1.25 * t60`, no direct-path delay.
    pub fn new(t60: f64, sample_rate: u32, seed: u64) -> Self {
        Self {
            t60,
            sample_rate,
            duration: 1.25 * t60,
            direct_delay: 0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.t60.is_nan() || self.t60 <= 0.0 {
            return Err(Error::InvalidConfig("t60 must be positive".into()));
        }
        if self.duration < self.t60 {
            return Err(Error::InvalidConfig(format!(
                "duration {} s must cover at least one t60 ({} s)",
                self.duration, self.t60
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// Generates an impulse response with the requested decay time: a unit
/// impulse at `direct_delay` and a seeded Gaussian tail shaped by
/// `exp(-t * 3 ln10 / t60)`, peak-normalized.
pub fn synth_rir(spec: &RirSpec) -> Result<Waveform> {
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let len = ((spec.duration * fs).round() as usize).max(spec.direct_delay + 2);
    let decay = 3.0 * std::f64::consts::LN_10 / spec.t60;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut h = vec![0.0; len];
    h[spec.direct_delay] = 1.0;
    for (n, sample) in h.iter_mut().enumerate().skip(spec.direct_delay + 1) {
        let t = (n - spec.direct_delay) as f64 / fs;
        let g: f64 = StandardNormal.sample(&mut rng);
        *sample = TAIL_LEVEL * g * (-t * decay).exp();
    }
    let peak = h.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if peak > 0.0 {
        for v in &mut h {
            *v /= peak;
        }
    }
    Waveform::new(h, spec.sample_rate)
}

/// Estimates T60 by Schroeder backward integration: the energy decay curve
/// is fit with a least-squares line between its -5 dB and -25 dB points and
/// the slope extrapolated to -60 dB.
pub fn measure_t60(h: &Waveform) -> Result<f64> {
    let total: f64 = h.samples.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return Err(Error::EmptyAudio);
    }
    // Backward integral of the energy, normalized to 0 dB at the start.
    let mut tail = 0.0;
    let mut decay_db = vec![0.0; h.len()];
    for n in (0..h.len()).rev() {
        tail += h.samples[n] * h.samples[n];
        decay_db[n] = 10.0 * (tail / total).log10();
    }

    let start = decay_db
        .iter()
        .position(|&d| d <= -5.0)
        .ok_or(Error::DecayRangeUnreachable)?;
    let end = decay_db
        .iter()
        .position(|&d| d <= -25.0)
        .ok_or(Error::DecayRangeUnreachable)?;
    if end <= start + 1 || !decay_db[start].is_finite() || !decay_db[end].is_finite() {
        return Err(Error::DecayRangeUnreachable);
    }

    // Least-squares slope in dB per sample over the fit range.
    let n = (end - start + 1) as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &d) in decay_db[start..=end].iter().enumerate() {
        let x = i as f64;
        sx += x;
        sy += d;
        sxx += x * x;
        sxy += x * d;
    }
    let denom = n * sxx - sx * sx;
    if denom <= 0.0 {
        return Err(Error::DecayRangeUnreachable);
    }
    let slope = (n * sxy - sx * sy) / denom;
    if slope >= 0.0 {
        return Err(Error::DecayRangeUnreachable);
    }
    Ok(-60.0 / slope / h.sample_rate as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential_envelope_measures_analytically() {
        // Pure envelope, no noise: T60 = 3 ln10 / alpha.
        let fs = 16_000u32;
        let alpha = 3.0 * std::f64::consts::LN_10 / 0.4; // T60 = 0.4 s
        let h = Waveform::new(
            (0..(0.6 * fs as f64) as usize)
                .map(|n| (-alpha * n as f64 / fs as f64).exp())
                .collect(),
            fs,
        )
        .unwrap();
        let t = measure_t60(&h).unwrap();
        assert!((t - 0.4).abs() / 0.4 < 0.02, "t = {t}");
    }

    #[test]
    fn synthesis_round_trip_hits_target() {
        for &t60 in &[0.25, 0.5, 0.7] {
            let spec = RirSpec::new(t60, 16_000, 7);
            let h = synth_rir(&spec).unwrap();
            let measured = measure_t60(&h).unwrap();
            assert!(
                (measured - t60).abs() <= 0.1 * t60,
                "target {t60}, measured {measured}"
            );
        }
    }

    #[test]
    fn tiny_t60_decays_immediately() {
        let spec = RirSpec {
            t60: 0.001,
            sample_rate: 16_000,
            duration: 0.05,
            direct_delay: 0,
            seed: 3,
        };
        let h = synth_rir(&spec).unwrap();
        let total: f64 = h.samples.iter().map(|v| v * v).sum();
        let after_10ms: f64 = h.samples[160..].iter().map(|v| v * v).sum();
        assert!(after_10ms <= 1e-6 * total);
    }

    #[test]
    fn same_seed_is_identical() {
        let spec = RirSpec::new(0.3, 16_000, 11);
        let a = synth_rir(&spec).unwrap();
        let b = synth_rir(&spec).unwrap();
        assert_eq!(a.samples, b.samples);
        let other = synth_rir(&RirSpec::new(0.3, 16_000, 12)).unwrap();
        assert_ne!(a.samples, other.samples);
    }

    #[test]
    fn delta_impulse_has_no_decay_range() {
        let mut samples = vec![0.0; 1000];
        samples[0] = 1.0;
        let h = Waveform::new(samples, 16_000).unwrap();
        assert!(matches!(
            measure_t60(&h),
            Err(Error::DecayRangeUnreachable)
        ));
    }

    #[test]
    fn direct_delay_shifts_the_peak() {
        let spec = RirSpec {
            t60: 0.2,
            sample_rate: 16_000,
            duration: 0.3,
            direct_delay: 100,
            seed: 1,
        };
        let h = synth_rir(&spec).unwrap();
        assert!(h.samples[..100].iter().all(|&v| v == 0.0));
        assert_eq!(h.samples[100], 1.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(synth_rir(&RirSpec {
            t60: 0.5,
            sample_rate: 16_000,
            duration: 0.3,
            direct_delay: 0,
            seed: 0,
        })
        .is_err());
        assert!(synth_rir(&RirSpec {
            t60: -1.0,
            sample_rate: 16_000,
            duration: 1.0,
            direct_delay: 0,
            seed: 0,
        })
        .is_err());
    }
}
