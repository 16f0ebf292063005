//! Deterministic speech-like test utterances.
//!
//! Experiments need speech but no corpus ships with the crate, so this
//! generator produces utterances with the structure the algorithms rely on:
//! each utterance draws a small palette of voiced "phones" (a fundamental
//! plus formant envelope) that recur through the utterance, interleaved with
//! noise bursts for fricatives and silent gaps where reverberant tails
//! become visible. Recurring templates give the magnitude spectrogram the
//! approximately low-rank, sparse character of real speech. Everything is
//! drawn from a seeded generator, so a corpus is reproducible from a list of
//! seeds.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::signal::Waveform;

const PEAK_LEVEL: f64 = 0.7;

/// Number of distinct voiced templates per utterance.
const PALETTE_SIZE: usize = 5;

struct VoicedTemplate {
    f0: f64,
    formants: [f64; 3],
    phases: Vec<f64>,
}

/// Generates `duration` seconds of speech-like audio at `sample_rate`.
pub fn speech_like(seed: u64, sample_rate: u32, duration: f64) -> Waveform {
    let fs = sample_rate as f64;
    let total = (duration * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let palette: Vec<VoicedTemplate> = (0..PALETTE_SIZE)
        .map(|_| {
            let f1 = rng.random_range(300.0..850.0);
            VoicedTemplate {
                f0: rng.random_range(95.0..215.0),
                formants: [
                    f1,
                    rng.random_range(f1 + 400.0..2300.0),
                    rng.random_range(2400.0..3200.0),
                ],
                phases: (0..64)
                    .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
                    .collect(),
            }
        })
        .collect();

    let mut samples = Vec::with_capacity(total);
    // Lead-in pause keeps onsets off the very first frame.
    push_silence(&mut samples, (0.03 * fs) as usize);
    while samples.len() < total {
        match rng.random_range(0..10) {
            0..=5 => {
                let t = &palette[rng.random_range(0..PALETTE_SIZE)];
                push_voiced(&mut samples, &mut rng, fs, t);
            }
            6..=7 => push_fricative(&mut samples, &mut rng, fs),
            _ => push_silence(&mut samples, (rng.random_range(0.05..0.20) * fs) as usize),
        }
    }
    samples.truncate(total);

    let peak = samples.iter().fold(0.0_f64, |a, s| a.max(s.abs()));
    if peak > 0.0 {
        let s = PEAK_LEVEL / peak;
        for v in &mut samples {
            *v *= s;
        }
    }
    Waveform::new(samples, sample_rate).expect("generator output is finite")
}

fn push_silence(samples: &mut Vec<f64>, len: usize) {
    samples.extend(std::iter::repeat_n(0.0, len));
}

/// Voiced segment: harmonics of the template fundamental shaped by the
/// template's formant resonances and a spectral tilt, under an
/// attack/release envelope. The fundamental stays fixed within a segment so
/// recurring templates stay low-rank in the magnitude domain.
fn push_voiced(samples: &mut Vec<f64>, rng: &mut ChaCha8Rng, fs: f64, tpl: &VoicedTemplate) {
    let len = (rng.random_range(0.12..0.28) * fs) as usize;
    let level = rng.random_range(0.4..0.8);
    // Small per-instance tilt so repeated templates are similar, not
    // identical, like different utterances of the same phone.
    let tilt_jitter: f64 = rng.random_range(-0.08..0.08);
    let [f1, f2, f3] = tpl.formants;

    let envelope_at = |f: f64| -> f64 {
        let res = |center: f64, bw: f64| 1.0 / (1.0 + ((f - center) / bw).powi(2));
        let tilt = (1.0 + f / 1000.0).powf(tilt_jitter) / (1.0 + f / 700.0);
        (res(f1, 90.0) + 0.7 * res(f2, 120.0) + 0.4 * res(f3, 160.0)) * tilt
    };

    let max_f = 6500.0_f64.min(0.45 * fs);
    let n_harm = ((max_f / tpl.f0) as usize).min(tpl.phases.len());
    let amps: Vec<f64> = (1..=n_harm)
        .map(|h| envelope_at(h as f64 * tpl.f0))
        .collect();

    let attack = (rng.random_range(0.010..0.035) * fs) as usize;
    let release = (rng.random_range(0.025..0.060) * fs) as usize;
    let mut phase = 0.0;
    for i in 0..len {
        phase += std::f64::consts::TAU * tpl.f0 / fs;
        let mut v = 0.0;
        for (h, (&a, &p0)) in amps.iter().zip(&tpl.phases).enumerate() {
            v += a * ((h + 1) as f64 * phase + p0).sin();
        }
        samples.push(level * ramp(i, len, attack, release) * v);
    }
}

/// Unvoiced segment: first-differenced noise, which tilts the spectrum up
/// toward the fricative range.
fn push_fricative(samples: &mut Vec<f64>, rng: &mut ChaCha8Rng, fs: f64) {
    let len = (rng.random_range(0.06..0.16) * fs) as usize;
    let level = rng.random_range(0.06..0.15);
    let attack = (0.008 * fs) as usize;
    let release = (0.015 * fs) as usize;
    let mut prev = 0.0;
    for i in 0..len {
        let white: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let hp = white - prev;
        prev = white;
        samples.push(level * ramp(i, len, attack, release) * hp);
    }
}

/// Raised-cosine attack and release, flat in between.
fn ramp(i: usize, len: usize, attack: usize, release: usize) -> f64 {
    let up = if i < attack {
        0.5 * (1.0 - (std::f64::consts::PI * i as f64 / attack as f64).cos())
    } else {
        1.0
    };
    let remaining = len - 1 - i;
    let down = if remaining < release {
        0.5 * (1.0 - (std::f64::consts::PI * remaining as f64 / release as f64).cos())
    } else {
        1.0
    };
    up * down
}
