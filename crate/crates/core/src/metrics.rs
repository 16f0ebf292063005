//! Objective quality measures.
//!
//! Cepstral distortion is computed natively: per frame, the real cepstrum of
//! the log magnitude spectrum is compared between reference and test signal
//! over coefficients 1..=12 (the energy coefficient `c_0` is excluded, which
//! makes the measure invariant to global gain), averaged over frames whose
//! reference energy is within 60 dB of the loudest frame. PESQ is not
//! computed here; externally produced scores are merged in from CSV.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::signal::Waveform;
use crate::spectrogram::StftConfig;

/// Number of cepstral coefficients compared (`c_1 ..= c_12`).
pub const CEPSTRUM_ORDER: usize = 12;

/// Frames whose reference energy falls more than this far below the loudest
/// frame are excluded from the average.
pub const ENERGY_GATE_DB: f64 = -60.0;

/// Scores for one utterance under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Cepstral distortion of the unprocessed input, dB (lower is better).
    pub cd_in_db: f64,
    /// Cepstral distortion of the enhanced output, dB.
    pub cd_out_db: f64,
    /// `cd_in_db - cd_out_db`; positive means the output is closer to clean.
    pub cd_improvement_db: f64,
    pub pesq_in: Option<f64>,
    pub pesq_out: Option<f64>,
    pub t60_label: String,
}

impl MetricReport {
    pub fn new(cd_in_db: f64, cd_out_db: f64, t60_label: impl Into<String>) -> Self {
        Self {
            cd_in_db,
            cd_out_db,
            cd_improvement_db: cd_in_db - cd_out_db,
            pesq_in: None,
            pesq_out: None,
            t60_label: t60_label.into(),
        }
    }
}

/// Mean cepstral distortion in dB between two time-aligned signals, framed
/// with `cfg` over their common length.
pub fn cepstral_distortion(reference: &Waveform, test: &Waveform, cfg: &StftConfig) -> Result<f64> {
    if reference.sample_rate != test.sample_rate {
        return Err(Error::SampleRateMismatch {
            left: reference.sample_rate,
            right: test.sample_rate,
        });
    }
    let common = reference.len().min(test.len());
    let frames = cfg.num_frames(common).ok_or(Error::SignalTooShort {
        len: common,
        window_len: cfg.window_len,
    })?;
    let window = cfg.window();

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let ifft = planner.plan_fft_inverse(cfg.fft_size);

    let mut ref_ceps = Vec::with_capacity(frames);
    let mut test_ceps = Vec::with_capacity(frames);
    let mut energies = Vec::with_capacity(frames);
    let mut buf = vec![0.0; cfg.fft_size];
    let mut spec = fft.make_output_vec();
    let mut log_spec = ifft.make_input_vec();
    let mut ceps_buf = ifft.make_output_vec();

    for n in 0..frames {
        let start = n * cfg.hop;
        let mut energy = 0.0;
        for (i, &w) in window.iter().enumerate() {
            let v = reference.samples[start + i] * w;
            energy += v * v;
        }
        energies.push(energy);
        ref_ceps.push(frame_cepstrum(
            &reference.samples[start..start + cfg.window_len],
            &window,
            cfg.fft_size,
            &*fft,
            &*ifft,
            &mut buf,
            &mut spec,
            &mut log_spec,
            &mut ceps_buf,
        ));
        test_ceps.push(frame_cepstrum(
            &test.samples[start..start + cfg.window_len],
            &window,
            cfg.fft_size,
            &*fft,
            &*ifft,
            &mut buf,
            &mut spec,
            &mut log_spec,
            &mut ceps_buf,
        ));
    }

    let peak = energies.iter().cloned().fold(0.0_f64, f64::max);
    let gate = peak * 10f64.powf(ENERGY_GATE_DB / 10.0);
    let mut total = 0.0;
    let mut used = 0usize;
    for n in 0..frames {
        if energies[n] < gate {
            continue;
        }
        let mut sq = 0.0;
        for i in 1..=CEPSTRUM_ORDER {
            let d = ref_ceps[n][i] - test_ceps[n][i];
            sq += d * d;
        }
        total += (10.0 / std::f64::consts::LN_10) * (2.0 * sq).sqrt();
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllFramesGated);
    }
    Ok(total / used as f64)
}

/// Real cepstrum of one windowed frame: inverse transform of the log
/// magnitude spectrum. The magnitude is floored relative to the frame's own
/// peak so the cepstrum (beyond `c_0`) is invariant to frame gain.
#[allow(clippy::too_many_arguments)]
fn frame_cepstrum(
    samples: &[f64],
    window: &[f64],
    fft_size: usize,
    fft: &dyn realfft::RealToComplex<f64>,
    ifft: &dyn realfft::ComplexToReal<f64>,
    buf: &mut [f64],
    spec: &mut [num_complex::Complex<f64>],
    log_spec: &mut [num_complex::Complex<f64>],
    ceps_buf: &mut [f64],
) -> Vec<f64> {
    buf.fill(0.0);
    for (i, (&s, &w)) in samples.iter().zip(window).enumerate() {
        buf[i] = s * w;
    }
    fft.process(buf, spec).expect("fft length mismatch");
    let peak = spec.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    let floor = (peak * 1e-4).max(1e-300);
    for (l, s) in log_spec.iter_mut().zip(spec.iter()) {
        *l = num_complex::Complex::new(s.norm().max(floor).ln(), 0.0);
    }
    // realfft's inverse requires Im(X[0]) = Im(X[N/2]) = 0, which holds here.
    ifft.process(log_spec, ceps_buf)
        .expect("fft length mismatch");
    let norm = 1.0 / fft_size as f64;
    ceps_buf[..=CEPSTRUM_ORDER.min(ceps_buf.len() - 1)]
        .iter()
        .map(|&c| c * norm)
        .collect()
}

/// Imported PESQ scores per utterance id: `(pesq_in, pesq_out)`.
pub type PesqScores = BTreeMap<String, (Option<f64>, Option<f64>)>;

/// Reads externally computed PESQ scores from a CSV file with the header
/// `id,pesq_in,pesq_out`; empty score fields become `None`.
pub fn import_pesq(path: impl AsRef<Path>) -> Result<PesqScores> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut map = BTreeMap::new();
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::Csv {
                line: 1,
                reason: "missing header".into(),
            })
        }
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["id", "pesq_in", "pesq_out"] {
        return Err(Error::Csv {
            line: 1,
            reason: format!("expected header id,pesq_in,pesq_out, got {header:?}"),
        });
    }

    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Csv {
                line: idx + 1,
                reason: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|_| Error::Csv {
                    line: idx + 1,
                    reason: format!("not a number: {s:?}"),
                })
            }
        };
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(Error::Csv {
                line: idx + 1,
                reason: "empty id".into(),
            });
        }
        let entry = (parse(fields[1])?, parse(fields[2])?);
        if map.insert(id.clone(), entry).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(map)
}
