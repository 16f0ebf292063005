//! Non-negative matrix factor deconvolution.
//!
//! Models each frequency row of the reverberant magnitude spectrogram `Y` as
//! the causal convolution of the corresponding clean row `X_k` with a short
//! non-negative smearing filter `H_k`, and estimates both by multiplicative
//! updates on the squared-error cost with an L1 penalty on `X`. Rows of `H`
//! are rescaled to unit sum after every iteration, moving the scale into `X`
//! so the reconstruction is unchanged.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::export;
use crate::nmf::epsilon_for;
use crate::signal::Waveform;
use crate::spectrogram::{enhance_magnitude, StftConfig};

/// Per-frequency smearing filters: row `k` holds the `filter_len` taps applied
/// to sub-band `k`. Every row sums to one.
#[derive(Debug, Clone)]
pub struct SubbandFilter {
    pub coeffs: Array2<f64>,
}

impl SubbandFilter {
    /// Filter with `H_k[t] = (L - t) / (1 + 2 + ... + L)` for every row: the
    /// linearly decaying start used to initialize the estimation.
    pub fn linear_decay(bins: usize, filter_len: usize) -> Self {
        let norm = (filter_len * (filter_len + 1)) as f64 / 2.0;
        let coeffs = Array2::from_shape_fn((bins, filter_len), |(_, t)| {
            (filter_len - t) as f64 / norm
        });
        Self { coeffs }
    }

    pub fn bins(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn filter_len(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Rescales every row to unit sum and returns the scale factors.
    pub(crate) fn normalize_rows(&mut self) -> Vec<f64> {
        let mut scales = Vec::with_capacity(self.coeffs.nrows());
        for mut row in self.coeffs.rows_mut() {
            let sum: f64 = row.sum();
            if sum > 0.0 {
                row.mapv_inplace(|x| x / sum);
            }
            scales.push(sum);
        }
        scales
    }

    /// Dumps the filter matrix as CSV; with `db_scale` the taps are written
    /// in decibels relative to the largest tap, matching how the recovered
    /// filters are usually plotted.
    pub fn write_csv(&self, path: impl AsRef<Path>, db_scale: bool) -> Result<()> {
        if db_scale {
            export::write_matrix_csv_db(path, &self.coeffs, -120.0)
        } else {
            export::write_matrix_csv(path, &self.coeffs)
        }
    }
}

/// Outcome of [`nmfd`]: the clean-spectrogram estimate, the recovered
/// sub-band filters and the cost after each iteration.
#[derive(Debug, Clone)]
pub struct NmfdResult {
    pub clean: Array2<f64>,
    pub filter: SubbandFilter,
    pub cost_trace: Vec<f64>,
}

/// Hyperparameters for [`nmfd`]. Defaults: 11-tap filters (spanning roughly
/// 350 ms at the default framing), 20 iterations and a sparsity weight of
/// `sum(Y) * 1e-8` computed from the input.
#[derive(Debug, Clone)]
pub struct NmfdParams {
    pub filter_len: usize,
    /// L1 weight on the clean estimate; `None` selects `sum(Y) * 1e-8`.
    pub lambda: Option<f64>,
    pub iters: usize,
}

impl Default for NmfdParams {
    fn default() -> Self {
        Self {
            filter_len: 11,
            lambda: None,
            iters: 20,
        }
    }
}

/// Default sparsity weight for an input spectrogram.
pub fn default_lambda(y: &Array2<f64>) -> f64 {
    y.sum() * 1e-8
}

/// Sub-band convolution `Y'_k[n] = sum_tau X_k[n-tau] * H_k[tau]`, causal and
/// truncated to the frame count of `x`.
pub fn subband_convolve(x: &Array2<f64>, h: &SubbandFilter) -> Array2<f64> {
    convolve_rows(x, &h.coeffs, |k| k)
}

/// Row-wise causal convolution where row `r` of `x` uses filter row
/// `filter_row(r)`; shared by the plain and stacked models.
pub(crate) fn convolve_rows(
    x: &Array2<f64>,
    taps: &Array2<f64>,
    filter_row: impl Fn(usize) -> usize,
) -> Array2<f64> {
    let (rows, frames) = x.dim();
    let filter_len = taps.ncols();
    let mut out = Array2::zeros((rows, frames));
    for r in 0..rows {
        let h = taps.row(filter_row(r));
        for n in 0..frames {
            let mut acc = 0.0;
            for (tau, &ht) in h.iter().enumerate().take(filter_len.min(n + 1)) {
                acc += x[(r, n - tau)] * ht;
            }
            out[(r, n)] = acc;
        }
    }
    out
}

/// Correlation against the filter taps, the adjoint of [`subband_convolve`]:
/// `out(k, n) = sum_tau h(row(k), tau) * a(k, n + tau)` over in-range frames.
pub(crate) fn correlate_frames(
    a: &Array2<f64>,
    taps: &Array2<f64>,
    filter_row: impl Fn(usize) -> usize,
) -> Array2<f64> {
    let (rows, frames) = a.dim();
    let filter_len = taps.ncols();
    let mut out = Array2::zeros((rows, frames));
    for r in 0..rows {
        let h = taps.row(filter_row(r));
        for n in 0..frames {
            let mut acc = 0.0;
            for (tau, &ht) in h.iter().enumerate().take(filter_len.min(frames - n)) {
                acc += ht * a[(r, n + tau)];
            }
            out[(r, n)] = acc;
        }
    }
    out
}

/// Lag correlation `out(k, tau) = sum_n x(k, n) * a(k, n + tau)`, the adjoint
/// of the convolution with respect to the filter taps.
pub(crate) fn correlate_lags(x: &Array2<f64>, a: &Array2<f64>, filter_len: usize) -> Array2<f64> {
    let (rows, frames) = x.dim();
    let mut out = Array2::zeros((rows, filter_len));
    for r in 0..rows {
        for tau in 0..filter_len.min(frames) {
            let mut acc = 0.0;
            for n in 0..frames - tau {
                acc += x[(r, n)] * a[(r, n + tau)];
            }
            out[(r, tau)] = acc;
        }
    }
    out
}

/// Squared-error cost with the L1 sparsity term:
/// `sum((Y - Y')^2) + 2*lambda*sum(|X|)`.
pub fn nmfd_cost(y: &Array2<f64>, x: &Array2<f64>, h: &SubbandFilter, lambda: f64) -> f64 {
    let yp = subband_convolve(x, h);
    let se: f64 = y
        .iter()
        .zip(yp.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    se + 2.0 * lambda * x.iter().map(|v| v.abs()).sum::<f64>()
}

/// Estimates the clean spectrogram and per-sub-band filters from a
/// reverberant magnitude spectrogram.
///
/// `X` starts as a copy of `Y` and `H` as a linearly decaying filter; each
/// iteration applies the multiplicative `X` update (sparsity weight in the
/// denominator) and then the `H` update, after which filter rows are rescaled
/// to unit sum with the scale folded into `X`.
pub fn nmfd(y: &Array2<f64>, params: &NmfdParams) -> Result<NmfdResult> {
    nmfd_engine(y, params, false)
}

/// Engine behind [`nmfd`]; `shared_filter` ties all rows to one filter whose
/// update pools the statistics of every row (used for activation
/// deconvolution with a single common filter).
pub(crate) fn nmfd_engine(
    y: &Array2<f64>,
    params: &NmfdParams,
    shared_filter: bool,
) -> Result<NmfdResult> {
    let (bins, frames) = y.dim();
    if params.filter_len == 0 || params.iters == 0 {
        return Err(Error::InvalidParameter(
            "filter length and iteration count must be at least 1".into(),
        ));
    }
    if params.filter_len > frames {
        return Err(Error::FilterTooLong {
            filter_len: params.filter_len,
            frames,
        });
    }
    if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFiniteMatrix);
    }
    let lambda = params.lambda.unwrap_or_else(|| default_lambda(y));
    if lambda < 0.0 {
        return Err(Error::NegativeSparsity(lambda));
    }

    let eps = epsilon_for(y);
    let mut clean = y.clone();
    let mut filter = SubbandFilter::linear_decay(bins, params.filter_len);
    let mut trace = Vec::with_capacity(params.iters);

    for _ in 0..params.iters {
        // Filter update first: with the clean estimate still close to the
        // input this pulls the filter toward the actual smearing before the
        // clean estimate starts compensating for a wrong one.
        let reverb_est = subband_convolve(&clean, &filter);
        let num = correlate_lags(&clean, y, params.filter_len);
        let den = correlate_lags(&clean, &reverb_est, params.filter_len);
        if shared_filter {
            // One filter for all rows: pool the correlations.
            let num_sum = num.sum_axis(ndarray::Axis(0));
            let den_sum = den.sum_axis(ndarray::Axis(0));
            let mut row0: Vec<f64> = filter.coeffs.row(0).to_vec();
            for (t, tap) in row0.iter_mut().enumerate() {
                *tap = (*tap * (num_sum[t] / (den_sum[t] + eps))).max(eps);
            }
            for mut row in filter.coeffs.rows_mut() {
                for (t, tap) in row.iter_mut().enumerate() {
                    *tap = row0[t];
                }
            }
        } else {
            ndarray::Zip::from(&mut filter.coeffs)
                .and(&num)
                .and(&den)
                .for_each(|x, &a, &b| *x = (*x * (a / (b + eps))).max(eps));
        }

        // Unit-sum rows; the reconstruction keeps its scale through X.
        let scales = filter.normalize_rows();
        for (k, mut row) in clean.rows_mut().into_iter().enumerate() {
            let s = scales[k];
            if s > 0.0 {
                row.mapv_inplace(|x| x * s);
            }
        }

        // Clean-estimate update.
        let reverb_est = subband_convolve(&clean, &filter);
        let num = correlate_frames(y, &filter.coeffs, |k| k);
        let den = correlate_frames(&reverb_est, &filter.coeffs, |k| k);
        ndarray::Zip::from(&mut clean)
            .and(&num)
            .and(&den)
            .for_each(|x, &a, &b| *x = (*x * (a / (b + lambda + eps))).max(eps));

        trace.push(nmfd_cost(y, &clean, &filter, lambda));
    }

    Ok(NmfdResult {
        clean,
        filter,
        cost_trace: trace,
    })
}

/// Full dereverberation pipeline: STFT, deconvolve the magnitude, rebuild
/// audio with the reverberant phase.
pub fn dereverb_nmfd(y: &Waveform, cfg: &StftConfig, params: &NmfdParams) -> Result<Waveform> {
    enhance_magnitude(y, cfg, |mag| Ok(nmfd(mag, params)?.clean))
}
