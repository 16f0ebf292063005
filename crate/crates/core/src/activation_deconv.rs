//! Dereverberation by deconvolving NMF activations.
//!
//! Reverberation is mostly a temporal effect, so instead of deconvolving the
//! whole spectrogram this pipeline first factorizes the reverberant
//! magnitude into basis spectra and activations, then treats the activation
//! matrix as an `R`-row "spectrogram" and runs the sub-band deconvolution on
//! it: each activation row is the clean row convolved with a short decaying
//! filter. The clean spectrogram estimate is the basis times the deconvolved
//! activations.

use ndarray::Array2;

use crate::error::Result;
use crate::nmf::nmf;
use crate::nmfd::{nmfd_engine, NmfdParams};

/// One deconvolution filter per activation row, unit-sum rows. In shared
/// mode all rows are identical.
#[derive(Debug, Clone)]
pub struct ActivationFilter {
    pub coeffs: Array2<f64>,
}

/// Hyperparameters for [`activation_deconvolve`]. Defaults: rank 20, 11-tap
/// filters, 20 iterations for both stages, per-row filters.
#[derive(Debug, Clone)]
pub struct ActivationDeconvParams {
    pub rank: usize,
    pub filter_len: usize,
    /// L1 weight on the deconvolved activations; `None` selects
    /// `sum(A) * 1e-8` from the reverberant activation matrix.
    pub lambda: Option<f64>,
    pub iters_nmf: usize,
    pub iters_deconv: usize,
    /// Estimate a single filter shared by all rows instead of one per row.
    pub shared_filter: bool,
    pub seed: u64,
}

impl Default for ActivationDeconvParams {
    fn default() -> Self {
        Self {
            rank: 20,
            filter_len: 11,
            lambda: None,
            iters_nmf: 20,
            iters_deconv: 20,
            shared_filter: false,
            seed: 0,
        }
    }
}

/// Everything the pipeline produced: the clean estimate plus both stages'
/// intermediate matrices for inspection.
#[derive(Debug, Clone)]
pub struct ActivationDeconvResult {
    /// Clean spectrogram estimate `basis * activations`.
    pub clean: Array2<f64>,
    pub basis: Array2<f64>,
    /// Activations of the reverberant input, before deconvolution.
    pub reverberant_activations: Array2<f64>,
    /// Deconvolved activations.
    pub activations: Array2<f64>,
    pub filter: ActivationFilter,
    /// Deconvolution-stage cost after each iteration.
    pub cost_trace: Vec<f64>,
}

/// Factorizes `Y`, deconvolves each activation row, reconstructs.
pub fn activation_deconvolve(
    y: &Array2<f64>,
    params: &ActivationDeconvParams,
) -> Result<ActivationDeconvResult> {
    let factors = nmf(y, params.rank, params.iters_nmf, params.seed)?;
    let deconv = nmfd_engine(
        &factors.activations,
        &NmfdParams {
            filter_len: params.filter_len,
            lambda: params.lambda,
            iters: params.iters_deconv,
        },
        params.shared_filter,
    )?;
    let clean = factors.basis.dot(&deconv.clean);
    Ok(ActivationDeconvResult {
        clean,
        basis: factors.basis,
        reverberant_activations: factors.activations,
        activations: deconv.clean,
        filter: ActivationFilter {
            coeffs: deconv.filter.coeffs,
        },
        cost_trace: deconv.cost_trace,
    })
}
