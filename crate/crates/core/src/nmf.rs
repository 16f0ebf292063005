//! Non-negative matrix factorization with Kullback-Leibler multiplicative
//! updates, plus the convolutive variant whose basis entries are short
//! spectro-temporal patterns instead of single spectra.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::error::{Error, Result};
use crate::export;

/// Result of a plain factorization `V ~ basis * activations`.
#[derive(Debug, Clone)]
pub struct NmfFactors {
    /// `K x R` non-negative basis spectra, one column per component.
    pub basis: Array2<f64>,
    /// `R x N` non-negative activations.
    pub activations: Array2<f64>,
    /// KL cost after each iteration.
    pub cost_trace: Vec<f64>,
}

impl NmfFactors {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.basis.dot(&self.activations)
    }

    pub fn write_csv(&self, basis_path: impl AsRef<Path>, act_path: impl AsRef<Path>) -> Result<()> {
        export::write_matrix_csv(basis_path, &self.basis)?;
        export::write_matrix_csv(act_path, &self.activations)
    }
}

/// Result of a convolutive factorization: `pattern_len` basis slices of shape
/// `K x R`, so component `r` is a pattern spanning `pattern_len` frames.
#[derive(Debug, Clone)]
pub struct ConvNmfFactors {
    pub basis: Vec<Array2<f64>>,
    pub activations: Array2<f64>,
    pub cost_trace: Vec<f64>,
}

impl ConvNmfFactors {
    pub fn pattern_len(&self) -> usize {
        self.basis.len()
    }

    /// Writes the activations plus one CSV per basis slice
    /// (`<stem>_slice_<t>.csv`) into `dir`.
    pub fn write_csv(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        export::write_matrix_csv(dir.join(format!("{stem}_activations.csv")), &self.activations)?;
        for (t, slice) in self.basis.iter().enumerate() {
            export::write_matrix_csv(dir.join(format!("{stem}_slice_{t}.csv")), slice)?;
        }
        Ok(())
    }
}

/// Generalized Kullback-Leibler divergence
/// `D = sum(v .* ln(v ./ vhat) - v + vhat)` with the `0 * ln 0 = 0`
/// convention. Returns infinity if `vhat` is zero where `v` is positive.
pub fn kl_divergence(v: &Array2<f64>, vhat: &Array2<f64>) -> Result<f64> {
    if v.dim() != vhat.dim() {
        return Err(Error::ShapeMismatch {
            left: v.dim(),
            right: vhat.dim(),
        });
    }
    let mut d = 0.0;
    for (&a, &b) in v.iter().zip(vhat.iter()) {
        if a > 0.0 {
            d += a * (a / b).ln() - a + b;
        } else {
            d += b;
        }
    }
    Ok(d)
}

/// Division floor: all multiplicative-update denominators get this added and
/// factors never drop below it, so sparse spectrograms cannot divide by zero.
pub(crate) fn epsilon_for(v: &Array2<f64>) -> f64 {
    let max = v.iter().cloned().fold(0.0_f64, f64::max);
    if max > 0.0 {
        1e-12 * max
    } else {
        1e-30
    }
}

fn check_non_negative(v: &Array2<f64>) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    if v.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidParameter(
            "input matrix must be non-negative".into(),
        ));
    }
    Ok(())
}

/// Draws a strictly positive `rows x cols` matrix with entries in `(0, 1]`.
pub(crate) fn random_positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = 1.0 - rng.random::<f64>();
    }
    m
}

/// Plain KL-NMF: alternates the activation and basis multiplicative updates
/// for `iters` rounds from a seeded random start scaled so the initial
/// reconstruction has the same total mass as `v`.
pub fn nmf(v: &Array2<f64>, rank: usize, iters: usize, seed: u64) -> Result<NmfFactors> {
    if rank == 0 || iters == 0 {
        return Err(Error::InvalidParameter(
            "rank and iteration count must be at least 1".into(),
        ));
    }
    check_non_negative(v)?;
    let (k, n) = v.dim();
    let eps = epsilon_for(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = random_positive(&mut rng, k, rank);
    let mut acts = random_positive(&mut rng, rank, n);
    scale_to_match(v.sum(), &mut basis, &mut acts, eps);

    let ones = Array2::ones((k, n));
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let ratio = quotient(v, &basis.dot(&acts), eps);
        let num = basis.t().dot(&ratio);
        let den = basis.t().dot(&ones);
        update_in_place(&mut acts, &num, &den, 0.0, eps);

        let ratio = quotient(v, &basis.dot(&acts), eps);
        let num = ratio.dot(&acts.t());
        let den = ones.dot(&acts.t());
        update_in_place(&mut basis, &num, &den, 0.0, eps);

        trace.push(kl_divergence(v, &basis.dot(&acts))?);
    }
    Ok(NmfFactors {
        basis,
        activations: acts,
        cost_trace: trace,
    })
}

/// Convolutive KL-NMF after the shifted-column construction: the
/// reconstruction is `sum_t basis[t] . shift_right(activations, t)` and the
/// activation update averages the multiplicative factors over the shifts.
pub fn conv_nmf(
    v: &Array2<f64>,
    rank: usize,
    pattern_len: usize,
    iters: usize,
    seed: u64,
) -> Result<ConvNmfFactors> {
    if rank == 0 || iters == 0 || pattern_len == 0 {
        return Err(Error::InvalidParameter(
            "rank, pattern length and iteration count must be at least 1".into(),
        ));
    }
    check_non_negative(v)?;
    let (k, n) = v.dim();
    if pattern_len > n {
        return Err(Error::FilterTooLong {
            filter_len: pattern_len,
            frames: n,
        });
    }
    let eps = epsilon_for(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Array2<f64>> = (0..pattern_len)
        .map(|_| random_positive(&mut rng, k, rank))
        .collect();
    let mut acts = random_positive(&mut rng, rank, n);
    // Same mass-matched start as the plain factorization.
    {
        let recon = reconstruct_conv(&basis, &acts);
        let target = v.sum();
        let current = recon.sum();
        if target > 0.0 && current > 0.0 {
            let s = (target / current).sqrt();
            for b in &mut basis {
                b.mapv_inplace(|x| (x * s).max(eps));
            }
            acts.mapv_inplace(|x| (x * s).max(eps));
        } else {
            for b in &mut basis {
                b.mapv_inplace(|x| (x * 0.0).max(eps));
            }
            acts.mapv_inplace(|x| (x * 0.0).max(eps));
        }
    }

    let ones = Array2::ones((k, n));
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        // Activation update: mean of the per-shift multiplicative factors.
        let ratio = quotient(v, &reconstruct_conv(&basis, &acts), eps);
        let mut factor: Array2<f64> = Array2::zeros(acts.dim());
        for (t, slice) in basis.iter().enumerate() {
            let num = slice.t().dot(&shift_left(&ratio, t));
            let den = slice.t().dot(&shift_left(&ones, t));
            ndarray::Zip::from(&mut factor)
                .and(&num)
                .and(&den)
                .for_each(|f, &a, &b| *f += a / (b + eps));
        }
        let inv_t = 1.0 / pattern_len as f64;
        ndarray::Zip::from(&mut acts)
            .and(&factor)
            .for_each(|x, &f| *x = (*x * (f * inv_t)).max(eps));

        // Basis update: every slice against the same pre-update ratio.
        let ratio = quotient(v, &reconstruct_conv(&basis, &acts), eps);
        for (t, slice) in basis.iter_mut().enumerate() {
            let shifted = shift_right(&acts, t);
            let num = ratio.dot(&shifted.t());
            let den = ones.dot(&shifted.t());
            update_in_place(slice, &num, &den, 0.0, eps);
        }

        trace.push(kl_divergence(v, &reconstruct_conv(&basis, &acts))?);
    }
    Ok(ConvNmfFactors {
        basis,
        activations: acts,
        cost_trace: trace,
    })
}

/// Reconstruction for convolutive factors: columns shifted off the right edge
/// are discarded, the left edge is zero-filled.
pub fn conv_reconstruct(f: &ConvNmfFactors) -> Array2<f64> {
    reconstruct_conv(&f.basis, &f.activations)
}

pub(crate) fn reconstruct_conv(basis: &[Array2<f64>], acts: &Array2<f64>) -> Array2<f64> {
    let mut recon = basis[0].dot(acts);
    for (t, slice) in basis.iter().enumerate().skip(1) {
        recon += &slice.dot(&shift_right(acts, t));
    }
    recon
}

/// Columns moved `t` steps to the right, zero-filling the left edge.
pub(crate) fn shift_right(m: &Array2<f64>, t: usize) -> Array2<f64> {
    let (rows, cols) = m.dim();
    let mut out = Array2::zeros((rows, cols));
    if t < cols {
        out.slice_mut(ndarray::s![.., t..])
            .assign(&m.slice(ndarray::s![.., ..cols - t]));
    }
    out
}

/// Columns moved `t` steps to the left, zero-filling the right edge.
pub(crate) fn shift_left(m: &Array2<f64>, t: usize) -> Array2<f64> {
    let (rows, cols) = m.dim();
    let mut out = Array2::zeros((rows, cols));
    if t < cols {
        out.slice_mut(ndarray::s![.., ..cols - t])
            .assign(&m.slice(ndarray::s![.., t..]));
    }
    out
}

/// Elementwise `v ./ (vhat + eps)`.
pub(crate) fn quotient(v: &Array2<f64>, vhat: &Array2<f64>, eps: f64) -> Array2<f64> {
    ndarray::Zip::from(v).and(vhat).map_collect(|&a, &b| a / (b + eps))
}

/// `target *= num ./ (den + lambda + eps)`, floored at `eps`.
pub(crate) fn update_in_place(
    target: &mut Array2<f64>,
    num: &Array2<f64>,
    den: &Array2<f64>,
    lambda: f64,
    eps: f64,
) {
    ndarray::Zip::from(target)
        .and(num)
        .and(den)
        .for_each(|x, &a, &b| *x = (*x * (a / (b + lambda + eps))).max(eps));
}

fn scale_to_match(target_sum: f64, basis: &mut Array2<f64>, acts: &mut Array2<f64>, eps: f64) {
    let current = basis.dot(acts).sum();
    if target_sum > 0.0 && current > 0.0 {
        let s = (target_sum / current).sqrt();
        basis.mapv_inplace(|x| (x * s).max(eps));
        acts.mapv_inplace(|x| (x * s).max(eps));
    } else {
        basis.mapv_inplace(|x| (x * 0.0).max(eps));
        acts.mapv_inplace(|x| (x * 0.0).max(eps));
    }
}
