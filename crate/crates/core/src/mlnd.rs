//! Multilinear normal distribution: log-density through per-slice trace sums,
//! slice whitening and sampling through mode products.
//!
//! The quadratic form `vec(X - M)ᵀ (Δ_1 ⊗ … ⊗ Δ_D)⁻¹ vec(X - M)` is never
//! evaluated with the dense Kronecker matrix. The centered array is whitened
//! along axes `2..D` with the inverse lower Cholesky factors `L_d⁻¹`
//! (`Δ_d = L_d L_dᵀ`), cut into `n_2 x n_1` slices, and each slice contributes
//! `tr[Δ_1⁻¹ X_jᵀ Δ_2⁻¹ X_j]`. Swapping axis 1 with a later axis gives the
//! commuted form of the same sum, which is what the M-step for that axis needs.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mda::{self, matricize_mode1, Matricization, Mda};

/// One multilinear normal component: mode-1 unfolded mean and one symmetric
/// positive-definite scale matrix per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MlndParams {
    mean: Matricization,
    scales: Vec<DMatrix<f64>>,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl MlndParams {
    pub fn new(mean: Matricization, scales: Vec<DMatrix<f64>>) -> Result<Self> {
        let dims = mean.dims();
        if scales.len() != dims.len() {
            return Err(Error::Shape(format!(
                "{} scale matrices for an order-{} array",
                scales.len(),
                dims.len()
            )));
        }
        for (d, (s, &n)) in scales.iter().zip(dims).enumerate() {
            if s.shape() != (n, n) {
                return Err(Error::Shape(format!(
                    "scale {d} is {}x{}, expected {n}x{n}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            let tol = SYMMETRY_TOL * s.amax().max(1.0);
            if !linalg::is_symmetric(s, tol) || linalg::cholesky(s).is_none() {
                return Err(Error::NotPositiveDefinite { dim: d });
            }
        }
        Ok(Self { mean, scales })
    }

    pub fn from_mean(mean: &Mda, scales: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(matricize_mode1(mean), scales)
    }

    /// Zero mean and identity scales.
    pub fn standard(dims: &[usize]) -> Result<Self> {
        let mean = Mda::zeros(dims)?;
        let scales = dims.iter().map(|&n| DMatrix::identity(n, n)).collect();
        Self::from_mean(&mean, scales)
    }

    pub fn dims(&self) -> &[usize] {
        self.mean.dims()
    }

    pub fn mean(&self) -> &Matricization {
        &self.mean
    }

    pub fn mean_mda(&self) -> Mda {
        self.mean.to_mda()
    }

    pub fn scales(&self) -> &[DMatrix<f64>] {
        &self.scales
    }

    pub fn scale(&self, axis: usize) -> &DMatrix<f64> {
        &self.scales[axis]
    }

    pub(crate) fn set_mean(&mut self, mean: Matricization) {
        debug_assert_eq!(mean.dims(), self.mean.dims());
        self.mean = mean;
    }

    pub(crate) fn set_scale(&mut self, axis: usize, scale: DMatrix<f64>) {
        debug_assert_eq!(scale.shape(), self.scales[axis].shape());
        self.scales[axis] = scale;
    }

    /// Cholesky factors of every scale matrix.
    pub fn factorize(&self) -> Result<CholeskyFactors> {
        CholeskyFactors::new(&self.scales)
    }
}

/// Per-dimension Cholesky data: `L_d`, `L_d⁻¹` and `log|Δ_d|`.
#[derive(Debug, Clone)]
pub struct CholeskyFactors {
    lower: Vec<DMatrix<f64>>,
    whiteners: Vec<DMatrix<f64>>,
    log_dets: Vec<f64>,
}

impl CholeskyFactors {
    pub fn new(scales: &[DMatrix<f64>]) -> Result<Self> {
        let mut lower = Vec::with_capacity(scales.len());
        let mut whiteners = Vec::with_capacity(scales.len());
        let mut log_dets = Vec::with_capacity(scales.len());
        for (d, s) in scales.iter().enumerate() {
            let l = linalg::cholesky(s)
                .ok_or(Error::NotPositiveDefinite { dim: d })?
                .l();
            log_dets.push(linalg::log_det_from_factor(&l));
            whiteners.push(linalg::lower_inverse(&l));
            lower.push(l);
        }
        Ok(Self {
            lower,
            whiteners,
            log_dets,
        })
    }

    pub fn lower(&self) -> &[DMatrix<f64>] {
        &self.lower
    }

    /// `L_d⁻¹`, satisfying `(L_d⁻¹)ᵀ L_d⁻¹ = Δ_d⁻¹`.
    pub fn whiteners(&self) -> &[DMatrix<f64>] {
        &self.whiteners
    }

    pub fn log_dets(&self) -> &[f64] {
        &self.log_dets
    }

    /// `log|Δ_1 ⊗ … ⊗ Δ_D| = Σ_d (n*/n_d) log|Δ_d|`.
    pub fn kron_log_det(&self) -> f64 {
        let dims: Vec<usize> = self.lower.iter().map(|l| l.nrows()).collect();
        let total: usize = dims.iter().product();
        self.log_dets
            .iter()
            .zip(&dims)
            .map(|(ld, &n)| ld * (total / n) as f64)
            .sum()
    }

    fn swapped(&self, axis: usize) -> Vec<DMatrix<f64>> {
        let mut w = self.whiteners.clone();
        w.swap(1, axis);
        w
    }
}

/// Which unfolding the slices are cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceMode {
    /// Slices are `n_2 x n_1`, one per index of axes `2..D`.
    Standard,
    /// Axis 1 exchanged with the given axis (`>= 2`): slices are
    /// `n_axis x n_1`, one per index of the remaining axes.
    Permuted(usize),
}

/// Centered observation cut into partially whitened slices.
#[derive(Debug, Clone)]
pub struct WhitenedSlices {
    slices: Vec<DMatrix<f64>>,
    folded_whiteners: Vec<DMatrix<f64>>,
}

impl WhitenedSlices {
    pub fn slices(&self) -> &[DMatrix<f64>] {
        &self.slices
    }

    /// The `L_d⁻¹` applied to the folded axes, in folding order.
    pub fn folded_whiteners(&self) -> &[DMatrix<f64>] {
        &self.folded_whiteners
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// `Σ_j tr[Δ_col⁻¹ X_jᵀ Δ_row⁻¹ X_j]` given the whiteners of the column
    /// (axis 0) and row scales.
    pub fn trace_sum(&self, col_whitener: &DMatrix<f64>, row_whitener: &DMatrix<f64>) -> f64 {
        let col_t = col_whitener.transpose();
        self.slices
            .iter()
            .map(|x| (row_whitener * x * &col_t).norm_squared())
            .sum()
    }
}

/// Cuts a centered array into slices whitened along the folded axes.
/// `whiteners` are indexed by axis of `xc` (already permuted if needed).
fn cut_slices(xc: &Mda, whiteners: &[DMatrix<f64>]) -> Result<WhitenedSlices> {
    let dims = xc.dims();
    let folded: Vec<Option<&DMatrix<f64>>> = (0..dims.len())
        .map(|k| if k >= 2 { Some(&whiteners[k]) } else { None })
        .collect();
    let w = mda::multi_mode_product(xc, &folded)?;
    let (n1, n2) = (dims[0], dims[1]);
    let fold: usize = dims[2..].iter().product();
    let vals = w.values();
    let slices = (0..fold)
        .map(|j| DMatrix::from_fn(n2, n1, |i2, i1| vals[(i1 * n2 + i2) * fold + j]))
        .collect();
    Ok(WhitenedSlices {
        slices,
        folded_whiteners: whiteners[2..].to_vec(),
    })
}

pub(crate) fn whiten_with(
    xc: &Mda,
    factors: &CholeskyFactors,
    mode: SliceMode,
) -> Result<WhitenedSlices> {
    match mode {
        SliceMode::Standard => cut_slices(xc, &factors.whiteners),
        SliceMode::Permuted(axis) => {
            let xp = mda::permute_with_second(xc, axis)?;
            cut_slices(&xp, &factors.swapped(axis))
        }
    }
}

/// Slices of a centered unfolding `X_(1) - M_(1)`, whitened along the folded
/// axes with the component's Cholesky factors.
pub fn whiten_slices(
    xc: &Matricization,
    params: &MlndParams,
    mode: SliceMode,
) -> Result<WhitenedSlices> {
    if xc.dims() != params.dims() {
        return Err(Error::Shape(format!(
            "observation dims {:?} do not match component dims {:?}",
            xc.dims(),
            params.dims()
        )));
    }
    let factors = params.factorize()?;
    whiten_with(&xc.to_mda(), &factors, mode)
}

/// The quadratic form through the slice sum of the chosen mode.
pub(crate) fn quadratic_form_with(
    xc: &Mda,
    factors: &CholeskyFactors,
    mode: SliceMode,
) -> Result<f64> {
    let slices = whiten_with(xc, factors, mode)?;
    let row = match mode {
        SliceMode::Standard => &factors.whiteners[1],
        SliceMode::Permuted(axis) => &factors.whiteners[axis],
    };
    Ok(slices.trace_sum(&factors.whiteners[0], row))
}

/// `vec(X - M)ᵀ (⊗ Δ_d)⁻¹ vec(X - M)` computed from slices in `mode`.
pub fn quadratic_form(x: &Mda, params: &MlndParams, mode: SliceMode) -> Result<f64> {
    check_dims(x, params)?;
    let xc = x.sub(&params.mean_mda())?;
    quadratic_form_with(&xc, &params.factorize()?, mode)
}

/// Reference route through the mode-1 unfolding with the Kronecker product of
/// axes `1..D` formed densely: `tr[Δ_1⁻¹ X̆ᵀ (Δ_2⁻¹ ⊗ … ⊗ Δ_D⁻¹) X̆]`.
/// Memory grows with `(n*/n_1)²`; use on small shapes only.
pub fn quadratic_form_unfolded(x: &Mda, params: &MlndParams) -> Result<f64> {
    check_dims(x, params)?;
    let xc = matricize_mode1(&x.sub(&params.mean_mda())?).into_matrix();
    let mut inverses = Vec::with_capacity(params.scales.len());
    for (d, s) in params.scales.iter().enumerate() {
        let chol = linalg::cholesky(s).ok_or(Error::NotPositiveDefinite { dim: d })?;
        inverses.push(chol.inverse());
    }
    let rows = mda::kron(&inverses[1..]);
    Ok((&inverses[0] * xc.transpose() * rows * xc).trace())
}

fn check_dims(x: &Mda, params: &MlndParams) -> Result<()> {
    if x.dims() != params.dims() {
        return Err(Error::Shape(format!(
            "observation dims {:?} do not match component dims {:?}",
            x.dims(),
            params.dims()
        )));
    }
    Ok(())
}

/// Log-density of `x`. The normalizing constant is `(2π)^(-n*/2)`.
pub fn log_density(x: &Mda, params: &MlndParams) -> Result<f64> {
    check_dims(x, params)?;
    let factors = params.factorize()?;
    log_density_with(x, params, &factors)
}

pub(crate) fn log_density_with(
    x: &Mda,
    params: &MlndParams,
    factors: &CholeskyFactors,
) -> Result<f64> {
    let xc = x.sub(&params.mean_mda())?;
    let q = quadratic_form_with(&xc, factors, SliceMode::Standard)?;
    let total = x.len() as f64;
    Ok(-0.5 * total * (2.0 * PI).ln() - 0.5 * factors.kron_log_det() - 0.5 * q)
}

/// Maps a standard-normal array `u` to `M + u ×_1 L_1 ×_2 … ×_D L_D`,
/// which has vec-covariance `⊗ Δ_d`.
pub fn transform_noise(params: &MlndParams, u: &Mda) -> Result<Mda> {
    check_dims(u, params)?;
    let factors = params.factorize()?;
    transform_noise_with(params, &factors, u)
}

pub(crate) fn transform_noise_with(
    params: &MlndParams,
    factors: &CholeskyFactors,
    u: &Mda,
) -> Result<Mda> {
    let mats: Vec<Option<&DMatrix<f64>>> = factors.lower.iter().map(Some).collect();
    let shaped = mda::multi_mode_product(u, &mats)?;
    let mean = params.mean.matrix().as_slice();
    let values = shaped
        .values()
        .iter()
        .zip(mean)
        .map(|(a, m)| a + m)
        .collect();
    Mda::new(params.dims().to_vec(), values)
}

/// One draw from the distribution.
pub fn sample<R: Rng + ?Sized>(params: &MlndParams, rng: &mut R) -> Result<Mda> {
    let factors = params.factorize()?;
    sample_with(params, &factors, rng)
}

pub(crate) fn sample_with<R: Rng + ?Sized>(
    params: &MlndParams,
    factors: &CholeskyFactors,
    rng: &mut R,
) -> Result<Mda> {
    let n: usize = params.dims().iter().product();
    let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let u = Mda::new(params.dims().to_vec(), noise)?;
    transform_noise_with(params, factors, &u)
}
