//! Per-dimension scale families and their conditional M-step updates.
//!
//! Every family is updated from the same weighted scatter `Λ_{g,d}` of the
//! partially whitened slices:
//!
//! | family     | scale `Δ_{g,d}`                      | free parameters          |
//! |------------|--------------------------------------|--------------------------|
//! | `VVV`      | unconstrained, group specific        | `G n(n+1)/2`             |
//! | `MCD-VVI`  | `δ_g (T_gᵀ T_g)⁻¹`, `T_g` unit lower | `G n(n-1)/2 + G`         |
//! | `MCD-EVI`  | `δ_g (Tᵀ T)⁻¹`, `T` shared           | `n(n-1)/2 + G`           |
//! | `EEE`      | one full matrix shared by all groups | `n(n+1)/2`               |
//! | `VVI-GPCM` | `λ_g D_g`, `D_g` diagonal, `|D_g|=1` | `G n`                    |
//!
//! The MCD families are meant for ordered (temporal) axes, but nothing here
//! enforces that.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{MixtureModel, Responsibilities};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mda::Mda;
use crate::mlnd::{self, SliceMode};

/// Scale family applied to one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScaleModelSpec {
    #[serde(rename = "VVV")]
    Vvv,
    #[serde(rename = "MCD-VVI")]
    McdVvi,
    #[serde(rename = "MCD-EVI")]
    McdEvi,
    #[serde(rename = "EEE")]
    GpcmEee,
    #[serde(rename = "VVI-GPCM")]
    GpcmVvi,
}

impl ScaleModelSpec {
    pub const ALL: [ScaleModelSpec; 5] = [
        ScaleModelSpec::Vvv,
        ScaleModelSpec::McdVvi,
        ScaleModelSpec::McdEvi,
        ScaleModelSpec::GpcmEee,
        ScaleModelSpec::GpcmVvi,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ScaleModelSpec::Vvv => "VVV",
            ScaleModelSpec::McdVvi => "MCD-VVI",
            ScaleModelSpec::McdEvi => "MCD-EVI",
            ScaleModelSpec::GpcmEee => "EEE",
            ScaleModelSpec::GpcmVvi => "VVI-GPCM",
        }
    }

    /// Free scale parameters contributed by one dimension of length `n`.
    pub fn free_params(self, groups: usize, n: usize) -> usize {
        let tri = n * (n - 1) / 2;
        match self {
            ScaleModelSpec::Vvv => groups * n * (n + 1) / 2,
            ScaleModelSpec::McdVvi => groups * tri + groups,
            ScaleModelSpec::McdEvi => tri + groups,
            ScaleModelSpec::GpcmEee => n * (n + 1) / 2,
            ScaleModelSpec::GpcmVvi => groups * n,
        }
    }
}

impl fmt::Display for ScaleModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ScaleModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('_', "-").as_str() {
            "VVV" => Ok(ScaleModelSpec::Vvv),
            "MCD-VVI" => Ok(ScaleModelSpec::McdVvi),
            "MCD-EVI" => Ok(ScaleModelSpec::McdEvi),
            "EEE" | "GPCM-EEE" => Ok(ScaleModelSpec::GpcmEee),
            "VVI-GPCM" | "GPCM-VVI" => Ok(ScaleModelSpec::GpcmVvi),
            other => Err(Error::InvalidArgument(format!(
                "unknown scale model '{other}' (expected VVV, MCD-VVI, MCD-EVI, EEE or VVI-GPCM)"
            ))),
        }
    }
}

/// Parses a comma-separated list such as `VVV,MCD-VVI,EEE,VVV`.
pub fn parse_spec_list(s: &str) -> Result<Vec<ScaleModelSpec>> {
    s.split(',').map(str::parse).collect()
}

/// Modified Cholesky factors of a scale matrix: `Δ⁻¹ = Tᵀ (δ I)⁻¹ T`.
#[derive(Debug, Clone, PartialEq)]
pub struct McdFactors {
    /// Unit lower-triangular; the sub-diagonal entries are the negated
    /// autoregressive coefficients.
    pub t: DMatrix<f64>,
    /// Isotropic innovation variance.
    pub delta: f64,
}

impl McdFactors {
    pub fn identity(n: usize) -> Self {
        Self {
            t: DMatrix::identity(n, n),
            delta: 1.0,
        }
    }

    pub fn precision(&self) -> DMatrix<f64> {
        self.t.transpose() * &self.t / self.delta
    }

    pub fn scale(&self) -> DMatrix<f64> {
        let n = self.t.nrows();
        let t_inv = self
            .t
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("unit triangular factor is invertible");
        linalg::symmetrize(&(&t_inv * t_inv.transpose() * self.delta))
    }
}

/// Structured representation kept alongside each fitted scale matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleFactors {
    /// `VVV` and `EEE`: the matrix itself is the parameter.
    Full,
    Mcd(McdFactors),
    /// `λ D` with `D` diagonal and `|D| = 1`.
    Diagonal { volume: f64, shape: DVector<f64> },
}

impl ScaleFactors {
    pub fn initial(spec: ScaleModelSpec, n: usize) -> Self {
        match spec {
            ScaleModelSpec::Vvv | ScaleModelSpec::GpcmEee => ScaleFactors::Full,
            ScaleModelSpec::McdVvi | ScaleModelSpec::McdEvi => {
                ScaleFactors::Mcd(McdFactors::identity(n))
            }
            ScaleModelSpec::GpcmVvi => ScaleFactors::Diagonal {
                volume: 1.0,
                shape: DVector::from_element(n, 1.0),
            },
        }
    }

    /// Factors after the scale matrix is multiplied by `c > 0`.
    pub fn rescaled(&self, c: f64) -> Self {
        match self {
            ScaleFactors::Full => ScaleFactors::Full,
            ScaleFactors::Mcd(m) => ScaleFactors::Mcd(McdFactors {
                t: m.t.clone(),
                delta: m.delta * c,
            }),
            ScaleFactors::Diagonal { volume, shape } => ScaleFactors::Diagonal {
                volume: volume * c,
                shape: shape.clone(),
            },
        }
    }
}

/// Weighted scatter of one group along one axis, with the group weight `n_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterLambda {
    pub matrix: DMatrix<f64>,
    pub weight: f64,
}

/// `Λ_{g,axis}` for every group, from slices whitened with the model's
/// current scales:
///
/// * axis 0: `(1/n_g) Σ_i ẑ_ig Σ_j X_jᵀ Δ_{g,2}⁻¹ X_j`
/// * axis 1: `(1/n_g) Σ_i ẑ_ig Σ_j X_j Δ_{g,1}⁻¹ X_jᵀ`
/// * axis `l >= 2`: as axis 1 on the slices with axes 1 and `l` exchanged.
pub fn scatter_lambda(
    data: &[Mda],
    z: &Responsibilities,
    model: &MixtureModel,
    axis: usize,
) -> Result<Vec<ScatterLambda>> {
    let dims = model.dims();
    if axis >= dims.len() {
        return Err(Error::AxisOutOfRange {
            axis,
            order: dims.len(),
        });
    }
    let sizes = z.group_sizes();
    let n = dims[axis];
    model
        .components()
        .iter()
        .enumerate()
        .map(|(g, comp)| {
            let weight = sizes[g];
            if weight <= 0.0 {
                return Err(Error::InvalidArgument(format!("group {g} has zero weight")));
            }
            let factors = comp.factorize()?;
            let mean = comp.mean_mda();
            let parts: Vec<Option<DMatrix<f64>>> = data
                .par_iter()
                .enumerate()
                .map(|(i, x)| {
                    let w = z.get(i, g);
                    if w == 0.0 {
                        return Ok(None);
                    }
                    let xc = x.sub(&mean)?;
                    let mode = if axis >= 2 {
                        SliceMode::Permuted(axis)
                    } else {
                        SliceMode::Standard
                    };
                    let slices = mlnd::whiten_with(&xc, &factors, mode)?;
                    let mut acc = DMatrix::zeros(n, n);
                    if axis == 0 {
                        let a = &factors.whiteners()[1];
                        for s in slices.slices() {
                            let y = a * s;
                            acc += y.transpose() * y;
                        }
                    } else {
                        let a_t = factors.whiteners()[0].transpose();
                        for s in slices.slices() {
                            let y = s * &a_t;
                            acc += &y * y.transpose();
                        }
                    }
                    Ok(Some(acc * w))
                })
                .collect::<Result<_>>()?;
            let mut total = DMatrix::zeros(n, n);
            for p in parts.into_iter().flatten() {
                total += p;
            }
            Ok(ScatterLambda {
                matrix: linalg::symmetrize(&(total / weight)),
                weight,
            })
        })
        .collect()
}

const MINOR_JITTER: f64 = 1e-10;

/// Row-wise triangular solves `K[..r,..r]ᵀ φ = -K[r,..r]` for `r = 1..n`,
/// returning the unit lower-triangular `T` with `φ` below the diagonal.
fn mcd_rows(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match try_mcd_rows(k) {
        Ok(t) => Ok(t),
        Err(_) => {
            let n = k.nrows();
            let jittered = k + DMatrix::identity(n, n) * MINOR_JITTER;
            try_mcd_rows(&jittered)
        }
    }
}

fn try_mcd_rows(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    let mut t = DMatrix::identity(n, n);
    for r in 1..n {
        let minor = k.view((0, 0), (r, r)).transpose();
        if linalg::inverse_condition(&minor) < f64::EPSILON {
            return Err(Error::SingularMinor { order: r });
        }
        let rhs = -k.view((r, 0), (1, r)).transpose();
        let phi = minor
            .lu()
            .solve(&rhs)
            .filter(|p| p.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularMinor { order: r })?;
        for c in 0..r {
            t[(r, c)] = phi[c];
        }
    }
    Ok(t)
}

fn mcd_delta(t: &DMatrix<f64>, lambda: &DMatrix<f64>, total: usize) -> f64 {
    (t * lambda * t.transpose()).trace() / total as f64
}

/// Group-specific `T_g` and isotropic `δ_g` for one group's scatter.
/// `total` is `n*`.
pub fn mcd_vvi_update(lambda: &DMatrix<f64>, total: usize) -> Result<McdFactors> {
    let t = mcd_rows(lambda)?;
    let delta = mcd_delta(&t, lambda, total);
    Ok(McdFactors { t, delta })
}

/// Shared `T` and per-group `δ_g`. One conditional sweep: `κ` is built from
/// `prev_deltas`, `T` is solved from `κ`, then every `δ_g` is refreshed.
pub fn mcd_evi_update(
    lambdas: &[ScatterLambda],
    prev_deltas: &[f64],
    total: usize,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if lambdas.is_empty() || lambdas.len() != prev_deltas.len() {
        return Err(Error::InvalidArgument(
            "EVI update needs one previous delta per group".into(),
        ));
    }
    let n = lambdas[0].matrix.nrows();
    let mut kappa = DMatrix::zeros(n, n);
    for (l, &d) in lambdas.iter().zip(prev_deltas) {
        kappa += &l.matrix * (l.weight / d);
    }
    let t = mcd_rows(&kappa)?;
    let deltas = lambdas
        .iter()
        .map(|l| mcd_delta(&t, &l.matrix, total))
        .collect();
    Ok((t, deltas))
}

/// One scale matrix shared by every group: `(n_d / (n* N)) Σ_g n_g Λ_g`.
pub fn gpcm_eee_update(lambdas: &[ScatterLambda], total: usize, n: usize) -> DMatrix<f64> {
    let weight: f64 = lambdas.iter().map(|l| l.weight).sum();
    let mut acc = DMatrix::zeros(n, n);
    for l in lambdas {
        acc += &l.matrix * l.weight;
    }
    linalg::symmetrize(&(acc * (n as f64 / (total as f64 * weight))))
}

/// Axis-aligned `λ_g D_g`: `D_g = diag(Λ)/|diag(Λ)|^(1/n)`,
/// `λ_g = (n/n*) |diag(Λ)|^(1/n)`. Returns `(λ_g, diag(D_g))`.
pub fn gpcm_vvi_update(lambda: &DMatrix<f64>, total: usize) -> Result<(f64, DVector<f64>)> {
    let diag = lambda.diagonal();
    if let Some(bad) = diag.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scatter diagonal entry {bad} is not positive"
        )));
    }
    let n = diag.len();
    let product: f64 = diag.iter().product();
    let geo = if product.is_normal() {
        product.powf(1.0 / n as f64)
    } else {
        (diag.iter().map(|v| v.ln()).sum::<f64>() / n as f64).exp()
    };
    let volume = n as f64 / total as f64 * geo;
    Ok((volume, diag / geo))
}

/// Result of one dimension's conditional update for all groups.
#[derive(Debug, Clone)]
pub struct DimensionUpdate {
    pub scales: Vec<DMatrix<f64>>,
    pub factors: Vec<ScaleFactors>,
}

/// Dispatches the conditional maximizer of `spec` for one axis.
/// `prev` holds the current factors per group (used by `MCD-EVI`).
pub fn update_dimension(
    spec: ScaleModelSpec,
    lambdas: &[ScatterLambda],
    prev: &[ScaleFactors],
    total: usize,
) -> Result<DimensionUpdate> {
    let n = lambdas
        .first()
        .map(|l| l.matrix.nrows())
        .ok_or_else(|| Error::InvalidArgument("no groups".into()))?;
    let groups = lambdas.len();
    match spec {
        ScaleModelSpec::Vvv => Ok(DimensionUpdate {
            scales: lambdas
                .iter()
                .map(|l| linalg::symmetrize(&(&l.matrix * (n as f64 / total as f64))))
                .collect(),
            factors: vec![ScaleFactors::Full; groups],
        }),
        ScaleModelSpec::McdVvi => {
            let mcd = lambdas
                .iter()
                .map(|l| mcd_vvi_update(&l.matrix, total))
                .collect::<Result<Vec<_>>>()?;
            Ok(DimensionUpdate {
                scales: mcd.iter().map(McdFactors::scale).collect(),
                factors: mcd.into_iter().map(ScaleFactors::Mcd).collect(),
            })
        }
        ScaleModelSpec::McdEvi => {
            let prev_deltas: Vec<f64> = prev
                .iter()
                .map(|f| match f {
                    ScaleFactors::Mcd(m) if m.delta > 0.0 => m.delta,
                    _ => 1.0,
                })
                .collect();
            let (t, deltas) = mcd_evi_update(lambdas, &prev_deltas, total)?;
            let mcd: Vec<McdFactors> = deltas
                .into_iter()
                .map(|delta| McdFactors { t: t.clone(), delta })
                .collect();
            Ok(DimensionUpdate {
                scales: mcd.iter().map(McdFactors::scale).collect(),
                factors: mcd.into_iter().map(ScaleFactors::Mcd).collect(),
            })
        }
        ScaleModelSpec::GpcmEee => {
            let shared = gpcm_eee_update(lambdas, total, n);
            Ok(DimensionUpdate {
                scales: vec![shared; groups],
                factors: vec![ScaleFactors::Full; groups],
            })
        }
        ScaleModelSpec::GpcmVvi => {
            let mut scales = Vec::with_capacity(groups);
            let mut factors = Vec::with_capacity(groups);
            for l in lambdas {
                let (volume, shape) = gpcm_vvi_update(&l.matrix, total)?;
                scales.push(DMatrix::from_diagonal(&(&shape * volume)));
                factors.push(ScaleFactors::Diagonal { volume, shape });
            }
            Ok(DimensionUpdate { scales, factors })
        }
    }
}

/// The part of the expected complete-data log-likelihood that depends on one
/// axis' scales: `Σ_g n_g [-(n*/(2 n_d)) log|Δ_g| - ½ tr(Δ_g⁻¹ Λ_g)]`.
pub fn dimension_q(lambdas: &[ScatterLambda], scales: &[DMatrix<f64>], total: usize) -> Result<f64> {
    let mut q = 0.0;
    for (d, (l, s)) in lambdas.iter().zip(scales).enumerate() {
        let chol = linalg::cholesky(s).ok_or(Error::NotPositiveDefinite { dim: d })?;
        let log_det = linalg::log_det_from_factor(&chol.l());
        let n = s.nrows() as f64;
        let tr = linalg::frobenius_inner(&chol.inverse(), &l.matrix);
        q += l.weight * (-(total as f64) / (2.0 * n) * log_det - 0.5 * tr);
    }
    Ok(q)
}

/// Free-parameter count broken down by source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeParams {
    pub weights: usize,
    pub means: usize,
    pub per_dimension: Vec<usize>,
    pub total: usize,
}

/// `(G-1) + G n* + Σ_d c_d` with `c_d` from each dimension's family.
pub fn free_params(specs: &[ScaleModelSpec], groups: usize, dims: &[usize]) -> FreeParams {
    assert_eq!(specs.len(), dims.len(), "one spec per dimension");
    let total_len: usize = dims.iter().product();
    let weights = groups.saturating_sub(1);
    let means = groups * total_len;
    let per_dimension: Vec<usize> = specs
        .iter()
        .zip(dims)
        .map(|(s, &n)| s.free_params(groups, n))
        .collect();
    let total = weights + means + per_dimension.iter().sum::<usize>();
    FreeParams {
        weights,
        means,
        per_dimension,
        total,
    }
}
