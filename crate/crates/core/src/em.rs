//! Fitting a mixture of multilinear normals by expectation/conditional
//! maximization.
//!
//! Each iteration runs one conditional-maximization sweep (weights, means,
//! then the scale of axis 0, 1, …, D-1, each using the freshest estimates of
//! the others) followed by an E-step computed in log space. Iteration stops on
//! the Aitken criterion or after `max_iterations`. Scale identifiability is
//! imposed once, after the loop.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mda::{matricize_mode1, Matricization, Mda};
use crate::mlnd::{self, MlndParams};
use crate::parsimony::{self, ScaleFactors, ScaleModelSpec};
use crate::selection;

/// Relative group size below which a component counts as collapsed.
pub const EMPTY_COMPONENT_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Aitken stopping threshold on the log-likelihood.
    pub aitken_epsilon: f64,
    /// Amount added to the diagonal of a singular scale matrix.
    pub regularization: f64,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            aitken_epsilon: 1e-5,
            regularization: 1e-3,
            kmeans_restarts: 10,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.aitken_epsilon > 0.0) {
            return Err(Error::InvalidArgument(
                "Aitken epsilon must be positive".into(),
            ));
        }
        if !(self.regularization > 0.0 && self.regularization <= 0.1) {
            return Err(Error::InvalidArgument(
                "regularization epsilon must lie in (0, 0.1]".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `N x G` posterior membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    values: DMatrix<f64>,
}

impl Responsibilities {
    /// Validates that entries lie in `[0, 1]` and rows sum to one.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::Shape("empty responsibility matrix".into()));
        }
        for (i, row) in values.row_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "responsibility row {i} is not a probability vector"
                )));
            }
        }
        Ok(Self { values })
    }

    /// One-hot rows from zero-based labels.
    pub fn hard(labels: &[usize], groups: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= groups) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {groups} groups"
            )));
        }
        let mut values = DMatrix::zeros(labels.len(), groups);
        for (i, &l) in labels.iter().enumerate() {
            values[(i, l)] = 1.0;
        }
        Self::new(values)
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn groups(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, obs: usize, group: usize) -> f64 {
        self.values[(obs, group)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `n_g = Σ_i ẑ_ig`.
    pub fn group_sizes(&self) -> Vec<f64> {
        (0..self.groups())
            .map(|g| self.values.column(g).iter().sum())
            .collect()
    }

    /// Maximum a posteriori labels; ties go to the lowest group index.
    pub fn map_labels(&self) -> Vec<usize> {
        self.values
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for g in 1..row.len() {
                    if row[g] > row[best] {
                        best = g;
                    }
                }
                best
            })
            .collect()
    }

    /// Column `g` of the result is column `perm[g]` of `self`.
    pub fn permute_groups(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.groups() {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        let cols: Vec<_> = perm.iter().map(|&p| self.values.column(p)).collect();
        Ok(Self {
            values: DMatrix::from_columns(&cols),
        })
    }
}

/// A scale matrix that hit the singularity check and was regularized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingularEvent {
    pub group: usize,
    pub dimension: usize,
    pub iteration: usize,
}

/// Mixture weights, components and the per-dimension scale families.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    weights: Vec<f64>,
    components: Vec<MlndParams>,
    specs: Vec<ScaleModelSpec>,
    /// `factors[g][axis]`
    factors: Vec<Vec<ScaleFactors>>,
}

impl MixtureModel {
    pub fn new(
        weights: Vec<f64>,
        components: Vec<MlndParams>,
        specs: Vec<ScaleModelSpec>,
    ) -> Result<Self> {
        let factors = components
            .iter()
            .map(|c| vec![ScaleFactors::Full; c.dims().len()])
            .collect();
        Self::with_factors(weights, components, specs, factors)
    }

    pub fn with_factors(
        weights: Vec<f64>,
        components: Vec<MlndParams>,
        specs: Vec<ScaleModelSpec>,
        factors: Vec<Vec<ScaleFactors>>,
    ) -> Result<Self> {
        if components.is_empty() || weights.len() != components.len() {
            return Err(Error::InvalidArgument(
                "need one weight per component and at least one component".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "weights must be positive and sum to one".into(),
            ));
        }
        let dims = components[0].dims();
        if components.iter().any(|c| c.dims() != dims) {
            return Err(Error::Shape("components have different shapes".into()));
        }
        if specs.len() != dims.len() {
            return Err(Error::Shape(format!(
                "{} scale specs for an order-{} array",
                specs.len(),
                dims.len()
            )));
        }
        if factors.len() != components.len() || factors.iter().any(|f| f.len() != dims.len()) {
            return Err(Error::Shape("factor table does not match the model".into()));
        }
        Ok(Self {
            weights,
            components,
            specs,
            factors,
        })
    }

    /// Identity scales and default factors; weights and means are filled in by
    /// the first M-step.
    fn initial(dims: &[usize], groups: usize, specs: &[ScaleModelSpec]) -> Result<Self> {
        let comp = MlndParams::standard(dims)?;
        Ok(Self {
            weights: vec![1.0 / groups as f64; groups],
            components: vec![comp; groups],
            specs: specs.to_vec(),
            factors: vec![
                specs
                    .iter()
                    .zip(dims)
                    .map(|(&s, &n)| ScaleFactors::initial(s, n))
                    .collect();
                groups
            ],
        })
    }

    pub fn dims(&self) -> &[usize] {
        self.components[0].dims()
    }

    pub fn groups(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[MlndParams] {
        &self.components
    }

    pub fn specs(&self) -> &[ScaleModelSpec] {
        &self.specs
    }

    pub fn factors(&self, group: usize, axis: usize) -> &ScaleFactors {
        &self.factors[group][axis]
    }

    pub fn free_params(&self) -> parsimony::FreeParams {
        parsimony::free_params(&self.specs, self.groups(), self.dims())
    }

    /// Dense `Δ_{g,1} ⊗ … ⊗ Δ_{g,D}`; small shapes only.
    pub fn kron_scale(&self, group: usize) -> DMatrix<f64> {
        crate::mda::kron(self.components[group].scales())
    }

    /// Observed-data log-likelihood `Σ_i log Σ_g π_g f_g(x_i)`.
    pub fn log_likelihood(&self, data: &[Mda]) -> Result<f64> {
        e_step(data, self).map(|(_, ll)| ll)
    }
}

/// Per-fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Observed log-likelihood after each iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub singular_events: Vec<SingularEvent>,
    pub loglik: f64,
    pub bic: f64,
    pub rho: usize,
    pub labels: Vec<usize>,
    pub responsibilities: Responsibilities,
}

fn validate_data(data: &[Mda], groups: usize, specs: &[ScaleModelSpec]) -> Result<()> {
    if groups == 0 {
        return Err(Error::InvalidArgument("need at least one group".into()));
    }
    if data.len() < groups {
        return Err(Error::TooFewObservations {
            observations: data.len(),
            groups,
        });
    }
    let dims = data[0].dims();
    for (i, x) in data.iter().enumerate() {
        if x.dims() != dims {
            return Err(Error::Shape(format!(
                "observation {i} has dims {:?}, expected {dims:?}",
                x.dims()
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite { obs: i });
        }
    }
    if specs.len() != dims.len() {
        return Err(Error::Shape(format!(
            "{} scale specs for an order-{} array",
            specs.len(),
            dims.len()
        )));
    }
    Ok(())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn kmeans_plus_plus<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].to_vec()];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let sum: f64 = dist.iter().sum();
        let pick = if sum > 0.0 {
            let target = rng.random::<f64>() * sum;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every remaining point coincides with a center
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(points[pick].to_vec());
        let c = centers.last().unwrap();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, c));
        }
    }
    centers
}

fn lloyd(points: &[&[f64]], mut centers: Vec<Vec<f64>>, max_iter: usize) -> (Vec<usize>, f64) {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // move the point farthest from its center into the empty cluster
                let far = (0..points.len())
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| {
                        let da = squared_distance(points[a], &centers[labels[a]]);
                        let db = squared_distance(points[b], &centers[labels[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    });
                if let Some(i) = far {
                    let old = labels[i];
                    counts[old] -= 1;
                    for (s, v) in sums[old].iter_mut().zip(points[i].iter()) {
                        *s -= v;
                    }
                    labels[i] = c;
                    counts[c] = 1;
                    sums[c] = points[i].to_vec();
                    changed = true;
                }
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let wcss = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| squared_distance(p, &centers[l]))
        .sum();
    (labels, wcss)
}

/// Hard k-means start on the vectorized observations: `kmeans_restarts`
/// k-means++ seeded runs of Lloyd's algorithm, keeping the lowest
/// within-cluster sum of squares.
pub fn init_kmeans(data: &[Mda], groups: usize, options: &FitOptions) -> Result<Responsibilities> {
    if groups == 0 {
        return Err(Error::InvalidArgument("need at least one group".into()));
    }
    if data.len() < groups {
        return Err(Error::TooFewObservations {
            observations: data.len(),
            groups,
        });
    }
    if groups == 1 {
        return Responsibilities::hard(&vec![0; data.len()], 1);
    }
    let points: Vec<&[f64]> = data.iter().map(|x| x.values()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..options.kmeans_restarts.max(1) {
        let centers = kmeans_plus_plus(&points, groups, &mut rng);
        let (labels, wcss) = lloyd(&points, centers, 100);
        if best.as_ref().is_none_or(|(_, b)| wcss < *b) {
            best = Some((labels, wcss));
        }
    }
    let (labels, _) = best.expect("at least one restart");
    Responsibilities::hard(&labels, groups)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Posterior memberships and the observed log-likelihood, both in log space.
pub fn e_step(data: &[Mda], model: &MixtureModel) -> Result<(Responsibilities, f64)> {
    let factors = model
        .components
        .iter()
        .map(MlndParams::factorize)
        .collect::<Result<Vec<_>>>()?;
    let log_weights: Vec<f64> = model.weights.iter().map(|w| w.ln()).collect();
    let groups = model.groups();
    let rows: Vec<(Vec<f64>, f64)> = data
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut logs = Vec::with_capacity(groups);
            for ((comp, f), lw) in model.components.iter().zip(&factors).zip(&log_weights) {
                logs.push(lw + mlnd::log_density_with(x, comp, f)?);
            }
            let lse = log_sum_exp(&logs);
            if !lse.is_finite() {
                return Err(Error::ZeroDensity { obs: i });
            }
            let z = logs.iter().map(|l| (l - lse).exp()).collect();
            Ok((z, lse))
        })
        .collect::<Result<_>>()?;
    let mut values = DMatrix::zeros(data.len(), groups);
    let mut loglik = 0.0;
    for (i, (z, lse)) in rows.into_iter().enumerate() {
        for (g, v) in z.into_iter().enumerate() {
            values[(i, g)] = v;
        }
        loglik += lse;
    }
    Ok((Responsibilities { values }, loglik))
}

/// `π̂_g = n_g / N`. A group with `n_g < 1e-6 N` is reported as collapsed.
pub fn m_step_pi(z: &Responsibilities) -> Result<Vec<f64>> {
    let n = z.n_obs() as f64;
    let sizes = z.group_sizes();
    if let Some((g, &size)) = sizes
        .iter()
        .enumerate()
        .find(|(_, &s)| s < EMPTY_COMPONENT_FRACTION * n)
    {
        return Err(Error::EmptyComponent {
            group: g,
            iteration: 0,
            size,
        });
    }
    Ok(sizes.iter().map(|s| s / n).collect())
}

/// Weighted mean unfoldings `(1/n_g) Σ_i ẑ_ig X_(1),i`.
pub fn m_step_mean(data: &[Mda], z: &Responsibilities) -> Result<Vec<Matricization>> {
    if data.len() != z.n_obs() || data.is_empty() {
        return Err(Error::Shape("responsibilities do not match the data".into()));
    }
    let dims = data[0].dims().to_vec();
    let len = data[0].len();
    (0..z.groups())
        .map(|g| {
            let mut acc = vec![0.0; len];
            let mut weight = 0.0;
            for (i, x) in data.iter().enumerate() {
                let w = z.get(i, g);
                if w == 0.0 {
                    continue;
                }
                weight += w;
                for (a, v) in acc.iter_mut().zip(x.values()) {
                    *a += w * v;
                }
            }
            if weight <= 0.0 {
                return Err(Error::EmptyComponent {
                    group: g,
                    iteration: 0,
                    size: weight,
                });
            }
            acc.iter_mut().for_each(|a| *a /= weight);
            Ok(matricize_mode1(&Mda::new(dims.clone(), acc)?))
        })
        .collect()
}

/// Unconstrained scale update for one axis, every group:
/// `Δ̂_{g,axis} = (n_axis / n*) Λ_{g,axis}`, symmetrized. Uses the model's
/// current scales for the other axes.
pub fn m_step_scale(
    data: &[Mda],
    z: &Responsibilities,
    model: &MixtureModel,
    axis: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let lambdas = parsimony::scatter_lambda(data, z, model, axis)?;
    let total: usize = model.dims().iter().product();
    let prev = vec![ScaleFactors::Full; lambdas.len()];
    Ok(parsimony::update_dimension(ScaleModelSpec::Vvv, &lambdas, &prev, total)?.scales)
}

/// Aitken stopping rule on the last three log-likelihoods `[l_{t-1}, l_t, l_{t+1}]`.
pub fn aitken_stop(window: [f64; 3], epsilon: f64) -> bool {
    let [prev, cur, next] = window;
    if !window.iter().all(|v| v.is_finite()) {
        return false;
    }
    let denom = cur - prev;
    if denom == 0.0 {
        return next == cur;
    }
    let a = (next - cur) / denom;
    if a >= 1.0 {
        return false;
    }
    let asymptote = cur + (next - cur) / (1.0 - a);
    let gap = asymptote - cur;
    (0.0..epsilon).contains(&gap)
}

/// A scale matrix after the singularity check.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularized {
    pub matrix: DMatrix<f64>,
    /// The inverse condition number fell below machine epsilon and
    /// `ε I` was added.
    pub regularized: bool,
}

/// Adds `epsilon I` when the inverse condition number is below machine
/// epsilon, then requires a successful Cholesky factorization.
/// `group` and `dim` only label the error.
pub fn regularize_and_check(
    scale: &DMatrix<f64>,
    epsilon: f64,
    group: usize,
    dim: usize,
) -> Result<Regularized> {
    let singular = linalg::inverse_condition(scale) < f64::EPSILON;
    let matrix = if singular {
        scale + DMatrix::identity(scale.nrows(), scale.ncols()) * epsilon
    } else {
        scale.clone()
    };
    if linalg::cholesky(&matrix).is_none() {
        return Err(Error::RegularizationFailed { group, dim });
    }
    Ok(Regularized {
        matrix,
        regularized: singular,
    })
}

/// Rescales each group so that `Δ_{g,k}(1,1) = 1` for every axis `k >= 1`,
/// moving the product of the factors onto axis 0. The Kronecker product of the
/// scales is unchanged.
pub fn normalize_identifiability(model: &MixtureModel) -> Result<MixtureModel> {
    let mut out = model.clone();
    for g in 0..out.groups() {
        let order = out.dims().len();
        let mut product = 1.0;
        for k in 1..order {
            let lead = out.components[g].scale(k)[(0, 0)];
            if !(lead > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "leading entry of scale ({g}, {k}) is not positive"
                )));
            }
            if lead == 1.0 {
                continue;
            }
            let d = 1.0 / lead;
            let mut s = out.components[g].scale(k) * d;
            s[(0, 0)] = 1.0;
            out.components[g].set_scale(k, s);
            out.factors[g][k] = out.factors[g][k].rescaled(d);
            product *= d;
        }
        if product != 1.0 {
            let s = out.components[g].scale(0) / product;
            out.components[g].set_scale(0, s);
            out.factors[g][0] = out.factors[g][0].rescaled(1.0 / product);
        }
    }
    Ok(out)
}

fn m_step(
    data: &[Mda],
    z: &Responsibilities,
    model: &mut MixtureModel,
    options: &FitOptions,
    iteration: usize,
    events: &mut Vec<SingularEvent>,
) -> Result<()> {
    model.weights = m_step_pi(z).map_err(|e| with_iteration(e, iteration))?;
    for (comp, mean) in model.components.iter_mut().zip(m_step_mean(data, z)?) {
        comp.set_mean(mean);
    }
    let total: usize = model.dims().iter().product();
    for axis in 0..model.dims().len() {
        let lambdas = parsimony::scatter_lambda(data, z, model, axis)?;
        let prev: Vec<ScaleFactors> = model.factors.iter().map(|f| f[axis].clone()).collect();
        let update = parsimony::update_dimension(model.specs[axis], &lambdas, &prev, total)?;
        for (g, (scale, factors)) in update.scales.into_iter().zip(update.factors).enumerate() {
            let checked = regularize_and_check(&scale, options.regularization, g, axis)?;
            if checked.regularized {
                events.push(SingularEvent {
                    group: g,
                    dimension: axis,
                    iteration,
                });
            }
            model.components[g].set_scale(axis, checked.matrix);
            model.factors[g][axis] = factors;
        }
    }
    Ok(())
}

fn with_iteration(err: Error, iteration: usize) -> Error {
    match err {
        Error::EmptyComponent { group, size, .. } => Error::EmptyComponent {
            group,
            iteration,
            size,
        },
        other => other,
    }
}

/// Fits a `groups`-component mixture starting from a k-means partition.
pub fn fit(
    data: &[Mda],
    groups: usize,
    specs: &[ScaleModelSpec],
    options: &FitOptions,
) -> Result<(MixtureModel, FitReport)> {
    options.validate()?;
    validate_data(data, groups, specs)?;
    let z0 = init_kmeans(data, groups, options)?;
    fit_from(data, z0, specs, options)
}

/// Fits from given starting responsibilities (scales start at identity).
pub fn fit_from(
    data: &[Mda],
    init: Responsibilities,
    specs: &[ScaleModelSpec],
    options: &FitOptions,
) -> Result<(MixtureModel, FitReport)> {
    options.validate()?;
    let groups = init.groups();
    validate_data(data, groups, specs)?;
    if init.n_obs() != data.len() {
        return Err(Error::Shape(
            "starting responsibilities do not match the data".into(),
        ));
    }
    let dims = data[0].dims().to_vec();
    let mut model = MixtureModel::initial(&dims, groups, specs)?;
    let mut z = init;
    let mut trace: Vec<f64> = Vec::new();
    let mut events = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iteration in 1..=options.max_iterations {
        iterations = iteration;
        m_step(data, &z, &mut model, options, iteration, &mut events)?;
        let (next, loglik) = e_step(data, &model)?;
        m_step_pi(&next).map_err(|e| with_iteration(e, iteration))?;
        z = next;
        trace.push(loglik);
        if let [.., a, b, c] = trace[..] {
            if aitken_stop([a, b, c], options.aitken_epsilon) {
                converged = true;
                break;
            }
        }
    }
    let model = normalize_identifiability(&model)?;
    let loglik = *trace.last().expect("at least one iteration");
    let rho = parsimony::free_params(specs, groups, &dims).total;
    let report = FitReport {
        bic: selection::bic(loglik, rho, data.len()),
        labels: z.map_labels(),
        responsibilities: z,
        loglik_trace: trace,
        converged,
        iterations,
        singular_events: events,
        loglik,
        rho,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::adjusted_rand_index;
    use rand_distr::StandardNormal;

    fn noisy(dims: &[usize], center: f64, rng: &mut ChaCha8Rng) -> Mda {
        Mda::from_fn(dims, |_| center + rng.sample::<f64, _>(StandardNormal)).unwrap()
    }

    fn two_clouds(per: usize, dims: &[usize], seed: u64) -> (Vec<Mda>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (g, c) in [-10.0, 10.0].into_iter().enumerate() {
            for _ in 0..per {
                data.push(noisy(dims, c, &mut rng));
                labels.push(g);
            }
        }
        (data, labels)
    }

    #[test]
    fn aitken_examples() {
        assert!(!aitken_stop([-110.0, -105.0, -102.5], 1e-5));
        assert!(aitken_stop([3.0, 3.0, 3.0], 1e-5));
        assert!(aitken_stop([-10.0, -5.0, -5.0 + 1e-9], 1e-5));
        // accelerating sequence never stops
        assert!(!aitken_stop([0.0, 1.0, 3.0], 1e-5));
        // flat then moving
        assert!(!aitken_stop([1.0, 1.0, 2.0], 1e-5));
    }

    #[test]
    fn regularization_examples() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let r = regularize_and_check(&eye, 1e-3, 0, 0).unwrap();
        assert!(!r.regularized);
        assert_eq!(r.matrix, eye);

        let v = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let rank1 = &v * v.transpose();
        let r = regularize_and_check(&rank1, 1e-3, 0, 0).unwrap();
        assert!(r.regularized);
        assert_eq!(r.matrix, &rank1 + DMatrix::identity(2, 2) * 1e-3);

        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let r = regularize_and_check(&pd, 1e-3, 0, 0).unwrap();
        assert!(!r.regularized);
        assert_eq!(r.matrix, pd);

        let neg = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        assert!(matches!(
            regularize_and_check(&neg, 1e-3, 1, 2),
            Err(Error::RegularizationFailed { group: 1, dim: 2 })
        ));
    }

    #[test]
    fn pi_updates() {
        let z = Responsibilities::hard(&[0, 0, 0, 1], 2).unwrap();
        assert_eq!(m_step_pi(&z).unwrap(), vec![0.75, 0.25]);
        let u = Responsibilities::new(DMatrix::from_element(5, 4, 0.25)).unwrap();
        assert_eq!(m_step_pi(&u).unwrap(), vec![0.25; 4]);
        let mut soft = DMatrix::zeros(10, 2);
        for i in 0..10 {
            soft[(i, 0)] = 0.9;
            soft[(i, 1)] = 0.1;
        }
        let w = m_step_pi(&Responsibilities::new(soft).unwrap()).unwrap();
        assert!((w[0] - 0.9).abs() < 1e-15 && (w[1] - 0.1).abs() < 1e-15);
        let empty = Responsibilities::hard(&[0, 0, 0], 2).unwrap();
        assert!(matches!(m_step_pi(&empty), Err(Error::EmptyComponent { group: 1, .. })));
    }

    #[test]
    fn mean_updates() {
        let a = Mda::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Mda::new(vec![2, 2], vec![3.0, 2.0, 1.0, 0.0]).unwrap();
        let one = m_step_mean(std::slice::from_ref(&a), &Responsibilities::hard(&[0], 1).unwrap())
            .unwrap();
        assert_eq!(one[0], matricize_mode1(&a));
        let half = Responsibilities::new(DMatrix::from_element(2, 1, 1.0)).unwrap();
        let mid = m_step_mean(&[a.clone(), b.clone()], &half).unwrap();
        assert_eq!(mid[0].to_mda().values(), &[2.0, 2.0, 2.0, 2.0]);
        let hard = Responsibilities::hard(&[1, 0], 2).unwrap();
        let per = m_step_mean(&[a.clone(), b.clone()], &hard).unwrap();
        assert_eq!(per[0].to_mda(), b);
        assert_eq!(per[1].to_mda(), a);
        let soft = Responsibilities::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]))
            .unwrap();
        let s = m_step_mean(&[a, b], &soft).unwrap();
        assert_eq!(s[0].to_mda().values(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn kmeans_trivial_partitions() {
        let (data, truth) = two_clouds(10, &[2, 3], 1);
        let opts = FitOptions::default();
        let one = init_kmeans(&data, 1, &opts).unwrap();
        assert!(one.map_labels().iter().all(|&l| l == 0));
        let two = init_kmeans(&data, 2, &opts).unwrap();
        assert_eq!(adjusted_rand_index(&two.map_labels(), &truth).unwrap(), 1.0);
        let few = &data[..4];
        let each = init_kmeans(few, 4, &opts).unwrap();
        let mut l = each.map_labels();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
        assert!(matches!(
            init_kmeans(few, 5, &opts),
            Err(Error::TooFewObservations { .. })
        ));
    }

    #[test]
    fn e_step_symmetry_and_single_group() {
        let (data, _) = two_clouds(4, &[2, 2], 2);
        let comp = MlndParams::standard(&[2, 2]).unwrap();
        let m1 = MixtureModel::new(vec![1.0], vec![comp.clone()], vec![ScaleModelSpec::Vvv; 2])
            .unwrap();
        let (z, _) = e_step(&data, &m1).unwrap();
        assert!(z.matrix().iter().all(|&v| v == 1.0));
        let m2 = MixtureModel::new(vec![0.5, 0.5], vec![comp.clone(), comp], vec![ScaleModelSpec::Vvv; 2])
            .unwrap();
        let (z, _) = e_step(&data, &m2).unwrap();
        assert!(z.matrix().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn e_step_extreme_separation() {
        let near = MlndParams::standard(&[2, 2]).unwrap();
        let far_mean = Mda::from_fn(&[2, 2], |_| 1e3).unwrap();
        let far = MlndParams::from_mean(&far_mean, vec![DMatrix::identity(2, 2); 2]).unwrap();
        let model = MixtureModel::new(vec![0.5, 0.5], vec![near, far], vec![ScaleModelSpec::Vvv; 2])
            .unwrap();
        let data = vec![Mda::zeros(&[2, 2]).unwrap(), far_mean.clone()];
        let (z, ll) = e_step(&data, &model).unwrap();
        assert!(ll.is_finite());
        assert_eq!(z.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));

        // log-ratio of about 720: still finite and essentially hard
        let mid_mean = Mda::from_fn(&[2, 2], |_| 19.0).unwrap();
        let mid = MlndParams::from_mean(&mid_mean, vec![DMatrix::identity(2, 2); 2]).unwrap();
        let model = MixtureModel::new(
            vec![0.5, 0.5],
            vec![MlndParams::standard(&[2, 2]).unwrap(), mid],
            vec![ScaleModelSpec::Vvv; 2],
        )
        .unwrap();
        let (z, ll) = e_step(&data[..1], &model).unwrap();
        assert!(ll.is_finite());
        assert_eq!(z.get(0, 0), 1.0);
        assert!(z.get(0, 1) < 1e-300);
    }

    #[test]
    fn normalization_examples() {
        let mean = Mda::zeros(&[1, 1]).unwrap();
        let comp = MlndParams::from_mean(
            &mean,
            vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 3.0)],
        )
        .unwrap();
        let model = MixtureModel::new(vec![1.0], vec![comp], vec![ScaleModelSpec::Vvv; 2]).unwrap();
        let norm = normalize_identifiability(&model).unwrap();
        let scales = norm.components()[0].scales();
        assert!((scales[0][(0, 0)] - 6.0).abs() < 1e-15);
        assert_eq!(scales[1][(0, 0)], 1.0);
        assert_eq!(normalize_identifiability(&norm).unwrap(), norm);
    }

    #[test]
    fn fit_single_group_recovers_sample_mean() {
        let (data, _) = two_clouds(6, &[2, 3], 3);
        let opts = FitOptions::default();
        let (model, report) = fit(&data, 1, &[ScaleModelSpec::Vvv; 2], &opts).unwrap();
        let mean = m_step_mean(&data, &Responsibilities::hard(&vec![0; data.len()], 1).unwrap())
            .unwrap();
        assert!((model.components()[0].mean().matrix() - mean[0].matrix()).abs().max() < 1e-12);
        assert!(report.converged);
        assert!(report.labels.iter().all(|&l| l == 0));
        assert!((model.log_likelihood(&data).unwrap() - report.loglik).abs() < 1e-8 * report.loglik.abs());
    }

    #[test]
    fn fit_rejects_bad_input() {
        let (mut data, _) = two_clouds(2, &[2, 2], 4);
        let opts = FitOptions::default();
        assert!(matches!(
            fit(&data, 5, &[ScaleModelSpec::Vvv; 2], &opts),
            Err(Error::TooFewObservations { .. })
        ));
        assert!(fit(&data, 0, &[ScaleModelSpec::Vvv; 2], &opts).is_err());
        assert!(fit(&data, 1, &[ScaleModelSpec::Vvv; 3], &opts).is_err());
        data[1] = Mda::new(vec![2, 2], vec![0.0, f64::NAN, 0.0, 0.0]).unwrap();
        assert!(matches!(
            fit(&data, 1, &[ScaleModelSpec::Vvv; 2], &opts),
            Err(Error::NonFinite { obs: 1 })
        ));
    }
}
