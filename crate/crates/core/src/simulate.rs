//! Synthetic mixtures and the Monte-Carlo study runner.
//!
//! Scale matrices are `Q Λ Qᵀ` with `Q` Haar-orthogonal and a spectrum spaced
//! log-uniformly on `[1, cap]`, so every condition number is exactly `cap`.
//! Group means start as iid standard normals and are rescaled about their
//! grand mean until
//!
//! ```text
//! SNR = pooled variance of the mean entries / mean diagonal of ⨂Δ
//! ```
//!
//! reaches the configured target.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{FitOptions, MixtureModel, SingularEvent};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mda::Mda;
use crate::metrics::{adjusted_rand_index, kron_relative_error, relative_error, ContingencyTable};
use crate::mlnd::{self, MlndParams};
use crate::parsimony::ScaleModelSpec;
use crate::selection::{self, ScanGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Sample sizes `N`; each must be divisible by `groups`.
    pub sample_sizes: Vec<usize>,
    /// Array shapes, one study cell per (sample size, shape) pair.
    pub dims: Vec<Vec<usize>>,
    pub groups: usize,
    pub replicates: usize,
    pub snr: f64,
    pub condition_cap: f64,
    /// Group counts scanned by BIC for every replicate.
    pub candidate_groups: Vec<usize>,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for SimConfig {
    /// Desk-scale study: four sample sizes, the two smallest shapes,
    /// 25 replicates.
    fn default() -> Self {
        Self {
            sample_sizes: vec![60, 90, 120, 180],
            dims: vec![vec![4; 4], vec![5; 4]],
            groups: 3,
            replicates: 25,
            snr: 1.0,
            condition_cap: 10.0,
            candidate_groups: vec![2, 3, 4, 5],
            seed: 20_190_101,
            fit: FitOptions::default(),
        }
    }
}

impl SimConfig {
    /// Four sample sizes, shapes 4⁴ through 7⁴, 250 replicates.
    pub fn full_study() -> Self {
        Self {
            dims: (4..=7).map(|n| vec![n; 4]).collect(),
            replicates: 250,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.groups == 0 {
            return bad("groups must be at least 1");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.sample_sizes.is_empty() || self.dims.is_empty() || self.candidate_groups.is_empty() {
            return bad("sample_sizes, dims and candidate_groups must be nonempty");
        }
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n == 0 || n % self.groups != 0) {
            return Err(Error::InvalidArgument(format!(
                "sample size {n} is not a positive multiple of {} groups",
                self.groups
            )));
        }
        if self.dims.iter().any(|d| d.len() < 2 || d.contains(&0)) {
            return bad("every shape needs order >= 2 and positive lengths");
        }
        if !(self.condition_cap >= 1.0 && self.condition_cap.is_finite()) {
            return bad("condition_cap must be a finite number >= 1");
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return bad("snr must be positive");
        }
        self.fit.validate()
    }

    /// Study cells, sample size outermost.
    pub fn cells(&self) -> Vec<SimCell> {
        let mut cells = Vec::new();
        for &n_obs in &self.sample_sizes {
            for dims in &self.dims {
                cells.push(SimCell {
                    index: cells.len(),
                    n_obs,
                    dims: dims.clone(),
                });
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimCell {
    pub index: usize,
    pub n_obs: usize,
    pub dims: Vec<usize>,
}

/// Haar-distributed orthogonal matrix from the QR factorization of a Gaussian
/// matrix, with column signs fixed so that `R` has a nonnegative diagonal.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `n` values `cap^(k/(n-1))`, `k = 0..n`; a single `1` when `n = 1`.
pub fn log_spaced_spectrum(n: usize, cap: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|k| cap.powf(k as f64 / (n - 1) as f64))
        .collect()
}

/// Random positive-definite matrix with condition number `condition_cap`.
pub fn random_scale_matrix<R: Rng + ?Sized>(n: usize, condition_cap: f64, rng: &mut R) -> DMatrix<f64> {
    let mut spectrum = log_spaced_spectrum(n, condition_cap);
    spectrum.shuffle(rng);
    let q = random_orthogonal(n, rng);
    let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(spectrum));
    linalg::symmetrize(&(&q * lambda * q.transpose()))
}

/// Random mixture truth with equal weights, means at the target SNR.
pub fn random_truth<R: Rng + ?Sized>(
    dims: &[usize],
    groups: usize,
    snr: f64,
    condition_cap: f64,
    rng: &mut R,
) -> Result<MixtureModel> {
    let mut means: Vec<Mda> = (0..groups)
        .map(|_| Mda::from_fn(dims, |_| rng.sample(StandardNormal)))
        .collect::<Result<_>>()?;
    let scales: Vec<Vec<DMatrix<f64>>> = (0..groups)
        .map(|_| {
            dims.iter()
                .map(|&n| random_scale_matrix(n, condition_cap, rng))
                .collect()
        })
        .collect();
    rescale_means(&mut means, &scales, snr);
    let components = means
        .iter()
        .zip(scales)
        .map(|(m, s)| MlndParams::from_mean(m, s))
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::new(
        vec![1.0 / groups as f64; groups],
        components,
        vec![ScaleModelSpec::Vvv; dims.len()],
    )
}

/// Realized signal-to-noise ratio of a set of means and scales.
pub fn realized_snr(means: &[Mda], scales: &[Vec<DMatrix<f64>>]) -> f64 {
    signal_variance(means) / noise_level(scales)
}

fn grand_mean(means: &[Mda]) -> Vec<f64> {
    let len = means[0].len();
    let mut grand = vec![0.0; len];
    for m in means {
        for (g, v) in grand.iter_mut().zip(m.values()) {
            *g += v;
        }
    }
    grand.iter_mut().for_each(|g| *g /= means.len() as f64);
    grand
}

fn signal_variance(means: &[Mda]) -> f64 {
    let grand = grand_mean(means);
    let ss: f64 = means
        .iter()
        .flat_map(|m| m.values().iter().zip(&grand).map(|(v, g)| (v - g) * (v - g)))
        .sum();
    ss / (means.len() * grand.len()) as f64
}

/// Mean diagonal of `⨂Δ`, which is `∏ tr(Δ_d)/n_d`, averaged over groups.
fn noise_level(scales: &[Vec<DMatrix<f64>>]) -> f64 {
    scales
        .iter()
        .map(|s| s.iter().map(|d| d.trace() / d.nrows() as f64).product::<f64>())
        .sum::<f64>()
        / scales.len() as f64
}

fn rescale_means(means: &mut [Mda], scales: &[Vec<DMatrix<f64>>], snr: f64) {
    let signal = signal_variance(means);
    if !(signal > 0.0) {
        return;
    }
    let c = (snr * noise_level(scales) / signal).sqrt();
    let grand = grand_mean(means);
    for m in means.iter_mut() {
        let values = m
            .values()
            .iter()
            .zip(&grand)
            .map(|(v, g)| g + c * (v - g))
            .collect();
        *m = Mda::new(m.dims().to_vec(), values).expect("shape unchanged");
    }
}

/// Draws `per_group` observations from each component in turn; labels are
/// contiguous and zero-based.
pub fn generate_from_truth<R: Rng + ?Sized>(
    truth: &MixtureModel,
    per_group: usize,
    rng: &mut R,
) -> Result<(Vec<Mda>, Vec<usize>)> {
    let mut data = Vec::with_capacity(per_group * truth.groups());
    let mut labels = Vec::with_capacity(per_group * truth.groups());
    for (g, comp) in truth.components().iter().enumerate() {
        for _ in 0..per_group {
            data.push(mlnd::sample(comp, rng)?);
            labels.push(g);
        }
    }
    Ok((data, labels))
}

/// A generated sample together with the model it came from.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub data: Vec<Mda>,
    pub truth: MixtureModel,
    pub labels: Vec<usize>,
}

pub fn generate_dataset<R: Rng + ?Sized>(
    config: &SimConfig,
    cell: &SimCell,
    rng: &mut R,
) -> Result<SimDataset> {
    let truth = random_truth(&cell.dims, config.groups, config.snr, config.condition_cap, rng)?;
    let (data, labels) = generate_from_truth(&truth, cell.n_obs / config.groups, rng)?;
    Ok(SimDataset {
        data,
        truth,
        labels,
    })
}

/// Seed of replicate `rep` in cell `cell`.
pub fn replicate_seed(base: u64, cell: usize, rep: usize) -> u64 {
    selection::derive_seed(&[base, cell as u64, rep as u64])
}

/// Permutation `p` maximizing `Σ_g counts[g][p[g]]`; first in lexicographic
/// order on ties.
fn best_matching(table: &ContingencyTable, groups: usize) -> Vec<usize> {
    let counts = table.counts();
    let score = |p: &[usize]| -> u64 { p.iter().enumerate().map(|(g, &f)| counts[g][f]).sum() };
    let mut best: Option<(Vec<usize>, u64)> = None;
    let mut perm: Vec<usize> = (0..groups).collect();
    loop {
        let s = score(&perm);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((perm.clone(), s));
        }
        // next lexicographic permutation
        let Some(i) = (0..groups.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else {
            break;
        };
        let j = (i + 1..groups).rev().find(|&j| perm[j] > perm[i]).unwrap();
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    best.unwrap().0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub cell: usize,
    pub n_obs: usize,
    pub dims: Vec<usize>,
    pub replicate: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub selected_groups: Option<usize>,
    pub converged: bool,
    pub ari: Option<f64>,
    /// Per true group; empty unless the selected group count is correct.
    pub mean_errors: Vec<f64>,
    pub kron_errors: Vec<f64>,
    pub singular: bool,
    pub singular_events: Vec<SingularEvent>,
}

impl ReplicateRecord {
    fn failed(cell: &SimCell, replicate: usize, seed: u64, err: Error) -> Self {
        Self {
            cell: cell.index,
            n_obs: cell.n_obs,
            dims: cell.dims.clone(),
            replicate,
            seed,
            error: Some(err.to_string()),
            selected_groups: None,
            converged: false,
            ari: None,
            mean_errors: Vec::new(),
            kron_errors: Vec::new(),
            singular: false,
            singular_events: Vec::new(),
        }
    }
}

/// Generates, scans and scores one replicate.
pub fn run_replicate(config: &SimConfig, cell: &SimCell, replicate: usize) -> ReplicateRecord {
    let seed = replicate_seed(config.seed, cell.index, replicate);
    match try_replicate(config, cell, replicate, seed) {
        Ok(r) => r,
        Err(e) => ReplicateRecord::failed(cell, replicate, seed, e),
    }
}

fn try_replicate(config: &SimConfig, cell: &SimCell, replicate: usize, seed: u64) -> Result<ReplicateRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = generate_dataset(config, cell, &mut rng)?;
    let grid = ScanGrid::uniform(
        config.candidate_groups.clone(),
        &[ScaleModelSpec::Vvv],
        cell.dims.len(),
        FitOptions {
            seed: rng.random(),
            ..config.fit.clone()
        },
    )?;
    let scan = selection::scan(&ds.data, &grid)?;
    let (model, report) = scan.best_fit.ok_or(Error::AllFitsFailed)?;
    let ari = adjusted_rand_index(&report.labels, &ds.labels)?;
    let mut mean_errors = Vec::new();
    let mut kron_errors = Vec::new();
    if model.groups() == config.groups {
        let table = ContingencyTable::new(&ds.labels, &report.labels)?;
        let matching = best_matching(&table, config.groups);
        for (g, &f) in matching.iter().enumerate() {
            let truth = &ds.truth.components()[g];
            let est = &model.components()[f];
            mean_errors.push(relative_error(est.mean().matrix(), truth.mean().matrix())?);
            kron_errors.push(kron_relative_error(est.scales(), truth.scales())?);
        }
    }
    Ok(ReplicateRecord {
        cell: cell.index,
        n_obs: cell.n_obs,
        dims: cell.dims.clone(),
        replicate,
        seed,
        error: None,
        selected_groups: Some(model.groups()),
        converged: report.converged,
        ari: Some(ari),
        mean_errors,
        kron_errors,
        singular: !report.singular_events.is_empty(),
        singular_events: report.singular_events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                count,
                mean: None,
                sd: None,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = (count > 1).then(|| {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64).sqrt()
        });
        Self {
            count,
            mean: Some(mean),
            sd,
        }
    }
}

/// Aggregates of one (N, shape) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub n_obs: usize,
    pub dims: Vec<usize>,
    pub n_star: usize,
    pub replicates: usize,
    pub failed: usize,
    pub ari: Summary,
    /// Fraction of completed replicates whose scan chose the true `G`.
    pub correct_groups_fraction: f64,
    pub singular_replicates: usize,
    pub singular_percent: f64,
    pub ari_singular: Summary,
    pub ari_nonsingular: Summary,
    /// Per true group, over replicates with the correct `G`.
    pub mean_error: Vec<Summary>,
    pub mean_error_nonsingular: Vec<Summary>,
    pub kron_error: Vec<Summary>,
}

fn summarize_cell(config: &SimConfig, cell: &SimCell, records: &[&ReplicateRecord]) -> CellSummary {
    let done: Vec<&&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let ari_of = |pred: &dyn Fn(&ReplicateRecord) -> bool| -> Vec<f64> {
        done.iter().filter(|r| pred(r)).filter_map(|r| r.ari).collect()
    };
    let singular = done.iter().filter(|r| r.singular).count();
    let per_group = |pick: &dyn Fn(&ReplicateRecord) -> Option<&Vec<f64>>| -> Vec<Summary> {
        (0..config.groups)
            .map(|g| {
                let v: Vec<f64> = done
                    .iter()
                    .filter_map(|r| pick(r).and_then(|e| e.get(g).copied()))
                    .collect();
                Summary::of(&v)
            })
            .collect()
    };
    let correct = done
        .iter()
        .filter(|r| r.selected_groups == Some(config.groups))
        .count();
    let frac = |k: usize| {
        if done.is_empty() {
            0.0
        } else {
            k as f64 / done.len() as f64
        }
    };
    CellSummary {
        cell: cell.index,
        n_obs: cell.n_obs,
        dims: cell.dims.clone(),
        n_star: cell.dims.iter().product(),
        replicates: records.len(),
        failed: records.len() - done.len(),
        ari: Summary::of(&ari_of(&|_| true)),
        correct_groups_fraction: frac(correct),
        singular_replicates: singular,
        singular_percent: 100.0 * frac(singular),
        ari_singular: Summary::of(&ari_of(&|r| r.singular)),
        ari_nonsingular: Summary::of(&ari_of(&|r| !r.singular)),
        mean_error: per_group(&|r| Some(&r.mean_errors)),
        mean_error_nonsingular: per_group(&|r| (!r.singular).then_some(&r.mean_errors)),
        kron_error: per_group(&|r| Some(&r.kron_errors)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimConfig,
    pub replicates: Vec<ReplicateRecord>,
    pub cells: Vec<CellSummary>,
}

/// Runs every replicate of every cell. `workers` sizes a dedicated thread
/// pool; `None` uses the current one. Results do not depend on the worker
/// count.
pub fn run_study(config: &SimConfig, workers: Option<usize>) -> Result<SimulationReport> {
    config.validate()?;
    let run = || {
        let cells = config.cells();
        let tasks: Vec<(&SimCell, usize)> = cells
            .iter()
            .flat_map(|c| (0..config.replicates).map(move |r| (c, r)))
            .collect();
        let replicates: Vec<ReplicateRecord> = tasks
            .into_par_iter()
            .map(|(cell, rep)| run_replicate(config, cell, rep))
            .collect();
        let summaries = cells
            .iter()
            .map(|c| {
                let recs: Vec<&ReplicateRecord> =
                    replicates.iter().filter(|r| r.cell == c.index).collect();
                summarize_cell(config, c, &recs)
            })
            .collect();
        SimulationReport {
            config: config.clone(),
            replicates,
            cells: summaries,
        }
    };
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn dims_token(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

impl SimulationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per replicate; per-group errors are in columns
    /// `mean_err_g`, `kron_err_g`.
    pub fn write_replicates_csv<W: Write>(&self, out: W) -> Result<()> {
        let groups = self.config.groups;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "cell", "n_obs", "dims", "n_star", "replicate", "seed", "selected_groups", "converged", "ari",
            "singular", "singular_events",
        ]
        .map(String::from)
        .to_vec();
        header.extend((1..=groups).map(|g| format!("mean_err_{g}")));
        header.extend((1..=groups).map(|g| format!("kron_err_{g}")));
        header.push("error".into());
        w.write_record(&header)?;
        for r in &self.replicates {
            let mut rec = vec![
                r.cell.to_string(),
                r.n_obs.to_string(),
                dims_token(&r.dims),
                r.dims.iter().product::<usize>().to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                r.selected_groups.map_or_else(String::new, |g| g.to_string()),
                r.converged.to_string(),
                opt(r.ari),
                r.singular.to_string(),
                r.singular_events.len().to_string(),
            ];
            for errs in [&r.mean_errors, &r.kron_errors] {
                rec.extend((0..groups).map(|g| opt(errs.get(g).copied())));
            }
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per cell, including the ARI split by singularity occurrence.
    pub fn write_cells_csv<W: Write>(&self, out: W) -> Result<()> {
        let groups = self.config.groups;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "cell", "n_obs", "dims", "n_star", "replicates", "failed", "ari_mean", "ari_sd",
            "correct_groups_fraction", "singular_replicates", "singular_percent", "ari_singular_n",
            "ari_singular_mean", "ari_singular_sd", "ari_nonsingular_n", "ari_nonsingular_mean",
            "ari_nonsingular_sd",
        ]
        .map(String::from)
        .to_vec();
        header.extend((1..=groups).map(|g| format!("mean_err_{g}_mean")));
        header.extend((1..=groups).map(|g| format!("kron_err_{g}_mean")));
        w.write_record(&header)?;
        for c in &self.cells {
            let mut rec = vec![
                c.cell.to_string(),
                c.n_obs.to_string(),
                dims_token(&c.dims),
                c.n_star.to_string(),
                c.replicates.to_string(),
                c.failed.to_string(),
                opt(c.ari.mean),
                opt(c.ari.sd),
                c.correct_groups_fraction.to_string(),
                c.singular_replicates.to_string(),
                c.singular_percent.to_string(),
                c.ari_singular.count.to_string(),
                opt(c.ari_singular.mean),
                opt(c.ari_singular.sd),
                c.ari_nonsingular.count.to_string(),
                opt(c.ari_nonsingular.mean),
                opt(c.ari_nonsingular.sd),
            ];
            for s in c.mean_error.iter().chain(&c.kron_error) {
                rec.push(opt(s.mean));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `replicates.csv` and `cells.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_replicates_csv(fs::File::create(dir.join("replicates.csv"))?)?;
        self.write_cells_csv(fs::File::create(dir.join("cells.csv"))?)?;
        Ok(())
    }
}
