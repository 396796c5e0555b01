//! BIC and grid scans over group counts and per-dimension scale families.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{self, FitOptions, FitReport, MixtureModel};
use crate::error::{Error, Result};
use crate::mda::Mda;
use crate::parsimony::ScaleModelSpec;

/// BIC differences at or below this are treated as ties.
pub const BIC_TIE_TOLERANCE: f64 = 1e-9;

/// `2 loglik - ρ ln N`; larger is better.
pub fn bic(loglik: f64, rho: usize, n_obs: usize) -> f64 {
    2.0 * loglik - rho as f64 * (n_obs as f64).ln()
}

/// SplitMix64 finalizer folded over `parts`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        state = state.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

fn spec_code(specs: &[ScaleModelSpec]) -> u64 {
    specs.iter().fold(1u64, |acc, s| {
        let digit = ScaleModelSpec::ALL.iter().position(|a| a == s).unwrap() as u64;
        acc.wrapping_mul(8).wrapping_add(digit)
    })
}

/// Candidate group counts, one candidate list per dimension, and the options
/// shared by every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub groups: Vec<usize>,
    pub specs: Vec<Vec<ScaleModelSpec>>,
    pub options: FitOptions,
}

impl ScanGrid {
    pub fn new(groups: Vec<usize>, specs: Vec<Vec<ScaleModelSpec>>, options: FitOptions) -> Result<Self> {
        let grid = Self {
            groups,
            specs,
            options,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// The same candidate list on every one of `order` dimensions.
    pub fn uniform(groups: Vec<usize>, candidates: &[ScaleModelSpec], order: usize, options: FitOptions) -> Result<Self> {
        Self::new(groups, vec![candidates.to_vec(); order], options)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() || self.specs.is_empty() || self.specs.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("scan grid has an empty range".into()));
        }
        self.options.validate()
    }

    /// Cells in canonical order: group count outermost, then spec
    /// combinations with the last dimension varying fastest.
    pub fn cells(&self) -> Vec<(usize, Vec<ScaleModelSpec>)> {
        let mut combos: Vec<Vec<ScaleModelSpec>> = vec![Vec::new()];
        for candidates in &self.specs {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    candidates.iter().map(move |&s| {
                        let mut c = prefix.clone();
                        c.push(s);
                        c
                    })
                })
                .collect();
        }
        self.groups
            .iter()
            .flat_map(|&g| combos.iter().map(move |c| (g, c.clone())))
            .collect()
    }
}

/// Parses an inline grid: dimensions separated by `,`, alternatives by `|`,
/// e.g. `VVV|MCD-VVI,VVV,EEE|VVV`.
pub fn parse_grid(s: &str) -> Result<Vec<Vec<ScaleModelSpec>>> {
    s.split(',')
        .map(|dim| dim.split('|').map(str::parse).collect())
        .collect()
}

/// One fitted (or failed) cell of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub groups: usize,
    pub specs: Vec<ScaleModelSpec>,
    pub loglik: Option<f64>,
    pub rho: usize,
    pub bic: Option<f64>,
    pub converged: bool,
    pub singular_events: usize,
    pub iterations: usize,
    pub seed: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    /// Index into `rows` of the selected model, if any cell converged.
    pub best: Option<usize>,
    pub best_fit: Option<(MixtureModel, FitReport)>,
}

impl ScanResult {
    pub fn best_row(&self) -> Option<&ScanRow> {
        self.best.map(|i| &self.rows[i])
    }

    /// Columns `G, spec_d1..spec_dD, loglik, rho, bic, converged, singular_events`.
    /// Failed cells leave `loglik` and `bic` empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let order = self.rows.first().map_or(0, |r| r.specs.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["G".to_string()];
        header.extend((1..=order).map(|d| format!("spec_d{d}")));
        header.extend(["loglik", "rho", "bic", "converged", "singular_events"].map(String::from));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            let mut rec = vec![r.groups.to_string()];
            rec.extend(r.specs.iter().map(|s| s.token().to_string()));
            rec.push(opt(r.loglik));
            rec.push(r.rho.to_string());
            rec.push(opt(r.bic));
            rec.push(r.converged.to_string());
            rec.push(r.singular_events.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Picks the converged row with the largest BIC. Near-ties go to the smaller
/// parameter count, then the smaller group count.
pub fn select_best(rows: &[ScanRow]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        let Some(b) = r.bic.filter(|b| r.converged && b.is_finite()) else {
            continue;
        };
        best = match best {
            None => Some((i, b)),
            Some((j, bb)) => {
                let cur = &rows[j];
                let better = b > bb + BIC_TIE_TOLERANCE
                    || ((b - bb).abs() <= BIC_TIE_TOLERANCE
                        && (r.rho, r.groups) < (cur.rho, cur.groups));
                if better {
                    Some((i, b))
                } else {
                    Some((j, bb))
                }
            }
        };
    }
    best.map(|(i, _)| i)
}

/// Fits every cell of `grid` in parallel. Each cell gets a seed derived from
/// the grid's base seed, its group count and its spec combination, so the
/// outcome does not depend on the worker count.
pub fn scan(data: &[Mda], grid: &ScanGrid) -> Result<ScanResult> {
    grid.validate()?;
    let order = data.first().map(|x| x.order()).unwrap_or(0);
    if grid.specs.len() != order {
        return Err(Error::Shape(format!(
            "grid has {} dimensions, data has order {order}",
            grid.specs.len()
        )));
    }
    let dims = data[0].dims().to_vec();
    let results: Vec<(ScanRow, Option<(MixtureModel, FitReport)>)> = grid
        .cells()
        .into_par_iter()
        .map(|(g, specs)| {
            let seed = derive_seed(&[grid.options.seed, g as u64, spec_code(&specs)]);
            let options = FitOptions {
                seed,
                ..grid.options.clone()
            };
            let rho = crate::parsimony::free_params(&specs, g, &dims).total;
            match em::fit(data, g, &specs, &options) {
                Ok((model, report)) => (
                    ScanRow {
                        groups: g,
                        specs,
                        loglik: Some(report.loglik),
                        rho,
                        bic: Some(report.bic),
                        converged: report.converged,
                        singular_events: report.singular_events.len(),
                        iterations: report.iterations,
                        seed,
                        error: None,
                    },
                    Some((model, report)),
                ),
                Err(e) => (
                    ScanRow {
                        groups: g,
                        specs,
                        loglik: None,
                        rho,
                        bic: None,
                        converged: false,
                        singular_events: 0,
                        iterations: 0,
                        seed,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    if results.iter().all(|(_, fit)| fit.is_none()) {
        return Err(Error::AllFitsFailed);
    }
    let (rows, mut fits): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let best = select_best(&rows);
    let best_fit = best.and_then(|i| fits[i].take());
    Ok(ScanResult {
        rows,
        best,
        best_fit,
    })
}
