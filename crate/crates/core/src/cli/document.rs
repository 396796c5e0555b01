//! JSON document holding a fitted mixture and its diagnostics.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::{FitOptions, FitReport, MixtureModel, Responsibilities, SingularEvent};
use crate::error::{Error, Result};
use crate::mda::Matricization;
use crate::mlnd::MlndParams;
use crate::parsimony::{McdFactors, ScaleFactors, ScaleModelSpec};

/// Dense matrix as a list of rows.
pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &Rows) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorDocument {
    Full,
    Mcd { t: Rows, delta: f64 },
    Diagonal { volume: f64, shape: Vec<f64> },
}

impl FactorDocument {
    fn from_factors(f: &ScaleFactors) -> Self {
        match f {
            ScaleFactors::Full => FactorDocument::Full,
            ScaleFactors::Mcd(m) => FactorDocument::Mcd {
                t: to_rows(&m.t),
                delta: m.delta,
            },
            ScaleFactors::Diagonal { volume, shape } => FactorDocument::Diagonal {
                volume: *volume,
                shape: shape.iter().copied().collect(),
            },
        }
    }

    fn to_factors(&self) -> Result<ScaleFactors> {
        Ok(match self {
            FactorDocument::Full => ScaleFactors::Full,
            FactorDocument::Mcd { t, delta } => ScaleFactors::Mcd(McdFactors {
                t: from_rows(t)?,
                delta: *delta,
            }),
            FactorDocument::Diagonal { volume, shape } => ScaleFactors::Diagonal {
                volume: *volume,
                shape: DVector::from_vec(shape.clone()),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDocument {
    pub weight: f64,
    /// Mode-1 unfolding of the mean, `(n*/n_1) x n_1`.
    pub mean: Rows,
    /// Per-dimension scale matrices after identifiability normalization.
    pub scales: Vec<Rows>,
    pub factors: Vec<FactorDocument>,
}

/// Settings that produced a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub groups: usize,
    pub scale_models: Vec<ScaleModelSpec>,
    pub options: FitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResultDocument {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: FitConfig,
    pub dims: Vec<usize>,
    pub n_obs: usize,
    pub components: Vec<ComponentDocument>,
    /// 1-based MAP labels.
    pub labels: Vec<usize>,
    pub responsibilities: Rows,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub bic: f64,
    pub rho: usize,
    pub converged: bool,
    pub iterations: usize,
    pub singular_events: Vec<SingularEvent>,
}

impl FitResultDocument {
    pub fn new(model: &MixtureModel, report: &FitReport, options: &FitOptions) -> Self {
        let components = (0..model.groups())
            .map(|g| {
                let comp = &model.components()[g];
                ComponentDocument {
                    weight: model.weights()[g],
                    mean: to_rows(comp.mean().matrix()),
                    scales: comp.scales().iter().map(to_rows).collect(),
                    factors: (0..model.dims().len())
                        .map(|d| FactorDocument::from_factors(model.factors(g, d)))
                        .collect(),
                }
            })
            .collect();
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: options.seed,
            config: FitConfig {
                groups: model.groups(),
                scale_models: model.specs().to_vec(),
                options: options.clone(),
            },
            dims: model.dims().to_vec(),
            n_obs: report.labels.len(),
            components,
            labels: report.labels.iter().map(|l| l + 1).collect(),
            responsibilities: to_rows(report.responsibilities.matrix()),
            loglik: report.loglik,
            loglik_trace: report.loglik_trace.clone(),
            bic: report.bic,
            rho: report.rho,
            converged: report.converged,
            iterations: report.iterations,
            singular_events: report.singular_events.clone(),
        }
    }

    /// Rebuilds the fitted model.
    pub fn to_model(&self) -> Result<MixtureModel> {
        let mut weights = Vec::new();
        let mut components = Vec::new();
        let mut factors = Vec::new();
        for c in &self.components {
            weights.push(c.weight);
            let mean = Matricization::from_matrix(self.dims.clone(), from_rows(&c.mean)?)?;
            let scales = c.scales.iter().map(from_rows).collect::<Result<Vec<_>>>()?;
            components.push(MlndParams::new(mean, scales)?);
            factors.push(c.factors.iter().map(FactorDocument::to_factors).collect::<Result<Vec<_>>>()?);
        }
        MixtureModel::with_factors(weights, components, self.config.scale_models.clone(), factors)
    }

    pub fn responsibilities(&self) -> Result<Responsibilities> {
        Responsibilities::new(from_rows(&self.responsibilities)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::fit;
    use crate::mda::Mda;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<Mda> = (0..16)
            .map(|k| {
                let shift = if k < 8 { -4.0 } else { 4.0 };
                Mda::from_fn(&[3, 2], |_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    shift + e
                }).unwrap()
            })
            .collect();
        let specs = [ScaleModelSpec::McdVvi, ScaleModelSpec::GpcmVvi];
        let options = FitOptions::default();
        let (model, report) = fit(&data, 2, &specs, &options).unwrap();
        let doc = FitResultDocument::new(&model, &report, &options);
        let back: FitResultDocument = serde_json::from_str(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_model().unwrap(), model);
        assert_eq!(back.responsibilities().unwrap(), report.responsibilities);
    }
}
