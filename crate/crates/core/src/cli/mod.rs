//! The `tmclust` command line: `fit`, `scan`, `simulate` and `metrics`.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 finished with a warning
//! (a fit that did not converge, or a scan with no converged cell).

pub mod dataset;
pub mod document;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::em::{self, FitOptions};
use crate::error::{Error, Result};
use crate::metrics;
use crate::parsimony::{parse_spec_list, ScaleModelSpec};
use crate::selection::{self, ScanGrid};
use crate::simulate::{self, SimConfig};

pub use dataset::{load_dataset, DataFormat, Dataset, DatasetManifest};
pub use document::FitResultDocument;

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "TMCLUST_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tmclust", version, about = "Mixtures of multilinear normals for array-valued data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one mixture model.
    Fit(FitArgs),
    /// Fit a grid of models and select by BIC.
    Scan(ScanArgs),
    /// Run the simulation study.
    Simulate(SimulateArgs),
    /// Compare two labelings or two matrices.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Data file; overrides the manifest's `data` entry.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptionArgs {
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Aitken stopping threshold.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Diagonal added to singular scale matrices.
    #[arg(long, default_value_t = 1e-3)]
    reg_eps: f64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl OptionArgs {
    fn options(&self) -> FitOptions {
        FitOptions {
            max_iterations: self.max_iter,
            aitken_epsilon: self.tol,
            regularization: self.reg_eps,
            kmeans_restarts: self.restarts,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    groups: u64,
    /// One of VVV, MCD-VVI, MCD-EVI, EEE, VVI-GPCM per dimension, comma separated.
    #[arg(long)]
    scale_models: Option<String>,
    #[command(flatten)]
    options: OptionArgs,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// CSV with columns `obs_id,map_label,z_1..z_G`.
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "1..9")]
    groups: String,
    /// File or inline grid, e.g. `VVV|MCD-VVI,VVV,EEE`. Defaults to VVV on every dimension.
    #[arg(long)]
    scale_models_grid: Option<String>,
    #[command(flatten)]
    options: OptionArgs,
    #[arg(long)]
    threads: Option<usize>,
    /// BIC table.
    #[arg(long)]
    out: PathBuf,
    /// Selected model.
    #[arg(long)]
    best: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Study configuration (JSON); desk-scale defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// All four shapes with 250 replicates per cell.
    #[arg(long)]
    full_study: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long, requires = "labels_b", conflicts_with_all = ["est", "truth"])]
    labels_a: Option<PathBuf>,
    #[arg(long, requires = "labels_a")]
    labels_b: Option<PathBuf>,
    #[arg(long, requires = "truth")]
    est: Option<PathBuf>,
    #[arg(long, requires = "est")]
    truth: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Fit(a) => {
            let threads = a.threads;
            with_threads(threads, || cmd_fit(&a))
        }
        Command::Scan(a) => {
            let threads = a.threads;
            with_threads(threads, || cmd_scan(&a))
        }
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Metrics(a) => cmd_metrics(&a),
    }
}

/// `--threads`, else `TMCLUST_THREADS`, else rayon's default.
fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV}='{v}' is not a count"))),
        _ => Ok(None),
    }
}

fn with_threads<T: Send>(flag: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match resolve_threads(flag)? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(f),
        None => f(),
    }
}

fn load(args: &DataArgs) -> Result<Dataset> {
    match &args.data {
        None => load_dataset(&args.manifest),
        Some(data) => dataset::load_dataset_from(&DatasetManifest::read(&args.manifest)?, data),
    }
}

fn write_labels(path: &Path, ids: &[u64], report: &em::FitReport) -> Result<()> {
    let z = report.responsibilities.matrix();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["obs_id".to_string(), "map_label".to_string()];
    header.extend((1..=z.ncols()).map(|g| format!("z_{g}")));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.to_string(), (report.labels[i] + 1).to_string()];
        rec.extend(z.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let ds = load(&a.data)?;
    let order = ds.observations[0].order();
    let specs = match &a.scale_models {
        Some(s) => parse_spec_list(s)?,
        None => vec![ScaleModelSpec::Vvv; order],
    };
    let options = a.options.options();
    let (model, report) = em::fit(&ds.observations, a.groups as usize, &specs, &options)?;
    FitResultDocument::new(&model, &report, &options).write(&a.out)?;
    if let Some(path) = &a.labels_out {
        write_labels(path, &ds.obs_ids, &report)?;
    }
    if report.converged {
        Ok(0)
    } else {
        eprintln!(
            "warning: no convergence after {} iterations; result written",
            report.iterations
        );
        Ok(2)
    }
}

/// `a..b` (inclusive), `a..=b`, or `a,b,c`.
pub fn parse_group_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("invalid group range '{s}'"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let groups: Vec<usize> = if let Some((lo, hi)) = s.split_once("..") {
        let (lo, hi) = (num(lo)?, num(hi.trim_start_matches('='))?);
        (lo..=hi).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if groups.is_empty() || groups.contains(&0) {
        return Err(bad());
    }
    Ok(groups)
}

/// A grid file holds either the inline syntax or a JSON list of per-dimension
/// candidate lists.
fn read_grid(arg: &str) -> Result<Vec<Vec<ScaleModelSpec>>> {
    let path = Path::new(arg);
    if !path.is_file() {
        return selection::parse_grid(arg);
    }
    let text = fs::read_to_string(path)?;
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        serde_json::from_str(trimmed)
            .map_err(|e| Error::InvalidArgument(format!("grid file {}: {e}", path.display())))
    } else {
        selection::parse_grid(trimmed)
    }
}

fn cmd_scan(a: &ScanArgs) -> Result<i32> {
    let groups = parse_group_range(&a.groups)?;
    let ds = load(&a.data)?;
    let order = ds.observations[0].order();
    let specs = match &a.scale_models_grid {
        Some(g) => read_grid(g)?,
        None => vec![vec![ScaleModelSpec::Vvv]; order],
    };
    let options = a.options.options();
    let grid = ScanGrid::new(groups, specs, options.clone())?;
    let result = match selection::scan(&ds.observations, &grid) {
        Err(Error::AllFitsFailed) => {
            eprintln!("warning: every cell of the scan failed");
            return Ok(2);
        }
        r => r?,
    };
    result.write_csv(fs::File::create(&a.out)?)?;
    let Some((model, report)) = &result.best_fit else {
        eprintln!("warning: no cell converged");
        return Ok(2);
    };
    if let Some(path) = &a.best {
        let row = result.best_row().expect("best row exists with best fit");
        let cell_options = FitOptions {
            seed: row.seed,
            ..options
        };
        FitResultDocument::new(model, report, &cell_options).write(path)?;
    }
    Ok(0)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let mut config = match &a.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?,
        None if a.full_study => SimConfig::full_study(),
        None => SimConfig::default(),
    };
    if a.full_study && a.config.is_some() {
        let full = SimConfig::full_study();
        config.dims = full.dims;
        config.sample_sizes = full.sample_sizes;
        config.replicates = full.replicates;
    }
    if let Some(r) = a.replicates {
        config.replicates = r;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let report = simulate::run_study(&config, resolve_threads(a.threads)?)?;
    fs::write(&a.out, report.to_json()?)?;
    if let Some(dir) = &a.csv_dir {
        report.write_csvs(dir)?;
    }
    Ok(0)
}

/// Label column of a CSV: `map_label` or `label` if present, else the first.
fn read_labels(path: &Path) -> Result<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = r.headers()?.clone();
    let col = header
        .iter()
        .position(|h| h == "map_label")
        .or_else(|| header.iter().position(|h| h == "label"))
        .unwrap_or(0);
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec.get(col)
                .map(str::to_string)
                .ok_or_else(|| Error::InvalidArgument(format!("{}: short row", path.display())))
        })
        .collect()
}

/// Headerless numeric CSV.
fn read_matrix(path: &Path) -> Result<nalgebra::DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = rec?
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    Error::InvalidArgument(format!("{} line {}: '{v}' is not a number", path.display(), i + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    document::from_rows(&rows)
}

fn cmd_metrics(a: &MetricsArgs) -> Result<i32> {
    let out = match (&a.labels_a, &a.labels_b, &a.est, &a.truth) {
        (Some(la), Some(lb), _, _) => {
            let (x, y) = (read_labels(la)?, read_labels(lb)?);
            json!({
                "n": x.len(),
                "rand_index": metrics::rand_index(&x, &y)?,
                "adjusted_rand_index": metrics::adjusted_rand_index(&x, &y)?,
            })
        }
        (_, _, Some(e), Some(t)) => json!({
            "relative_error": metrics::relative_error(&read_matrix(e)?, &read_matrix(t)?)?,
        }),
        _ => {
            return Err(Error::InvalidArgument(
                "give --labels-a/--labels-b or --est/--truth".into(),
            ))
        }
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_ranges() {
        assert_eq!(parse_group_range("1..9").unwrap(), (1..=9).collect::<Vec<_>>());
        assert_eq!(parse_group_range("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_group_range("4,2").unwrap(), vec![4, 2]);
        assert!(parse_group_range("0..2").is_err());
        assert!(parse_group_range("x").is_err());
        assert!(parse_group_range("5..2").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["tmclust", "fit", "--groups", "0", "--manifest", "m.json", "--out", "o.json"]), 1);
        assert_eq!(run(["tmclust", "bogus"]), 1);
        assert_eq!(run(["tmclust", "--help"]), 0);
    }
}
