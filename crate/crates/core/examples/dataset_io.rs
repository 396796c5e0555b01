// Write a dataset in both file formats, run the `fit` command on it, and read
// the result document back.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tmclust::cli::dataset::write_dataset;
use tmclust::cli::{load_dataset, DataFormat, FitResultDocument};
use tmclust::simulate::{generate_from_truth, random_truth};

pub fn run_example() -> tmclust::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = random_truth(&[4, 3, 2], 2, 1.0, 10.0, &mut rng)?;
    let (data, _) = generate_from_truth(&truth, 10, &mut rng)?;

    let csv = write_dataset(dir.path(), "arrays", &data, DataFormat::Csv)?;
    let bin = write_dataset(dir.path(), "arrays_bin", &data, DataFormat::BinF64)?;
    let a = load_dataset(&csv)?;
    let b = load_dataset(&bin)?;
    println!("{} observations; CSV and binary agree: {}", a.observations.len(), a == b);

    let out = dir.path().join("fit.json");
    let labels = dir.path().join("labels.csv");
    let code = tmclust::cli::run([
        "tmclust", "fit",
        "--manifest", csv.to_str().unwrap(),
        "--groups", "2",
        "--scale-models", "MCD-VVI,VVV,VVI-GPCM",
        "--out", out.to_str().unwrap(),
        "--labels-out", labels.to_str().unwrap(),
    ]);
    let doc = FitResultDocument::read(&out)?;
    println!("fit exit code {code}, BIC {:.3}, labels {:?}", doc.bic, doc.labels);
    println!("first lines of the labels file:");
    for line in std::fs::read_to_string(&labels)?.lines().take(3) {
        println!("  {line}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> tmclust::Result<()> {
    run_example()
}
