// BIC scan over group counts and scale families, printed as the CSV table.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tmclust::selection::{parse_grid, scan, ScanGrid};
use tmclust::simulate::{generate_from_truth, random_truth};
use tmclust::FitOptions;

pub fn run_example() -> tmclust::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = random_truth(&[3, 3, 3], 3, 1.0, 10.0, &mut rng)?;
    let (data, _) = generate_from_truth(&truth, 15, &mut rng)?;

    let grid = ScanGrid::new(vec![1, 2, 3, 4], parse_grid("VVV|MCD-VVI,VVV,VVV|EEE")?, FitOptions::default())?;
    let result = scan(&data, &grid)?;
    result.write_csv(std::io::stdout())?;
    if let Some(best) = result.best_row() {
        let specs: Vec<&str> = best.specs.iter().map(|s| s.token()).collect();
        println!("selected G = {} with {} (BIC {:.3})", best.groups, specs.join(","), best.bic.unwrap());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> tmclust::Result<()> {
    run_example()
}
