// Small Monte-Carlo study: generate three-group data, pick G by BIC, score
// the recovered partition and parameters.
//
// `cargo run --release --example simulation_study -- [replicates]`

use tmclust::simulate::{run_study, SimConfig};

pub fn run_example() -> tmclust::Result<()> {
    study(3)
}

#[allow(dead_code)]
fn main() -> tmclust::Result<()> {
    let replicates = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("replicate count"))
        .unwrap_or(5);
    study(replicates)
}

fn study(replicates: usize) -> tmclust::Result<()> {
    let config = SimConfig {
        sample_sizes: vec![60],
        dims: vec![vec![4; 4]],
        replicates,
        ..SimConfig::default()
    };
    let start = std::time::Instant::now();
    let report = run_study(&config, None)?;
    for c in &report.cells {
        println!(
            "N={} dims={:?}: ARI {:.3} (sd {:.3}), G correct {:.0}%, singular {:.0}%",
            c.n_obs,
            c.dims,
            c.ari.mean.unwrap_or(f64::NAN),
            c.ari.sd.unwrap_or(0.0),
            100.0 * c.correct_groups_fraction,
            c.singular_percent,
        );
        for (g, (m, k)) in c.mean_error.iter().zip(&c.kron_error).enumerate() {
            println!(
                "  group {}: mean rel. error {:.3}, Kronecker rel. error {:.3}",
                g + 1,
                m.mean.unwrap_or(f64::NAN),
                k.mean.unwrap_or(f64::NAN)
            );
        }
    }
    println!("{} replicates in {:.1?}", report.replicates.len(), start.elapsed());
    Ok(())
}
