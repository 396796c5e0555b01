// Multilinear normal log-density: slice route against the unfolded route,
// and a Monte-Carlo look at the sampler.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tmclust::mda::Mda;
use tmclust::mlnd::{self, SliceMode};
use tmclust::MlndParams;

pub fn run_example() -> tmclust::Result<()> {
    let mean = Mda::from_fn(&[3, 2, 2], |i| i[0] as f64 - 1.0)?;
    let scales = vec![
        DMatrix::from_row_slice(3, 3, &[2.0, 0.6, 0.1, 0.6, 1.0, 0.2, 0.1, 0.2, 0.5]),
        DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 0.8]),
        DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 1.0]),
    ];
    let params = MlndParams::from_mean(&mean, scales)?;
    let x = Mda::from_fn(&[3, 2, 2], |i| (i[0] + 2 * i[1] + 3 * i[2]) as f64 / 4.0)?;

    println!("log-density {:.10}", mlnd::log_density(&x, &params)?);
    println!("quadratic form, unfolded   {:.12}", mlnd::quadratic_form_unfolded(&x, &params)?);
    println!("quadratic form, slices     {:.12}", mlnd::quadratic_form(&x, &params, SliceMode::Standard)?);
    println!("quadratic form, axes 1<->2 {:.12}", mlnd::quadratic_form(&x, &params, SliceMode::Permuted(2))?);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 20_000;
    let mut first = 0.0;
    let mut first_sq = 0.0;
    for _ in 0..draws {
        let v = mlnd::sample(&params, &mut rng)?.values()[0];
        first += v;
        first_sq += v * v;
    }
    let m = first / draws as f64;
    let var = first_sq / draws as f64 - m * m;
    // the first diagonal entry of the Kronecker covariance is 2.0 * 1.0 * 1.5
    println!("entry (1,1,1): sample mean {m:.3} (true -1), sample variance {var:.3} (true 3)");
    Ok(())
}

#[allow(dead_code)]
fn main() -> tmclust::Result<()> {
    run_example()
}
