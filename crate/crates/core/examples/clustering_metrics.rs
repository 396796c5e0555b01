// Rand and adjusted Rand indices, and relative errors for matrices and
// Kronecker products.

use nalgebra::DMatrix;
use tmclust::metrics::{adjusted_rand_index, kron_relative_error, rand_index, relative_error, ContingencyTable};

pub fn run_example() -> tmclust::Result<()> {
    let truth = ["a", "a", "a", "b", "b", "c", "c", "c"];
    let found = [2, 2, 1, 1, 1, 3, 3, 3];
    let table = ContingencyTable::new(&truth, &found)?;
    println!("contingency counts {:?}", table.counts());
    println!("Rand {:.4}, adjusted Rand {:.4}", rand_index(&truth, &found)?, adjusted_rand_index(&truth, &found)?);
    println!("crossed halves: adjusted Rand {}", adjusted_rand_index(&[1, 1, 2, 2], &[1, 2, 1, 2])?);

    let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    println!("relative error of 1.1·M: {:.4}", relative_error(&(&m * 1.1), &m)?);

    let a = vec![DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), DMatrix::identity(3, 3)];
    let b = vec![&a[0] * 0.5, &a[1] * 2.0];
    println!("same Kronecker product, different factors: {:.2e}", kron_relative_error(&b, &a)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> tmclust::Result<()> {
    run_example()
}
