// Vectorization, unfoldings, axis permutations, d-mode products and
// Kronecker products on a small 2x3x2 array.

use nalgebra::DMatrix;
use tmclust::mda::{self, Mda};

pub fn run_example() -> tmclust::Result<()> {
    // entry (i1, i2, i3) holds the number i1 i2 i3 written in decimal
    let x = Mda::from_fn(&[2, 3, 2], |i| (100 * (i[0] + 1) + 10 * (i[1] + 1) + i[2] + 1) as f64)?;
    println!("vec(X)ᵀ = {:?}", x.vectorize().as_slice());

    let x1 = mda::matricize_mode1(&x);
    println!("mode-1 unfolding ({} x {}):{}", x1.matrix().nrows(), x1.matrix().ncols(), x1.matrix());
    println!("axis-2 unfolding:{}", mda::matricize(&x, 1)?);

    let swapped = mda::permute_with_second(&x, 2)?;
    println!("axes 1 and 2 exchanged: dims {:?}", swapped.dims());

    let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -1.0, 0.5, 0.5, 0.5]);
    let y = mda::dmode_product(&x, &a, 1)?;
    println!("X x_2 A: dims {:?}, values {:?}", y.dims(), y.values());

    let k = mda::kron(&[DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])]);
    println!("I ⊗ B:{k}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> tmclust::Result<()> {
    run_example()
}
