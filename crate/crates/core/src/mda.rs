//! Dense multidimensional arrays and the unfoldings used by the density and
//! the M-steps.
//!
//! Values are stored in vectorization order: the first index is the most
//! significant and the last index varies fastest. With this layout the
//! column-major storage of the mode-1 matricization is the value buffer itself,
//! so `vec(X) = vec(X_(1))` holds without copying.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A dense order-`D` real array (`D >= 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mda {
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.len() < 2 {
        return Err(Error::Shape(format!(
            "an array needs at least two dimensions, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Shape(format!("zero-length dimension in {dims:?}")));
    }
    Ok(dims.iter().product())
}

impl Mda {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let total = check_dims(&dims)?;
        if values.len() != total {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {total} values, got {}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let total = check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            values: vec![0.0; total],
        })
    }

    /// Builds an array by evaluating `f` at every zero-based multi-index.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let total = check_dims(dims)?;
        let mut values = Vec::with_capacity(total);
        let mut index = vec![0; dims.len()];
        for _ in 0..total {
            values.push(f(&index));
            increment(&mut index, dims);
        }
        Ok(Self {
            dims: dims.to_vec(),
            values,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Total element count `n*`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.values[self.offset(index)]
    }

    pub fn vectorize(&self) -> DVector<f64> {
        vectorize(self)
    }

    pub fn matricize_mode1(&self) -> Matricization {
        matricize_mode1(self)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Mda) -> Result<Mda> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "cannot subtract {:?} from {:?}",
                other.dims, self.dims
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Mda {
            dims: self.dims.clone(),
            values,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn increment(index: &mut [usize], dims: &[usize]) {
    for k in (0..dims.len()).rev() {
        index[k] += 1;
        if index[k] < dims[k] {
            return;
        }
        index[k] = 0;
    }
}

/// Mode-1 unfolding: an `(n*/n_1) x n_1` matrix whose column `i_1` holds the
/// sub-array at `i_1`, rows ordered with `i_2` most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct Matricization {
    dims: Vec<usize>,
    matrix: DMatrix<f64>,
}

impl Matricization {
    pub fn from_matrix(dims: Vec<usize>, matrix: DMatrix<f64>) -> Result<Self> {
        let total = check_dims(&dims)?;
        if matrix.ncols() != dims[0] || matrix.nrows() * matrix.ncols() != total {
            return Err(Error::Shape(format!(
                "a {}x{} matrix is not the mode-1 unfolding of {dims:?}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { dims, matrix })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Folds back into the source array.
    pub fn to_mda(&self) -> Mda {
        Mda {
            dims: self.dims.clone(),
            values: self.matrix.as_slice().to_vec(),
        }
    }
}

/// Vectorization with the first index most significant.
pub fn vectorize(x: &Mda) -> DVector<f64> {
    DVector::from_column_slice(&x.values)
}

pub fn matricize_mode1(x: &Mda) -> Matricization {
    let cols = x.dims[0];
    let rows = x.len() / cols;
    Matricization {
        dims: x.dims.clone(),
        matrix: DMatrix::from_column_slice(rows, cols, &x.values),
    }
}

/// Mode-`axis` unfolding, `(n*/n_axis) x n_axis`. Rows run over the remaining
/// axes in ascending order with the earliest one most significant. For axis 0
/// this is [`matricize_mode1`].
pub fn matricize(x: &Mda, axis: usize) -> Result<DMatrix<f64>> {
    check_axis(x, axis)?;
    let mut perm: Vec<usize> = Vec::with_capacity(x.order());
    perm.push(axis);
    perm.extend((0..x.order()).filter(|&k| k != axis));
    let moved = permute_axes(x, &perm)?;
    let cols = x.dims[axis];
    Ok(DMatrix::from_column_slice(x.len() / cols, cols, &moved.values))
}

fn check_axis(x: &Mda, axis: usize) -> Result<()> {
    if axis >= x.order() {
        return Err(Error::AxisOutOfRange {
            axis,
            order: x.order(),
        });
    }
    Ok(())
}

/// General axis permutation: axis `k` of the result is axis `perm[k]` of `x`.
pub fn permute_axes(x: &Mda, perm: &[usize]) -> Result<Mda> {
    let order = x.order();
    let mut seen = vec![false; order];
    if perm.len() != order {
        return Err(Error::Shape(format!(
            "permutation {perm:?} does not match order {order}"
        )));
    }
    for &p in perm {
        if p >= order || seen[p] {
            return Err(Error::Shape(format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
    }
    let dims: Vec<usize> = perm.iter().map(|&p| x.dims[p]).collect();
    let mut src_strides = vec![1usize; order];
    for k in (0..order - 1).rev() {
        src_strides[k] = src_strides[k + 1] * x.dims[k + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();

    let mut values = Vec::with_capacity(x.len());
    let mut index = vec![0usize; order];
    let mut src = 0usize;
    for _ in 0..x.len() {
        values.push(x.values[src]);
        // odometer step, keeping the source offset in sync
        for k in (0..order).rev() {
            index[k] += 1;
            src += strides[k];
            if index[k] < dims[k] {
                break;
            }
            src -= strides[k] * dims[k];
            index[k] = 0;
        }
    }
    Ok(Mda { dims, values })
}

/// Exchanges axis 1 with `axis` (`2 <= axis < D`). Mode-1 matricizing the
/// result gives the commuted unfolding used to update the scale of `axis`
/// through the same slice machinery as axis 1.
pub fn permute_with_second(x: &Mda, axis: usize) -> Result<Mda> {
    if axis < 2 || axis >= x.order() {
        return Err(Error::AxisOutOfRange {
            axis,
            order: x.order(),
        });
    }
    let mut perm: Vec<usize> = (0..x.order()).collect();
    perm.swap(1, axis);
    permute_axes(x, &perm)
}

/// Left-to-right Kronecker product. Dense; meant for small shapes and checks.
///
/// # Panics
/// If `mats` is empty.
pub fn kron(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (first, rest) = mats.split_first().expect("kron needs at least one matrix");
    rest.iter().fold(first.clone(), |acc, m| acc.kronecker(m))
}

/// Multiplies `x` by `a` along `axis`. The result replaces `n_axis` by the row
/// count of `a`, and its mode-`axis` unfolding equals `matricize(x, axis) * aᵀ`.
pub fn dmode_product(x: &Mda, a: &DMatrix<f64>, axis: usize) -> Result<Mda> {
    check_axis(x, axis)?;
    let n = x.dims[axis];
    if a.ncols() != n {
        return Err(Error::Shape(format!(
            "a {}x{} matrix cannot act on a dimension of length {n}",
            a.nrows(),
            a.ncols()
        )));
    }
    let m = a.nrows();
    if m == 0 {
        return Err(Error::Shape("mode product with an empty matrix".into()));
    }
    let pre: usize = x.dims[..axis].iter().product();
    let post: usize = x.dims[axis + 1..].iter().product();
    let mut values = vec![0.0; pre * m * post];
    for p in 0..pre {
        let src = &x.values[p * n * post..(p + 1) * n * post];
        let dst = &mut values[p * m * post..(p + 1) * m * post];
        for r in 0..m {
            let out = &mut dst[r * post..(r + 1) * post];
            for k in 0..n {
                let coef = a[(r, k)];
                if coef == 0.0 {
                    continue;
                }
                let row = &src[k * post..(k + 1) * post];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += coef * v;
                }
            }
        }
    }
    let mut dims = x.dims.clone();
    dims[axis] = m;
    Ok(Mda { dims, values })
}

/// Applies a square matrix along every axis that has one, in ascending axis
/// order. `None` leaves the axis untouched.
pub(crate) fn multi_mode_product(x: &Mda, mats: &[Option<&DMatrix<f64>>]) -> Result<Mda> {
    let mut out: Option<Mda> = None;
    for (axis, m) in mats.iter().enumerate() {
        if let Some(m) = m {
            let cur = out.as_ref().unwrap_or(x);
            out = Some(dmode_product(cur, m, axis)?);
        }
    }
    Ok(out.unwrap_or_else(|| x.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> Mda {
        // x_{ijk} = 4(i-1) + 2(j-1) + k with one-based indices
        Mda::from_fn(&[2, 2, 2], |ix| (4 * ix[0] + 2 * ix[1] + ix[2] + 1) as f64).unwrap()
    }

    #[test]
    fn vectorize_two_by_two() {
        let x = Mda::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // sum_{ij} x_ij e_i (x) e_j, computed by hand
        let mut oracle = DVector::zeros(4);
        for i in 0..2 {
            for j in 0..2 {
                let mut e1 = DVector::zeros(2);
                e1[i] = 1.0;
                let mut e2 = DVector::zeros(2);
                e2[j] = 1.0;
                oracle += e1.kronecker(&e2) * x.get(&[i, j]);
            }
        }
        assert_eq!(vectorize(&x), oracle);
        assert_eq!(vectorize(&x).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn vectorize_trivial_cases() {
        let z = Mda::zeros(&[3, 2, 4]).unwrap();
        assert!(vectorize(&z).iter().all(|&v| v == 0.0));
        let one = Mda::new(vec![1, 1, 1], vec![5.0]).unwrap();
        assert_eq!(vectorize(&one).as_slice(), &[5.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Mda::new(vec![3], vec![0.0; 3]).is_err());
        assert!(Mda::new(vec![2, 0], vec![]).is_err());
        assert!(Mda::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn mode1_of_cube_matches_basis_expansion() {
        let x = cube();
        let m = matricize_mode1(&x);
        // sum x_ijk (e_j (x) e_k) e_i^T
        let mut oracle = DMatrix::zeros(4, 2);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut ej = DVector::zeros(2);
                    ej[j] = 1.0;
                    let mut ek = DVector::zeros(2);
                    ek[k] = 1.0;
                    let mut ei = DVector::zeros(2);
                    ei[i] = 1.0;
                    oracle += ej.kronecker(&ek) * ei.transpose() * x.get(&[i, j, k]);
                }
            }
        }
        assert_eq!(m.matrix(), &oracle);
        // column i is (x_i11, x_i12, x_i21, x_i22)
        assert_eq!(m.matrix().column(0).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.matrix().column(1).as_slice(), &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(m.to_mda(), x);
    }

    #[test]
    fn mode1_of_matrix_satisfies_vec_identity() {
        let x = Mda::from_fn(&[3, 2], |ix| (10 * ix[0] + ix[1]) as f64).unwrap();
        let m = matricize_mode1(&x);
        assert_eq!(m.matrix().shape(), (2, 3));
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(m.matrix()[(j, i)], x.get(&[i, j]));
            }
        }
        let stacked: Vec<f64> = m.matrix().iter().copied().collect();
        assert_eq!(stacked, x.values());
    }

    #[test]
    fn permute_second_on_cube() {
        let x = cube();
        let y = permute_with_second(&x, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(y.get(&[i, k, j]), x.get(&[i, j, k]));
                }
            }
        }
        assert_eq!(permute_with_second(&y, 2).unwrap(), x);
        assert!(permute_with_second(&x, 1).is_err());
        assert!(permute_with_second(&x, 3).is_err());
        let z = Mda::zeros(&[2, 3, 4]).unwrap();
        let pz = permute_with_second(&z, 2).unwrap();
        assert_eq!(pz.dims(), &[2, 4, 3]);
        assert!(pz.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kron_small_cases() {
        let i6 = kron(&[DMatrix::identity(2, 2), DMatrix::identity(3, 3)]);
        assert_eq!(i6, DMatrix::<f64>::identity(6, 6));
        let s = kron(&[DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 3.0)]);
        assert_eq!(s[(0, 0)], 6.0);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, 4.0]);
        let k = kron(&[a.clone(), b.clone()]);
        let expect = a.determinant().powi(2) * b.determinant().powi(2);
        assert!((k.determinant() - expect).abs() < 1e-9 * expect.abs());
    }

    #[test]
    fn dmode_identity_zero_and_shape() {
        let x = cube();
        for axis in 0..3 {
            assert_eq!(dmode_product(&x, &DMatrix::identity(2, 2), axis).unwrap(), x);
            let z = dmode_product(&x, &DMatrix::zeros(3, 2), axis).unwrap();
            assert_eq!(z.dims()[axis], 3);
            assert!(z.values().iter().all(|&v| v == 0.0));
        }
        assert!(dmode_product(&x, &DMatrix::identity(3, 3), 0).is_err());
        assert!(dmode_product(&x, &DMatrix::identity(2, 2), 3).is_err());
    }

    #[test]
    fn dmode_unfolding_relation() {
        let x = Mda::from_fn(&[2, 3, 4], |ix| (ix[0] * 7 + ix[1] * 3 + ix[2]) as f64 * 0.5 - 2.0)
            .unwrap();
        let a = DMatrix::from_fn(5, 3, |r, c| (r as f64) - 0.3 * c as f64);
        let y = dmode_product(&x, &a, 1).unwrap();
        assert_eq!(y.dims(), &[2, 5, 4]);
        let lhs = matricize(&y, 1).unwrap();
        let rhs = matricize(&x, 1).unwrap() * a.transpose();
        assert!((lhs - rhs).abs().max() < 1e-12);
    }

    #[test]
    fn matricize_axis_zero_is_mode1() {
        let x = cube();
        assert_eq!(&matricize(&x, 0).unwrap(), matricize_mode1(&x).matrix());
    }
}
