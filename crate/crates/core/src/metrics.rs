//! Partition agreement and parameter-recovery metrics.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::frobenius_inner;

/// Cross-tabulation of two labelings of the same observations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

impl ContingencyTable {
    /// Labels may be any ordered type; rows and columns follow sorted label
    /// order.
    pub fn new<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::InvalidArgument(format!(
                "label vectors have lengths {} and {}",
                a.len(),
                b.len()
            )));
        }
        let rows = index_labels(a);
        let cols = index_labels(b);
        let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
        for (x, y) in a.iter().zip(b) {
            counts[rows[x]][cols[y]] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols.len())
            .map(|j| counts.iter().map(|r| r[j]).sum())
            .collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total: a.len() as u64,
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// `(Σ C(n_ij,2), Σ C(a_i,2), Σ C(b_j,2), C(N,2))`
    fn pair_counts(&self) -> (u128, u128, u128, u128) {
        let c2 = |v: u64| (v as u128) * (v.saturating_sub(1) as u128) / 2;
        let joint = self.counts.iter().flatten().map(|&v| c2(v)).sum();
        let rows = self.row_sums.iter().map(|&v| c2(v)).sum();
        let cols = self.col_sums.iter().map(|&v| c2(v)).sum();
        (joint, rows, cols, c2(self.total))
    }
}

fn index_labels<T: Ord>(labels: &[T]) -> BTreeMap<&T, usize> {
    let mut map: BTreeMap<&T, usize> = labels.iter().map(|l| (l, 0)).collect();
    for (i, v) in map.values_mut().enumerate() {
        *v = i;
    }
    map
}

fn table<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<ContingencyTable> {
    let t = ContingencyTable::new(a, b)?;
    if t.total < 2 {
        return Err(Error::InvalidArgument(
            "need at least two observations".into(),
        ));
    }
    Ok(t)
}

/// Fraction of observation pairs on which the two partitions agree.
pub fn rand_index<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    let (s, ra, cb, pairs) = table(a, b)?.pair_counts();
    // agreements = pairs together in both + pairs apart in both
    let agree = pairs + 2 * s - ra - cb;
    Ok(agree as f64 / pairs as f64)
}

/// Hubert–Arabie adjusted Rand index.
///
/// Computed as `2(S·C - A·B) / ((A+B)·C - 2·A·B)` in exact integer arithmetic,
/// where `S`, `A`, `B` are the joint, row and column pair counts and `C` the
/// total pair count. Two identical trivial partitions give 1.
pub fn adjusted_rand_index<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    let (s, ra, cb, pairs) = table(a, b)?.pair_counts();
    let (s, ra, cb, pairs) = (s as i128, ra as i128, cb as i128, pairs as i128);
    let num = 2 * (s * pairs - ra * cb);
    let den = (ra + cb) * pairs - 2 * ra * cb;
    if den == 0 {
        return Ok(if num == 0 { 1.0 } else { 0.0 });
    }
    Ok(num as f64 / den as f64)
}

/// `‖est - truth‖_F / ‖truth‖_F`.
pub fn relative_error(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if est.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "estimate is {:?}, truth is {:?}",
            est.shape(),
            truth.shape()
        )));
    }
    let norm = truth.norm();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument("truth has zero norm".into()));
    }
    Ok((est - truth).norm() / norm)
}

/// Relative error between `⨂ est` and `⨂ truth` without forming either
/// product, via `⟨⨂A, ⨂B⟩ = ∏ ⟨A_d, B_d⟩`.
pub fn kron_relative_error(est: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> Result<f64> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::Shape("factor lists differ in length".into()));
    }
    let mut ee = 1.0;
    let mut tt = 1.0;
    let mut et = 1.0;
    for (e, t) in est.iter().zip(truth) {
        if e.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "factor shapes {:?} and {:?}",
                e.shape(),
                t.shape()
            )));
        }
        ee *= frobenius_inner(e, e);
        tt *= frobenius_inner(t, t);
        et *= frobenius_inner(e, t);
    }
    if !(tt > 0.0) {
        return Err(Error::InvalidArgument("truth has zero norm".into()));
    }
    Ok(((ee - 2.0 * et + tt).max(0.0) / tt).sqrt())
}
