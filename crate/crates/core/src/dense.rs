//! Brute-force dense operators used as oracles for the network constructions.
//!
//! Site 0 is the most significant qubit in every `2^N`-dimensional matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{Scalar, C64};

/// Largest site count any dense routine accepts.
pub const MAX_DENSE_SITES: usize = 12;

pub fn check_sites(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one site".into()));
    }
    if n > MAX_DENSE_SITES {
        return Err(Error::TooLarge(format!(
            "{n} sites exceed the dense limit of {MAX_DENSE_SITES}"
        )));
    }
    Ok(())
}

fn real2<T: Scalar>(m: [f64; 4]) -> DMatrix<T> {
    DMatrix::from_row_slice(2, 2, &m.map(T::from_real))
}

pub fn identity<T: Scalar>() -> DMatrix<T> {
    real2([1.0, 0.0, 0.0, 1.0])
}

pub fn pauli_x<T: Scalar>() -> DMatrix<T> {
    real2([0.0, 1.0, 1.0, 0.0])
}

pub fn pauli_z<T: Scalar>() -> DMatrix<T> {
    real2([1.0, 0.0, 0.0, -1.0])
}

/// `iY`, the real antisymmetric partner of `Y`.
pub fn y_tilde<T: Scalar>() -> DMatrix<T> {
    real2([0.0, 1.0, -1.0, 0.0])
}

pub fn pauli_y() -> DMatrix<C64> {
    let i = C64::new(0.0, 1.0);
    DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), -i, i, C64::new(0.0, 0.0)])
}

pub fn kron_all<T: Scalar>(factors: &[DMatrix<T>]) -> DMatrix<T> {
    factors
        .iter()
        .fold(DMatrix::from_element(1, 1, T::one()), |acc, f| acc.kronecker(f))
}

/// `op` acting on `site` of an `n`-site register.
pub fn embed<T: Scalar>(op: &DMatrix<T>, site: usize, n: usize) -> DMatrix<T> {
    embed_many(&[(site, op)], n)
}

/// Product of single-site operators placed on distinct sites. Operators that
/// share a site are multiplied in list order.
pub fn embed_many<T: Scalar>(ops: &[(usize, &DMatrix<T>)], n: usize) -> DMatrix<T> {
    let d = ops.first().map(|(_, o)| o.nrows()).unwrap_or(2);
    let mut factors = vec![DMatrix::<T>::identity(d, d); n];
    for (site, op) in ops {
        factors[*site] = &factors[*site] * *op;
    }
    kron_all(&factors)
}

/// `Σ_i a_i b_{i+1}` on a ring; on two sites both bonds are counted.
pub fn ring_bond_sum<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, n: usize) -> DMatrix<T> {
    let dim = a.nrows().pow(n as u32);
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..n {
        h += embed_many(&[(i, a), ((i + 1) % n, b)], n);
    }
    h
}

/// `Σ_i a_i b_{i+1}` on an open chain.
pub fn chain_bond_sum<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, n: usize) -> DMatrix<T> {
    let dim = a.nrows().pow(n as u32);
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..n.saturating_sub(1) {
        h += embed_many(&[(i, a), (i + 1, b)], n);
    }
    h
}

pub fn site_sum<T: Scalar>(op: &DMatrix<T>, n: usize) -> DMatrix<T> {
    let dim = op.nrows().pow(n as u32);
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..n {
        h += embed(op, i, n);
    }
    h
}

/// `Σ_{i<j} J(j−i) a_i b_j` on an open chain.
pub fn pair_sum<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, n: usize, coupling: impl Fn(usize) -> T) -> DMatrix<T> {
    let dim = a.nrows().pow(n as u32);
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in i + 1..n {
            h += embed_many(&[(i, a), (j, b)], n) * coupling(j - i);
        }
    }
    h
}

/// Matrix exponential by a plain Taylor series, with scaling and squaring
/// only once the 1-norm exceeds 16. Without squaring, the absolute error is
/// a small multiple of `ε_mach · max_k ‖A‖^k/k!`.
pub fn expm<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|c| a.column(c).iter().map(|x| x.modulus()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 16.0 {
        (norm1 / 16.0).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.unscale(2f64.powi(squarings));
    let mut sum = DMatrix::<T>::identity(n, n);
    let mut term = DMatrix::<T>::identity(n, n);
    for k in 1..400 {
        term = (&term * &scaled).unscale(k as f64);
        sum += &term;
        let tmax = term.iter().fold(0.0f64, |m, x| m.max(x.modulus()));
        let smax = sum.iter().fold(0.0f64, |m, x| m.max(x.modulus()));
        if tmax <= 1e-18 * smax {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Grid `W[a][b]` of dense operators for the operator-valued matrix product
/// `Σ_{k₁..k_N} (M^{k₁}···M^{k_N})[a,b] X^{k₁}⊗···⊗X^{k_N}`.
pub fn operator_matrix_product<T: Scalar>(
    matrices: &[DMatrix<T>],
    ops: &[DMatrix<T>],
    n: usize,
) -> Result<Vec<Vec<DMatrix<T>>>> {
    check_sites(n)?;
    if matrices.len() != ops.len() || matrices.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} matrices for {} operators",
            matrices.len(),
            ops.len()
        )));
    }
    let bond = matrices[0].nrows();
    let d = ops[0].nrows();
    if matrices.iter().any(|m| m.shape() != (bond, bond)) || ops.iter().any(|o| o.shape() != (d, d)) {
        return Err(Error::ShapeMismatch("inconsistent MPO factor shapes".into()));
    }
    let site = |a: usize, b: usize| -> DMatrix<T> {
        let mut acc = DMatrix::zeros(d, d);
        for (m, o) in matrices.iter().zip(ops) {
            acc += o * m[(a, b)];
        }
        acc
    };
    let single: Vec<Vec<DMatrix<T>>> = (0..bond).map(|a| (0..bond).map(|b| site(a, b)).collect()).collect();
    let mut grid = single.clone();
    for _ in 1..n {
        let dim = grid[0][0].nrows() * d;
        let mut next = vec![vec![DMatrix::<T>::zeros(dim, dim); bond]; bond];
        for (a, row) in next.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                for b in 0..bond {
                    let s = &single[b][c];
                    if s.iter().all(|x| x.is_zero()) {
                        continue;
                    }
                    *cell += grid[a][b].kronecker(s);
                }
            }
        }
        grid = next;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_pauli_is_closed_form() {
        let x = pauli_x::<f64>() * 0.7;
        let e = expm(&x);
        let expect = identity::<f64>() * 0.7f64.cosh() + pauli_x::<f64>() * 0.7f64.sinh();
        assert!((e - expect).amax() < 1e-15);
        let big = pauli_z::<f64>() * 40.0;
        let e = expm(&big);
        assert!(((e[(0, 0)] - 40f64.exp()) / 40f64.exp()).abs() < 1e-13);
    }

    #[test]
    fn ytilde_squares_to_minus_identity() {
        let yt = y_tilde::<f64>();
        assert_eq!(&yt * &yt, -identity::<f64>());
        let i = C64::new(0.0, 1.0);
        let from_y = pauli_y() * i;
        assert_eq!(from_y, y_tilde::<C64>());
    }

    #[test]
    fn ring_on_two_sites_counts_bond_twice() {
        let z = pauli_z::<f64>();
        let h = ring_bond_sum(&z, &z, 2);
        assert_eq!(h, kron_all(&[z.clone(), z.clone()]) * 2.0);
    }

    #[test]
    fn embed_orders_sites_most_significant_first() {
        let z = pauli_z::<f64>();
        let m = embed(&z, 0, 2);
        assert_eq!(m[(2, 2)], -1.0);
        assert_eq!(m[(1, 1)], 1.0);
    }
}
