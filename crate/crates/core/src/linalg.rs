//! Dense tensors and the linear-algebra kernels the rest of the crate is
//! built on.
//!
//! Matrices are plain [`nalgebra::DMatrix`] values; [`DenseTensor`] is a
//! row-major multi-index array used wherever more than two indices are in
//! play (operator networks, oracles). Exactly two scalar kinds exist, `f64`
//! and [`C64`], both behind the [`Scalar`] trait.

use std::fmt::Debug;

use nalgebra::{ComplexField, DMatrix, DVector, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const MAX_SWEEPS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    Real,
    Complex,
}

/// The two scalar kinds used throughout: real and complex double precision.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync + Debug + PartialEq + 'static {
    const KIND: ScalarKind;

    fn to_c64(self) -> C64;

    /// Converts back from complex. Real scalars keep only the real part.
    fn from_c64(z: C64) -> Self;

    fn is_finite_scalar(self) -> bool;

    /// All eigenvalues of a square matrix via a Schur decomposition.
    fn schur_eigenvalues(m: DMatrix<Self>) -> Option<Vec<C64>>;
}

impl Scalar for f64 {
    const KIND: ScalarKind = ScalarKind::Real;

    fn to_c64(self) -> C64 {
        C64::new(self, 0.0)
    }

    fn from_c64(z: C64) -> Self {
        z.re
    }

    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }

    fn schur_eigenvalues(m: DMatrix<Self>) -> Option<Vec<C64>> {
        // The real Schur form returns conjugate pairs exactly.
        let schur = Schur::try_new(m, f64::EPSILON, MAX_SWEEPS)?;
        Some(schur.complex_eigenvalues().iter().copied().collect())
    }
}

impl Scalar for C64 {
    const KIND: ScalarKind = ScalarKind::Complex;

    fn to_c64(self) -> C64 {
        self
    }

    fn from_c64(z: C64) -> Self {
        z
    }

    fn is_finite_scalar(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    fn schur_eigenvalues(m: DMatrix<Self>) -> Option<Vec<C64>> {
        let schur = Schur::try_new(m, f64::EPSILON, MAX_SWEEPS)?;
        schur.eigenvalues().map(|v| v.iter().copied().collect())
    }
}

pub fn to_complex<T: Scalar>(m: &DMatrix<T>) -> DMatrix<C64> {
    m.map(|x| x.to_c64())
}

pub fn all_finite<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.iter().all(|x| x.is_finite_scalar())
}

fn ensure_finite<T: Scalar>(m: &DMatrix<T>, what: &'static str) -> Result<()> {
    if all_finite(m) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Largest absolute entry.
pub fn max_abs<T: Scalar>(m: &DMatrix<T>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.modulus()))
}

pub fn max_abs_diff<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_abs_diff: shape mismatch");
    a.iter()
        .zip(b.iter())
        .fold(0.0, |acc, (x, y)| acc.max((*x - *y).modulus()))
}

// ---------------------------------------------------------------------------
// Dense tensors

/// Row-major multi-index array.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

impl<T: Scalar> DenseTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite_scalar()) {
            return Err(Error::NonFinite("DenseTensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); len],
        }
    }

    pub fn from_matrix(m: &DMatrix<T>) -> Self {
        let (r, c) = m.shape();
        let data = (0..r)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Self {
            shape: vec![r, c],
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<T>> {
        if self.shape.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(DMatrix::from_row_slice(self.shape[0], self.shape[1], &self.data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            assert!(i < n, "index {i} out of range {n}");
            acc * n + i
        })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// New tensor whose axis `k` is axis `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument(format!(
                "{perm:?} is not a permutation of {r} axes"
            )));
        }
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let old_strides = row_major_strides(&self.shape);
        let strides: Vec<usize> = perm.iter().map(|&p| old_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut index = vec![0usize; r];
        for _ in 0..self.data.len() {
            let src: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(self.data[src]);
            for k in (0..r).rev() {
                index[k] += 1;
                if index[k] < shape[k] {
                    break;
                }
                index[k] = 0;
            }
        }
        Ok(Self { shape, data })
    }

    /// Contracts the axis pairs `(axis of self, axis of other)`. The result
    /// carries the free axes of `self` in order, then those of `other`.
    /// Contracting every axis yields a rank-1 tensor of extent 1.
    pub fn contract(&self, other: &Self, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut used_a = vec![false; self.rank()];
        let mut used_b = vec![false; other.rank()];
        for &(a, b) in pairs {
            if a >= self.rank() || b >= other.rank() {
                return Err(Error::InvalidArgument(format!("axis pair ({a}, {b}) out of range")));
            }
            if std::mem::replace(&mut used_a[a], true) || std::mem::replace(&mut used_b[b], true) {
                return Err(Error::InvalidArgument(format!("axis pair ({a}, {b}) repeated")));
            }
            if self.shape[a] != other.shape[b] {
                return Err(Error::ShapeMismatch(format!(
                    "contracted extents differ: {} vs {}",
                    self.shape[a], other.shape[b]
                )));
            }
        }
        let free_a: Vec<usize> = (0..self.rank()).filter(|&k| !used_a[k]).collect();
        let free_b: Vec<usize> = (0..other.rank()).filter(|&k| !used_b[k]).collect();
        let perm_a: Vec<usize> = free_a.iter().copied().chain(pairs.iter().map(|p| p.0)).collect();
        let perm_b: Vec<usize> = pairs.iter().map(|p| p.1).chain(free_b.iter().copied()).collect();
        let rows: usize = free_a.iter().map(|&k| self.shape[k]).product();
        let inner: usize = pairs.iter().map(|p| self.shape[p.0]).product();
        let cols: usize = free_b.iter().map(|&k| other.shape[k]).product();
        let a = self.permute(&perm_a)?;
        let b = other.permute(&perm_b)?;
        let ma = DMatrix::from_row_slice(rows, inner, &a.data);
        let mb = DMatrix::from_row_slice(inner, cols, &b.data);
        let prod = ma * mb;
        let mut shape: Vec<usize> = free_a
            .iter()
            .map(|&k| self.shape[k])
            .chain(free_b.iter().map(|&k| other.shape[k]))
            .collect();
        if shape.is_empty() {
            shape.push(1);
        }
        let out = DenseTensor::from_matrix(&prod);
        out.reshape(shape)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x.modulus_squared()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (x, y)| acc.max((*x - *y).modulus())))
    }
}

// ---------------------------------------------------------------------------
// Factorizations

/// `m = u · diag(singular_values) · v†`, singular values descending.
#[derive(Clone, Debug)]
pub struct Svd<T: Scalar> {
    pub u: DMatrix<T>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<T>,
}

pub fn svd<T: Scalar>(m: &DMatrix<T>) -> Result<Svd<T>> {
    ensure_finite(m, "svd input")?;
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        let k = r.min(c);
        return Ok(Svd {
            u: DMatrix::zeros(r, k),
            singular_values: DVector::zeros(k),
            v: DMatrix::zeros(c, k),
        });
    }
    let dec = SVD::try_new(m.clone(), true, true, f64::EPSILON, MAX_SWEEPS).ok_or(Error::NoConvergence("svd"))?;
    let u = dec.u.ok_or(Error::NoConvergence("svd"))?;
    let v_t = dec.v_t.ok_or(Error::NoConvergence("svd"))?;
    let s = dec.singular_values;
    // try_new sorts, but small fixed-size special cases are exempt upstream
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let u = DMatrix::from_fn(r, order.len(), |i, k| u[(i, order[k])]);
    let v = DMatrix::from_fn(c, order.len(), |i, k| v_t[(order[k], i)].conjugate());
    let singular_values = DVector::from_iterator(order.len(), order.iter().map(|&k| s[k]));
    if !all_finite(&u) || !all_finite(&v) {
        return Err(Error::NonFinite("svd output"));
    }
    Ok(Svd { u, singular_values, v })
}

/// Economical QR: `q` is rows×cols with orthonormal columns, `r` upper
/// triangular cols×cols.
pub fn qr_economical<T: Scalar>(m: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    ensure_finite(m, "qr input")?;
    if m.nrows() < m.ncols() {
        return Err(Error::InvalidArgument(format!(
            "economical QR needs rows >= cols, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let qr = m.clone().qr();
    Ok((qr.q(), qr.r()))
}

/// Pseudoinverse threshold: singular values at or below
/// `max(rows, cols) · ε · σ_max` count as zero.
pub fn pinv_threshold(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Minimum-norm least-squares solution of `a · x = b`.
pub fn solve_least_squares<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    if a.nrows() != b.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "least squares: a has {} rows, b has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    ensure_finite(b, "least-squares right-hand side")?;
    let dec = svd(a)?;
    let smax = dec.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = pinv_threshold(a.nrows(), a.ncols(), smax);
    let mut ut_b = dec.u.adjoint() * b;
    for (k, &s) in dec.singular_values.iter().enumerate() {
        let scale = if s > cut { 1.0 / s } else { 0.0 };
        ut_b.row_mut(k).scale_mut(scale);
    }
    Ok(&dec.v * ut_b)
}

/// Right eigenpairs of a general square matrix.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    /// Sorted by descending magnitude.
    pub values: Vec<C64>,
    /// Unit-norm right eigenvectors as columns, matching `values`.
    pub vectors: DMatrix<C64>,
    /// σ_max/σ_min of the eigenvector matrix; huge or infinite for
    /// defective input.
    pub condition: f64,
}

pub fn eig_general<T: Scalar>(m: &DMatrix<T>) -> Result<EigenDecomposition> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(m, "eigen input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(EigenDecomposition {
            values: vec![],
            vectors: DMatrix::zeros(0, 0),
            condition: 1.0,
        });
    }
    let mut values = T::schur_eigenvalues(m.clone()).ok_or(Error::NoConvergence("schur"))?;
    values.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let mc = to_complex(m);
    let mut vectors = DMatrix::<C64>::zeros(n, n);
    for (k, &lam) in values.iter().enumerate() {
        let mut shifted = mc.clone();
        for i in 0..n {
            shifted[(i, i)] -= lam;
        }
        // The right singular vector of the smallest singular value spans the
        // (numerical) null space of m - λ.
        let dec = svd(&shifted)?;
        vectors.set_column(k, &dec.v.column(n - 1));
    }
    let sv = svd(&vectors)?.singular_values;
    let condition = if sv[n - 1] > 0.0 {
        sv[0] / sv[n - 1]
    } else {
        f64::INFINITY
    };
    Ok(EigenDecomposition {
        values,
        vectors,
        condition,
    })
}

/// Hermitian eigendecomposition, eigenvalues descending.
pub fn eigh<T: Scalar>(m: &DMatrix<T>) -> Result<(DVector<f64>, DMatrix<T>)> {
    ensure_finite(m, "hermitian eigen input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let dec =
        SymmetricEigen::try_new(m.clone(), f64::EPSILON, MAX_SWEEPS).ok_or(Error::NoConvergence("symmetric eigen"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| dec.eigenvalues[j].total_cmp(&dec.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| dec.eigenvalues[k]));
    let vectors = DMatrix::from_fn(n, n, |i, k| dec.eigenvectors[(i, order[k])]);
    Ok((values, vectors))
}

// ---------------------------------------------------------------------------
// Matrix-free linear maps

/// A linear map on `T^dim`.
pub trait LinearMap<T: Scalar> {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T], y: &mut [T]);
}

impl<T: Scalar> LinearMap<T> for DMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        let out = self * DVector::from_column_slice(x);
        y.copy_from_slice(out.as_slice());
    }
}

/// Adapts a closure `(x, y) ↦ y = map(x)` into a [`LinearMap`].
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F> FnMap<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T: Scalar, F: Fn(&[T], &mut [T])> LinearMap<T> for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        (self.f)(x, y)
    }
}

#[derive(Clone, Debug)]
pub struct EigenOptions<T> {
    /// Map is Hermitian (real symmetric for `f64`).
    pub hermitian: bool,
    /// Residual target relative to |λ|.
    pub tol: f64,
    pub krylov_dim: usize,
    pub max_restarts: usize,
    /// Starting vector; all-ones when absent.
    pub start: Option<Vec<T>>,
}

impl<T> EigenOptions<T> {
    pub fn new(hermitian: bool) -> Self {
        Self {
            hermitian,
            tol: 1e-10,
            krylov_dim: 40,
            max_restarts: 400,
            start: None,
        }
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn start(mut self, start: Vec<T>) -> Self {
        self.start = Some(start);
        self
    }
}

#[derive(Clone, Debug)]
pub struct LeadingEigenpair<T: Scalar> {
    pub value: T,
    /// Unit 2-norm.
    pub vector: Vec<T>,
    /// ‖map(v) − λv‖ measured by a final application.
    pub residual: f64,
    pub applications: usize,
}

fn norm<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.modulus_squared()).sum::<f64>().sqrt()
}

fn dot_conj<T: Scalar>(a: &[T], b: &[T]) -> T {
    // <a|b> = Σ conj(a) b
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + x.conjugate() * *y)
}

/// Ritz values (descending magnitude) and vectors of the leading `size`
/// block of an Arnoldi Hessenberg matrix.
fn ritz_pairs<T: Scalar>(h: &DMatrix<T>, size: usize, hermitian: bool) -> Result<(Vec<C64>, DMatrix<C64>)> {
    let hk = h.view((0, 0), (size, size)).into_owned();
    if hermitian {
        let sym = (&hk + hk.adjoint()).scale(0.5);
        let (vals, vecs) = eigh(&sym)?;
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()));
        let values = order.iter().map(|&k| C64::new(vals[k], 0.0)).collect();
        let vectors = DMatrix::from_fn(size, size, |i, k| vecs[(i, order[k])].to_c64());
        Ok((values, vectors))
    } else {
        let dec = eig_general(&hk)?;
        Ok((dec.values, dec.vectors))
    }
}

/// Dominant-magnitude eigenpair of a linear map by restarted Arnoldi.
///
/// Starts from the all-ones vector unless `opts.start` is given, so repeated
/// calls give identical results.
pub fn leading_eigenpair<T: Scalar, M: LinearMap<T> + ?Sized>(
    map: &M,
    opts: &EigenOptions<T>,
) -> Result<LeadingEigenpair<T>> {
    let n = map.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("leading_eigenpair on an empty map".into()));
    }
    let mut v: Vec<T> = match &opts.start {
        Some(s) if s.len() == n && norm(s) > 0.0 => s.clone(),
        Some(s) if s.len() != n => {
            return Err(Error::ShapeMismatch(format!(
                "start vector has length {}, map dimension is {n}",
                s.len()
            )))
        }
        _ => vec![T::one(); n],
    };
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x = x.unscale(nv));

    let m = opts.krylov_dim.max(2).min(n);
    let mut applications = 0usize;
    let mut w = vec![T::zero(); n];
    for _restart in 0..opts.max_restarts.max(1) {
        let mut basis: Vec<Vec<T>> = vec![v.clone()];
        let mut h = DMatrix::<T>::zeros(m + 1, m);
        let mut size = m;
        let mut exhausted = false;
        for j in 0..m {
            map.apply(&basis[j], &mut w);
            applications += 1;
            // Two passes of modified Gram-Schmidt.
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let c = dot_conj(q, &w);
                    h[(i, j)] += c;
                    w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * *y);
                }
            }
            let beta = norm(&w);
            h[(j + 1, j)] = T::from_real(beta);
            let scale = h
                .view((0, 0), (j + 1, j + 1))
                .iter()
                .fold(0.0f64, |a, x| a.max(x.modulus()));
            if beta <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                size = j + 1;
                exhausted = true;
                break;
            }
            // Early exit once the Ritz estimate is converged, so warm starts
            // pay only a few applications.
            if j >= 1 && j + 1 < m {
                let (vals, vecs) = ritz_pairs(&h, j + 1, opts.hermitian)?;
                if beta * vecs[(j, 0)].norm() <= opts.tol * vals[0].norm().max(f64::MIN_POSITIVE) {
                    size = j + 1;
                    break;
                }
            }
            if j + 1 < m {
                basis.push(w.iter().map(|x| x.unscale(beta)).collect());
            }
        }
        let (ritz_values, ritz_vectors) = ritz_pairs(&h, size, opts.hermitian)?;
        let theta = ritz_values[0];
        let y = ritz_vectors.column(0);
        let beta_last = if exhausted || size == n {
            0.0
        } else {
            h[(size, size - 1)].modulus()
        };
        let estimate = beta_last * y[size - 1].norm();
        let converged_estimate = estimate <= opts.tol * theta.norm().max(f64::MIN_POSITIVE);
        if ritz_values.len() > 1 {
            let second = ritz_values[1];
            let y2 = ritz_vectors.column(1);
            let est2 = beta_last * y2[size - 1].norm();
            let close = (theta.norm() - second.norm()).abs() <= 1e-12 * theta.norm();
            let distinct = (theta - second).norm() > 1e-12 * theta.norm();
            if close && distinct && converged_estimate && est2 <= opts.tol * second.norm() {
                return Err(Error::AmbiguousDominant {
                    first: theta.norm(),
                    second: second.norm(),
                });
            }
        }
        // Ritz vector in the original space.
        let mut u = vec![C64::new(0.0, 0.0); n];
        for (k, q) in basis.iter().enumerate().take(size) {
            let c = y[k];
            u.iter_mut().zip(q).for_each(|(x, qi)| *x += c * qi.to_c64());
        }
        let (u_t, theta_t) = match T::KIND {
            ScalarKind::Complex => (
                u.iter().map(|&z| T::from_c64(z)).collect::<Vec<T>>(),
                T::from_c64(theta),
            ),
            ScalarKind::Real => {
                // Fix the free phase so the vector is as real as possible.
                let pivot = u.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
                let phase = if pivot.norm() > 0.0 {
                    pivot.conj() / pivot.norm()
                } else {
                    C64::new(1.0, 0.0)
                };
                (u.iter().map(|&z| T::from_c64(z * phase)).collect(), T::from_c64(theta))
            }
        };
        let un = norm(&u_t);
        let u_t: Vec<T> = u_t.iter().map(|x| x.unscale(un)).collect();
        if converged_estimate || exhausted || size == n {
            map.apply(&u_t, &mut w);
            applications += 1;
            let residual = w
                .iter()
                .zip(&u_t)
                .map(|(a, b)| (*a - theta_t * *b).modulus_squared())
                .sum::<f64>()
                .sqrt();
            if T::KIND == ScalarKind::Real && theta.im.abs() > 1e-12 * theta.norm() {
                if residual <= opts.tol * theta.norm() {
                    return Err(Error::AmbiguousDominant {
                        first: theta.norm(),
                        second: theta.norm(),
                    });
                }
            } else if residual <= opts.tol * theta_t.modulus().max(f64::MIN_POSITIVE)
                || theta_t.modulus() == 0.0 && residual == 0.0
            {
                return Ok(LeadingEigenpair {
                    value: theta_t,
                    vector: u_t,
                    residual,
                    applications,
                });
            }
        }
        v = u_t;
    }
    Err(Error::NoConvergence("leading_eigenpair"))
}

/// Restarted GMRES for `map(x) = b`. Returns the solution and the final
/// relative residual.
pub fn gmres<T: Scalar, M: LinearMap<T> + ?Sized>(
    map: &M,
    b: &[T],
    restart: usize,
    max_restarts: usize,
    tol: f64,
) -> Result<(Vec<T>, f64)> {
    let n = map.dim();
    if b.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "gmres: rhs length {} vs dimension {n}",
            b.len()
        )));
    }
    let bnorm = norm(b);
    let mut x = vec![T::zero(); n];
    if bnorm == 0.0 {
        return Ok((x, 0.0));
    }
    let m = restart.max(1).min(n);
    let mut w = vec![T::zero(); n];
    let mut rel = 1.0;
    for _ in 0..max_restarts.max(1) {
        map.apply(&x, &mut w);
        let r: Vec<T> = b.iter().zip(&w).map(|(bi, wi)| *bi - *wi).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= tol {
            return Ok((x, rel));
        }
        let mut basis = vec![r.iter().map(|v| v.unscale(beta)).collect::<Vec<T>>()];
        let mut h = DMatrix::<T>::zeros(m + 1, m);
        let mut size = 0;
        for j in 0..m {
            map.apply(&basis[j], &mut w);
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let c = dot_conj(q, &w);
                    h[(i, j)] += c;
                    w.iter_mut().zip(q).for_each(|(a, qi)| *a -= c * *qi);
                }
            }
            let hn = norm(&w);
            h[(j + 1, j)] = T::from_real(hn);
            size = j + 1;
            // Small least-squares problem: min ‖β e1 − H y‖.
            let hk = h.view((0, 0), (size + 1, size)).into_owned();
            let mut rhs = DMatrix::<T>::zeros(size + 1, 1);
            rhs[(0, 0)] = T::from_real(beta);
            let y = solve_least_squares(&hk, &rhs)?;
            let res = (&rhs - &hk * &y).column(0).norm();
            if res / bnorm <= tol || hn <= 1e-300 || j + 1 == m {
                for (k, q) in basis.iter().enumerate().take(size) {
                    let c = y[(k, 0)];
                    x.iter_mut().zip(q).for_each(|(a, qi)| *a += c * *qi);
                }
                break;
            }
            basis.push(w.iter().map(|v| v.unscale(hn)).collect());
        }
        let _ = size;
    }
    map.apply(&x, &mut w);
    let r: f64 = b
        .iter()
        .zip(&w)
        .map(|(bi, wi)| (*bi - *wi).modulus_squared())
        .sum::<f64>()
        .sqrt();
    rel = rel.min(r / bnorm);
    if r / bnorm <= tol {
        Ok((x, r / bnorm))
    } else {
        let _ = rel;
        Err(Error::NoConvergence("gmres"))
    }
}

/// Dense solve `m · x = b` via LU; `None` when singular.
pub fn solve_dense<T: Scalar>(m: &DMatrix<T>, b: &DVector<T>) -> Option<DVector<T>> {
    m.clone().lu().solve(b)
}
