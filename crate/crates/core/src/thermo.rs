//! Thermodynamic-limit expectation values of Hamiltonian MPOs in uniform
//! MPS, read off the eigenvalue-1 Jordan structure of the mixed transfer
//! operators
//!
//! `E_H    = Σ A_i ⊗ B_j ⊗ Ā_k ⟨k|X_j|i⟩`,
//! `E_{H²} = Σ A_i ⊗ B_j ⊗ B̄_k ⊗ Ā_l ⟨l|X_k†X_j|i⟩`.
//!
//! Vectors are flattened with the state ket index slowest and the state bra
//! index fastest: `(a, h, a′) ↦ (a·m + h)·D + a′` where `m` is the MPO layer
//! dimension (`D_H` or `D_H²`). Left vectors pair with right vectors through
//! the bilinear product `Σ uᵢ vᵢ`.
//!
//! For `E_H`, the right eigenvector is `x_r ⊗ |start⟩` and the left one is
//! `x_l ⊗ |stop⟩`. Chains are built from scaled generalized vectors
//! `p = e·q̃`, which stay well defined when the energy `e` vanishes and the
//! Jordan block degenerates into two eigenvectors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ham_mpo::HamiltonianMpo;
use crate::imps::{FixedPoints, UniformMps};
use crate::linalg::{gmres, solve_dense, FnMap, Scalar, C64};

/// Above this many unknowns the bordered systems are solved with GMRES.
const DENSE_LIMIT: usize = 1600;
const NORMALIZATION_TOL: f64 = 1e-10;
const SOLVE_TOL: f64 = 1e-8;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Nonzero entries `(h, g, W_{ki}[h, g])` of one operator block.
type SparseBlock = Vec<(usize, usize, C64)>;

/// `Σ_{i,k} A_i ⊗ W_{ki} ⊗ Ā_k` with the middle layer stored sparsely.
struct Transfer {
    a: Vec<DMatrix<C64>>,
    mid: usize,
    /// `(k, i, entries of W_{ki})`
    blocks: Vec<(usize, usize, SparseBlock)>,
}

impl Transfer {
    fn new(a: &[DMatrix<C64>], layer: &[Vec<DMatrix<C64>>]) -> Self {
        let mid = layer[0][0].nrows();
        let mut blocks = Vec::new();
        for (k, row) in layer.iter().enumerate() {
            for (i, w) in row.iter().enumerate() {
                let entries: Vec<(usize, usize, C64)> = (0..mid)
                    .flat_map(|h| (0..mid).map(move |g| (h, g)))
                    .filter(|&(h, g)| w[(h, g)] != zero())
                    .map(|(h, g)| (h, g, w[(h, g)]))
                    .collect();
                if !entries.is_empty() {
                    blocks.push((k, i, entries));
                }
            }
        }
        Self {
            a: a.to_vec(),
            mid,
            blocks,
        }
    }

    fn bond(&self) -> usize {
        self.a[0].nrows()
    }

    fn dim(&self) -> usize {
        self.bond() * self.bond() * self.mid
    }

    fn slice(&self, v: &[C64], m: usize) -> DMatrix<C64> {
        let d = self.bond();
        DMatrix::from_fn(d, d, |a, b| v[(a * self.mid + m) * d + b])
    }

    fn add_slice(&self, out: &mut [C64], m: usize, s: &DMatrix<C64>, w: C64) {
        let d = self.bond();
        for a in 0..d {
            for b in 0..d {
                out[(a * self.mid + m) * d + b] += w * s[(a, b)];
            }
        }
    }

    /// `E v`: slice `h` of the output is `Σ W_{ki}[h,g] A_i V_g A_k†`.
    fn apply(&self, v: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|x| *x = zero());
        for (k, i, entries) in &self.blocks {
            let (ai, ak) = (&self.a[*i], self.a[*k].adjoint());
            let mut cache: Vec<Option<DMatrix<C64>>> = vec![None; self.mid];
            for &(h, g, w) in entries {
                let y = cache[g].get_or_insert_with(|| ai * self.slice(v, g) * &ak);
                let y = y.clone();
                self.add_slice(out, h, &y, w);
            }
        }
    }

    /// `Eᵀ u`: slice `g` of the output is `Σ W_{ki}[h,g] A_iᵀ U_h Ā_k`.
    fn apply_transpose(&self, u: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|x| *x = zero());
        for (k, i, entries) in &self.blocks {
            let (ai, ak) = (self.a[*i].transpose(), self.a[*k].conjugate());
            let mut cache: Vec<Option<DMatrix<C64>>> = vec![None; self.mid];
            for &(h, g, w) in entries {
                let y = cache[h].get_or_insert_with(|| &ai * self.slice(u, h) * &ak);
                let y = y.clone();
                self.add_slice(out, g, &y, w);
            }
        }
    }

    fn dense(&self) -> DMatrix<C64> {
        let n = self.dim();
        let mut e = DMatrix::zeros(n, n);
        for (k, i, entries) in &self.blocks {
            let mut w = DMatrix::zeros(self.mid, self.mid);
            for &(h, g, x) in entries {
                w[(h, g)] = x;
            }
            e += self.a[*i].kronecker(&w).kronecker(&self.a[*k].conjugate());
        }
        e
    }

    /// Solves `[[E − 1, C], [Rᵀ, 0]] [x; s] = [top; bottom]` (or the same
    /// with `Eᵀ`). Returns `(x, s)`.
    fn bordered_solve(
        &self,
        transpose: bool,
        cols: &[Vec<C64>],
        rows: &[Vec<C64>],
        top: &[C64],
        bottom: &[C64],
    ) -> Result<(Vec<C64>, Vec<C64>)> {
        let n = self.dim();
        let (nc, nr) = (cols.len(), rows.len());
        if nc != nr || bottom.len() != nr || top.len() != n {
            return Err(Error::ShapeMismatch("bordered system is not square".into()));
        }
        let size = n + nc;
        let rhs: Vec<C64> = top.iter().chain(bottom).copied().collect();
        let sol = if size <= DENSE_LIMIT {
            let mut k = DMatrix::<C64>::zeros(size, size);
            let e = self.dense();
            let e = if transpose { e.transpose() } else { e };
            k.view_mut((0, 0), (n, n)).copy_from(&e);
            for i in 0..n {
                k[(i, i)] -= C64::new(1.0, 0.0);
            }
            for (j, c) in cols.iter().enumerate() {
                for i in 0..n {
                    k[(i, n + j)] = c[i];
                }
            }
            for (j, r) in rows.iter().enumerate() {
                for i in 0..n {
                    k[(n + j, i)] = r[i];
                }
            }
            let x = solve_dense(&k, &DVector::from_vec(rhs.clone()))
                .ok_or(Error::JordanStructure("bordered transfer system is singular".into()))?;
            x.iter().copied().collect::<Vec<C64>>()
        } else {
            let map = FnMap::new(size, |x: &[C64], y: &mut [C64]| {
                let (head, tail) = y.split_at_mut(n);
                if transpose {
                    self.apply_transpose(&x[..n], head);
                } else {
                    self.apply(&x[..n], head);
                }
                for i in 0..n {
                    head[i] -= x[i];
                }
                for (j, c) in cols.iter().enumerate() {
                    let s = x[n + j];
                    head.iter_mut().zip(c).for_each(|(h, ci)| *h += s * ci);
                }
                for (j, r) in rows.iter().enumerate() {
                    tail[j] = dot(r, &x[..n]);
                }
            });
            gmres(&map, &rhs, 120, 400, 1e-13)?.0
        };
        // Independent residual check of the solve.
        let mut ex = vec![zero(); n];
        if transpose {
            self.apply_transpose(&sol[..n], &mut ex);
        } else {
            self.apply(&sol[..n], &mut ex);
        }
        let mut res = 0.0;
        for i in 0..n {
            let mut v = ex[i] - sol[i] - top[i];
            for (j, c) in cols.iter().enumerate() {
                v += sol[n + j] * c[i];
            }
            res += v.norm_sqr();
        }
        let scale = norm(&sol[..n]).max(norm(top)).max(1.0);
        if res.sqrt() > SOLVE_TOL * scale {
            return Err(Error::NoConvergence("bordered transfer solve"));
        }
        Ok((sol[..n].to_vec(), sol[n..].to_vec()))
    }

    /// Top vector of a scaled chain: solves `(E − 1)p = Σ c_j lower_j`
    /// with `gauge_i · p = 0` and `norm · p = 1`. `border` must pair to a
    /// nonzero value with the eigenvalue-1 left eigenvector missed by
    /// `lower`; its multiplier is checked to vanish.
    fn chain_top(
        &self,
        transpose: bool,
        lower: &[Vec<C64>],
        gauges: &[Vec<C64>],
        normalize: &[C64],
        border: &[C64],
    ) -> Result<(Vec<C64>, Vec<C64>)> {
        let mut cols: Vec<Vec<C64>> = lower.iter().map(|l| l.iter().map(|x| -x).collect()).collect();
        cols.push(border.to_vec());
        let mut rows: Vec<Vec<C64>> = gauges.to_vec();
        rows.push(normalize.to_vec());
        let mut bottom = vec![zero(); rows.len()];
        *bottom.last_mut().unwrap() = C64::new(1.0, 0.0);
        let (p, mut extra) = self.bordered_solve(transpose, &cols, &rows, &vec![zero(); self.dim()], &bottom)?;
        let s = extra.pop().unwrap();
        if s.norm() > SOLVE_TOL * norm(&p).max(1.0) {
            return Err(Error::JordanStructure(format!(
                "eigenvalue-1 block is larger than the marker structure allows (border weight {:.3e})",
                s.norm()
            )));
        }
        Ok((p, extra))
    }
}

/// `W_{ki} = Σ_j ⟨k|X_j|i⟩ B_j`, or `Σ_j ⟨k|X_j†|i⟩ B̄_j` for the bra copy.
fn layer(h: &HamiltonianMpo, adjoint: bool) -> Vec<Vec<DMatrix<C64>>> {
    let d = h.phys_dim();
    let dh = h.bond_dim();
    (0..d)
        .map(|k| {
            (0..d)
                .map(|i| {
                    let mut w = DMatrix::zeros(dh, dh);
                    for (x, b) in h.op_basis().iter().zip(h.site_matrices()) {
                        if adjoint {
                            w += b.conjugate() * x[(i, k)].conj();
                        } else {
                            w += b * x[(k, i)];
                        }
                    }
                    w
                })
                .collect()
        })
        .collect()
}

/// `W_{li} = Σ_{jk} ⟨l|X_k†X_j|i⟩ B_j ⊗ B̄_k`.
fn layer_squared(h: &HamiltonianMpo) -> Vec<Vec<DMatrix<C64>>> {
    let d = h.phys_dim();
    let dh = h.bond_dim();
    let ops = h.op_basis();
    let mats = h.site_matrices();
    let mut out = vec![vec![DMatrix::zeros(dh * dh, dh * dh); d]; d];
    for (xj, bj) in ops.iter().zip(mats) {
        for (xk, bk) in ops.iter().zip(mats) {
            let prod = xk.adjoint() * xj;
            if prod.iter().all(|z| *z == zero()) {
                continue;
            }
            let kron = bj.kronecker(&bk.conjugate());
            for (l, row) in out.iter_mut().enumerate() {
                for (i, w) in row.iter_mut().enumerate() {
                    let c = prod[(l, i)];
                    if c != zero() {
                        *w += &kron * c;
                    }
                }
            }
        }
    }
    out
}

/// `x` placed at layer index `m`.
fn place(x: &DMatrix<C64>, mid: usize, m: usize) -> Vec<C64> {
    let d = x.nrows();
    let mut v = vec![zero(); d * d * mid];
    for a in 0..d {
        for b in 0..d {
            v[(a * mid + m) * d + b] = x[(a, b)];
        }
    }
    v
}

/// Lifts an `E_H` vector into the `E_{H²}` space, with the other MPO copy
/// pinned to `fixed`. `ket = true` keeps the vector on the ket copy.
fn lift(v: &[C64], d: usize, dh: usize, fixed: usize, ket: bool) -> Vec<C64> {
    let mut out = vec![zero(); d * d * dh * dh];
    for a in 0..d {
        for h in 0..dh {
            for b in 0..d {
                let (hk, hb) = if ket { (h, fixed) } else { (fixed, h) };
                out[((a * dh + hk) * dh + hb) * d + b] = v[(a * dh + h) * d + b];
            }
        }
    }
    out
}

fn checked_fixed_points(mps: &UniformMps<C64>, h: &HamiltonianMpo) -> Result<FixedPoints<C64>> {
    if mps.phys_dim() != h.phys_dim() {
        return Err(Error::ShapeMismatch(format!(
            "state has physical dimension {}, MPO {}",
            mps.phys_dim(),
            h.phys_dim()
        )));
    }
    if let Some(ch) = h.channels().iter().find(|ch| ch.decay.norm() >= 1.0) {
        return Err(Error::JordanStructure(format!(
            "decay channel λ = {} leaves the unit disk; E_H has eigenvalue-1 blocks beyond the markers",
            ch.decay
        )));
    }
    let fp = mps.fixed_points()?;
    if (fp.value - C64::new(1.0, 0.0)).norm() > NORMALIZATION_TOL {
        return Err(Error::InvalidArgument(format!(
            "state is not normalized: leading transfer eigenvalue {}",
            fp.value
        )));
    }
    Ok(fp)
}

/// Eigenvalue-1 structure of `E_H` and the extracted energy density.
#[derive(Clone, Debug)]
pub struct JordanEvaluation {
    pub d0: C64,
    pub q_r: Vec<C64>,
    pub q_l: Vec<C64>,
    /// Scaled generalized vectors `p = e·q̃`, gauged by `⟨L|p_r⟩ = 0`,
    /// `⟨p_l|R⟩ = 0` and normalized by `⟨q_l|p_r⟩ = ⟨p_l|q_r⟩ = 1`.
    pub p_r: Vec<C64>,
    pub p_l: Vec<C64>,
    /// Energy density from the right and left scaled chains.
    pub energy_right: C64,
    pub energy_left: C64,
    /// Present when the Jordan block is nondegenerate (`e ≠ 0`).
    pub block: Option<JordanBlock>,
    pub energy: f64,
}

/// Generalized eigenvectors from `(E_H − d₀)q̃_r = q_r`,
/// `q̃_lᵀ(E_H − d₀) = q_lᵀ`, and `Q = (Q_lᵀ Q_r)⁻¹`.
#[derive(Clone, Debug)]
pub struct JordanBlock {
    pub qt_r: Vec<C64>,
    pub qt_l: Vec<C64>,
    pub q: DMatrix<C64>,
}

impl JordanBlock {
    pub fn q12(&self) -> C64 {
        self.q[(0, 1)]
    }

    pub fn q21(&self) -> C64 {
        self.q[(1, 0)]
    }

    /// `⟨q̃_l|q_r⟩`.
    pub fn left_overlap(&self, q_r: &[C64]) -> C64 {
        dot(&self.qt_l, q_r)
    }

    /// `−1/⟨q̃_l|q_r⟩`. Since `⟨q̃_l|q_r⟩ = 1/Q₁₂`, this is `−Q₁₂`.
    pub fn negative_inverse_overlap(&self, q_r: &[C64]) -> C64 {
        -C64::new(1.0, 0.0) / self.left_overlap(q_r)
    }
}

struct ChainParts {
    t: Transfer,
    fp: FixedPoints<C64>,
    l: Vec<C64>,
    r: Vec<C64>,
    q_r: Vec<C64>,
    q_l: Vec<C64>,
    p_r: Vec<C64>,
    p_l: Vec<C64>,
    e_r: C64,
    e_l: C64,
}

fn chain(mps: &UniformMps<C64>, h: &HamiltonianMpo, adjoint: bool) -> Result<ChainParts> {
    let fp = checked_fixed_points(mps, h)?;
    let t = Transfer::new(mps.matrices(), &layer(h, adjoint));
    let dh = h.bond_dim();
    let (start, stop) = (h.start_index(), h.stop_index());
    let l = place(&fp.left, dh, start);
    let r = place(&fp.right, dh, stop);
    let q_r = place(&fp.right, dh, start);
    let q_l = place(&fp.left, dh, stop);
    let (p_r, e_r) = t.chain_top(false, std::slice::from_ref(&q_r), std::slice::from_ref(&l), &q_l, &r)?;
    let (p_l, e_l) = t.chain_top(true, std::slice::from_ref(&q_l), std::slice::from_ref(&r), &q_r, &l)?;
    Ok(ChainParts {
        t,
        fp,
        l,
        r,
        q_r,
        q_l,
        p_r,
        p_l,
        e_r: e_r[0],
        e_l: e_l[0],
    })
}

/// Energy density of `h` in the normalized state `mps`.
pub fn energy_density<T: Scalar>(mps: &UniformMps<T>, h: &HamiltonianMpo) -> Result<(f64, JordanEvaluation)> {
    let c = chain(&mps.to_complex(), h, false)?;
    let scale = c.e_r.norm().max(1.0);
    if (c.e_r - c.e_l).norm() > SOLVE_TOL * scale {
        return Err(Error::JordanStructure(format!(
            "left and right chains disagree: {} vs {}",
            c.e_r, c.e_l
        )));
    }
    let block = if c.e_r.norm() > 1e-9 {
        let (qt_r, _) = c.t.bordered_solve(
            false,
            std::slice::from_ref(&c.r),
            std::slice::from_ref(&c.l),
            &c.q_r,
            &[zero()],
        )?;
        let (qt_l, _) = c.t.bordered_solve(
            true,
            std::slice::from_ref(&c.l),
            std::slice::from_ref(&c.r),
            &c.q_l,
            &[zero()],
        )?;
        let gram = DMatrix::from_row_slice(
            2,
            2,
            &[
                dot(&c.q_l, &c.q_r),
                dot(&c.q_l, &qt_r),
                dot(&qt_l, &c.q_r),
                dot(&qt_l, &qt_r),
            ],
        );
        let q = gram
            .try_inverse()
            .ok_or(Error::JordanStructure("Q_lᵀ Q_r is singular".into()))?;
        Some(JordanBlock { qt_r, qt_l, q })
    } else {
        None
    };
    let e = match &block {
        Some(b) => {
            let q12 = b.q12();
            if (q12 - c.e_r).norm() > SOLVE_TOL * scale {
                return Err(Error::JordanStructure(format!(
                    "Q₁₂ = {q12} disagrees with the scaled chain value {}",
                    c.e_r
                )));
            }
            q12
        }
        None => c.e_r,
    };
    Ok((
        e.re,
        JordanEvaluation {
            d0: c.fp.value,
            q_r: c.q_r,
            q_l: c.q_l,
            p_r: c.p_r,
            p_l: c.p_l,
            energy_right: c.e_r,
            energy_left: c.e_l,
            block,
            energy: e.re,
        },
    ))
}

/// `⟨L| E_H^N |R⟩`, the expectation of the `n`-site window operator.
pub fn finite_window_expectation<T: Scalar>(mps: &UniformMps<T>, h: &HamiltonianMpo, n: usize) -> Result<C64> {
    let mps = mps.to_complex();
    let fp = mps.fixed_points()?;
    let t = Transfer::new(mps.matrices(), &layer(h, false));
    let dh = h.bond_dim();
    let l = place(&fp.left, dh, h.start_index());
    let mut v = place(&fp.right, dh, h.stop_index());
    let mut w = vec![zero(); v.len()];
    for _ in 0..n {
        t.apply(&v, &mut w);
        std::mem::swap(&mut v, &mut w);
    }
    Ok(dot(&l, &v))
}

/// `⟨L| E_{H²}^N |R⟩ = ⟨O_N† O_N⟩` for the `n`-site window operator.
pub fn finite_window_second_moment<T: Scalar>(mps: &UniformMps<T>, h: &HamiltonianMpo, n: usize) -> Result<C64> {
    let mps = mps.to_complex();
    let fp = mps.fixed_points()?;
    let t = Transfer::new(mps.matrices(), &layer_squared(h));
    let dh = h.bond_dim();
    let (start, stop) = (h.start_index(), h.stop_index());
    let l = place(&fp.left, dh * dh, start * dh + start);
    let mut v = place(&fp.right, dh * dh, stop * dh + stop);
    let mut w = vec![zero(); v.len()];
    for _ in 0..n {
        t.apply(&v, &mut w);
        std::mem::swap(&mut v, &mut w);
    }
    Ok(dot(&l, &v))
}

/// Asymptotic `⟨(H_N − N·shift)²⟩ ≃ c0 + c1·N + c2·N(N−1)/2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarianceEvaluation {
    pub c0: f64,
    /// Variance density when `shift` equals the energy density.
    pub c1: f64,
    pub c2: f64,
    /// Energy density of the shifted Hamiltonian (`e − shift`).
    pub shifted_energy: f64,
    /// `|⟨L₂|w_r⟩| + |⟨w_l|R₂⟩|` for the antisymmetric eigenvector; zero
    /// when it does not contribute.
    pub antisymmetric_weight: f64,
}

/// Variance coefficients of `h − shift` per site.
///
/// The eigenvalue-1 generalized eigenspace of `E_{H²}` is spanned by
/// `x_r⊗|start,start⟩`, the ket and bra `E_H` chains lifted with the other
/// copy at `start`, and a top vector with `x_r` in the `(stop, stop)` block.
pub fn variance_density<T: Scalar>(mps: &UniformMps<T>, h: &HamiltonianMpo, shift: f64) -> Result<VarianceEvaluation> {
    let mps = mps.to_complex();
    let hs = h.with_field_shift(shift);
    let ket = chain(&mps, &hs, false)?;
    let bra = chain(&mps, &hs, true)?;
    let fp = &ket.fp;
    let d = mps.bond_dim();
    let dh = hs.bond_dim();
    let (start, stop) = (hs.start_index(), hs.stop_index());
    let t = Transfer::new(mps.matrices(), &layer_squared(&hs));
    let at = |x: &DMatrix<C64>, hk: usize, hb: usize| place(x, dh * dh, hk * dh + hb);

    let l2 = at(&fp.left, start, start);
    let r2 = at(&fp.right, stop, stop);
    // right basis
    let r1 = at(&fp.right, start, start);
    let rk = lift(&ket.p_r, d, dh, start, true);
    let rb = lift(&bra.p_r, d, dh, start, false);
    let gauges_r = vec![l2.clone(), at(&fp.left, stop, start), at(&fp.left, start, stop)];
    let q_l2 = at(&fp.left, stop, stop);
    let (r4, _) = t.chain_top(false, &[r1.clone(), rk.clone(), rb.clone()], &gauges_r, &q_l2, &r2)?;
    // left basis
    let l1 = q_l2.clone();
    let lk = lift(&ket.p_l, d, dh, stop, true);
    let lb = lift(&bra.p_l, d, dh, stop, false);
    let gauges_l = vec![r2.clone(), at(&fp.right, start, stop), at(&fp.right, stop, start)];
    let (l4, _) = t.chain_top(true, &[l1.clone(), lk.clone(), lb.clone()], &gauges_l, &r1, &l2)?;

    let right = [r1, rk, rb, r4];
    let left = [l1, lk, lb, l4];
    // Action of E_{H²} − 1 on the right basis, in that basis: E r = r M.
    let mut nil = DMatrix::<C64>::zeros(4, 4);
    let gram = DMatrix::from_fn(4, 4, |i, j| dot(&left[i], &right[j]));
    let gram_inv = gram.clone().try_inverse().ok_or(Error::JordanStructure(
        "left and right E_{H²} chains are not dual".into(),
    ))?;
    let mut ev = vec![zero(); t.dim()];
    for (j, rj) in right.iter().enumerate() {
        t.apply(rj, &mut ev);
        let diff: Vec<C64> = ev.iter().zip(rj).map(|(a, b)| a - b).collect();
        let proj = DVector::from_iterator(4, left.iter().map(|li| dot(li, &diff)));
        let coeff = &gram_inv * proj;
        // the basis must be invariant: E r_j − r_j lies in its span
        let mut resid = diff.clone();
        for (k, rk) in right.iter().enumerate() {
            resid.iter_mut().zip(rk).for_each(|(x, y)| *x -= coeff[k] * y);
        }
        if norm(&resid) > SOLVE_TOL * norm(&diff).max(1.0) {
            return Err(Error::JordanStructure(format!(
                "E_{{H²}} eigenvalue-1 space exceeds rank 3 (residual {:.3e})",
                norm(&resid)
            )));
        }
        nil.set_column(j, &coeff);
    }
    let a = DVector::from_iterator(4, right.iter().map(|r| dot(&l2, r)));
    let b = DVector::from_iterator(4, left.iter().map(|l| dot(l, &r2)));
    let proj_b = &gram_inv * b;
    let c0 = a.dot(&proj_b);
    let c1 = a.dot(&(&nil * &proj_b));
    let c2 = a.dot(&(&nil * &nil * &proj_b));
    // antisymmetric eigenvector ē_b·r_k − e·r_b and its left partner
    let w_r: Vec<C64> = right[1]
        .iter()
        .zip(&right[2])
        .map(|(x, y)| bra.e_r * x - ket.e_r * y)
        .collect();
    let w_l: Vec<C64> = left[1]
        .iter()
        .zip(&left[2])
        .map(|(x, y)| bra.e_l * x - ket.e_l * y)
        .collect();
    let antisymmetric_weight = dot(&l2, &w_r).norm() + dot(&w_l, &r2).norm();
    Ok(VarianceEvaluation {
        c0: c0.re,
        c1: c1.re,
        c2: c2.re,
        shifted_energy: ket.e_r.re,
        antisymmetric_weight,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientRow {
    pub iteration: usize,
    pub energy: f64,
    pub gradient_norm: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct GradientOutcome {
    pub mps: UniformMps<f64>,
    pub energy: f64,
    pub trace: Vec<GradientRow>,
    pub converged: bool,
}

const FD_STEP: f64 = 1e-6;
const LINE_START: f64 = 0.1;
const MAX_HALVINGS: usize = 40;
const GRADIENT_TOL: f64 = 1e-8;

/// Real parametrization of a uniform MPS; symmetric states keep their
/// symmetry by moving `(i, j)` and `(j, i)` together.
struct Params {
    d: usize,
    bond: usize,
    symmetric: bool,
}

impl Params {
    fn pack(&self, mps: &UniformMps<f64>) -> Vec<f64> {
        let mut out = Vec::new();
        for m in mps.matrices() {
            for j in 0..self.bond {
                for i in 0..self.bond {
                    if !self.symmetric || i <= j {
                        out.push(m[(i, j)]);
                    }
                }
            }
        }
        out
    }

    fn unpack(&self, x: &[f64]) -> Result<UniformMps<f64>> {
        let mut it = x.iter();
        let mut mats = Vec::with_capacity(self.d);
        for _ in 0..self.d {
            let mut m = DMatrix::zeros(self.bond, self.bond);
            for j in 0..self.bond {
                for i in 0..self.bond {
                    if !self.symmetric || i <= j {
                        let v = *it.next().expect("parameter count");
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
            }
            mats.push(m);
        }
        UniformMps::new(mats)
    }

    fn energy(&self, x: &[f64], h: &HamiltonianMpo) -> f64 {
        let eval = || -> Result<f64> {
            let (mps, _) = self.unpack(x)?.normalize()?;
            Ok(energy_density(&mps, h)?.0)
        };
        eval().unwrap_or(f64::INFINITY)
    }
}

/// Steepest descent on the energy density with central-difference
/// gradients and a halving line search.
pub fn gradient_optimize(mps0: &UniformMps<f64>, h: &HamiltonianMpo, max_iters: usize) -> Result<GradientOutcome> {
    let params = Params {
        d: mps0.phys_dim(),
        bond: mps0.bond_dim(),
        symmetric: mps0.max_asymmetry() == 0.0,
    };
    let mut x = params.pack(mps0);
    let mut e = params.energy(&x, h);
    if !e.is_finite() {
        // surface the underlying error
        energy_density(&mps0.normalize()?.0, h)?;
        return Err(Error::NonFinite("initial energy"));
    }
    let mut trace = vec![GradientRow {
        iteration: 0,
        energy: e,
        gradient_norm: f64::NAN,
        step: 0.0,
    }];
    let mut converged = false;
    for iteration in 1..=max_iters {
        let mut g = vec![0.0; x.len()];
        for p in 0..x.len() {
            let keep = x[p];
            x[p] = keep + FD_STEP;
            let up = params.energy(&x, h);
            x[p] = keep - FD_STEP;
            let down = params.energy(&x, h);
            x[p] = keep;
            g[p] = (up - down) / (2.0 * FD_STEP);
        }
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !gnorm.is_finite() {
            break;
        }
        if gnorm < GRADIENT_TOL {
            converged = true;
            break;
        }
        let mut step = LINE_START;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let et = params.energy(&trial, h);
            if et < e {
                accepted = Some((trial, et));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, et)) = accepted else {
            break;
        };
        x = trial;
        e = et;
        trace.push(GradientRow {
            iteration,
            energy: e,
            gradient_norm: gnorm,
            step,
        });
    }
    let (mps, _) = params.unpack(&x)?.normalize()?;
    Ok(GradientOutcome {
        mps,
        energy: e,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense;
    use crate::ham_mpo::{build_expdecay_mpo, build_ising_mpo, build_nn_mpo, build_powerlaw_mpo};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    pub(crate) fn random_mps(d: usize, bond: usize, seed: u64, complex: bool) -> UniformMps<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats = (0..d)
            .map(|_| {
                DMatrix::from_fn(bond, bond, |_, _| {
                    let im = if complex { rng.gen_range(-1.0..1.0) } else { 0.0 };
                    C64::new(rng.gen_range(-1.0..1.0), im)
                })
            })
            .collect();
        UniformMps::new(mats).unwrap().normalize().unwrap().0
    }

    fn product(amps: &[f64]) -> UniformMps<f64> {
        UniformMps::product_state(amps).unwrap().normalize().unwrap().0
    }

    /// `⟨ψ|O|ψ⟩` for an `n`-site window by summing amplitude products,
    /// independent of the layered transfer.
    fn dense_window(mps: &UniformMps<C64>, op: &DMatrix<C64>, n: usize) -> C64 {
        let fp = mps.fixed_points().unwrap();
        let d = mps.phys_dim();
        let strings = d.pow(n as u32);
        let prods: Vec<DMatrix<C64>> = (0..strings)
            .map(|s| {
                let mut m = DMatrix::<C64>::identity(mps.bond_dim(), mps.bond_dim());
                for site in 0..n {
                    let digit = (s / d.pow((n - 1 - site) as u32)) % d;
                    m *= &mps.matrices()[digit];
                }
                m
            })
            .collect();
        let k: Vec<DMatrix<C64>> = prods.iter().map(|m| fp.left.transpose() * m * &fp.right).collect();
        let mut total = zero();
        for t in 0..strings {
            for s in 0..strings {
                let o = op[(t, s)];
                if o == zero() {
                    continue;
                }
                let overlap: C64 = prods[t].iter().zip(k[s].iter()).map(|(a, b)| a.conj() * b).sum();
                total += o * overlap;
            }
        }
        total
    }

    fn all_builders() -> Vec<HamiltonianMpo> {
        let x = dense::pauli_x::<C64>();
        let z = dense::pauli_z::<C64>();
        vec![
            build_nn_mpo([0.7, -0.4, 1.1], &(x.clone() * c(0.3) + z.clone() * c(-0.2))).unwrap(),
            build_ising_mpo(-1.0).unwrap(),
            build_expdecay_mpo([1.0, 0.5, -0.8], [0.6, -0.3, 0.8], &(x.clone() * c(-0.5))).unwrap(),
            build_powerlaw_mpo(2.0, 4, 60, &z, &z).unwrap().0,
        ]
    }

    #[test]
    fn product_state_values() {
        let zero_state = product(&[1.0, 0.0]);
        let ising = build_ising_mpo(1.0).unwrap();
        let (e, eval) = energy_density(&zero_state, &ising).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        assert!(eval.block.is_some());
        let plus = product(&[1.0, 1.0]);
        let (e, eval) = energy_density(&plus, &ising).unwrap();
        assert!(e.abs() < 1e-12);
        assert!(eval.block.is_none());
    }

    #[test]
    fn windows_on_product_states() {
        let zero_state = product(&[1.0, 0.0]);
        let ising = build_ising_mpo(1.0).unwrap();
        assert!((finite_window_expectation(&zero_state, &ising, 2).unwrap() - c(1.0)).norm() < 1e-14);
        let field = dense::pauli_x::<C64>() * c(0.5) + dense::pauli_z::<C64>() * c(0.25);
        let h = build_nn_mpo([1.0, 1.0, 1.0], &field).unwrap();
        // one site: only the field
        let v = finite_window_expectation(&zero_state, &h, 1).unwrap();
        assert!((v - c(0.25)).norm() < 1e-14);
    }

    #[test]
    fn fixed_points_are_trivial_for_products() {
        let fp = product(&[1.0, 0.0]).to_complex().fixed_points().unwrap();
        assert!((fp.left[(0, 0)] - c(1.0)).norm() < 1e-14);
        assert!((fp.right[(0, 0)] - c(1.0)).norm() < 1e-14);
    }

    #[test]
    fn window_matches_dense_oracle() {
        for (k, h) in all_builders().iter().enumerate() {
            let mps = random_mps(2, 3, 10 + k as u64, k % 2 == 1);
            for n in [1, 3, 6] {
                let dense_op = h.materialize_finite(n).unwrap();
                let a = finite_window_expectation(&mps, h, n).unwrap();
                let b = dense_window(&mps, &dense_op, n);
                assert!(
                    (a - b).norm() < 1e-10 * b.norm().max(1.0),
                    "builder {k}, n {n}: {a} vs {b}"
                );
                let sq = &dense_op.adjoint() * &dense_op;
                let a2 = finite_window_second_moment(&mps, h, n).unwrap();
                let b2 = dense_window(&mps, &sq, n);
                assert!(
                    (a2 - b2).norm() < 1e-10 * b2.norm().max(1.0),
                    "builder {k}, n {n}: {a2} vs {b2}"
                );
            }
        }
    }

    #[test]
    fn energy_matches_window_slope() {
        for (k, h) in all_builders().iter().enumerate() {
            for bond in [1, 2, 4] {
                let mps = random_mps(2, bond, 100 + 7 * k as u64 + bond as u64, bond == 2);
                let (e, eval) = energy_density(&mps, h).unwrap();
                let n = 300;
                let slope =
                    finite_window_expectation(&mps, h, n + 1).unwrap() - finite_window_expectation(&mps, h, n).unwrap();
                assert!((slope.re - e).abs() < 1e-9, "builder {k}, D {bond}: {e} vs {slope}");
                let block = eval.block.expect("nonzero energy has a Jordan block");
                assert!((block.q12() - c(e)).norm() < 1e-10);
                // Q is symmetric: ⟨q_l|q̃_r⟩ = ⟨q̃_l|q_r⟩
                assert!((block.q12() - block.q21()).norm() < 1e-10);
                assert!((block.left_overlap(&eval.q_r) * c(e) - c(1.0)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn expdecay_slope_at_sixty_sites() {
        let h = build_expdecay_mpo([0.0, 0.0, 1.0], [0.0, 0.0, 0.6], &DMatrix::zeros(2, 2)).unwrap();
        let mps = random_mps(2, 4, 5, false);
        let (e, _) = energy_density(&mps, &h).unwrap();
        let slope = finite_window_expectation(&mps, &h, 61).unwrap() - finite_window_expectation(&mps, &h, 60).unwrap();
        assert!((slope.re - e).abs() < 1e-9);
    }

    #[test]
    fn unnormalized_and_unstable_inputs_are_rejected() {
        let mps = UniformMps::product_state(&[2.0, 0.0]).unwrap();
        assert!(matches!(
            energy_density(&mps, &build_ising_mpo(1.0).unwrap()),
            Err(Error::InvalidArgument(_))
        ));
        let flat = build_expdecay_mpo([0.0, 0.0, 1.0], [0.0, 0.0, 1.0], &DMatrix::zeros(2, 2)).unwrap();
        assert!(matches!(
            energy_density(&product(&[1.0, 0.0]), &flat),
            Err(Error::JordanStructure(_))
        ));
    }

    #[test]
    fn plus_state_under_zz_has_unit_variance() {
        let plus = product(&[1.0, 1.0]);
        let v = variance_density(&plus, &build_ising_mpo(1.0).unwrap(), 0.0).unwrap();
        assert!((v.c1 - 1.0).abs() < 1e-12, "{v:?}");
        assert!(v.c2.abs() < 1e-12);
        assert!((v.c0 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn classical_eigenstate_has_no_variance() {
        let zero_state = product(&[1.0, 0.0]);
        let ising = build_ising_mpo(-1.0).unwrap();
        let v = variance_density(&zero_state, &ising, -1.0).unwrap();
        assert!(v.c1.abs() < 1e-10 && v.c2.abs() < 1e-10, "{v:?}");
    }

    #[test]
    fn variance_coefficients_fit_dense_product_windows() {
        let field = dense::pauli_x::<C64>() * c(-0.6);
        let hams = [
            build_nn_mpo([0.3, 0.0, 1.0], &field).unwrap(),
            build_ising_mpo(0.7).unwrap(),
        ];
        for (k, h) in hams.iter().enumerate() {
            let mps = product(&[0.8, 0.35 + 0.1 * k as f64]);
            let shift = 0.2;
            let v = variance_density(&mps, h, shift).unwrap();
            let hs = h.with_field_shift(shift);
            for n in 4..=8 {
                let op = hs.materialize_finite(n).unwrap();
                let exact = dense_window(&mps.to_complex(), &(&op * &op), n).re;
                let nf = n as f64;
                let model = v.c0 + v.c1 * nf + v.c2 * nf * (nf - 1.0) / 2.0;
                assert!(
                    (model - exact).abs() <= 1e-8 * exact.abs().max(1.0),
                    "n {n}: {model} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn variance_matches_long_windows_for_correlated_states() {
        for (k, h) in all_builders().iter().enumerate() {
            let mps = random_mps(2, 3, 300 + k as u64, k == 2);
            let (e, _) = energy_density(&mps, h).unwrap();
            for shift in [0.0, e] {
                let v = variance_density(&mps, h, shift).unwrap();
                assert!(v.antisymmetric_weight < 1e-10);
                assert!((v.c2 - 2.0 * (e - shift).powi(2)).abs() < 1e-8 * (1.0 + e * e));
                let hs = h.with_field_shift(shift);
                for n in [250usize, 300] {
                    let exact = finite_window_second_moment(&mps, &hs, n).unwrap().re;
                    let nf = n as f64;
                    let model = v.c0 + v.c1 * nf + v.c2 * nf * (nf - 1.0) / 2.0;
                    assert!(
                        (model - exact).abs() <= 1e-8 * exact.abs().max(1.0),
                        "builder {k}, shift {shift}, n {n}: {model} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn gmres_path_matches_dense_path() {
        let h = build_expdecay_mpo([1.0, 0.5, -0.8], [0.6, -0.3, 0.8], &(dense::pauli_x::<C64>() * c(-0.5))).unwrap();
        let mps = random_mps(2, 3, 77, true);
        let t = Transfer::new(mps.matrices(), &layer(&h, false));
        let fp = mps.fixed_points().unwrap();
        let dh = h.bond_dim();
        let q_r = place(&fp.right, dh, 0);
        let q_l = place(&fp.left, dh, dh - 1);
        let l = place(&fp.left, dh, 0);
        let r = place(&fp.right, dh, dh - 1);
        let dense = t
            .chain_top(false, std::slice::from_ref(&q_r), std::slice::from_ref(&l), &q_l, &r)
            .unwrap();
        // same system through the matrix-free path
        let mut cols = vec![q_r.iter().map(|x| -x).collect::<Vec<C64>>(), r.clone()];
        let rows = [l.clone(), q_l.clone()];
        let n = t.dim();
        let size = n + 2;
        let map = FnMap::new(size, |x: &[C64], y: &mut [C64]| {
            let (head, tail) = y.split_at_mut(n);
            t.apply(&x[..n], head);
            for i in 0..n {
                head[i] -= x[i];
            }
            for (j, cj) in cols.iter().enumerate() {
                let s = x[n + j];
                head.iter_mut().zip(cj).for_each(|(h, ci)| *h += s * ci);
            }
            for (j, rj) in rows.iter().enumerate() {
                tail[j] = dot(rj, &x[..n]);
            }
        });
        let mut rhs = vec![zero(); size];
        rhs[size - 1] = c(1.0);
        let (sol, _) = gmres(&map, &rhs, 120, 400, 1e-13).unwrap();
        assert!((sol[n] - dense.1[0]).norm() < 1e-9);
        cols.clear();
    }

    #[test]
    fn transpose_apply_is_the_transpose() {
        let h = build_nn_mpo([0.2, 0.9, -0.4], &(dense::pauli_x::<C64>() * c(0.3))).unwrap();
        let mps = random_mps(2, 2, 3, true);
        for lay in [layer(&h, false), layer(&h, true), layer_squared(&h)] {
            let t = Transfer::new(mps.matrices(), &lay);
            let e = t.dense();
            let n = t.dim();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let v: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let mut out = vec![zero(); n];
            t.apply(&v, &mut out);
            let expect = &e * DVector::from_vec(v.clone());
            assert!(out.iter().zip(expect.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
            t.apply_transpose(&v, &mut out);
            let expect = e.transpose() * DVector::from_vec(v);
            assert!(out.iter().zip(expect.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
        }
    }

    #[test]
    fn gradient_finds_classical_optimum() {
        let start = UniformMps::product_state(&[1.0, 0.1]).unwrap();
        let out = gradient_optimize(&start, &build_ising_mpo(-1.0).unwrap(), 200).unwrap();
        assert!((out.energy + 1.0).abs() < 1e-8, "{}", out.energy);
        assert!(out.trace.windows(2).all(|w| w[1].energy <= w[0].energy));
    }

    #[test]
    fn gradient_lowers_long_range_heisenberg() {
        let h = build_expdecay_mpo([1.0; 3], [0.3; 3], &DMatrix::zeros(2, 2)).unwrap();
        let product_e = energy_density(&product(&[1.0, 0.0]), &h).unwrap().0;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mats = (0..2)
            .map(|_| {
                let m = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
                (&m + m.transpose()) * 0.5
            })
            .collect();
        let start = UniformMps::new(mats).unwrap();
        let out = gradient_optimize(&start, &h, 40).unwrap();
        assert!(out.energy < product_e - 0.1, "{} vs {product_e}", out.energy);
        assert!(out.mps.is_symmetric(0.0));
    }
}
