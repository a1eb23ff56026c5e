//! Hamiltonians as open-boundary MPOs,
//! `H_N = Σ v_lᵀ B_{i₁}···B_{i_N} v_r X^{i₁}⊗···⊗X^{i_N}`.
//!
//! Bond state 0 is the start marker and the last bond state the stop marker.
//! Every two-body family occupies one decay channel between them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dense::{self, check_sites};
use crate::error::{Error, Result};
use crate::expfit::{fit, power_law_samples, ExpSumFit, FitMethod};
use crate::linalg::{svd, C64};

/// One two-body channel: `left` at site i, `right` at site j > i, with
/// coupling `entry · exit · decay^{j−i−1}`.
#[derive(Clone, Debug)]
pub struct Channel {
    pub left: DMatrix<C64>,
    pub right: DMatrix<C64>,
    pub entry: C64,
    pub exit: C64,
    pub decay: C64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub coupling: C64,
    pub decay: C64,
}

#[derive(Clone, Debug)]
pub struct HamiltonianMpo {
    op_basis: Vec<DMatrix<C64>>,
    site_matrices: Vec<DMatrix<C64>>,
    v_l: DVector<C64>,
    v_r: DVector<C64>,
    channels: Vec<ChannelInfo>,
    /// Label carrying the one-site term, if any.
    field_label: Option<usize>,
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn label_of(basis: &mut Vec<DMatrix<C64>>, mats: &mut Vec<DMatrix<C64>>, op: &DMatrix<C64>, d: usize) -> usize {
    if let Some(k) = basis.iter().position(|b| b == op) {
        return k;
    }
    basis.push(op.clone());
    mats.push(DMatrix::zeros(d, d));
    basis.len() - 1
}

impl HamiltonianMpo {
    /// Direct sum of decay channels sharing the start and stop markers, plus
    /// an optional one-site term.
    pub fn from_channels(channels: &[Channel], field: Option<&DMatrix<C64>>) -> Result<Self> {
        let phys = channels
            .first()
            .map(|ch| ch.left.nrows())
            .or(field.map(|f| f.nrows()))
            .ok_or_else(|| Error::InvalidArgument("an MPO needs at least one term".into()))?;
        let square = |m: &DMatrix<C64>| m.shape() == (phys, phys);
        if !channels.iter().all(|ch| square(&ch.left) && square(&ch.right)) || !field.is_none_or(square) {
            return Err(Error::ShapeMismatch("operators of different sizes".into()));
        }
        let dim = channels.len() + 2;
        let stop = dim - 1;
        let mut basis = vec![DMatrix::<C64>::identity(phys, phys)];
        let mut mats = vec![DMatrix::<C64>::zeros(dim, dim)];
        mats[0][(0, 0)] = c(1.0);
        mats[0][(stop, stop)] = c(1.0);
        let mut infos = Vec::with_capacity(channels.len());
        for (k, ch) in channels.iter().enumerate() {
            let s = k + 1;
            mats[0][(s, s)] = ch.decay;
            let a = label_of(&mut basis, &mut mats, &ch.left, dim);
            mats[a][(0, s)] += ch.entry;
            let b = label_of(&mut basis, &mut mats, &ch.right, dim);
            mats[b][(s, stop)] += ch.exit;
            infos.push(ChannelInfo {
                coupling: ch.entry * ch.exit,
                decay: ch.decay,
            });
        }
        let field_label = field.map(|f| {
            basis.push(f.clone());
            let mut m = DMatrix::zeros(dim, dim);
            m[(0, stop)] = c(1.0);
            mats.push(m);
            basis.len() - 1
        });
        let mut v_l = DVector::zeros(dim);
        v_l[0] = c(1.0);
        let mut v_r = DVector::zeros(dim);
        v_r[stop] = c(1.0);
        Ok(Self {
            op_basis: basis,
            site_matrices: mats,
            v_l,
            v_r,
            channels: infos,
            field_label,
        })
    }

    pub fn op_basis(&self) -> &[DMatrix<C64>] {
        &self.op_basis
    }

    pub fn site_matrices(&self) -> &[DMatrix<C64>] {
        &self.site_matrices
    }

    pub fn v_l(&self) -> &DVector<C64> {
        &self.v_l
    }

    pub fn v_r(&self) -> &DVector<C64> {
        &self.v_r
    }

    pub fn channels(&self) -> &[ChannelInfo] {
        &self.channels
    }

    pub fn bond_dim(&self) -> usize {
        self.v_l.len()
    }

    pub fn phys_dim(&self) -> usize {
        self.op_basis[0].nrows()
    }

    pub fn start_index(&self) -> usize {
        0
    }

    pub fn stop_index(&self) -> usize {
        self.bond_dim() - 1
    }

    /// All decay channels strictly inside the unit disk.
    pub fn is_thermodynamic(&self) -> bool {
        self.channels.iter().all(|ch| ch.decay.norm() < 1.0)
    }

    /// Same Hamiltonian with `−shift` added to the one-site term, i.e.
    /// `H_N − N·shift`.
    pub fn with_field_shift(&self, shift: f64) -> Self {
        let mut out = self.clone();
        let id = DMatrix::<C64>::identity(self.phys_dim(), self.phys_dim());
        match self.field_label {
            Some(k) => out.op_basis[k] -= id * c(shift),
            None => {
                let dim = self.bond_dim();
                let mut m = DMatrix::zeros(dim, dim);
                m[(0, dim - 1)] = c(1.0);
                out.op_basis.push(id * c(-shift));
                out.site_matrices.push(m);
                out.field_label = Some(out.op_basis.len() - 1);
            }
        }
        out
    }

    /// Coefficient of `X^a ⊗ I^{r−1} ⊗ X^b` for labels `a`, `b` at distance `r`.
    pub fn pair_coupling(&self, a: usize, b: usize, r: usize) -> C64 {
        assert!(r >= 1, "pair distance must be positive");
        let mut row = self.v_l.transpose() * &self.site_matrices[a];
        for _ in 1..r {
            row *= &self.site_matrices[0];
        }
        (row * &self.site_matrices[b] * &self.v_r)[(0, 0)]
    }

    pub fn label(&self, op: &DMatrix<C64>) -> Option<usize> {
        self.op_basis.iter().position(|b| b == op)
    }

    /// Dense `d^N × d^N` operator of the `n`-site open chain.
    pub fn materialize_finite(&self, n: usize) -> Result<DMatrix<C64>> {
        check_sites(n)?;
        let dim = self.bond_dim();
        let d = self.phys_dim();
        // acc[b] = Σ over prefixes of (v_lᵀ B···B)[b] X⊗···⊗X
        let mut acc: Vec<DMatrix<C64>> = vec![DMatrix::zeros(1, 1); dim];
        acc[0] = DMatrix::from_element(1, 1, c(1.0));
        for _ in 0..n {
            let size = acc[0].nrows() * d;
            let mut next = vec![DMatrix::<C64>::zeros(size, size); dim];
            for (b, prev) in acc.iter().enumerate() {
                if prev.iter().all(|x| *x == c(0.0)) {
                    continue;
                }
                for (m, x) in self.site_matrices.iter().zip(&self.op_basis) {
                    let mut block: Option<DMatrix<C64>> = None;
                    for cc in 0..dim {
                        let w = m[(b, cc)];
                        if w == c(0.0) {
                            continue;
                        }
                        let kron = block.get_or_insert_with(|| prev.kronecker(x));
                        next[cc] += &*kron * w;
                    }
                }
            }
            acc = next;
        }
        let size = acc[0].nrows();
        let mut h = DMatrix::zeros(size, size);
        for (b, m) in acc.iter().enumerate() {
            if self.v_r[b] != c(0.0) {
                h += m * self.v_r[b];
            }
        }
        Ok(h)
    }
}

/// `Σ_α μ_α σ_α^i σ_α^{i+1} + Σ_j field^j` with D = 5.
pub fn build_nn_mpo(mu: [f64; 3], field: &DMatrix<C64>) -> Result<HamiltonianMpo> {
    build_expdecay_mpo(mu, [0.0; 3], field)
}

/// `Σ_α Σ_{i<j} μ_α λ_α^{j−i−1} σ_α^i σ_α^j + Σ_j field^j`.
pub fn build_expdecay_mpo(mu: [f64; 3], lambda: [f64; 3], field: &DMatrix<C64>) -> Result<HamiltonianMpo> {
    let ops = [dense::pauli_x::<C64>(), dense::pauli_y(), dense::pauli_z::<C64>()];
    let channels: Vec<Channel> = ops
        .iter()
        .zip(mu.iter().zip(lambda))
        .map(|(op, (&m, l))| Channel {
            left: op.clone(),
            right: op.clone(),
            entry: c(1.0),
            exit: c(m),
            decay: c(l),
        })
        .collect();
    HamiltonianMpo::from_channels(&channels, Some(field))
}

/// `μ Σ Z_i Z_{i+1}` with D = 3.
pub fn build_ising_mpo(mu: f64) -> Result<HamiltonianMpo> {
    let z = dense::pauli_z::<C64>();
    HamiltonianMpo::from_channels(
        &[Channel {
            left: z.clone(),
            right: z,
            entry: c(1.0),
            exit: c(mu),
            decay: c(0.0),
        }],
        None,
    )
}

/// `Σ_{i<j} Ĵ(j−i) left^i right^j` with `Ĵ(r) = Σ_k x_k λ_k^r`. The weight
/// `x_k λ_k` sits on the entry hop so the per-step decay stays `λ_k`.
pub fn build_exp_sum_mpo(
    fit: &ExpSumFit,
    left: &DMatrix<C64>,
    right: &DMatrix<C64>,
    field: Option<&DMatrix<C64>>,
) -> Result<HamiltonianMpo> {
    if let Some(bad) = fit.exponents.iter().find(|l| l.norm() >= 1.0) {
        return Err(Error::UnstableFit(format!("exponent {bad} has |λ| >= 1")));
    }
    let channels: Vec<Channel> = fit
        .exponents
        .iter()
        .zip(&fit.weights)
        .map(|(&l, &x)| Channel {
            left: left.clone(),
            right: right.clone(),
            entry: x * l,
            exit: c(1.0),
            decay: l,
        })
        .collect();
    HamiltonianMpo::from_channels(&channels, field)
}

/// Fits `r^{−p}` over `1..=n_fit` with `n` exponentials and builds the
/// D = n + 2 MPO of `Σ_{i<j} Ĵ(j−i) left^i right^j`.
pub fn build_powerlaw_mpo(
    p: f64,
    n: usize,
    n_fit: usize,
    left: &DMatrix<C64>,
    right: &DMatrix<C64>,
) -> Result<(HamiltonianMpo, ExpSumFit)> {
    let f = fit(&power_law_samples(p, n_fit), n, FitMethod::Qr)?;
    let h = build_exp_sum_mpo(&f, left, right, None)?;
    Ok((h, f))
}

/// Number of singular values above `tol · σ_max` of `op` on `n` sites,
/// matricized between sites `0..cut` and `cut..n`.
pub fn operator_schmidt_rank(op: &DMatrix<C64>, n: usize, cut: usize, tol: f64) -> Result<usize> {
    check_sites(n)?;
    let d = (op.nrows() as f64).powf(1.0 / n as f64).round() as usize;
    if d.pow(n as u32) != op.nrows() || !op.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} operator is not on {n} sites",
            op.nrows(),
            op.ncols()
        )));
    }
    if cut == 0 || cut >= n {
        return Err(Error::InvalidArgument(format!("cut {cut} is not inside 1..{n}")));
    }
    let dl = d.pow(cut as u32);
    let dr = d.pow((n - cut) as u32);
    // M[(i_L, j_L), (i_R, j_R)] = op[(i_L i_R), (j_L j_R)]
    let m = DMatrix::from_fn(dl * dl, dr * dr, |row, col| {
        let (il, jl) = (row / dl, row % dl);
        let (ir, jr) = (col / dr, col % dr);
        op[(il * dr + ir, jl * dr + jr)]
    });
    let s = svd(&m)?.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    Ok(s.iter().filter(|&&v| v > tol * smax).count())
}
