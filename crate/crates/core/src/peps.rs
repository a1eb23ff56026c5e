//! Two-dimensional constructions on open `L_x × L_y` square lattices.
//!
//! Sites are numbered row-major, `s = y·L_x + x`, and site 0 is the most
//! significant qubit of every dense matrix. Virtual legs are ordered
//! (left, top, right, bottom). Edge legs are contracted with a boundary
//! vector supported on index 0.

use nalgebra::{DMatrix, DVector};

use crate::dense;
use crate::error::{Error, Result};

/// `C^x_{αβγδ}` over a two-element operator basis.
#[derive(Clone, Debug, PartialEq)]
pub struct PepoTensor {
    chi: usize,
    entries: Vec<f64>,
    op_basis: Vec<DMatrix<f64>>,
}

impl PepoTensor {
    pub fn from_fn(chi: usize, op_basis: Vec<DMatrix<f64>>, f: impl Fn(usize, [usize; 4]) -> f64) -> Self {
        let d = op_basis.len();
        let mut entries = Vec::with_capacity(d * chi.pow(4));
        for x in 0..d {
            for idx in 0..chi.pow(4) {
                entries.push(f(x, legs_of(idx, chi)));
            }
        }
        Self { chi, entries, op_basis }
    }

    pub fn chi(&self) -> usize {
        self.chi
    }

    pub fn op_basis(&self) -> &[DMatrix<f64>] {
        &self.op_basis
    }

    pub fn get(&self, x: usize, legs: [usize; 4]) -> f64 {
        let c = self.chi;
        self.entries[x * c.pow(4) + ((legs[0] * c + legs[1]) * c + legs[2]) * c + legs[3]]
    }

    /// The same tensor with its virtual legs permuted: new leg `k` is old
    /// leg `perm[k]`.
    pub fn permuted(&self, perm: [usize; 4]) -> Self {
        Self::from_fn(self.chi, self.op_basis.clone(), |x, legs| {
            let mut old = [0; 4];
            for k in 0..4 {
                old[perm[k]] = legs[k];
            }
            self.get(x, old)
        })
    }
}

fn legs_of(mut idx: usize, chi: usize) -> [usize; 4] {
    let mut legs = [0; 4];
    for k in (0..4).rev() {
        legs[k] = idx % chi;
        idx /= chi;
    }
    legs
}

fn digit(idx: usize, pos: usize, base: usize) -> usize {
    (idx / base.pow(pos as u32)) % base
}

/// Contracts a scalar grid network row by row. `t(site, legs)` gives the
/// site tensor; every edge leg is closed with `boundary`. The result is
/// `value · exp(log_scale)`, rescaled after each row.
fn contract_grid(
    lx: usize,
    ly: usize,
    chi: usize,
    boundary: &[f64],
    t: impl Fn(usize, [usize; 4]) -> f64,
) -> (f64, f64) {
    let nv = chi.pow(lx as u32);
    let edge = |vidx: usize| (0..lx).map(|c| boundary[digit(vidx, c, chi)]).product::<f64>();
    let mut state: Vec<f64> = (0..nv).map(edge).collect();
    let mut log_scale = 0.0;
    for y in 0..ly {
        let mut row = vec![0.0; nv * chi];
        for v in 0..nv {
            for h in 0..chi {
                row[v * chi + h] = state[v] * boundary[h];
            }
        }
        for x in 0..lx {
            let site = y * lx + x;
            let p = chi.pow(x as u32);
            let mut next = vec![0.0; nv * chi];
            for v in 0..nv {
                let top = digit(v, x, chi);
                let base = v - top * p;
                for left in 0..chi {
                    let val = row[v * chi + left];
                    if val == 0.0 {
                        continue;
                    }
                    for right in 0..chi {
                        for bottom in 0..chi {
                            let w = t(site, [left, top, right, bottom]);
                            if w != 0.0 {
                                next[(base + bottom * p) * chi + right] += val * w;
                            }
                        }
                    }
                }
            }
            row = next;
        }
        for (v, s) in state.iter_mut().enumerate() {
            *s = (0..chi).map(|h| row[v * chi + h] * boundary[h]).sum();
        }
        let m = state.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if m > 0.0 {
            state.iter_mut().for_each(|x| *x /= m);
            log_scale += m.ln();
        }
    }
    let value = state.iter().enumerate().map(|(v, s)| s * edge(v)).sum();
    (value, log_scale)
}

/// Nearest-neighbour bonds of the open lattice as site pairs.
pub fn lattice_bonds(lx: usize, ly: usize) -> Vec<(usize, usize)> {
    let mut bonds = Vec::new();
    for y in 0..ly {
        for x in 0..lx {
            let s = y * lx + x;
            if x + 1 < lx {
                bonds.push((s, s + 1));
            }
            if y + 1 < ly {
                bonds.push((s, s + lx));
            }
        }
    }
    bonds
}

/// `Σ_x F(x) X^{x₁}⊗…⊗X^{x_N}` over a two-element basis.
fn dense_from_coefficients(n: usize, basis: &[DMatrix<f64>], coeff: impl Fn(&[usize]) -> f64) -> Result<DMatrix<f64>> {
    dense::check_sites(n)?;
    let dim = 1usize << n;
    let mut out = DMatrix::zeros(dim, dim);
    let mut xs = vec![0; n];
    for code in 0..dim {
        for (s, x) in xs.iter_mut().enumerate() {
            *x = (code >> (n - 1 - s)) & 1;
        }
        let f = coeff(&xs);
        if f == 0.0 {
            continue;
        }
        let factors: Vec<DMatrix<f64>> = xs.iter().map(|&x| basis[x].clone()).collect();
        out += dense::kron_all(&factors) * f;
    }
    Ok(out)
}

/// A PEPO on an open lattice with per-site tensors.
#[derive(Clone, Debug)]
pub struct LatticeOperatorNetwork {
    lx: usize,
    ly: usize,
    tensors: Vec<PepoTensor>,
    boundary: Vec<f64>,
}

impl LatticeOperatorNetwork {
    pub fn new(lx: usize, ly: usize, tensors: Vec<PepoTensor>, boundary: Vec<f64>) -> Result<Self> {
        if lx == 0 || ly == 0 || tensors.len() != lx * ly {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors for a {lx}×{ly} lattice",
                tensors.len()
            )));
        }
        let chi = tensors[0].chi();
        if tensors.iter().any(|t| t.chi() != chi) || boundary.len() != chi {
            return Err(Error::ShapeMismatch("virtual extents differ across the lattice".into()));
        }
        Ok(Self {
            lx,
            ly,
            tensors,
            boundary,
        })
    }

    /// Translation-invariant network.
    pub fn uniform(lx: usize, ly: usize, tensor: &PepoTensor, boundary: Vec<f64>) -> Result<Self> {
        Self::new(lx, ly, vec![tensor.clone(); lx * ly], boundary)
    }

    pub fn sites(&self) -> usize {
        self.lx * self.ly
    }

    /// Coefficient of the operator string `xs`.
    pub fn coefficient(&self, xs: &[usize]) -> f64 {
        let (v, log) = contract_grid(self.lx, self.ly, self.tensors[0].chi(), &self.boundary, |s, legs| {
            self.tensors[s].get(xs[s], legs)
        });
        v * log.exp()
    }

    /// Natural log of the all-identity coefficient, kept in log space.
    pub fn log_identity_coefficient(&self) -> f64 {
        let (v, log) = contract_grid(self.lx, self.ly, self.tensors[0].chi(), &self.boundary, |s, legs| {
            self.tensors[s].get(0, legs)
        });
        v.ln() + log
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        dense_from_coefficients(self.sites(), self.tensors[0].op_basis(), |xs| self.coefficient(xs))
    }
}

/// Leg weights `√cosh|ε|`, `√sinh|ε|`; a leg carrying index `k` stands for
/// `Z^k` on both of its sites.
fn zz_tensor(eps: f64, tilde: bool, flip: bool) -> PepoTensor {
    let w = [eps.abs().cosh().sqrt(), eps.abs().sinh().sqrt()];
    let basis = if tilde {
        vec![dense::identity(), dense::y_tilde()]
    } else {
        vec![dense::identity(), dense::pauli_z()]
    };
    PepoTensor::from_fn(2, basis, |x, legs| {
        let s: usize = legs.iter().sum();
        if s % 2 != x {
            return 0.0;
        }
        let mut v: f64 = legs.iter().map(|&k| w[k]).product();
        // Ỹ² = −I: collapsing Ỹ^s to Ỹ^{s mod 2} leaves (−1)^{⌊s/2⌋}
        if tilde && (s / 2) % 2 == 1 {
            v = -v;
        }
        if flip && s % 2 == 1 {
            v = -v;
        }
        v
    })
}

/// PEPO tensor for `exp(ε Σ_{<ij>} Z_iZ_j)`, or with `tilde` for
/// `exp(−ε Σ_{<ij>} Y_iY_j) = exp(ε Σ Ỹ_iỸ_j)` over `{I, Ỹ}`.
pub fn build_zz_pepo(eps: f64, tilde: bool) -> Result<PepoTensor> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("ε = {eps} must be nonnegative")));
    }
    Ok(zz_tensor(eps, tilde, false))
}

/// `e₀/√cosh ε`: closes an edge leg so that it contributes exactly 1.
pub fn zz_boundary(eps: f64) -> Vec<f64> {
    vec![1.0 / eps.abs().cosh().sqrt(), 0.0]
}

pub fn zz_network(lx: usize, ly: usize, eps: f64, tilde: bool) -> Result<LatticeOperatorNetwork> {
    LatticeOperatorNetwork::uniform(lx, ly, &build_zz_pepo(eps, tilde)?, zz_boundary(eps))
}

/// `exp(ε Σ_{<ij>} Z_iZ_j)` for either sign of `ε`. Negative couplings put
/// the bond sign on one sublattice, which keeps the tensors real.
fn signed_zz_network(lx: usize, ly: usize, eps: f64) -> Result<LatticeOperatorNetwork> {
    let plain = zz_tensor(eps, false, false);
    let flipped = zz_tensor(eps, false, eps < 0.0);
    let tensors = (0..lx * ly)
        .map(|s| {
            if (s % lx + s / lx).is_multiple_of(2) {
                flipped.clone()
            } else {
                plain.clone()
            }
        })
        .collect();
    LatticeOperatorNetwork::new(lx, ly, tensors, zz_boundary(eps))
}

/// `ln Z` of the open-boundary classical Ising model
/// `Z = Σ_s exp(β Σ_{<ij>} s_i s_j)`, from the identity coefficient of the
/// `exp(βΣZZ)` network: `Z = Tr exp(βΣZZ) = 2^N · C(I…I)`.
pub fn classical_ising_free_energy(lx: usize, ly: usize, beta: f64) -> Result<f64> {
    if lx == 0 || ly == 0 {
        return Err(Error::InvalidArgument("empty lattice".into()));
    }
    if lx > 20 {
        return Err(Error::TooLarge(format!("row width {lx}")));
    }
    let net = signed_zz_network(lx, ly, beta)?;
    Ok((lx * ly) as f64 * std::f64::consts::LN_2 + net.log_identity_coefficient())
}

/// Open-boundary MPS `⟨v_l| A^{s₁}···A^{s_N} |v_r⟩`.
#[derive(Clone, Debug)]
pub struct OpenMps {
    pub matrices: Vec<DMatrix<f64>>,
    pub v_l: DVector<f64>,
    pub v_r: DVector<f64>,
    pub sites: usize,
}

impl OpenMps {
    pub fn bond_dim(&self) -> usize {
        self.v_l.len()
    }

    pub fn amplitude(&self, bits: &[usize]) -> f64 {
        let mut row = self.v_l.transpose();
        for &b in bits {
            row *= &self.matrices[b];
        }
        (row * &self.v_r)[(0, 0)]
    }

    pub fn to_dense(&self) -> Result<DVector<f64>> {
        dense::check_sites(self.sites)?;
        let n = self.sites;
        Ok(DVector::from_fn(1 << n, |code, _| {
            let bits: Vec<usize> = (0..n).map(|s| (code >> (n - 1 - s)) & 1).collect();
            self.amplitude(&bits)
        }))
    }
}

/// Equal superposition of all strings with exactly `excitations` ones.
/// `A⁰ = I` and `A¹` advances a counter, so the bond dimension is
/// `excitations + 1`.
pub fn build_w_mps(sites: usize, excitations: usize) -> Result<OpenMps> {
    if !(1..=2).contains(&excitations) {
        return Err(Error::InvalidArgument(format!("{excitations} excitations")));
    }
    if sites < excitations {
        return Err(Error::InvalidArgument(format!(
            "{sites} sites cannot hold {excitations} excitations"
        )));
    }
    let d = excitations + 1;
    let a1 = DMatrix::from_fn(d, d, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
    let mut v_r = DVector::zeros(d);
    v_r[d - 1] = 1.0;
    let mut v_l = DVector::zeros(d);
    v_l[0] = 1.0;
    Ok(OpenMps {
        matrices: vec![DMatrix::identity(d, d), a1],
        v_l,
        v_r,
        sites,
    })
}

/// Selector-indexed tensors `B^x_{i;αβγδ}` whose contraction with `|W⟩`
/// on the selector index `i` gives `Σ_{<ij>} Z_iZ_j` over `{I, Z}`.
#[derive(Clone, Debug)]
pub struct NnHamiltonianPeps {
    pub lx: usize,
    pub ly: usize,
    /// `b[x][i]` as a leg tensor.
    tensors: [[PepoTensor; 2]; 2],
    pub w: OpenMps,
}

impl NnHamiltonianPeps {
    pub fn tensor(&self, x: usize, selector: usize) -> &PepoTensor {
        &self.tensors[x][selector]
    }

    /// Total bond dimension including the selector MPS.
    pub fn bond_dim(&self) -> usize {
        2 * self.w.bond_dim()
    }

    pub fn coefficient(&self, xs: &[usize]) -> f64 {
        let n = self.lx * self.ly;
        let mut total = 0.0;
        for code in 0..(1usize << n) {
            let sel: Vec<usize> = (0..n).map(|s| (code >> (n - 1 - s)) & 1).collect();
            let amp = self.w.amplitude(&sel);
            if amp == 0.0 {
                continue;
            }
            let (v, log) = contract_grid(self.lx, self.ly, 2, &[1.0, 0.0], |s, legs| {
                self.tensors[xs[s]][sel[s]].get(0, legs)
            });
            total += amp * v * log.exp();
        }
        total
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let basis = [dense::identity(), dense::pauli_z()];
        dense_from_coefficients(self.lx * self.ly, &basis, |xs| self.coefficient(xs))
    }
}

pub fn build_nn_hamiltonian_peps(lx: usize, ly: usize) -> Result<NnHamiltonianPeps> {
    let scalar = vec![DMatrix::from_element(1, 1, 1.0)];
    let leg = |f: fn([usize; 4]) -> bool| PepoTensor::from_fn(2, scalar.clone(), move |_, legs| f(legs) as u8 as f64);
    // B⁰ = |0⟩⟨0000|
    let id_sel0 = leg(|l| l == [0, 0, 0, 0]);
    let id_sel1 = leg(|_| false);
    // B¹ = |1⟩⟨00|(⟨01|+⟨10|) + |0⟩(⟨01|+⟨10|)⟨00|
    let z_sel1 = leg(|l| l[0] == 0 && l[1] == 0 && l[2] + l[3] == 1);
    let z_sel0 = leg(|l| l[2] == 0 && l[3] == 0 && l[0] + l[1] == 1);
    Ok(NnHamiltonianPeps {
        lx,
        ly,
        tensors: [[id_sel0, id_sel1], [z_sel0, z_sel1]],
        w: build_w_mps(lx * ly, 1)?,
    })
}

/// `|ψ_β⟩ = exp(−β Σ ZZ)|+⟩^{⊗N}` paired with the two-excitation MPS
/// through `|x⁰⟩ = |0⟩|+⟩`, `|x¹⟩ = |1⟩|−⟩` (unnormalized `|±⟩`).
#[derive(Clone, Debug)]
pub struct CoefficientPeps {
    pub beta: f64,
    pub lx: usize,
    pub ly: usize,
    /// `⟨y|ψ_β⟩` network in the `{+, −}` basis.
    psi: LatticeOperatorNetwork,
    pub w2: OpenMps,
}

#[derive(Clone, Debug)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    /// Raw contraction value.
    pub raw: f64,
    /// `raw / ⟨+…+|ψ_β⟩`, the normalized correlator.
    pub normalized: f64,
}

impl CoefficientPeps {
    /// `2 × 3`: the `|ψ_β⟩` PEPS times the selector MPS.
    pub fn bond_dim(&self) -> usize {
        2 * self.w2.bond_dim()
    }

    /// `⟨y₁…y_N|ψ_β⟩` with `y = 0` for `+` and `1` for `−`.
    pub fn psi_overlap(&self, ys: &[usize]) -> f64 {
        self.psi.coefficient(ys)
    }

    pub fn coefficient(&self, xs: &[usize]) -> f64 {
        let w = self.w2.amplitude(xs);
        if w == 0.0 {
            return 0.0;
        }
        self.psi_overlap(xs) * w
    }

    pub fn partition_function(&self) -> f64 {
        self.psi_overlap(&vec![0; self.lx * self.ly])
    }

    pub fn couplings(&self) -> Vec<Coupling> {
        let n = self.lx * self.ly;
        let z = self.partition_function();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let mut xs = vec![0; n];
                xs[i] = 1;
                xs[j] = 1;
                let raw = self.coefficient(&xs);
                out.push(Coupling {
                    i,
                    j,
                    raw,
                    normalized: raw / z,
                });
            }
        }
        out
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let basis = [dense::identity(), dense::pauli_z()];
        dense_from_coefficients(self.lx * self.ly, &basis, |xs| self.coefficient(xs))
    }
}

pub fn build_powerlaw_hamiltonian_peps(beta: f64, lx: usize, ly: usize) -> Result<CoefficientPeps> {
    let op = signed_zz_network(lx, ly, -beta)?;
    // ⟨y|Z^x|+⟩ = 2δ_{xy}, so the ψ tensor is twice the PEPO tensor
    let tensors = op
        .tensors
        .iter()
        .map(|t| PepoTensor::from_fn(2, t.op_basis().to_vec(), |x, legs| 2.0 * t.get(x, legs)))
        .collect();
    Ok(CoefficientPeps {
        beta,
        lx,
        ly,
        psi: LatticeOperatorNetwork::new(lx, ly, tensors, op.boundary.clone())?,
        w2: build_w_mps(lx * ly, 2)?,
    })
}
