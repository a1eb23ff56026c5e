//! Uniform ring MPOs for `exp(ε Σ commuting terms)` and the Trotter plans
//! built from them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};
use crate::linalg::{Scalar, C64};

/// Operator `Σ_{k₁..k_N} Tr(C^{k₁}···C^{k_N}) X^{k₁}⊗···⊗X^{k_N}` on a ring.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMpo<T: Scalar> {
    op_basis: Vec<DMatrix<T>>,
    site_matrices: Vec<DMatrix<T>>,
}

impl<T: Scalar> GateMpo<T> {
    pub fn new(op_basis: Vec<DMatrix<T>>, site_matrices: Vec<DMatrix<T>>) -> Result<Self> {
        if op_basis.is_empty() || op_basis.len() != site_matrices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} operators for {} site matrices",
                op_basis.len(),
                site_matrices.len()
            )));
        }
        let d = op_basis[0].nrows();
        let b = site_matrices[0].nrows();
        if op_basis.iter().any(|o| o.shape() != (d, d)) || site_matrices.iter().any(|c| c.shape() != (b, b)) {
            return Err(Error::ShapeMismatch("gate factors must be square and uniform".into()));
        }
        if !op_basis.iter().chain(&site_matrices).all(crate::linalg::all_finite) {
            return Err(Error::NonFinite("GateMpo::new"));
        }
        Ok(Self {
            op_basis,
            site_matrices,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            op_basis: vec![DMatrix::identity(d, d)],
            site_matrices: vec![DMatrix::identity(1, 1)],
        }
    }

    pub fn op_basis(&self) -> &[DMatrix<T>] {
        &self.op_basis
    }

    pub fn site_matrices(&self) -> &[DMatrix<T>] {
        &self.site_matrices
    }

    pub fn bond_dim(&self) -> usize {
        self.site_matrices[0].nrows()
    }

    pub fn phys_dim(&self) -> usize {
        self.op_basis[0].nrows()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.site_matrices
            .iter()
            .all(|c| crate::linalg::max_abs_diff(c, &c.transpose()) <= tol)
    }

    /// `G^{ij} = Σ_k ⟨i|X^k|j⟩ C^k`, the gate as one matrix per
    /// (output, input) physical pair.
    pub fn physical_blocks(&self) -> Vec<Vec<DMatrix<T>>> {
        let d = self.phys_dim();
        let b = self.bond_dim();
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let mut acc = DMatrix::zeros(b, b);
                        for (x, c) in self.op_basis.iter().zip(&self.site_matrices) {
                            acc += c * x[(i, j)];
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    /// Dense `d^N × d^N` operator on an `n`-site ring.
    pub fn materialize_ring(&self, n: usize) -> Result<DMatrix<T>> {
        let grid = dense::operator_matrix_product(&self.site_matrices, &self.op_basis, n)?;
        let mut out = grid[0][0].clone();
        for (a, row) in grid.iter().enumerate().skip(1) {
            out += &row[a];
        }
        Ok(out)
    }

    /// Same gate with one site matrix replaced; used for fault injection.
    pub fn with_site_matrix(mut self, k: usize, c: DMatrix<T>) -> Result<Self> {
        if k >= self.site_matrices.len() || c.shape() != self.site_matrices[k].shape() {
            return Err(Error::InvalidArgument(format!("no site matrix {k} of that shape")));
        }
        self.site_matrices[k] = c;
        Ok(self)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !eps.is_finite() {
        return Err(Error::NonFinite("gate step"));
    }
    if eps < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step {eps} < 0 would need complex site matrices; use the tilde or rotated gates"
        )));
    }
    Ok(())
}

/// `exp(ε Σ_i P_i P_{i+1})` for any real `P` with `P² = I`.
pub fn build_pair_gate(eps: f64, op: DMatrix<f64>) -> Result<GateMpo<f64>> {
    check_eps(eps)?;
    let (c, s) = (eps.cosh(), eps.sinh());
    let off = (s * c).sqrt();
    GateMpo::new(
        vec![dense::identity(), op],
        vec![
            DMatrix::from_row_slice(2, 2, &[c, 0.0, 0.0, s]),
            DMatrix::from_row_slice(2, 2, &[0.0, off, off, 0.0]),
        ],
    )
}

pub fn build_zz_gate(eps: f64) -> Result<GateMpo<f64>> {
    build_pair_gate(eps, dense::pauli_z())
}

pub fn build_xx_gate(eps: f64) -> Result<GateMpo<f64>> {
    build_pair_gate(eps, dense::pauli_x())
}

/// `exp(−ε Σ_i Y_i Y_{i+1})` over the real basis `{I, Ỹ}`.
pub fn build_tilde_yy_gate(eps: f64) -> Result<GateMpo<f64>> {
    check_eps(eps)?;
    let (c, s) = (eps.cosh(), eps.sinh());
    let off = (s * c).sqrt();
    GateMpo::new(
        vec![dense::identity(), dense::y_tilde()],
        vec![
            DMatrix::from_row_slice(2, 2, &[c, 0.0, 0.0, -s]),
            DMatrix::from_row_slice(2, 2, &[0.0, off, off, 0.0]),
        ],
    )
}

/// `exp(−i t Σ_i Z_i Z_{i+1})`, complex symmetric.
pub fn build_realtime_zz_gate(t: f64) -> Result<GateMpo<C64>> {
    if !t.is_finite() {
        return Err(Error::NonFinite("gate step"));
    }
    let z = C64::new(0.0, -t);
    let (c, s) = (z.cosh(), z.sinh());
    let off = (s * c).sqrt();
    let zero = C64::new(0.0, 0.0);
    GateMpo::new(
        vec![dense::identity(), dense::pauli_z()],
        vec![
            DMatrix::from_row_slice(2, 2, &[c, zero, zero, s]),
            DMatrix::from_row_slice(2, 2, &[zero, off, off, zero]),
        ],
    )
}

/// `⊗_i exp(ε·op)` with bond dimension 1 over the basis `{I, op}`.
pub fn build_local_field_gate<T: Scalar>(eps: f64, op: &DMatrix<T>) -> Result<GateMpo<T>> {
    if op.shape() != (2, 2) {
        return Err(Error::ShapeMismatch(format!("field operator is {:?}", op.shape())));
    }
    if !eps.is_finite() || !crate::linalg::all_finite(op) {
        return Err(Error::NonFinite("field gate"));
    }
    // op = aI + B with B traceless, B² = δ²I, so
    // exp(ε op) = e^{εa}(cosh(εδ) I + sinh(εδ)/δ B).
    let half = C64::new(0.5, 0.0);
    let m = op.map(|x| x.to_c64());
    let a = (m[(0, 0)] + m[(1, 1)]) * half;
    let d = m[(0, 0)] - a;
    let delta2 = d * d + m[(0, 1)] * m[(1, 0)];
    let e = C64::new(eps, 0.0);
    let (c, s_over) = if delta2.norm() == 0.0 {
        (C64::new(1.0, 0.0), e)
    } else {
        let delta = delta2.sqrt();
        ((e * delta).cosh(), (e * delta).sinh() / delta)
    };
    let scale = (e * a).exp();
    let coef_id = scale * (c - a * s_over);
    let coef_op = scale * s_over;
    GateMpo::new(
        vec![dense::identity(), op.clone()],
        vec![
            DMatrix::from_element(1, 1, T::from_c64(coef_id)),
            DMatrix::from_element(1, 1, T::from_c64(coef_op)),
        ],
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Model {
    /// `H = −Σ Z_i Z_{i+1} − B Σ X_i`.
    Tfi { b: f64 },
    /// `H = Σ (X_i X_{i+1} + Y_i Y_{i+1} + Z_i Z_{i+1})`.
    Heisenberg,
}

impl Model {
    /// `(two-site term, one-site term)` per bond in the frame the plan uses.
    /// With `rotated`, the Heisenberg bond is `−XX + YY − ZZ`, which is real.
    pub fn bond_terms(&self, rotated: bool) -> (DMatrix<f64>, DMatrix<f64>) {
        let z = dense::pauli_z::<f64>();
        let x = dense::pauli_x::<f64>();
        match *self {
            Model::Tfi { b } => (-z.kronecker(&z), -x * b),
            Model::Heisenberg => {
                let y = dense::pauli_y();
                let yy = y.kronecker(&y).map(|v| v.re);
                let sign = if rotated { -1.0 } else { 1.0 };
                ((x.kronecker(&x) + z.kronecker(&z)) * sign + yy, DMatrix::zeros(2, 2))
            }
        }
    }
}

/// One first-order Trotter step: apply `gates` in order.
#[derive(Clone, Debug)]
pub struct TrotterPlan {
    pub model: Model,
    pub eps: f64,
    pub gates: Vec<GateMpo<f64>>,
    /// Energies must be measured with the sublattice-rotated Hamiltonian.
    pub rotated: bool,
}

pub fn trotter_plan(model: Model, eps: f64) -> Result<TrotterPlan> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("imaginary-time step {eps} must be > 0")));
    }
    let (gates, rotated) = match model {
        Model::Tfi { b } => {
            if !b.is_finite() {
                return Err(Error::NonFinite("field strength"));
            }
            (
                vec![
                    build_zz_gate(eps)?,
                    build_local_field_gate(eps * b, &dense::pauli_x::<f64>())?,
                ],
                false,
            )
        }
        // exp(−εH′) with H′ = Σ(−XX + YY − ZZ) splits into three real gates.
        Model::Heisenberg => (
            vec![build_zz_gate(eps)?, build_xx_gate(eps)?, build_tilde_yy_gate(eps)?],
            true,
        ),
    };
    Ok(TrotterPlan {
        model,
        eps,
        gates,
        rotated,
    })
}
