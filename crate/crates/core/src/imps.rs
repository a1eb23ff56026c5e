//! Translationally invariant MPS: gate application, symmetric truncation,
//! gauge conditioning and the imaginary-time ground-state driver.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};
use crate::gate_mpo::{build_local_field_gate, build_tilde_yy_gate, build_xx_gate, build_zz_gate, GateMpo, Model};
use crate::linalg::{
    eigh, leading_eigenpair, max_abs, max_abs_diff, svd, EigenOptions, FnMap, Scalar, ScalarKind, C64,
};

/// One matrix `A^i` per physical symbol, all `D × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformMps<T: Scalar> {
    a: Vec<DMatrix<T>>,
}

/// Left and right dominant eigenvectors of `E₀ = Σ A^i ⊗ Ā^i`.
///
/// `right` solves `Σ A r A† = λ r`, `left` solves `Σ Aᵀ l Ā = λ l`, and
/// `Σ_{ab} l[a,b] r[a,b] = 1`.
#[derive(Clone, Debug)]
pub struct FixedPoints<T: Scalar> {
    pub left: DMatrix<T>,
    pub right: DMatrix<T>,
    pub value: T,
}

impl<T: Scalar> UniformMps<T> {
    pub fn new(a: Vec<DMatrix<T>>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidArgument("an MPS needs at least one matrix".into()));
        }
        let d = a[0].nrows();
        if d == 0 || a.iter().any(|m| m.shape() != (d, d)) {
            return Err(Error::ShapeMismatch("MPS matrices must be square and uniform".into()));
        }
        if !a.iter().all(crate::linalg::all_finite) {
            return Err(Error::NonFinite("UniformMps::new"));
        }
        Ok(Self { a })
    }

    /// Bond dimension 1 with the given single-site amplitudes.
    pub fn product_state(amplitudes: &[T]) -> Result<Self> {
        Self::new(amplitudes.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect())
    }

    pub fn to_complex(&self) -> UniformMps<C64> {
        UniformMps {
            a: self.a.iter().map(crate::linalg::to_complex).collect(),
        }
    }

    pub fn matrices(&self) -> &[DMatrix<T>] {
        &self.a
    }

    pub fn bond_dim(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn phys_dim(&self) -> usize {
        self.a.len()
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.a
            .iter()
            .map(|m| max_abs_diff(m, &m.transpose()))
            .fold(0.0, f64::max)
    }

    fn scale_of(&self) -> f64 {
        self.a.iter().map(max_abs).fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.max_asymmetry() <= tol * self.scale_of().max(f64::MIN_POSITIVE)
    }

    /// `C^i = Σ_{j,k} ⟨i|X^k|j⟩ A^j ⊗ C_gate^k`; bond dimension becomes `D·D′`.
    pub fn apply_gate(&self, g: &GateMpo<T>) -> Result<Self> {
        let d = self.phys_dim();
        if g.phys_dim() != d {
            return Err(Error::ShapeMismatch(format!(
                "gate acts on dimension {}, state has {d}",
                g.phys_dim()
            )));
        }
        let blocks = g.physical_blocks();
        let dd = self.bond_dim() * g.bond_dim();
        let mut out = Vec::with_capacity(d);
        for row in &blocks {
            let mut c = DMatrix::<T>::zeros(dd, dd);
            for (aj, gij) in self.a.iter().zip(row) {
                if gij.iter().all(|x| x.is_zero()) {
                    continue;
                }
                c += aj.kronecker(gij);
            }
            out.push(c);
        }
        Self::new(out)
    }

    /// `x ↦ Σ A x A†`.
    pub fn transfer_right(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for m in &self.a {
            out += m * x * m.adjoint();
        }
        out
    }

    /// `x ↦ Σ Aᵀ x Ā`.
    pub fn transfer_left(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for m in &self.a {
            out += m.transpose() * x * m.conjugate();
        }
        out
    }

    fn is_real_symmetric(&self) -> bool {
        T::KIND == ScalarKind::Real && self.max_asymmetry() == 0.0
    }

    fn leading_fixed_point(&self, left: bool, start: Option<&DMatrix<T>>, tol: f64) -> Result<(T, DMatrix<T>)> {
        let d = self.bond_dim();
        let hermitian = self.is_real_symmetric();
        let map = FnMap::new(d * d, |x: &[T], y: &mut [T]| {
            let m = DMatrix::from_column_slice(d, d, x);
            let out = if left {
                self.transfer_left(&m)
            } else {
                self.transfer_right(&m)
            };
            y.copy_from_slice(out.as_slice());
        });
        let mut opts = EigenOptions::new(hermitian).tol(tol);
        opts.start = Some(match start {
            Some(s) if s.shape() == (d, d) => s.as_slice().to_vec(),
            _ => DMatrix::<T>::identity(d, d).as_slice().to_vec(),
        });
        let pair = leading_eigenpair(&map, &opts)?;
        Ok((pair.value, DMatrix::from_column_slice(d, d, &pair.vector)))
    }

    /// Dominant eigenvectors of `E₀`, warm-started from `start` when given.
    pub fn fixed_points_from(&self, start: Option<&DMatrix<T>>, tol: f64) -> Result<FixedPoints<T>> {
        let (value, right) = self.leading_fixed_point(false, start, tol)?;
        let left = if self.is_real_symmetric() {
            right.clone()
        } else {
            let (lv, l) = self.leading_fixed_point(true, start, tol)?;
            if (lv - value).modulus() > 1e-8 * value.modulus() {
                return Err(Error::NoConvergence("left and right transfer eigenvalues differ"));
            }
            l
        };
        let overlap = left.component_mul(&right).sum();
        if overlap.modulus() <= f64::MIN_POSITIVE {
            return Err(Error::NoConvergence("fixed points are orthogonal"));
        }
        // Split the normalization evenly so a symmetric pair stays equal.
        let s = overlap.sqrt();
        Ok(FixedPoints {
            left: left / s,
            right: right / s,
            value,
        })
    }

    pub fn fixed_points(&self) -> Result<FixedPoints<T>> {
        self.fixed_points_from(None, 1e-12)
    }

    /// Rescales so that the dominant eigenvalue of `E₀` is 1. Returns the
    /// eigenvalue before rescaling.
    pub fn normalize(&self) -> Result<(Self, f64)> {
        let (value, _) = self.leading_fixed_point(false, None, 1e-12)?;
        let lam = value.to_c64();
        if !(lam.re > 0.0) || lam.im.abs() > 1e-8 * lam.re {
            return Err(Error::InvalidArgument(format!(
                "transfer spectrum has no positive leading eigenvalue ({lam})"
            )));
        }
        let s = lam.re.sqrt();
        Ok((Self::new(self.a.iter().map(|m| m.unscale(s)).collect())?, lam.re))
    }

    /// Energy density `⟨h₂⟩ + ⟨h₁⟩` for a two-site term (`d²×d²`, first site
    /// most significant) and a one-site term.
    pub fn measure_bond_energy(&self, two_site: &DMatrix<T>, one_site: &DMatrix<T>) -> Result<f64> {
        let fp = self.fixed_points()?;
        self.measure_with(&fp, two_site, one_site)
    }

    pub fn measure_with(&self, fp: &FixedPoints<T>, two_site: &DMatrix<T>, one_site: &DMatrix<T>) -> Result<f64> {
        let d = self.phys_dim();
        if two_site.shape() != (d * d, d * d) || one_site.shape() != (d, d) {
            return Err(Error::ShapeMismatch(
                "energy terms do not match the physical dimension".into(),
            ));
        }
        if (fp.value - T::one()).modulus() > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "state is not normalized (leading eigenvalue {:?})",
                fp.value
            )));
        }
        let (l, r) = (&fp.left, &fp.right);
        let lt = l.transpose();
        let mut e = T::zero();
        // ⟨i'|h|i⟩ Σ_{ab} l[a,b] (A^i r A^{i'†})[a,b]
        for i in 0..d {
            let k = &lt * &self.a[i] * r;
            for ip in 0..d {
                let h = one_site[(ip, i)];
                if h.is_zero() {
                    continue;
                }
                e += (&k * self.a[ip].adjoint()).trace() * h;
            }
        }
        let pairs: Vec<DMatrix<T>> = (0..d * d).map(|ij| &self.a[ij / d] * &self.a[ij % d]).collect();
        for (ij, m) in pairs.iter().enumerate() {
            let k = &lt * m * r;
            for (ipjp, mp) in pairs.iter().enumerate() {
                let h = two_site[(ipjp, ij)];
                if h.is_zero() {
                    continue;
                }
                e += k.component_mul(&mp.conjugate()).sum() * h;
            }
        }
        let z = e.to_c64();
        if z.im.abs() > 1e-8 * z.re.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!("energy has imaginary part {}", z.im)));
        }
        Ok(z.re)
    }

    /// `⟨O_0 O_r⟩` for a single-site operator, `r ≥ 1`.
    pub fn correlation(&self, op: &DMatrix<T>, r: usize) -> Result<T> {
        if r == 0 {
            return Err(Error::InvalidArgument("correlation distance must be at least 1".into()));
        }
        let fp = self.fixed_points()?;
        let d = self.phys_dim();
        let apply_op = |x: &DMatrix<T>| {
            let mut out = DMatrix::zeros(x.nrows(), x.ncols());
            for i in 0..d {
                for ip in 0..d {
                    let h = op[(ip, i)];
                    if !h.is_zero() {
                        out += &self.a[i] * x * self.a[ip].adjoint() * h;
                    }
                }
            }
            out
        };
        let mut x = apply_op(&fp.right);
        for _ in 1..r {
            x = self.transfer_right(&x);
        }
        x = apply_op(&x);
        Ok(fp.left.component_mul(&x).sum())
    }

    /// Dense amplitudes `Tr(A^{s₁}···A^{s_N})` on an `n`-site ring.
    pub fn ring_amplitudes(&self, n: usize) -> Result<DVector<T>> {
        dense::check_sites(n)?;
        let d = self.phys_dim();
        let dim = d.pow(n as u32);
        let mut out = DVector::zeros(dim);
        for (s, slot) in out.iter_mut().enumerate() {
            let mut prod = DMatrix::<T>::identity(self.bond_dim(), self.bond_dim());
            let mut rest = s;
            let mut digits = vec![0; n];
            for digit in digits.iter_mut().rev() {
                *digit = rest % d;
                rest /= d;
            }
            for &k in &digits {
                prod *= &self.a[k];
            }
            *slot = prod.trace();
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub kept: usize,
    /// Dropped eigenvalue weight of the reshaped fixed point, in [0, 1].
    pub discarded_weight: f64,
    pub leading_eigenvalue: f64,
}

#[derive(Clone, Debug)]
pub struct Truncation<T: Scalar> {
    pub mps: UniformMps<T>,
    pub report: TruncationReport,
    /// `P† x P̄`, the fixed point carried into the kept basis; a good start
    /// vector for the next eigensolve.
    pub kept_fixed_point: DMatrix<T>,
    /// The untruncated fixed point `x`.
    pub fixed_point: DMatrix<T>,
}

/// Options for [`truncate_with`].
#[derive(Clone, Debug)]
pub struct TruncateOptions<'a, T: Scalar> {
    pub start: Option<&'a DMatrix<T>>,
    pub tol: f64,
}

impl<T: Scalar> Default for TruncateOptions<'_, T> {
    fn default() -> Self {
        Self {
            start: None,
            tol: 1e-11,
        }
    }
}

pub fn truncate<T: Scalar>(mps: &UniformMps<T>, d_target: usize) -> Result<Truncation<T>> {
    truncate_with(mps, d_target, &TruncateOptions::default())
}

/// Projects onto the `d_target` dominant eigenvectors of the leading
/// eigenvector of `E = Σ C^i ⊗ C^i`, reshaped to a matrix.
pub fn truncate_with<T: Scalar>(
    mps: &UniformMps<T>,
    d_target: usize,
    opts: &TruncateOptions<'_, T>,
) -> Result<Truncation<T>> {
    if d_target == 0 {
        return Err(Error::InvalidArgument("target bond dimension must be positive".into()));
    }
    if !mps.is_symmetric(1e-10) {
        return Err(Error::InvalidArgument(format!(
            "truncation needs symmetric matrices (asymmetry {:.3e})",
            mps.max_asymmetry()
        )));
    }
    let c = mps.matrices();
    let n = mps.bond_dim();
    let real = T::KIND == ScalarKind::Real;
    let map = FnMap::new(n * n, |x: &[T], y: &mut [T]| {
        let m = DMatrix::from_column_slice(n, n, x);
        let mut out = DMatrix::<T>::zeros(n, n);
        for ci in c {
            out += ci * &m * ci.transpose();
        }
        y.copy_from_slice(out.as_slice());
    });
    let mut eopts = EigenOptions::new(real).tol(opts.tol);
    eopts.start = Some(match opts.start {
        Some(s) if s.shape() == (n, n) => s.as_slice().to_vec(),
        _ => DMatrix::<T>::identity(n, n).as_slice().to_vec(),
    });
    let pair = leading_eigenpair(&map, &eopts)?;
    let mut x = DMatrix::from_column_slice(n, n, &pair.vector);
    x = (&x + x.transpose()).scale(0.5);
    let keep = d_target.min(n);
    let (p, weights): (DMatrix<T>, Vec<f64>) = if real {
        if x.trace().to_c64().re < 0.0 {
            x = -x;
        }
        let (vals, vecs) = eigh(&x)?;
        // PSD up to round-off; order by magnitude to be safe.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| vals[j].abs().total_cmp(&vals[i].abs()));
        let mut p = DMatrix::from_fn(n, keep, |r, k| vecs[(r, order[k])]);
        // Sign-fix each column so repeated truncations of a converged
        // state land in the same gauge.
        for mut col in p.column_iter_mut() {
            let pivot = col
                .iter()
                .copied()
                .max_by(|a, b| a.modulus().total_cmp(&b.modulus()))
                .unwrap_or(T::one());
            if pivot.to_c64().re < 0.0 {
                col.neg_mut();
            }
        }
        (p, order.iter().map(|&k| vals[k].abs()).collect())
    } else {
        let dec = svd(&x)?;
        let p = dec.u.columns(0, keep).into_owned();
        (p, dec.singular_values.iter().copied().collect())
    };
    let total: f64 = weights.iter().sum();
    let dropped: f64 = weights[keep..].iter().sum();
    let discarded_weight = if total > 0.0 {
        (dropped / total).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let pd = p.adjoint();
    let pc = p.conjugate();
    let a: Vec<DMatrix<T>> = c
        .iter()
        .map(|ci| {
            let m = &pd * ci * &pc;
            // restore exact symmetry lost to round-off
            (&m + m.transpose()).scale(0.5)
        })
        .collect();
    let kept_fixed_point = &pd * &x * &pc;
    Ok(Truncation {
        mps: UniformMps::new(a)?,
        report: TruncationReport {
            kept: keep,
            discarded_weight,
            leading_eigenvalue: pair.value.to_c64().re,
        },
        kept_fixed_point,
        fixed_point: x,
    })
}

/// Result of [`gauge_condition`]: `x′ = Q x Qᵀ` with `Q Qᵀ = I`.
#[derive(Clone, Debug)]
pub struct GaugeResult {
    pub q: DMatrix<C64>,
    pub x: DMatrix<C64>,
    /// Condition ratio σ_min/σ_max after every accepted step, starting with
    /// the input's ratio.
    pub ratios: Vec<f64>,
}

pub fn condition_ratio(x: &DMatrix<C64>) -> Result<f64> {
    let s = svd(x)?.singular_values;
    let n = s.len();
    if n == 0 || s[0] == 0.0 {
        return Ok(0.0);
    }
    Ok(s[n - 1] / s[0])
}

/// Maximizes σ_min/σ_max of a complex symmetric `x` over complex orthogonal
/// similarity `x ↦ Q x Qᵀ`.
pub fn gauge_condition(x: &DMatrix<C64>) -> Result<GaugeResult> {
    if !x.is_square() {
        return Err(Error::ShapeMismatch("gauge conditioning needs a square matrix".into()));
    }
    if max_abs_diff(x, &x.transpose()) > 1e-12 * max_abs(x).max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument(
            "gauge conditioning needs a symmetric matrix".into(),
        ));
    }
    let n = x.nrows();
    let mut q = DMatrix::<C64>::identity(n, n);
    let mut cur = x.clone();
    let mut ratio = condition_ratio(&cur)?;
    let mut ratios = vec![ratio];
    if n < 2 || x.iter().all(|z| z.im == 0.0) {
        return Ok(GaugeResult { q, x: cur, ratios });
    }
    let mut eps = 0.05;
    for _ in 0..500 {
        let dec = svd(&cur)?;
        let v1 = dec.u.column(0);
        let vd = dec.u.column(n - 1);
        let g = (vd * vd.adjoint() - v1 * v1.adjoint()).map(|z| z.im);
        if g.amax() == 0.0 {
            break;
        }
        let mut accepted = None;
        while eps > 1e-10 {
            for sign in [1.0, -1.0] {
                let gen = g.map(|v| C64::new(0.0, -sign * eps * v));
                let r = dense::expm(&gen);
                let cand = &r * &cur * r.transpose();
                let cr = condition_ratio(&cand)?;
                if cr > ratio {
                    accepted = Some((r, cand, cr));
                    break;
                }
            }
            if accepted.is_some() {
                break;
            }
            eps *= 0.5;
        }
        let Some((r, cand, cr)) = accepted else { break };
        let gain = cr - ratio;
        q = r * q;
        cur = (&cand + cand.transpose()) * C64::new(0.5, 0.0);
        ratio = cr;
        ratios.push(cr);
        if gain < 1e-8 {
            break;
        }
    }
    Ok(GaugeResult { q, x: cur, ratios })
}

// ---------------------------------------------------------------------------
// Imaginary-time driver

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub eps: f64,
    pub max_sweeps: usize,
    /// Stage ends once the per-sweep energy change, and its geometric
    /// extrapolation, both fall below this.
    pub tol: f64,
}

/// Halving schedule from `eps_start` down to `eps_end`.
pub fn halving_schedule(eps_start: f64, eps_end: f64, max_sweeps: usize, tol: f64) -> Vec<Stage> {
    let mut out = Vec::new();
    let mut eps = eps_start;
    loop {
        out.push(Stage { eps, max_sweeps, tol });
        if eps <= eps_end * (1.0 + 1e-12) {
            break;
        }
        eps = (eps * 0.5).max(eps_end);
    }
    out
}

#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub model: Model,
    pub d_max: usize,
    pub stages: Vec<Stage>,
    /// The search counts as converged when the last sweep at the smallest
    /// ε changes the energy by less than this.
    pub converge_tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sweep: usize,
    pub eps: f64,
    pub bond_dim: usize,
    pub energy: f64,
    pub discarded_weight: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub mps: UniformMps<f64>,
    pub energy: f64,
    pub trace: Vec<TraceRow>,
    /// The final sweep changed the energy by less than `converge_tol`.
    pub converged: bool,
    pub rotated: bool,
}

/// Gate sequence for one symmetric sweep of `exp(−εH)`, applied left to
/// right. The last entry of each gate is `true` when a truncation follows.
fn sweep_gates(model: Model, eps: f64) -> Result<Vec<(GateMpo<f64>, bool)>> {
    Ok(match model {
        Model::Tfi { b } => {
            let half = build_local_field_gate(0.5 * eps * b, &dense::pauli_x::<f64>())?;
            vec![(half.clone(), false), (build_zz_gate(eps)?, false), (half, true)]
        }
        Model::Heisenberg => {
            let x = build_xx_gate(0.5 * eps)?;
            let y = build_tilde_yy_gate(0.5 * eps)?;
            vec![
                (x.clone(), true),
                (y.clone(), true),
                (build_zz_gate(eps)?, true),
                (y, true),
                (x, true),
            ]
        }
    })
}

/// Leading eigenvector of `y ↦ Σ_k C^k y C^kᵀ` for a gate's own matrices.
fn gate_fixed_point(g: &GateMpo<f64>) -> DMatrix<f64> {
    let b = g.bond_dim();
    let mut y = DMatrix::<f64>::identity(b, b);
    for _ in 0..200 {
        let mut next = DMatrix::zeros(b, b);
        for c in g.site_matrices() {
            next += c * &y * c.transpose();
        }
        let nrm = next.norm();
        if nrm == 0.0 {
            break;
        }
        y = next / nrm;
    }
    y
}

/// Symmetric-Trotter imaginary-time evolution of the `|+⟩` product state.
pub fn ground_state_search(cfg: &SearchConfig) -> Result<SearchOutcome> {
    let amp = std::f64::consts::FRAC_1_SQRT_2;
    ground_state_search_from(cfg, UniformMps::product_state(&[amp, amp])?)
}

pub fn ground_state_search_from(cfg: &SearchConfig, start: UniformMps<f64>) -> Result<SearchOutcome> {
    if cfg.d_max == 0 || cfg.stages.is_empty() {
        return Err(Error::InvalidArgument("need d_max > 0 and a nonempty schedule".into()));
    }
    if cfg.stages.iter().any(|s| !(s.eps > 0.0) || !(s.tol > 0.0)) {
        return Err(Error::InvalidArgument(
            "stage steps and tolerances must be positive".into(),
        ));
    }
    let rotated = matches!(cfg.model, Model::Heisenberg);
    let (h2, h1) = cfg.model.bond_terms(rotated);
    let mut mps = start.normalize()?.0;
    let mut fp_guess: Option<DMatrix<f64>> = None;
    let mut energy = mps.measure_bond_energy(&h2, &h1)?;
    let mut trace = Vec::new();
    let mut sweep = 0usize;
    let mut last_delta = f64::INFINITY;
    for stage in &cfg.stages {
        let gates = sweep_gates(cfg.model, stage.eps)?;
        let gate_fps: Vec<DMatrix<f64>> = gates.iter().map(|(g, _)| gate_fixed_point(g)).collect();
        let stage_start = energy;
        let mut prev_delta: Option<f64> = None;
        // Untruncated fixed point at each cut from the previous sweep.
        let mut cut_fps: Vec<Option<DMatrix<f64>>> = vec![None; gates.len()];
        for _ in 0..stage.max_sweeps {
            sweep += 1;
            let mut discarded = 0.0f64;
            let mut pending_fp: Option<DMatrix<f64>> = fp_guess.clone();
            let mut grown = DMatrix::<f64>::identity(1, 1);
            for (k, ((gate, cut), gfp)) in gates.iter().zip(&gate_fps).enumerate() {
                mps = mps.apply_gate(gate)?;
                grown = grown.kronecker(gfp);
                if *cut {
                    let n = mps.bond_dim();
                    let start = match &cut_fps[k] {
                        Some(f) if f.shape() == (n, n) => Some(f.clone()),
                        _ => pending_fp.as_ref().map(|f| f.kronecker(&grown)),
                    };
                    let t = truncate_with(
                        &mps,
                        cfg.d_max,
                        &TruncateOptions {
                            start: start.as_ref(),
                            tol: 1e-11,
                        },
                    )?;
                    discarded = discarded.max(t.report.discarded_weight);
                    pending_fp = Some(t.kept_fixed_point);
                    cut_fps[k] = Some(t.fixed_point);
                    grown = DMatrix::identity(1, 1);
                    mps = t.mps;
                }
            }
            let (next, _) = normalize_from(&mps, pending_fp.as_ref())?;
            mps = next;
            let fp = mps.fixed_points_from(pending_fp.as_ref(), 1e-12)?;
            fp_guess = Some(fp.right.clone());
            let e = mps.measure_with(&fp, &h2, &h1)?;
            trace.push(TraceRow {
                sweep,
                eps: stage.eps,
                bond_dim: mps.bond_dim(),
                energy: e,
                discarded_weight: discarded,
            });
            let delta = e - energy;
            energy = e;
            let mut remaining = delta.abs();
            if let Some(pd) = prev_delta {
                let r = delta / pd;
                if r > 0.0 && r < 1.0 {
                    remaining = remaining.max(delta.abs() * r / (1.0 - r));
                }
            }
            prev_delta = Some(delta);
            last_delta = delta;
            if delta.abs() < stage.tol && remaining < stage.tol && mps.bond_dim() >= cfg.d_max.min(2) {
                break;
            }
        }
        if energy > stage_start + 1e-10 * stage_start.abs().max(1.0) {
            return Err(Error::EvolutionAborted(format!(
                "energy rose from {stage_start} to {energy} over the stage at eps = {}",
                stage.eps
            )));
        }
    }
    Ok(SearchOutcome {
        mps,
        energy,
        trace,
        converged: last_delta.abs() < cfg.converge_tol,
        rotated,
    })
}

fn normalize_from(mps: &UniformMps<f64>, start: Option<&DMatrix<f64>>) -> Result<(UniformMps<f64>, f64)> {
    let (value, _) = mps.leading_fixed_point(false, start, 1e-12)?;
    if !(value > 0.0) {
        return Err(Error::InvalidArgument(
            "transfer spectrum has no positive leading eigenvalue".into(),
        ));
    }
    let s = value.sqrt();
    Ok((UniformMps::new(mps.matrices().iter().map(|m| m / s).collect())?, value))
}

// ---------------------------------------------------------------------------
// State dump: one JSON header line, then row-major little-endian f64 data
// for A^0, A^1, ...; complex entries are stored as (re, im) pairs.

#[derive(Serialize, Deserialize)]
struct StateHeader {
    format: String,
    version: u32,
    d: usize,
    bond_dim: usize,
    scalar: ScalarKind,
}

const STATE_FORMAT: &str = "mpoforge-umps";

pub fn write_state<T: Scalar, W: Write>(mps: &UniformMps<T>, mut w: W) -> std::io::Result<()> {
    let header = StateHeader {
        format: STATE_FORMAT.into(),
        version: 1,
        d: mps.phys_dim(),
        bond_dim: mps.bond_dim(),
        scalar: T::KIND,
    };
    let line = serde_json::to_string(&header).map_err(std::io::Error::other)?;
    writeln!(w, "{line}")?;
    for m in mps.matrices() {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let z = m[(r, c)].to_c64();
                w.write_all(&z.re.to_le_bytes())?;
                if T::KIND == ScalarKind::Complex {
                    w.write_all(&z.im.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_state<T: Scalar, R: BufRead>(mut r: R) -> Result<UniformMps<T>> {
    let mut line = String::new();
    r.read_line(&mut line)
        .map_err(|e| Error::InvalidArgument(format!("state header: {e}")))?;
    let header: StateHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::InvalidArgument(format!("state header: {e}")))?;
    if header.format != STATE_FORMAT || header.version != 1 {
        return Err(Error::InvalidArgument(format!(
            "unsupported state format {} v{}",
            header.format, header.version
        )));
    }
    if header.scalar != T::KIND {
        return Err(Error::InvalidArgument(format!(
            "state holds {:?} scalars, caller asked for {:?}",
            header.scalar,
            T::KIND
        )));
    }
    let per = if T::KIND == ScalarKind::Complex { 2 } else { 1 };
    let n = header.bond_dim;
    let mut buf = vec![0u8; 8 * per * n * n * header.d];
    r.read_exact(&mut buf)
        .map_err(|e| Error::InvalidArgument(format!("state body: {e}")))?;
    let vals: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut mats = Vec::with_capacity(header.d);
    for k in 0..header.d {
        let base = k * n * n * per;
        let data: Vec<T> = (0..n * n)
            .map(|i| {
                let re = vals[base + i * per];
                let im = if per == 2 { vals[base + i * per + 1] } else { 0.0 };
                T::from_c64(C64::new(re, im))
            })
            .collect();
        mats.push(DMatrix::from_row_slice(n, n, &data));
    }
    UniformMps::new(mats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{embed_many, pauli_x, pauli_z, ring_bond_sum, site_sum};
    use crate::gate_mpo::trotter_plan;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plus() -> UniformMps<f64> {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        UniformMps::product_state(&[a, a]).unwrap()
    }

    fn random_symmetric(d: usize, seed: u64) -> UniformMps<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats = (0..2)
            .map(|_| {
                let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
                (&m + m.transpose()) * 0.5
            })
            .collect();
        UniformMps::new(mats).unwrap()
    }

    #[test]
    fn identity_gate_keeps_matrices() {
        let m = random_symmetric(3, 1);
        let g = GateMpo::<f64>::identity(2);
        assert_eq!(m.apply_gate(&g).unwrap(), m);
    }

    #[test]
    fn zz_gate_on_plus_matches_dense() {
        let eps = 0.3;
        let out = plus().apply_gate(&build_zz_gate(eps).unwrap()).unwrap();
        assert_eq!(out.bond_dim(), 2);
        let n = 4;
        let z = pauli_z::<f64>();
        let psi0 = plus().ring_amplitudes(n).unwrap();
        let expect = dense::expm(&(ring_bond_sum(&z, &z, n) * eps)) * psi0;
        let got = out.ring_amplitudes(n).unwrap();
        assert!((got - expect).amax() < 1e-13);
    }

    #[test]
    fn successive_gates_match_merged_product() {
        let n = 4;
        let g1 = build_zz_gate(0.2).unwrap();
        let g2 = build_local_field_gate(0.35, &pauli_x::<f64>()).unwrap();
        let s = random_symmetric(2, 3);
        let twice = s.apply_gate(&g1).unwrap().apply_gate(&g2).unwrap();
        let merged = g2.materialize_ring(n).unwrap() * g1.materialize_ring(n).unwrap();
        let expect = merged * s.ring_amplitudes(n).unwrap();
        assert!((twice.ring_amplitudes(n).unwrap() - expect).amax() < 1e-12);
    }

    #[test]
    fn truncate_without_cut_is_a_gauge() {
        let s = random_symmetric(4, 5);
        let t = truncate(&s, 4).unwrap();
        assert_eq!(t.report.discarded_weight, 0.0);
        for n in [3, 5] {
            let a = s.ring_amplitudes(n).unwrap();
            let b = t.mps.ring_amplitudes(n).unwrap();
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn truncate_product_state() {
        let s = plus().apply_gate(&GateMpo::identity(2)).unwrap();
        let t = truncate(&s, 1).unwrap();
        let (n0, _) = t.mps.normalize().unwrap();
        let (p0, _) = plus().normalize().unwrap();
        for (a, b) in n0.matrices().iter().zip(p0.matrices()) {
            assert!((a[(0, 0)].abs() - b[(0, 0)].abs()) < 1e-14);
        }
        assert_eq!(t.report.discarded_weight, 0.0);
    }

    #[test]
    fn truncate_rejects_asymmetric() {
        let m = UniformMps::new(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
            DMatrix::identity(2, 2),
        ])
        .unwrap();
        assert!(truncate(&m, 1).is_err());
    }

    #[test]
    fn truncation_preserves_correlations_within_weight() {
        let plan = trotter_plan(Model::Tfi { b: 1.0 }, 0.2).unwrap();
        let mut s = plus();
        for _ in 0..3 {
            for g in &plan.gates {
                s = s.apply_gate(g).unwrap();
            }
        }
        let s = truncate(&s, 8).unwrap().mps.normalize().unwrap().0;
        let cut = truncate(&s, 4).unwrap();
        let t = cut.mps.normalize().unwrap().0;
        let z = pauli_z::<f64>();
        for r in 1..5 {
            let a = s.correlation(&z, r).unwrap();
            let b = t.correlation(&z, r).unwrap();
            assert!((a - b).abs() <= 10.0 * cut.report.discarded_weight.sqrt() + 1e-12);
        }
    }

    #[test]
    fn normalize_cases() {
        let (p, lam) = plus().normalize().unwrap();
        assert!((lam - 1.0).abs() < 1e-14);
        assert!((&p.matrices()[0] - &plus().matrices()[0]).amax() < 1e-14);
        let tripled = UniformMps::new(plus().matrices().iter().map(|m| m * 3.0).collect()).unwrap();
        let (back, lam) = tripled.normalize().unwrap();
        assert!((lam - 9.0).abs() < 1e-12);
        assert!((&back.matrices()[0] - &p.matrices()[0]).amax() < 1e-14);
        let r = random_symmetric(4, 8).normalize().unwrap().0;
        let (_, lam) = r.normalize().unwrap();
        assert!((lam - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bond_energy_of_product_states() {
        let z = pauli_z::<f64>();
        let zz = z.kronecker(&z);
        let zero = UniformMps::product_state(&[1.0, 0.0]).unwrap();
        let e = zero.measure_bond_energy(&zz, &DMatrix::zeros(2, 2)).unwrap();
        assert!((e - 1.0).abs() < 1e-14);
        let e = plus().measure_bond_energy(&zz, &(pauli_x::<f64>() * -1.0)).unwrap();
        assert!((e + 1.0).abs() < 1e-14);
    }

    #[test]
    fn bond_energy_matches_dense_ring() {
        let s = random_symmetric(2, 11).normalize().unwrap().0;
        let (h2, h1) = Model::Tfi { b: 0.7 }.bond_terms(false);
        let e = s.measure_bond_energy(&h2, &h1).unwrap();
        let ring = |n: usize| {
            let psi = s.ring_amplitudes(n).unwrap();
            let z = pauli_z::<f64>();
            let h = ring_bond_sum(&z, &z, n) * -1.0 - site_sum(&pauli_x::<f64>(), n) * 0.7;
            (psi.transpose() * h * &psi)[(0, 0)] / psi.norm_squared() / n as f64
        };
        let (e10, e12) = (ring(10), ring(12));
        // finite-ring corrections decay with the transfer gap
        let tol = (e10 - e12).abs() * 4.0 + 1e-8;
        assert!((e - e12).abs() <= tol, "{e} vs {e12} (tol {tol})");
    }

    #[test]
    fn complex_measurement_uses_distinct_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mats: Vec<DMatrix<C64>> = (0..2)
            .map(|_| {
                DMatrix::from_fn(3, 3, |_, _| {
                    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                })
            })
            .collect();
        let s = UniformMps::new(mats).unwrap().normalize().unwrap().0;
        let fp = s.fixed_points().unwrap();
        let r = s.transfer_right(&fp.right);
        let l = s.transfer_left(&fp.left);
        assert!(max_abs(&(r - &fp.right)) < 1e-10);
        assert!(max_abs(&(l - &fp.left)) < 1e-10);
        let ovl = fp.left.component_mul(&fp.right).sum();
        assert!((ovl - C64::new(1.0, 0.0)).norm() < 1e-12);
        // ⟨Z_0 Z_1⟩ two ways
        let z = pauli_z::<C64>();
        let e = s.measure_bond_energy(&z.kronecker(&z), &DMatrix::zeros(2, 2)).unwrap();
        let c = s.correlation(&z, 1).unwrap();
        assert!((C64::new(e, 0.0) - c).norm() < 1e-10);
        // the subleading transfer eigenvalue is about 0.47, so twelve sites
        // leave a finite-ring error near 2e-4
        let n = 12;
        let psi = s.ring_amplitudes(n).unwrap();
        let zz = embed_many(&[(0, &z), (1, &z)], n);
        let dense = (psi.adjoint() * zz * &psi)[(0, 0)] / psi.norm_squared();
        assert!((dense.re - e).abs() < 1e-3);
    }

    #[test]
    fn gauge_on_real_input_is_identity() {
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]).map(|v| C64::new(v, 0.0));
        let g = gauge_condition(&x).unwrap();
        assert_eq!(g.q, DMatrix::identity(2, 2));
        assert_eq!(g.ratios.len(), 1);
        assert_eq!(g.x, x);
    }

    #[test]
    fn gauge_improves_diag_one_i() {
        let x = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 1.0),
            ],
        );
        let g = gauge_condition(&x).unwrap();
        assert!(g.ratios.last().unwrap() >= &g.ratios[0]);
        let qqt = &g.q * g.q.transpose();
        assert!(max_abs(&(qqt - DMatrix::identity(2, 2))) < 1e-10);
    }

    #[test]
    fn gauge_on_random_complex_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = DMatrix::from_fn(4, 4, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let x = (&m + m.transpose()) * C64::new(0.5, 0.0);
        let g = gauge_condition(&x).unwrap();
        assert!(max_abs(&(&g.q * g.q.transpose() - DMatrix::identity(4, 4))) < 1e-10);
        for w in g.ratios.windows(2) {
            assert!(w[1] >= w[0]);
        }
        let back = &g.q * &x * g.q.transpose();
        assert!(max_abs(&(back - &g.x)) < 1e-10 * max_abs(&x));
    }

    #[test]
    fn realtime_truncation_stays_symmetric() {
        let g = crate::gate_mpo::build_realtime_zz_gate(0.1).unwrap();
        let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let mut s = UniformMps::product_state(&[a, a]).unwrap();
        for _ in 0..4 {
            s = s.apply_gate(&g).unwrap();
            s = truncate(&s, 4).unwrap().mps;
            s = s.normalize().unwrap().0;
        }
        assert!(s.is_symmetric(1e-12));
    }

    #[test]
    fn classical_limit_reaches_minus_one_at_bond_one() {
        let cfg = SearchConfig {
            model: Model::Tfi { b: 0.0 },
            d_max: 1,
            stages: halving_schedule(0.5, 0.125, 400, 1e-12),
            converge_tol: 1e-12,
        };
        let out = ground_state_search_from(&cfg, UniformMps::product_state(&[0.9, 0.1]).unwrap()).unwrap();
        assert!((out.energy + 1.0).abs() < 1e-10);
        assert_eq!(out.mps.bond_dim(), 1);
    }

    #[test]
    fn small_bond_energies_are_variational() {
        let model = Model::Tfi { b: 1.0 };
        let run = |d| {
            let cfg = SearchConfig {
                model,
                d_max: d,
                stages: halving_schedule(0.2, 0.05, 300, 1e-10),
                converge_tol: 1e-12,
            };
            ground_state_search(&cfg).unwrap()
        };
        let (one, two) = (run(1), run(2));
        let exact = -4.0 / std::f64::consts::PI;
        assert!(two.energy <= one.energy + 1e-12);
        assert!(two.energy >= exact - 1e-6);
    }

    #[test]
    fn energy_is_monotone_within_a_stage() {
        for (b, d) in [(1.0, 8), (0.5, 4)] {
            let cfg = SearchConfig {
                model: Model::Tfi { b },
                d_max: d,
                stages: halving_schedule(0.1, 0.05, 150, 1e-12),
                converge_tol: 1e-12,
            };
            let out = ground_state_search(&cfg).unwrap();
            for w in out.trace.windows(2) {
                if w[0].eps == w[1].eps {
                    assert!(w[1].energy <= w[0].energy + 1e-10, "{:?} -> {:?}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn state_dump_roundtrip() {
        let s = random_symmetric(3, 2);
        let mut buf = Vec::new();
        write_state(&s, &mut buf).unwrap();
        let back: UniformMps<f64> = read_state(std::io::Cursor::new(buf.clone())).unwrap();
        assert_eq!(back, s);
        assert!(read_state::<C64, _>(std::io::Cursor::new(buf)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn imaginary_time_cycles_stay_real_symmetric(seed in 0u64..1000, b in 0.2f64..1.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = random_symmetric(2, seed);
            let plans = [
                trotter_plan(Model::Tfi { b }, 0.1).unwrap(),
                trotter_plan(Model::Heisenberg, 0.1).unwrap(),
            ];
            for _ in 0..12 {
                let plan = &plans[rng.gen_range(0..2)];
                for g in &plan.gates {
                    s = s.apply_gate(g).unwrap();
                    s = truncate(&s, 4).unwrap().mps;
                    s = s.normalize().unwrap().0;
                    prop_assert!(s.max_asymmetry() <= 1e-12);
                }
            }
        }

        #[test]
        fn uncut_truncation_keeps_observables(seed in 0u64..1000) {
            let s = random_symmetric(2, seed).apply_gate(&build_zz_gate(0.3).unwrap()).unwrap();
            let s = s.normalize().unwrap().0;
            let t = truncate(&s, 4).unwrap().mps.normalize().unwrap().0;
            let (h2, h1) = Model::Tfi { b: 0.9 }.bond_terms(false);
            let e0 = s.measure_bond_energy(&h2, &h1).unwrap();
            let e1 = t.measure_bond_energy(&h2, &h1).unwrap();
            prop_assert!((e0 - e1).abs() <= 1e-10);
            let z = pauli_z::<f64>();
            for r in 1..=5 {
                prop_assert!((s.correlation(&z, r).unwrap() - t.correlation(&z, r).unwrap()).abs() <= 1e-10);
            }
        }
    }
}
