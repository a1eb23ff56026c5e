//! Oracle suites behind `mpoforge verify`.

use std::time::Instant;

use anyhow::Result;
use mpoforge_core::dense::{self, expm, pair_sum, ring_bond_sum, site_sum};
use mpoforge_core::expfit::{fit, power_law_samples, FitMethod};
use mpoforge_core::gate_mpo::{
    build_local_field_gate, build_realtime_zz_gate, build_tilde_yy_gate, build_xx_gate, build_zz_gate, GateMpo, Model,
};
use mpoforge_core::ham_mpo::{
    build_expdecay_mpo, build_ising_mpo, build_nn_mpo, build_powerlaw_mpo, operator_schmidt_rank, HamiltonianMpo,
};
use mpoforge_core::imps::{ground_state_search, SearchConfig, UniformMps};
use mpoforge_core::linalg::max_abs_diff;
use mpoforge_core::peps::{
    build_nn_hamiltonian_peps, build_powerlaw_hamiltonian_peps, classical_ising_free_energy, lattice_bonds, zz_network,
};
use mpoforge_core::reference::{heisenberg_energy_density, tfi_energy_density};
use mpoforge_core::thermo::{energy_density, finite_window_expectation, variance_density};
use mpoforge_core::C64;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::commands::random_state;
use crate::config::{Fault, Level, ModelKind, RunConfig};
use crate::record::{f, ResultRecord, Status, Trace};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Passes when `value ≤ tolerance`.
fn at_most(suite: &'static str, name: impl Into<String>, value: f64, tolerance: f64) -> Check {
    Check {
        suite,
        name: name.into(),
        value,
        tolerance,
        passed: value <= tolerance,
    }
}

/// Max-norm deviation scaled by `max(1, ‖oracle‖_max)`.
pub fn scaled_deviation<T: mpoforge_core::Scalar>(a: &DMatrix<T>, oracle: &DMatrix<T>) -> f64 {
    let scale = oracle.iter().fold(1.0f64, |m, x| m.max(x.modulus()));
    max_abs_diff(a, oracle) / scale
}

/// Sign flip of one entry of `C¹`.
pub fn corrupt_c1(g: &GateMpo<f64>) -> GateMpo<f64> {
    let mut c1 = g.site_matrices()[1].clone();
    c1[(0, 1)] = -c1[(0, 1)];
    g.clone().with_site_matrix(1, c1).expect("same shape")
}

pub fn gate_suite(max_ring: usize, fault: Fault) -> Result<Vec<Check>> {
    let z = dense::pauli_z::<f64>();
    let x = dense::pauli_x::<f64>();
    let mut out = Vec::new();
    for eps in [0.01, 0.1, 0.5, 1.0] {
        for n in 2..=max_ring {
            let yy = ring_bond_sum(&dense::pauli_y(), &dense::pauli_y(), n).map(|v| v.re);
            let mut zz_gate = build_zz_gate(eps)?;
            if fault == Fault::C1 {
                zz_gate = corrupt_c1(&zz_gate);
            }
            let cases = [
                ("zz", zz_gate, expm(&(ring_bond_sum(&z, &z, n) * eps))),
                ("xx", build_xx_gate(eps)?, expm(&(ring_bond_sum(&x, &x, n) * eps))),
                ("tilde_yy", build_tilde_yy_gate(eps)?, expm(&(yy * -eps))),
                (
                    "field_x",
                    build_local_field_gate(eps, &x)?,
                    expm(&(site_sum(&x, n) * eps)),
                ),
            ];
            for (name, g, oracle) in cases {
                let dev = scaled_deviation(&g.materialize_ring(n)?, &oracle);
                out.push(at_most("gate-mpo", format!("{name} eps={eps} n={n}"), dev, 1e-12));
            }
            let zc = dense::pauli_z::<C64>();
            let rt = expm(&(ring_bond_sum(&zc, &zc, n) * C64::new(0.0, -eps)));
            let dev = scaled_deviation(&build_realtime_zz_gate(eps)?.materialize_ring(n)?, &rt);
            out.push(at_most("gate-mpo", format!("realtime_zz t={eps} n={n}"), dev, 1e-12));
        }
    }
    Ok(out)
}

fn spins(code: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|s| if (code >> (n - 1 - s)) & 1 == 0 { 1.0 } else { -1.0 })
        .collect()
}

/// `ln Z` of the open classical Ising model by row transfer matrices.
pub fn transfer_matrix_ln_z(lx: usize, ly: usize, beta: f64) -> f64 {
    let m = 1usize << lx;
    let intra = |c: usize| -> f64 {
        let s = spins(c, lx);
        s.windows(2).map(|w| w[0] * w[1]).sum()
    };
    let inter = |a: usize, b: usize| -> f64 { spins(a, lx).iter().zip(spins(b, lx)).map(|(x, y)| x * y).sum() };
    let t = DMatrix::from_fn(m, m, |b, a| (beta * (inter(a, b) + intra(b))).exp());
    let mut v = DVector::from_fn(m, |c, _| (beta * intra(c)).exp());
    for _ in 1..ly {
        v = &t * v;
    }
    v.sum().ln()
}

/// `Σ_s s_i s_j exp(−β Σ_{<ab>} s_a s_b)` by enumeration.
pub fn configuration_correlator(lx: usize, ly: usize, beta: f64, i: usize, j: usize) -> f64 {
    let n = lx * ly;
    let bonds = lattice_bonds(lx, ly);
    (0..1usize << n)
        .map(|c| {
            let s = spins(c, n);
            let e: f64 = bonds.iter().map(|&(a, b)| s[a] * s[b]).sum();
            s[i] * s[j] * (-beta * e).exp()
        })
        .sum()
}

pub fn lattice_zz_sum(lx: usize, ly: usize) -> DMatrix<f64> {
    let n = lx * ly;
    let z = dense::pauli_z::<f64>();
    let mut h = DMatrix::zeros(1 << n, 1 << n);
    for (i, j) in lattice_bonds(lx, ly) {
        h += dense::embed_many(&[(i, &z), (j, &z)], n);
    }
    h
}

pub fn lattice_yy_sum(lx: usize, ly: usize) -> DMatrix<C64> {
    let n = lx * ly;
    let y = dense::pauli_y();
    let mut h = DMatrix::zeros(1 << n, 1 << n);
    for (i, j) in lattice_bonds(lx, ly) {
        h += dense::embed_many(&[(i, &y), (j, &y)], n);
    }
    h
}

pub fn pepo_deviation(lx: usize, ly: usize, eps: f64, tilde: bool) -> Result<f64> {
    let net = zz_network(lx, ly, eps, tilde)?.to_dense()?;
    Ok(if tilde {
        let oracle = expm(&(lattice_yy_sum(lx, ly) * C64::new(-eps, 0.0)));
        scaled_deviation(&net.map(|v| C64::new(v, 0.0)), &oracle)
    } else {
        scaled_deviation(&net, &expm(&(lattice_zz_sum(lx, ly) * eps)))
    })
}

pub fn peps_suite(level: Level, beta: f64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut lattices = vec![(2, 2, 0.15), (2, 3, 0.4)];
    if level == Level::Full {
        lattices.extend([(3, 3, 0.15), (2, 4, 0.3)]);
    }
    for (lx, ly, eps) in lattices {
        for tilde in [false, true] {
            let name = format!("{} {lx}x{ly} eps={eps}", if tilde { "tilde_yy" } else { "zz" });
            out.push(at_most("peps", name, pepo_deviation(lx, ly, eps, tilde)?, 1e-12));
        }
    }
    let a = classical_ising_free_energy(4, 4, 0.4407)?;
    let b = transfer_matrix_ln_z(4, 4, 0.4407);
    out.push(at_most(
        "peps",
        "ln Z 4x4 vs transfer matrix",
        ((a - b) / b).abs(),
        1e-10,
    ));
    for (lx, ly) in [(1, 2), (2, 2), (2, 3)] {
        let h = build_nn_hamiltonian_peps(lx, ly)?.to_dense()?;
        out.push(at_most(
            "peps",
            format!("nn peps {lx}x{ly}"),
            max_abs_diff(&h, &lattice_zz_sum(lx, ly)),
            1e-12,
        ));
    }
    let peps = build_powerlaw_hamiltonian_peps(beta, 2, 2)?;
    let worst = peps
        .couplings()
        .iter()
        .map(|c| {
            let o = configuration_correlator(2, 2, beta, c.i, c.j);
            (c.raw - o).abs() / o.abs().max(1.0)
        })
        .fold(0.0, f64::max);
    out.push(at_most(
        "peps",
        format!("power-law couplings 2x2 beta={beta}"),
        worst,
        1e-10,
    ));
    Ok(out)
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Explicit `Σ_k Σ_{i<j} μ_k λ_k^{j−i−1} P^k_i P^k_j + Σ_i field_i`.
pub fn explicit_sum(n: usize, mu: [f64; 3], lam: [f64; 3], field: &DMatrix<C64>) -> DMatrix<C64> {
    let ops = [dense::pauli_x::<C64>(), dense::pauli_y(), dense::pauli_z::<C64>()];
    let mut h = site_sum(field, n);
    for k in 0..3 {
        if mu[k] != 0.0 {
            h += pair_sum(&ops[k], &ops[k], n, |r| {
                c(mu[k] * if r == 1 { 1.0 } else { lam[k].powi(r as i32 - 1) })
            });
        }
    }
    h
}

pub fn ham_suite(max_sites: usize) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let field = dense::pauli_x::<C64>() * c(0.3) + dense::pauli_z::<C64>() * c(-0.7);
    let mu = [0.9, -0.4, 1.3];
    let lam = [0.5, -0.3, 0.8];
    for n in 2..=max_sites {
        let nn = build_nn_mpo(mu, &field)?.materialize_finite(n)?;
        out.push(at_most(
            "ham-mpo",
            format!("nn n={n}"),
            scaled_deviation(&nn, &explicit_sum(n, mu, [0.0; 3], &field)),
            1e-12,
        ));
        let ed = build_expdecay_mpo(mu, lam, &field)?.materialize_finite(n)?;
        out.push(at_most(
            "ham-mpo",
            format!("expdecay n={n}"),
            scaled_deviation(&ed, &explicit_sum(n, mu, lam, &field)),
            1e-12,
        ));
        let is = build_ising_mpo(-1.0)?.materialize_finite(n)?;
        let zz = dense::chain_bond_sum(&dense::pauli_z::<C64>(), &dense::pauli_z::<C64>(), n) * c(-1.0);
        out.push(at_most(
            "ham-mpo",
            format!("ising n={n}"),
            scaled_deviation(&is, &zz),
            1e-12,
        ));
    }
    let n = max_sites.min(8);
    let (pl, fitted) = build_powerlaw_mpo(2.0, 6, 200, &dense::pauli_z::<C64>(), &dense::pauli_z::<C64>())?;
    let expect = pair_sum(&dense::pauli_z::<C64>(), &dense::pauli_z::<C64>(), n, |r| {
        fitted.evaluate_complex(r)
    });
    out.push(at_most(
        "ham-mpo",
        format!("power-law n={n}"),
        scaled_deviation(&pl.materialize_finite(n)?, &expect),
        1e-12,
    ));
    let generic = build_nn_mpo(mu, &field)?.materialize_finite(6)?;
    let r = operator_schmidt_rank(&generic, 6, 3, 1e-10)?;
    out.push(Check {
        suite: "ham-mpo",
        name: "schmidt rank generic nn".into(),
        value: r as f64,
        tolerance: 5.0,
        passed: r == 5,
    });
    let ising = build_ising_mpo(1.0)?.materialize_finite(6)?;
    let r = operator_schmidt_rank(&ising, 6, 3, 1e-10)?;
    out.push(Check {
        suite: "ham-mpo",
        name: "schmidt rank ising".into(),
        value: r as f64,
        tolerance: 3.0,
        passed: r == 3,
    });
    Ok(out)
}

/// `(p, max deviation bound, cost bound)`.
pub const FIT_TARGETS: [(f64, f64, Option<f64>); 3] = [(3.0, 1e-7, Some(2e-5)), (2.0, 1e-5, None), (1.0, 1e-3, None)];

pub fn expfit_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (p, max_dev, cost) in FIT_TARGETS {
        let fitted = fit(&power_law_samples(p, 1000), 10, FitMethod::Qr)?;
        out.push(at_most(
            "expfit",
            format!("p={p} max deviation"),
            fitted.max_deviation,
            max_dev,
        ));
        if let Some(cb) = cost {
            out.push(at_most("expfit", format!("p={p} cost"), fitted.cost, cb));
        }
    }
    // exact input
    let samples: Vec<f64> = (1..=200)
        .map(|k| 0.7 * 0.9f64.powi(k) - 0.2 * (-0.5f64).powi(k))
        .collect();
    let fitted = fit(&samples, 2, FitMethod::Qr)?;
    out.push(at_most("expfit", "two-term exact input cost", fitted.cost, 1e-10));
    Ok(out)
}

/// Every MPO builder used by the Jordan checks, with `|λ| ≤ 0.8`.
pub fn jordan_builders() -> Result<Vec<(&'static str, HamiltonianMpo)>> {
    let x = dense::pauli_x::<C64>();
    let z = dense::pauli_z::<C64>();
    Ok(vec![
        (
            "nn",
            build_nn_mpo([0.7, -0.4, 1.1], &(x.clone() * c(0.3) + z.clone() * c(-0.2)))?,
        ),
        ("ising", build_ising_mpo(-1.0)?),
        (
            "expdecay",
            build_expdecay_mpo([1.0, 0.5, -0.8], [0.6, -0.3, 0.8], &(x * c(-0.5)))?,
        ),
        ("powerlaw", build_powerlaw_mpo(2.0, 4, 60, &z, &z)?.0),
    ])
}

pub fn jordan_suite(level: Level, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let bonds: &[usize] = if level == Level::Full { &[1, 2, 3, 4] } else { &[2, 3] };
    for (name, h) in jordan_builders()? {
        for &d in bonds {
            let mps = random_state(2, d, seed + d as u64)?.normalize()?.0;
            let (e, eval) = energy_density(&mps, &h)?;
            let n = 300;
            let slope = (finite_window_expectation(&mps, &h, n + 1)? - finite_window_expectation(&mps, &h, n)?).re;
            out.push(at_most(
                "jordan",
                format!("{name} D={d} slope"),
                (slope - e).abs(),
                1e-9,
            ));
            if let Some(b) = &eval.block {
                // Q₁₂ = +1/⟨q̃_l|q_r⟩
                let inv = c(1.0) / b.left_overlap(&eval.q_r);
                out.push(at_most(
                    "jordan",
                    format!("{name} D={d} Q12 vs inverse overlap"),
                    (b.q12() - inv).norm(),
                    1e-10,
                ));
            }
        }
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let plus = UniformMps::product_state(&[s, s])?;
    let v = variance_density(&plus, &build_ising_mpo(1.0)?, 0.0)?;
    out.push(at_most(
        "jordan",
        "plus state ZZ variance density",
        (v.c1 - 1.0).abs(),
        1e-12,
    ));
    // variance coefficients against dense windows of a product state
    let h = build_nn_mpo([0.3, 0.0, 1.0], &(dense::pauli_x::<C64>() * c(-0.6)))?;
    let mps = UniformMps::product_state(&[0.8, 0.35])?.normalize()?.0;
    let shift = 0.2;
    let v = variance_density(&mps, &h, shift)?;
    let hs = h.with_field_shift(shift);
    let mut worst = 0.0f64;
    for n in 4..=8 {
        let op = hs.materialize_finite(n)?;
        let psi = DVector::from_fn(1 << n, |code, _| {
            (0..n)
                .map(|k| if (code >> k) & 1 == 0 { c(0.8) } else { c(0.35) })
                .product::<C64>()
        }) / c((0.8f64 * 0.8 + 0.35 * 0.35).powf(n as f64 / 2.0));
        let exact = (psi.adjoint() * &op * &op * &psi)[(0, 0)].re;
        let nf = n as f64;
        let model = v.c0 + v.c1 * nf + v.c2 * nf * (nf - 1.0) / 2.0;
        worst = worst.max((model - exact).abs() / exact.abs().max(1.0));
    }
    out.push(at_most("jordan", "variance coefficients vs dense N=4..8", worst, 1e-8));
    Ok(out)
}

/// D=64 benchmark configuration and relative-error bound for each model.
/// Heisenberg stops at ε = 1/32, where its error is already below 10⁻⁵.
pub fn benchmark_config(model: ModelKind) -> (RunConfig, f64) {
    let base = RunConfig {
        model,
        d_max: 64,
        ..RunConfig::default()
    };
    match model {
        ModelKind::Tfi => (base, 5e-9),
        ModelKind::Heisenberg => (
            RunConfig {
                eps_end: 0.03125,
                relax_stages: 0,
                max_sweeps: 200,
                ..base
            },
            1e-5,
        ),
    }
}

pub fn benchmark_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for kind in [ModelKind::Tfi, ModelKind::Heisenberg] {
        let (cfg, tol) = benchmark_config(kind);
        let model = match kind {
            ModelKind::Tfi => Model::Tfi { b: cfg.b },
            ModelKind::Heisenberg => Model::Heisenberg,
        };
        let search = SearchConfig {
            model,
            d_max: cfg.d_max,
            stages: crate::commands::schedule(&cfg),
            converge_tol: cfg.converge_tol,
        };
        let exact = match model {
            Model::Tfi { b } => tfi_energy_density(b),
            Model::Heisenberg => heisenberg_energy_density(),
        };
        let e = ground_state_search(&search)?.energy;
        out.push(at_most(
            "benchmark",
            format!("{model:?} D=64 relative error"),
            ((e - exact) / exact).abs(),
            tol,
        ));
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig) -> Result<(ResultRecord, Trace)> {
    let t0 = Instant::now();
    let (max_ring, max_sites) = match cfg.level {
        Level::Fast => (6, 6),
        Level::Full => (8, 8),
    };
    let mut checks = gate_suite(max_ring, cfg.fault)?;
    checks.extend(peps_suite(cfg.level, cfg.beta)?);
    checks.extend(ham_suite(max_sites)?);
    checks.extend(expfit_suite()?);
    checks.extend(jordan_suite(cfg.level, cfg.seed)?);
    if cfg.level == Level::Full {
        checks.extend(benchmark_suite()?);
    }
    let mut trace = Trace::new(&["suite", "check", "value", "tolerance", "passed"]);
    for ch in &checks {
        trace.push(vec![
            ch.suite.into(),
            ch.name.clone(),
            f(ch.value),
            f(ch.tolerance),
            ch.passed.to_string(),
        ]);
    }
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    let mut suites: Vec<&str> = checks.iter().map(|c| c.suite).collect();
    suites.dedup();
    let summary: Vec<_> = suites
        .iter()
        .map(|s| {
            let all = checks.iter().filter(|c| c.suite == *s).count();
            let bad = checks.iter().filter(|c| c.suite == *s && !c.passed).count();
            json!({ "suite": s, "checks": all, "failed": bad })
        })
        .collect();
    let mut record = ResultRecord::new("verify", cfg);
    record.status = if failed.is_empty() { Status::Ok } else { Status::Failed };
    record.iterations = Some(checks.len());
    record.details = json!({ "suites": summary, "failed": failed });
    record.wall_time_s = t0.elapsed().as_secs_f64();
    Ok((record, trace))
}
