//! Runs one ground-state search and prints the per-stage energies.
//!
//! `cargo run --release -p mpoforge-core --example ground_state -- tfi 16 0.1 1e-3 400 1e-13`

use std::time::Instant;

use mpoforge_core::gate_mpo::Model;
use mpoforge_core::imps::{ground_state_search, halving_schedule, SearchConfig};
use mpoforge_core::reference::{heisenberg_energy_density, tfi_energy_density};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.into());
    let model = match arg(0, "tfi").as_str() {
        "heisenberg" => Model::Heisenberg,
        _ => Model::Tfi { b: 1.0 },
    };
    let d_max: usize = arg(1, "16").parse().unwrap();
    let eps0: f64 = arg(2, "0.1").parse().unwrap();
    let eps1: f64 = arg(3, "1e-3").parse().unwrap();
    let sweeps: usize = arg(4, "400").parse().unwrap();
    let tol: f64 = arg(5, "1e-13").parse().unwrap();
    let exact = match model {
        Model::Tfi { b } => tfi_energy_density(b),
        Model::Heisenberg => heisenberg_energy_density(),
    };
    let t0 = Instant::now();
    let cfg = SearchConfig {
        model,
        d_max,
        stages: halving_schedule(eps0, eps1, sweeps, tol),
        converge_tol: 1e-12,
    };
    let out = ground_state_search(&cfg).expect("search failed");
    let every: usize = arg(6, "0").parse().unwrap();
    let mut rows = out.trace.iter().peekable();
    while let Some(row) = rows.next() {
        let stage_end = rows.peek().is_none_or(|n| n.eps != row.eps);
        if stage_end || (every > 0 && row.sweep % every == 0) {
            println!(
                "eps {:.3e} sweep {:5} D {:3} e {:.15} rel {:.3e} disc {:.2e}",
                row.eps,
                row.sweep,
                row.bond_dim,
                row.energy,
                ((row.energy - exact) / exact).abs(),
                row.discarded_weight
            );
        }
    }
    println!("converged {} in {:.1}s", out.converged, t0.elapsed().as_secs_f64());
}
