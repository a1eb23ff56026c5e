//! `ground-state`, `expfit` and `longrange`.

use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mpoforge_core::dense;
use mpoforge_core::expfit::{fit, power_law_samples, read_samples_csv};
use mpoforge_core::gate_mpo::Model;
use mpoforge_core::ham_mpo::{build_expdecay_mpo, build_ising_mpo, build_nn_mpo, build_powerlaw_mpo, HamiltonianMpo};
use mpoforge_core::imps::{
    ground_state_search, halving_schedule, read_state, write_state, SearchConfig, Stage, UniformMps,
};
use mpoforge_core::reference::{heisenberg_energy_density, tfi_energy_density};
use mpoforge_core::thermo::{energy_density, finite_window_expectation, gradient_optimize, variance_density};
use mpoforge_core::C64;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{ModelKind, MpoKind, RunConfig};
use crate::record::{f, ResultRecord, Status, Trace};

pub const STATE_FILE: &str = "ground_state.umps";

pub struct Outcome {
    pub record: ResultRecord,
    pub trace: Option<Trace>,
}

fn model(cfg: &RunConfig) -> Model {
    match cfg.model {
        ModelKind::Tfi => Model::Tfi { b: cfg.b },
        ModelKind::Heisenberg => Model::Heisenberg,
    }
}

fn reference(cfg: &RunConfig) -> f64 {
    match cfg.model {
        ModelKind::Tfi => tfi_energy_density(cfg.b),
        ModelKind::Heisenberg => heisenberg_energy_density(),
    }
}

/// Halving schedule from `eps_start` to `eps_end`. The first
/// `relax_stages` stages get `relax_sweeps`, the rest `max_sweeps`.
pub fn schedule(cfg: &RunConfig) -> Vec<Stage> {
    let mut stages = halving_schedule(cfg.eps_start, cfg.eps_end, cfg.max_sweeps, cfg.stage_tol);
    for s in stages.iter_mut().take(cfg.relax_stages) {
        s.max_sweeps = cfg.relax_sweeps;
    }
    stages
}

pub fn ground_state(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let t0 = Instant::now();
    let search = SearchConfig {
        model: model(cfg),
        d_max: cfg.d_max,
        stages: schedule(cfg),
        converge_tol: cfg.converge_tol,
    };
    let out = ground_state_search(&search)?;
    let mut record = ResultRecord::new("ground-state", cfg);
    record.set_energy(out.energy, Some(reference(cfg)));
    record.iterations = Some(out.trace.len());
    record.status = if out.converged {
        Status::Ok
    } else {
        Status::NotConverged
    };
    fs::create_dir_all(out_dir)?;
    let file = fs::File::create(out_dir.join(STATE_FILE)).context("creating state file")?;
    write_state(&out.mps, std::io::BufWriter::new(file))?;
    let mut trace = Trace::new(&["sweep", "eps", "bond_dim", "energy", "discarded_weight"]);
    for r in &out.trace {
        trace.push(vec![
            r.sweep.to_string(),
            f(r.eps),
            r.bond_dim.to_string(),
            f(r.energy),
            f(r.discarded_weight),
        ]);
    }
    record.details = json!({
        "bond_dim": out.mps.bond_dim(),
        "stages": search.stages.len(),
        "final_eps": search.stages.last().map(|s| s.eps),
        "rotated_frame": out.rotated,
        "converged": out.converged,
        "state_file": STATE_FILE,
        "final_discarded_weight": out.trace.last().map(|r| r.discarded_weight),
    });
    record.wall_time_s = t0.elapsed().as_secs_f64();
    Ok(Outcome {
        record,
        trace: Some(trace),
    })
}

pub fn expfit(cfg: &RunConfig) -> Result<Outcome> {
    let t0 = Instant::now();
    let samples = match &cfg.samples {
        Some(p) => {
            let file = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            read_samples_csv(BufReader::new(file))?
        }
        None => power_law_samples(cfg.p, cfg.n_fit),
    };
    let fitted = fit(&samples, cfg.n, cfg.method)?;
    let mut trace = Trace::new(&["k", "sample", "fit", "deviation"]);
    let values = fitted.evaluate_range(1..=samples.len())?;
    for (i, (s, v)) in samples.iter().zip(&values).enumerate() {
        trace.push(vec![(i + 1).to_string(), f(*s), f(*v), f((v - s).abs())]);
    }
    let pairs = |z: &[C64]| z.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>();
    let mut record = ResultRecord::new("expfit", cfg);
    record.status = Status::Ok;
    record.details = json!({
        "source": if cfg.samples.is_some() { "csv" } else { "power_law" },
        "samples": samples.len(),
        "terms": fitted.exponents.len(),
        "exponents": pairs(&fitted.exponents),
        "weights": pairs(&fitted.weights),
        "cost": fitted.cost,
        "max_deviation": fitted.max_deviation,
        "diagnostics": fitted.diagnostics,
    });
    record.wall_time_s = t0.elapsed().as_secs_f64();
    Ok(Outcome {
        record,
        trace: Some(trace),
    })
}

pub fn random_state(d: usize, bond: usize, seed: u64) -> Result<UniformMps<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mats = (0..d)
        .map(|_| DMatrix::from_fn(bond, bond, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    Ok(UniformMps::new(mats)?)
}

fn load_state(cfg: &RunConfig) -> Result<UniformMps<f64>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mps = match cfg.state.as_str() {
        "random" => random_state(2, cfg.random_d, cfg.seed)?,
        "zero" => UniformMps::product_state(&[1.0, 0.0])?,
        "plus" => UniformMps::product_state(&[s, s])?,
        path => {
            let file = fs::File::open(path).with_context(|| format!("opening state {path}"))?;
            read_state(BufReader::new(file))?
        }
    };
    Ok(mps.normalize()?.0)
}

/// The MPO `cfg` asks for. For `nn`, the model's bond Hamiltonian in the
/// frame `ground-state` uses.
pub fn build_mpo(cfg: &RunConfig) -> Result<HamiltonianMpo> {
    let zero = DMatrix::<C64>::zeros(2, 2);
    let z = dense::pauli_z::<C64>();
    Ok(match cfg.mpo {
        MpoKind::Nn => match cfg.model {
            ModelKind::Tfi => build_nn_mpo([0.0, 0.0, -1.0], &(dense::pauli_x::<C64>() * C64::new(-cfg.b, 0.0)))?,
            ModelKind::Heisenberg => build_nn_mpo([-1.0, 1.0, -1.0], &zero)?,
        },
        MpoKind::Ising => build_ising_mpo(cfg.mu)?,
        MpoKind::Expdecay => build_expdecay_mpo([0.0, 0.0, cfg.mu], [0.0, 0.0, cfg.lambda], &zero)?,
        MpoKind::Powerlaw => build_powerlaw_mpo(cfg.p, cfg.n, cfg.n_fit, &z, &z)?.0,
    })
}

pub fn longrange(cfg: &RunConfig) -> Result<Outcome> {
    let t0 = Instant::now();
    let h = build_mpo(cfg)?;
    let mut mps = load_state(cfg)?;
    let mut trace = None;
    if cfg.optimize > 0 {
        let opt = gradient_optimize(&mps, &h, cfg.optimize)?;
        let mut t = Trace::new(&["iteration", "energy", "gradient_norm", "step"]);
        for r in &opt.trace {
            t.push(vec![
                r.iteration.to_string(),
                f(r.energy),
                f(r.gradient_norm),
                f(r.step),
            ]);
        }
        trace = Some(t);
        mps = opt.mps;
    }
    let (e, eval) = energy_density(&mps, &h)?;
    let shift = cfg.shift.unwrap_or(e);
    let var = variance_density(&mps, &h, shift)?;
    if cfg.window == 0 {
        bail!("window must be at least 1");
    }
    let w0 = finite_window_expectation(&mps, &h, cfg.window)?;
    let w1 = finite_window_expectation(&mps, &h, cfg.window + 1)?;
    let slope = (w1 - w0).re;
    let bond_energy = if cfg.mpo == MpoKind::Nn {
        let (h2, h1) = model(cfg).bond_terms(cfg.model == ModelKind::Heisenberg);
        Some(mps.measure_bond_energy(&h2, &h1)?)
    } else {
        None
    };
    let block = eval.block.as_ref().map(|b| {
        json!({
            "q12": [b.q12().re, b.q12().im],
            "q21": [b.q21().re, b.q21().im],
            "left_overlap": [b.left_overlap(&eval.q_r).re, b.left_overlap(&eval.q_r).im],
        })
    });
    let mut record = ResultRecord::new("longrange", cfg);
    record.set_energy(e, None);
    record.iterations = (cfg.optimize > 0).then(|| trace.as_ref().map_or(0, |t: &Trace| t.rows.len()));
    record.details = json!({
        "bond_dim": mps.bond_dim(),
        "mpo_bond_dim": h.bond_dim(),
        "d0": [eval.d0.re, eval.d0.im],
        "energy_right": [eval.energy_right.re, eval.energy_right.im],
        "energy_left": [eval.energy_left.re, eval.energy_left.im],
        "jordan_block": block,
        "variance": {
            "shift": shift,
            "c0": var.c0,
            "c1": var.c1,
            "c2": var.c2,
            "shifted_energy": var.shifted_energy,
            "antisymmetric_weight": var.antisymmetric_weight,
        },
        "window": { "n": cfg.window, "slope": slope, "deviation": (slope - e).abs() },
        "bond_energy": bond_energy,
    });
    record.wall_time_s = t0.elapsed().as_secs_f64();
    Ok(Outcome { record, trace })
}
