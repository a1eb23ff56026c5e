//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mpoforge_core::expfit::FitMethod;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tfi,
    Heisenberg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MpoKind {
    Nn,
    Ising,
    Expdecay,
    Powerlaw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fault {
    None,
    /// Flip the sign of one entry of the ZZ gate's `C¹`.
    C1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub b: f64,
    pub d_max: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub relax_stages: usize,
    pub relax_sweeps: usize,
    pub max_sweeps: usize,
    pub stage_tol: f64,
    pub converge_tol: f64,
    pub mu: f64,
    pub lambda: f64,
    pub p: f64,
    pub n: usize,
    pub n_fit: usize,
    pub method: FitMethod,
    pub samples: Option<PathBuf>,
    pub mpo: MpoKind,
    pub state: String,
    pub random_d: usize,
    pub shift: Option<f64>,
    pub window: usize,
    pub optimize: usize,
    pub beta: f64,
    pub seed: u64,
    pub level: Level,
    pub fault: Fault,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Tfi,
            b: 1.0,
            d_max: 16,
            eps_start: 0.5,
            eps_end: 0.00390625,
            relax_stages: 3,
            relax_sweeps: 1500,
            max_sweeps: 300,
            stage_tol: 1e-14,
            converge_tol: 1e-12,
            mu: 1.0,
            lambda: 0.6,
            p: 3.0,
            n: 10,
            n_fit: 1000,
            method: FitMethod::Qr,
            samples: None,
            mpo: MpoKind::Nn,
            state: "random".into(),
            random_d: 4,
            shift: None,
            window: 300,
            optimize: 0,
            beta: 0.4407,
            seed: 7,
            level: Level::Fast,
            fault: Fault::None,
        }
    }
}

/// `(key, default, description)` for `--help`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("model", "tfi", "tfi | heisenberg"),
    ("b", "1.0", "transverse field B of the TFI model"),
    ("d_max", "16", "bond dimension cap"),
    ("eps_start", "0.5", "first imaginary-time step"),
    (
        "eps_end",
        "0.00390625",
        "last imaginary-time step (steps halve between stages)",
    ),
    ("relax_stages", "3", "number of leading stages that use relax_sweeps"),
    ("relax_sweeps", "1500", "sweep cap of the leading stages"),
    ("max_sweeps", "300", "sweep cap of every later stage"),
    ("stage_tol", "1e-14", "per-sweep energy change that ends a stage early"),
    (
        "converge_tol",
        "1e-12",
        "final per-sweep energy change below which the run counts as converged",
    ),
    ("mu", "1.0", "ZZ coupling of the ising/expdecay MPOs"),
    ("lambda", "0.6", "decay of the expdecay MPO"),
    ("p", "3.0", "power-law exponent"),
    ("n", "10", "number of exponentials in a fit"),
    ("n_fit", "1000", "number of samples r = 1..n_fit"),
    ("method", "qr", "qr | direct exponent extraction"),
    ("samples", "", "CSV of k,f(k) to fit instead of a power law"),
    ("mpo", "nn", "longrange MPO: nn | ising | expdecay | powerlaw"),
    (
        "state",
        "random",
        "longrange state: random | zero | plus | path to a state file",
    ),
    ("random_d", "4", "bond dimension of the random state"),
    ("shift", "", "variance shift λ (default: the energy density)"),
    ("window", "300", "finite-window length for the slope cross-check"),
    (
        "optimize",
        "0",
        "gradient iterations before evaluating (real states only)",
    ),
    ("beta", "0.4407", "inverse temperature for the PEPS checks"),
    ("seed", "7", "seed for random states"),
    ("level", "fast", "verify level: fast | full"),
    ("fault", "none", "verify fault injection: none | c1"),
];

pub fn keys_help() -> String {
    let mut out = String::from("Configuration keys (key=value, defaults in brackets):\n");
    for (k, d, doc) in KEYS {
        let _ = writeln!(out, "  {k:<11} [{d}] {doc}");
    }
    out.push_str(
        "\nheisenberg states written by ground-state are in the rotated frame −XX+YY−ZZ;\n\
         longrange with model=heisenberg evaluates in that frame.",
    );
    out
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("{key}={v}: {e}"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "model" => {
                self.model = match v {
                    "tfi" => ModelKind::Tfi,
                    "heisenberg" => ModelKind::Heisenberg,
                    _ => bail!("model={v}: expected tfi or heisenberg"),
                }
            }
            "b" => self.b = num(key, v)?,
            "d_max" => self.d_max = num(key, v)?,
            "eps_start" => self.eps_start = num(key, v)?,
            "eps_end" => self.eps_end = num(key, v)?,
            "relax_stages" => self.relax_stages = num(key, v)?,
            "relax_sweeps" => self.relax_sweeps = num(key, v)?,
            "max_sweeps" => self.max_sweeps = num(key, v)?,
            "stage_tol" => self.stage_tol = num(key, v)?,
            "converge_tol" => self.converge_tol = num(key, v)?,
            "mu" => self.mu = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "p" => self.p = num(key, v)?,
            "n" => self.n = num(key, v)?,
            "n_fit" => self.n_fit = num(key, v)?,
            "method" => {
                self.method = match v {
                    "qr" => FitMethod::Qr,
                    "direct" => FitMethod::Direct,
                    _ => bail!("method={v}: expected qr or direct"),
                }
            }
            "samples" => self.samples = (!v.is_empty()).then(|| PathBuf::from(v)),
            "mpo" => {
                self.mpo = match v {
                    "nn" => MpoKind::Nn,
                    "ising" => MpoKind::Ising,
                    "expdecay" => MpoKind::Expdecay,
                    "powerlaw" => MpoKind::Powerlaw,
                    _ => bail!("mpo={v}: expected nn, ising, expdecay or powerlaw"),
                }
            }
            "state" => self.state = v.to_string(),
            "random_d" => self.random_d = num(key, v)?,
            "shift" => self.shift = if v.is_empty() { None } else { Some(num(key, v)?) },
            "window" => self.window = num(key, v)?,
            "optimize" => self.optimize = num(key, v)?,
            "beta" => self.beta = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "level" => {
                self.level = match v {
                    "fast" => Level::Fast,
                    "full" => Level::Full,
                    _ => bail!("level={v}: expected fast or full"),
                }
            }
            "fault" => {
                self.fault = match v {
                    "none" => Fault::None,
                    "c1" => Fault::C1,
                    _ => bail!("fault={v}: expected none or c1"),
                }
            }
            other => bail!("unknown configuration key `{other}`"),
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, item: &str) -> Result<()> {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got `{item}`"))?;
        self.set(k, v)
    }

    /// Applies a config file: one assignment per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in {}", p.display()))?;
        }
        for o in overrides {
            cfg.assign(o)?;
        }
        Ok(cfg)
    }
}
