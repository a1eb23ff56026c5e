//! Closed-form ground-state energies per site and small-ring exact
//! diagonalization used to cross-check them.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{leading_eigenpair, EigenOptions, FnMap};

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Composite 20-point Gauss-Legendre over `[a, b]` with `panels` pieces.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let rule = gauss_legendre(20);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let mid = a + (p as f64 + 0.5) * h;
            rule.iter().map(|&(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

/// Energy per site of `H = −Σ Z_i Z_{i+1} − B Σ X_i` in the thermodynamic
/// limit, `−(1/2π) ∫₀^{2π} √(1 + B² − 2B cos k) dk`.
pub fn tfi_energy_density(b: f64) -> f64 {
    -integrate(|k| (1.0 + b * b - 2.0 * b * k.cos()).sqrt(), 0.0, 2.0 * PI, 64) / (2.0 * PI)
}

/// Free-fermion ground energy of the `n`-site TFI ring (even-parity sector,
/// antiperiodic momenta), valid for `b ≥ 0`.
pub fn tfi_ring_free_fermion(n: usize, b: f64) -> f64 {
    -(0..n)
        .map(|m| {
            let k = PI * (2 * m + 1) as f64 / n as f64;
            (1.0 + b * b - 2.0 * b * k.cos()).sqrt()
        })
        .sum::<f64>()
}

/// Energy per site of `H = Σ (XX + YY + ZZ)`, `1 − 4 ln 2`.
pub fn heisenberg_energy_density() -> f64 {
    1.0 - 4.0 * std::f64::consts::LN_2
}

/// Ground energy of an `n`-site ring by Lanczos on `c − H`.
fn ring_ground_energy(n: usize, bound: f64, apply: impl Fn(&[f64], &mut [f64])) -> Result<f64> {
    if !(2..=20).contains(&n) {
        return Err(Error::TooLarge(format!("exact diagonalization on {n} sites")));
    }
    let dim = 1usize << n;
    let map = FnMap::new(dim, |x: &[f64], y: &mut [f64]| {
        apply(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = bound * xi - *yi;
        }
    });
    // Deterministic pseudo-random start so every symmetry sector is present.
    let start: Vec<f64> = (0..dim)
        .map(|s| ((s as f64 * 12.9898 + 1.0).sin() * 43758.5453).fract() - 0.5)
        .collect();
    let opts = EigenOptions::new(true).tol(1e-12).start(start);
    let pair = leading_eigenpair(&map, &opts)?;
    Ok(bound - pair.value)
}

/// Exact ground energy of the `n`-site TFI ring.
pub fn tfi_ring_exact(n: usize, b: f64) -> Result<f64> {
    let bound = n as f64 * (1.0 + b.abs()) + 1.0;
    ring_ground_energy(n, bound, |x, y| {
        for (s, ys) in y.iter_mut().enumerate() {
            let mut diag = 0.0;
            for i in 0..n {
                let j = (i + 1) % n;
                let same = ((s >> i) & 1) == ((s >> j) & 1);
                diag -= if same { 1.0 } else { -1.0 };
            }
            let mut acc = diag * x[s];
            for i in 0..n {
                acc -= b * x[s ^ (1 << i)];
            }
            *ys = acc;
        }
    })
}

/// Exact ground energy of the `n`-site Heisenberg ring `Σ (XX + YY + ZZ)`.
pub fn heisenberg_ring_exact(n: usize) -> Result<f64> {
    let bound = 3.0 * n as f64 + 1.0;
    ring_ground_energy(n, bound, |x, y| {
        y.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..(1usize << n) {
            let xs = x[s];
            for i in 0..n {
                let j = (i + 1) % n;
                if ((s >> i) & 1) == ((s >> j) & 1) {
                    y[s] += xs;
                } else {
                    y[s] -= xs;
                    // XX + YY = 2(σ⁺σ⁻ + σ⁻σ⁺) swaps antiparallel neighbours
                    y[s ^ (1 << i) ^ (1 << j)] += 2.0 * xs;
                }
            }
        }
    })
}

/// Least-squares fit of `e(n) = a + c/n²` to per-site ring energies;
/// returns `a`.
pub fn extrapolate_inverse_square(points: &[(usize, f64)]) -> f64 {
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(n, _)| 1.0 / (n * n) as f64).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, e)| e).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    my - sxy / sxx * mx
}
