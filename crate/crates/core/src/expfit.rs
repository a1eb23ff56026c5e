//! Sums of exponentials `f(k) ≈ Σᵢ xᵢ λᵢᵏ` fitted through the shift
//! structure of the Hankel matrix of samples.

use std::io::BufRead;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig_general, qr_economical, solve_least_squares, svd, C64};

/// Exponents closer than this are treated as one.
const DUPLICATE_TOL: f64 = 1e-12;
/// Imaginary parts of real-input evaluations below this are round-off.
const IMAG_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Direct,
    #[default]
    Qr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpSumFit {
    pub exponents: Vec<C64>,
    pub weights: Vec<C64>,
    /// Number of samples `N` the fit was built from.
    pub range: usize,
    /// `Σ_{k=1..N} |f(k) − f̂(k)|`.
    pub cost: f64,
    pub max_deviation: f64,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exponents {
    /// Descending magnitude.
    pub values: Vec<C64>,
    pub diagnostics: Vec<String>,
}

/// `F[r, c] = f(r + c + 1)` with `samples[k − 1] = f(k)`; shape
/// `(N − n + 1) × n`.
pub fn build_hankel(samples: &[f64], n: usize) -> Result<DMatrix<f64>> {
    let big_n = samples.len();
    if n == 0 || big_n <= n {
        return Err(Error::InvalidArgument(format!(
            "Hankel matrix needs N > n >= 1, got N = {big_n}, n = {n}"
        )));
    }
    Ok(DMatrix::from_fn(big_n - n + 1, n, |r, c| samples[r + c]))
}

/// Numerical rank with the usual `max(m, n)·ε·σ_max` cutoff.
fn numerical_rank(m: &DMatrix<f64>) -> Result<usize> {
    let s = svd(m)?.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let cut = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax;
    Ok(s.iter().filter(|&&v| v > cut).count())
}

pub fn fit_exponents(samples: &[f64], n: usize, method: FitMethod) -> Result<Exponents> {
    if samples.len() < n + 2 {
        return Err(Error::InvalidArgument(format!(
            "{n} exponents need at least {} samples, got {}",
            n + 2,
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fit samples"));
    }
    let mut diagnostics = Vec::new();
    if n == 0 {
        return Ok(Exponents {
            values: vec![],
            diagnostics,
        });
    }
    let mut f = build_hankel(samples, n)?;
    let rank = numerical_rank(&f)?;
    if rank < n {
        diagnostics.push(format!("Hankel rank {rank} < {n}; fitting {rank} exponents"));
        if rank == 0 {
            return Ok(Exponents {
                values: vec![],
                diagnostics,
            });
        }
        f = build_hankel(samples, rank)?;
    }
    let rows = f.nrows() - 1;
    let basis = match method {
        FitMethod::Direct => f,
        FitMethod::Qr => qr_economical(&f)?.0,
    };
    let first = basis.rows(0, rows).into_owned();
    let last = basis.rows(1, rows).into_owned();
    let shift = solve_least_squares(&first, &last)?;
    let mut values = eig_general(&shift)?.values;
    values.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let unstable = values.iter().filter(|l| l.norm() > 1.0).count();
    if unstable > 0 {
        diagnostics.push(format!("{unstable} exponents with |λ| > 1"));
    }
    Ok(Exponents { values, diagnostics })
}

/// Least-squares weights for fixed exponents over `k = 1..N`. Returns the
/// surviving exponents (duplicates merged) with their weights.
pub fn fit_weights(samples: &[f64], exponents: &[C64]) -> Result<(Vec<C64>, Vec<C64>, Vec<String>)> {
    let mut diagnostics = Vec::new();
    let mut kept: Vec<C64> = Vec::with_capacity(exponents.len());
    for &l in exponents {
        if kept.iter().any(|k| (k - l).norm() <= DUPLICATE_TOL) {
            diagnostics.push(format!("merged duplicate exponent {l}"));
        } else {
            kept.push(l);
        }
    }
    if kept.is_empty() {
        return Ok((kept, vec![], diagnostics));
    }
    let big_n = samples.len();
    let mut vander = DMatrix::<C64>::zeros(big_n, kept.len());
    for (c, &l) in kept.iter().enumerate() {
        let mut p = l;
        for r in 0..big_n {
            vander[(r, c)] = p;
            p *= l;
        }
    }
    let s = svd(&vander)?.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    if s.iter().any(|&v| v <= big_n as f64 * f64::EPSILON * smax) {
        diagnostics.push("rank-deficient Vandermonde system; minimum-norm weights".into());
    }
    let rhs = DMatrix::from_iterator(big_n, 1, samples.iter().map(|&v| C64::new(v, 0.0)));
    let x = solve_least_squares(&vander, &rhs)?;
    Ok((kept, x.iter().copied().collect(), diagnostics))
}

/// Exponents and weights in one call, with metrics against `samples`.
pub fn fit(samples: &[f64], n: usize, method: FitMethod) -> Result<ExpSumFit> {
    let ex = fit_exponents(samples, n, method)?;
    let (exponents, weights, more) = fit_weights(samples, &ex.values)?;
    let mut fit = ExpSumFit {
        exponents,
        weights,
        range: samples.len(),
        cost: 0.0,
        max_deviation: 0.0,
        diagnostics: ex.diagnostics,
    };
    fit.diagnostics.extend(more);
    let (cost, max_deviation) = fit.metrics(samples)?;
    fit.cost = cost;
    fit.max_deviation = max_deviation;
    Ok(fit)
}

impl ExpSumFit {
    pub fn evaluate_complex(&self, k: usize) -> C64 {
        self.exponents
            .iter()
            .zip(&self.weights)
            .map(|(l, x)| x * l.powu(k as u32))
            .sum()
    }

    /// Real value at `k`; fails if the imaginary part is not round-off.
    pub fn evaluate(&self, k: usize) -> Result<f64> {
        let z = self.evaluate_complex(k);
        if z.im.abs() > IMAG_TOL * z.re.abs().max(1.0) {
            return Err(Error::UnstableFit(format!(
                "imaginary part {:.3e} at k = {k}; exponents are not conjugate-paired",
                z.im
            )));
        }
        Ok(z.re)
    }

    pub fn evaluate_range(&self, ks: std::ops::RangeInclusive<usize>) -> Result<Vec<f64>> {
        ks.map(|k| self.evaluate(k)).collect()
    }

    /// `(Σ|f(k) − f̂(k)|, max|f(k) − f̂(k)|)` over `k = 1..samples.len()`.
    pub fn metrics(&self, samples: &[f64]) -> Result<(f64, f64)> {
        let mut cost = 0.0;
        let mut worst = 0.0f64;
        for (i, &f) in samples.iter().enumerate() {
            let dev = (f - self.evaluate(i + 1)?).abs();
            cost += dev;
            worst = worst.max(dev);
        }
        Ok((cost, worst))
    }
}

/// `k^{−p}` for `k = 1..=n_fit`.
pub fn power_law_samples(p: f64, n_fit: usize) -> Vec<f64> {
    (1..=n_fit).map(|k| (k as f64).powf(-p)).collect()
}

/// Reads `k, f(k)` rows. Blank lines, `#` comments and a non-numeric header
/// row are skipped; `k` must run 1, 2, 3, ... without gaps.
pub fn read_samples_csv<R: BufRead>(reader: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::InvalidArgument(format!("reading samples: {e}")))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = t.split(',').map(str::trim).collect();
        if cols.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "line {}: expected two columns, found {}",
                lineno + 1,
                cols.len()
            )));
        }
        let (Ok(k), Ok(v)) = (cols[0].parse::<usize>(), cols[1].parse::<f64>()) else {
            if out.is_empty() && lineno == 0 {
                continue;
            }
            return Err(Error::InvalidArgument(format!(
                "line {}: unparsable row {t:?}",
                lineno + 1
            )));
        };
        if k != out.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "line {}: expected k = {}, found {k}",
                lineno + 1,
                out.len() + 1
            )));
        }
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn samples(n: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
        (1..=n).map(f).collect()
    }

    fn sorted_re(v: &[C64]) -> Vec<f64> {
        let mut r: Vec<f64> = v.iter().map(|z| z.re).collect();
        r.sort_by(|a, b| b.total_cmp(a));
        r
    }

    #[test]
    fn hankel_layout() {
        let f = build_hankel(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(f, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 3.0, 3.0, 4.0]));
        assert!(build_hankel(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn hankel_of_constant_and_geometric_has_rank_one() {
        let c = build_hankel(&[2.5; 12], 4).unwrap();
        assert_eq!(numerical_rank(&c).unwrap(), 1);
        let g = build_hankel(&samples(12, |k| 0.7f64.powi(k as i32)), 4).unwrap();
        assert_eq!(numerical_rank(&g).unwrap(), 1);
    }

    #[test]
    fn single_exponential() {
        let s = samples(20, |k| 0.5f64.powi(k as i32));
        for method in [FitMethod::Direct, FitMethod::Qr] {
            let fit = fit(&s, 1, method).unwrap();
            assert!((fit.exponents[0] - C64::new(0.5, 0.0)).norm() < 1e-12);
            assert!((fit.weights[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn two_real_terms() {
        let s = samples(50, |k| 3.0 * 0.9f64.powi(k as i32) - 0.3f64.powi(k as i32));
        let fit = fit(&s, 2, FitMethod::Qr).unwrap();
        let l = sorted_re(&fit.exponents);
        assert!((l[0] - 0.9).abs() < 1e-10 && (l[1] - 0.3).abs() < 1e-10);
        let x = sorted_re(&fit.weights);
        assert!((x[0] - 3.0).abs() < 1e-10 && (x[1] + 1.0).abs() < 1e-10);
        assert!(fit.cost < 1e-10);
    }

    #[test]
    fn oscillating_input_gives_conjugate_pair() {
        let s = samples(40, |k| (k as f64).cos() / 2f64.powi(k as i32));
        let ex = fit_exponents(&s, 2, FitMethod::Qr).unwrap().values;
        let target = C64::from_polar(0.5, 1.0);
        let hit = |t: C64| ex.iter().any(|l| (l - t).norm() < 1e-8);
        assert!(hit(target) && hit(target.conj()), "{ex:?}");
    }

    #[test]
    fn rank_collapse_returns_fewer_exponents() {
        let s = samples(30, |k| 0.8f64.powi(k as i32));
        let ex = fit_exponents(&s, 3, FitMethod::Qr).unwrap();
        assert_eq!(ex.values.len(), 1);
        assert!(!ex.diagnostics.is_empty());
    }

    #[test]
    fn extrapolation_of_exact_fit() {
        let s = samples(30, |k| 0.95f64.powi(k as i32));
        let fit = fit(&s, 1, FitMethod::Qr).unwrap();
        let v = fit.evaluate(40).unwrap();
        assert!((v / 0.95f64.powi(40) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn empty_fit_is_zero() {
        let fit = ExpSumFit {
            exponents: vec![],
            weights: vec![],
            range: 0,
            cost: 0.0,
            max_deviation: 0.0,
            diagnostics: vec![],
        };
        assert_eq!(fit.evaluate(7).unwrap(), 0.0);
    }

    #[test]
    fn unpaired_complex_exponent_is_rejected() {
        let fit = ExpSumFit {
            exponents: vec![C64::new(0.0, 0.5)],
            weights: vec![C64::new(1.0, 0.0)],
            range: 1,
            cost: 0.0,
            max_deviation: 0.0,
            diagnostics: vec![],
        };
        assert!(matches!(fit.evaluate(1), Err(Error::UnstableFit(_))));
    }

    #[test]
    fn duplicate_exponents_merge() {
        let s = samples(10, |k| 0.5f64.powi(k as i32));
        let (kept, x, diag) = fit_weights(&s, &[C64::new(0.5, 0.0), C64::new(0.5, 0.0)]).unwrap();
        assert_eq!(kept.len(), 1);
        assert!((x[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert_eq!(diag.len(), 1);
    }

    #[test]
    fn shift_property_on_exact_input() {
        let (l, x) = ([0.9, -0.4, 0.2], [1.0, 0.5, -2.0]);
        let s = samples(40, |k| (0..3).map(|i| x[i] * f64::powi(l[i], k as i32)).sum());
        let f = build_hankel(&s, 3).unwrap();
        let rows = f.nrows() - 1;
        let (f1, f2) = (f.rows(0, rows), f.rows(1, rows));
        // Columns of the Vandermonde factor: F Q = W, with F₁ Q Λ = F₂ Q.
        let dec = eig_general(&solve_least_squares(&f1.into_owned(), &f2.into_owned()).unwrap()).unwrap();
        let q = dec.vectors;
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(dec.values.clone()));
        let f1c = crate::linalg::to_complex(&f.rows(0, rows).into_owned());
        let f2c = crate::linalg::to_complex(&f.rows(1, rows).into_owned());
        let lhs = &f1c * &q * lam;
        let rhs = &f2c * &q;
        assert!(crate::linalg::max_abs_diff(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn power_law_targets() {
        for (p, bound) in [(1.0, 1e-3), (2.0, 1e-5), (3.0, 1e-7)] {
            let s = power_law_samples(p, 1000);
            let fit = fit(&s, 10, FitMethod::Qr).unwrap();
            assert!(fit.max_deviation <= bound, "p = {p}: {:.3e}", fit.max_deviation);
            if p == 3.0 {
                assert!(fit.cost <= 2e-5, "cost {:.3e}", fit.cost);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let text = "k,f\n1, 0.5\n2,0.25\n# note\n\n3,0.125\n";
        assert_eq!(read_samples_csv(text.as_bytes()).unwrap(), vec![0.5, 0.25, 0.125]);
        assert!(read_samples_csv("1,0.5\n3,0.1\n".as_bytes()).is_err());
        assert!(read_samples_csv("1,0.5,7\n".as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn exact_sums_are_recovered(
            m in 1usize..=4,
            extra in 0usize..=2,
            seeds in proptest::collection::vec((0.0f64..1.0, 0.5f64..2.0, any::<bool>()), 4),
        ) {
            let n = (m + extra).min(6);
            // separated exponents in (−1, 1)
            let mut lams: Vec<f64> = Vec::new();
            for (u, _, neg) in seeds.iter().take(m) {
                let mut l = 0.1 + 0.85 * u;
                if *neg { l = -l; }
                if lams.iter().all(|x| (x - l).abs() > 0.05) {
                    lams.push(l);
                }
            }
            let xs: Vec<f64> = seeds.iter().map(|s| s.1).collect();
            let s = samples(200, |k| lams.iter().zip(&xs).map(|(l, x)| x * l.powi(k as i32)).sum());
            let ex = fit_exponents(&s, n, FitMethod::Qr).unwrap().values;
            for l in &lams {
                let best = ex.iter().map(|e| (e - C64::new(*l, 0.0)).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(best < 1e-8, "missed {l}: {ex:?}");
            }
        }

        #[test]
        fn methods_agree_on_well_conditioned_input(a in 0.3f64..0.9, b in -0.6f64..0.2) {
            prop_assume!((a - b).abs() > 0.1);
            let s = samples(60, |k| a.powi(k as i32) + 0.5 * b.powi(k as i32));
            let d = fit_exponents(&s, 2, FitMethod::Direct).unwrap().values;
            let q = fit_exponents(&s, 2, FitMethod::Qr).unwrap().values;
            prop_assert_eq!(d.len(), q.len());
            for (x, y) in d.iter().zip(&q) {
                prop_assert!((x - y).norm() < 1e-8);
            }
        }
    }
}
