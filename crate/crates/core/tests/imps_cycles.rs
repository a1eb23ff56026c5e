use mpoforge_core::gate_mpo::{trotter_plan, Model};
use mpoforge_core::imps::{condition_ratio, gauge_condition, truncate, UniformMps};
use mpoforge_core::linalg::max_abs;
use mpoforge_core::C64;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_symmetric(bond: usize, seed: u64) -> UniformMps<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mats = (0..2)
        .map(|_| {
            let m = DMatrix::from_fn(bond, bond, |_, _| rng.gen_range(-1.0..1.0));
            (&m + m.transpose()) * 0.5
        })
        .collect();
    UniformMps::new(mats).unwrap().normalize().unwrap().0
}

fn random_complex_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    let m = DMatrix::from_fn(n, n, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    (&m + m.transpose()) * C64::new(0.5, 0.0)
}

#[test]
fn hundred_cycles_stay_real_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let plans = [
        trotter_plan(Model::Tfi { b: 1.0 }, 0.05).unwrap(),
        trotter_plan(Model::Tfi { b: 0.4 }, 0.2).unwrap(),
        trotter_plan(Model::Heisenberg, 0.1).unwrap(),
    ];
    let mut s = random_symmetric(3, 9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let plan = &plans[rng.gen_range(0..plans.len())];
        let g = &plan.gates[rng.gen_range(0..plan.gates.len())];
        s = s.apply_gate(g).unwrap();
        s = truncate(&s, 6).unwrap().mps;
        s = s.normalize().unwrap().0;
        worst = worst.max(s.max_asymmetry());
    }
    assert!(worst <= 1e-12, "asymmetry {worst:e}");
    assert!(s.matrices().iter().flatten().all(|x| x.is_finite()));
}

#[test]
fn gauge_is_identity_on_real_symmetric_fixed_points() {
    let s = random_symmetric(5, 3);
    let x = s.fixed_points().unwrap().right.map(|v| C64::new(v, 0.0));
    let g = gauge_condition(&x).unwrap();
    assert_eq!(g.q, DMatrix::identity(5, 5));
    assert_eq!(g.x, x);
    assert_eq!(g.ratios, vec![condition_ratio(&x).unwrap()]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gauge_is_complex_orthogonal_and_monotone(seed in 0u64..10_000, n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_complex_symmetric(n, &mut rng);
        let g = gauge_condition(&x).unwrap();
        let qqt = &g.q * g.q.transpose();
        prop_assert!(max_abs(&(qqt - DMatrix::identity(n, n))) <= 1e-10);
        for w in g.ratios.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        let moved = &g.q * &x * g.q.transpose();
        prop_assert!(max_abs(&(moved - &g.x)) <= 1e-9 * max_abs(&x));
        prop_assert!((condition_ratio(&g.x).unwrap() - g.ratios.last().unwrap()).abs() <= 1e-10);
    }
}
