//! Independent checks of the simplex solver: a KKT linear-system solve for the
//! equality-constrained problem and exhaustive enumeration of zero sets for
//! the full simplex problem.

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vacalc::solver::{build_basis, objective, solve_equality, solve_simplex, ConstraintSpec};

use common::oracles::{exhaustive_simplex, kkt_equality};

fn random_instance(rng: &mut ChaCha8Rng, n: usize, j: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mut x = DMatrix::from_fn(n, j, |_, _| rng.random::<f64>());
    for mut col in x.column_iter_mut() {
        let s = col.sum();
        col /= s;
    }
    let y = DVector::from_fn(n, |_, _| rng.random::<f64>());
    let s = y.sum();
    (y / s, x)
}

#[test]
fn equality_solve_matches_kkt_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..200 {
        let (y, x) = random_instance(&mut rng, 8, 3);
        let ours = solve_equality(&y, &x, &build_basis(3, 1.0).unwrap()).unwrap();
        let oracle = kkt_equality(&y, &x, 1.0).unwrap();
        assert!((ours.beta_sum() - 1.0).abs() < 1e-10);
        assert!((ours.beta - oracle).abs().max() < 1e-9);
    }
}

trait BetaSum {
    fn beta_sum(&self) -> f64;
}

impl BetaSum for vacalc::solver::EqualitySolution {
    fn beta_sum(&self) -> f64 {
        self.beta.sum()
    }
}

#[test]
fn simplex_solve_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (y, x) = random_instance(&mut rng, 20, 4);
        let ours = solve_simplex(&y, &x, &ConstraintSpec::free()).unwrap();
        let (_, best) = exhaustive_simplex(&y, &x, 1.0);
        worst = worst.max(ours.objective - best);
    }
    assert!(worst <= 1e-6, "stepwise deletion exceeded the global optimum by {worst}");
}

#[test]
fn boundary_solution_recovered() {
    // truth (0.8, 0.2, 0) with a third column close to the first two's mix
    let x = DMatrix::from_row_slice(
        5,
        3,
        &[0.40, 0.05, 0.30, 0.30, 0.10, 0.26, 0.15, 0.25, 0.18, 0.10, 0.30, 0.14, 0.05, 0.30, 0.12],
    );
    let truth = DVector::from_column_slice(&[0.8, 0.2, 0.0]);
    let noise = DVector::from_column_slice(&[0.004, -0.003, 0.002, -0.004, 0.001]);
    let y = &x * &truth + noise;
    let unconstrained = kkt_equality(&y, &x, 1.0).unwrap();
    assert!(unconstrained[2] < 0.0, "fixture must force a negative coefficient");
    let ours = solve_simplex(&y, &x, &ConstraintSpec::free()).unwrap();
    assert_eq!(ours.active_zero_set, vec![2]);
    assert_eq!(ours.beta[2], 0.0);
    let grid = vacalc::solver::brute_force_simplex(&y, &x, &ConstraintSpec::free(), 1e-3).unwrap();
    for i in 0..3 {
        assert!((ours.beta[i] - grid[i]).abs() <= 1e-3 + 1e-12, "coordinate {i}");
    }
    assert!((ours.beta[0] - 0.8).abs() < 0.05);
}

#[test]
fn grid_minimum_beats_random_simplex_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (y, x) = random_instance(&mut rng, 10, 3);
    let grid = vacalc::solver::brute_force_simplex(&y, &x, &ConstraintSpec::free(), 1e-3).unwrap();
    let best = objective(&y, &x, &grid);
    for _ in 0..100 {
        let mut p: Vec<f64> = (0..3).map(|_| -rng.random::<f64>().ln()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        assert!(best <= objective(&y, &x, &p) + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permuting_columns_permutes_beta(seed in any::<u64>(), shift in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, x) = random_instance(&mut rng, 12, 4);
        let perm: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
        let xp = DMatrix::from_fn(12, 4, |r, c| x[(r, perm[c])]);
        let a = solve_simplex(&y, &x, &ConstraintSpec::free()).unwrap();
        let b = solve_simplex(&y, &xp, &ConstraintSpec::free()).unwrap();
        for c in 0..4 {
            prop_assert!((b.beta[c] - a.beta[perm[c]]).abs() < 1e-9);
        }
    }

    #[test]
    fn constraint_and_sign_invariants(seed in any::<u64>(), j in 2usize..6, fix in proptest::option::of(0.0f64..0.5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, x) = random_instance(&mut rng, 15, j);
        let spec = match fix {
            Some(v) => ConstraintSpec::with_fixed([(0, v)]).unwrap(),
            None => ConstraintSpec::free(),
        };
        let r = solve_simplex(&y, &x, &spec).unwrap();
        let free_sum: f64 = (0..j).filter(|i| !spec.fixed().contains_key(i)).map(|i| r.beta[i]).sum();
        prop_assert!((free_sum - spec.total()).abs() <= 1e-10);
        prop_assert!(r.beta.values().iter().all(|&b| b >= 0.0));
        for &z in &r.active_zero_set {
            prop_assert_eq!(r.beta[z], 0.0);
        }
    }

    #[test]
    fn column_space_response_recovers_beta(seed in any::<u64>(), j in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, x) = random_instance(&mut rng, 3 * j, j);
        let mut truth: Vec<f64> = (0..j).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = truth.iter().sum();
        truth.iter_mut().for_each(|v| *v /= s);
        let y = &x * DVector::from_column_slice(&truth);
        let e = solve_equality(&y, &x, &build_basis(j, 1.0).unwrap()).unwrap();
        for i in 0..j {
            prop_assert!((e.beta[i] - truth[i]).abs() < 1e-10);
        }
    }
}
