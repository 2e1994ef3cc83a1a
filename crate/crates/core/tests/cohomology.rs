mod common;

use common::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use tori_core::cohomology::*;
use tori_core::{FourierSeries, Grid, TorusError};

const OMEGA: [f64; 2] = [std::f64::consts::SQRT_2, 1.7320508075688772];

fn beta() -> Vec<f64> {
    vec![2.5f64.sqrt(), 2.8f64.sqrt()]
}

fn freq() -> FrequencyData {
    FrequencyData::new(OMEGA.to_vec(), beta()).unwrap()
}

/// Random smooth series on a 16×16 grid with geometrically decaying modes
/// and no Nyquist content.
fn smooth(seed: &[f64], rows: usize, cols: usize) -> FourierSeries {
    let grid = Grid::uniform(2, 16).unwrap();
    let len = grid.len();
    let coeffs = (0..rows * cols * len)
        .map(|i| {
            if grid.is_nyquist(i % len) {
                return Complex64::new(0.0, 0.0);
            }
            let k = grid.mode(i % len);
            let decay = (-0.6 * (k[0].abs() + k[1].abs()) as f64).exp();
            let a = seed[i % seed.len()];
            let b = seed[(i * 7 + 3) % seed.len()];
            Complex64::new(a, b) * decay
        })
        .collect();
    FourierSeries::from_coeffs(&grid, rows, cols, coeffs).unwrap()
}

fn without_average(v: &FourierSeries) -> FourierSeries {
    let avg = v.average();
    v.add_constant(&(-avg)).unwrap()
}

#[test]
fn solvers_agree_with_dense_operators() {
    let errs = cohomology_oracle_run(10, 8, 11);
    assert!(errs.zero_average < 1e-11, "{errs:?}");
    assert!(errs.melnikov1 < 1e-11, "{errs:?}");
    assert!(errs.melnikov2 < 1e-11, "{errs:?}");
}

#[test]
fn zero_average_rejects_nonzero_mean() {
    let v = smooth(&[0.3, -0.2, 0.5], 1, 1);
    let err = solve_zero_average(&v, &OMEGA, &DMatrix::zeros(1, 1), &SolverOptions::default());
    assert!(matches!(err, Err(TorusError::Unsolvable { .. })));
}

#[test]
fn resonant_frequency_reported_as_small_divisor() {
    let grid = Grid::uniform(2, 8).unwrap();
    let v = FourierSeries::from_fn(&grid, 1, 1, |t, o| o[0] = (t[0] - t[1]).sin()).unwrap();
    let err = solve_zero_average(&v, &[1.0, 1.0], &DMatrix::zeros(1, 1), &SolverOptions::default());
    assert!(matches!(err, Err(TorusError::SmallDivisor { .. })));
}

#[test]
fn normal_frequency_on_a_tangent_harmonic_is_rejected() {
    let freq = FrequencyData::new(vec![1.0], vec![2.0]).unwrap();
    let grid = Grid::new(&[8]).unwrap();
    let v = FourierSeries::zeros(&grid, 2, 1);
    let err = solve_melnikov1(&v, &freq, Side::Left, &SolverOptions::default());
    assert!(matches!(err, Err(TorusError::SmallDivisor { .. })));
}

#[test]
fn unreachable_singular_average_is_unsolvable() {
    let grid = Grid::uniform(2, 8).unwrap();
    let v = FourierSeries::constant(&grid, &DMatrix::identity(4, 4));
    let err = solve_melnikov2(&v, &freq(), &SolverOptions::default());
    assert!(matches!(err, Err(TorusError::Unsolvable { .. })));
}

#[test]
fn zero_rhs_gives_zero_solution() {
    let grid = Grid::uniform(2, 8).unwrap();
    let v = FourierSeries::zeros(&grid, 4, 4);
    let sol = solve_melnikov2(&v, &freq(), &SolverOptions::default()).unwrap();
    assert_eq!(sol.defect, 0.0);
    assert_eq!(sol.u.sup_norm(), 0.0);
}

#[test]
fn divisor_audit_finds_the_smallest_combination() {
    let grid = Grid::uniform(2, 16).unwrap();
    let audit = audit_divisors(&freq(), &grid, 1e-8);
    assert!(audit.passes());
    let mut brute = f64::INFINITY;
    for idx in 0..grid.len() {
        if grid.is_nyquist(idx) || idx == 0 {
            continue;
        }
        brute = brute.min(grid.mode_dot(idx, &OMEGA).abs());
    }
    assert!((audit.min_tangent - brute).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_average_solution_satisfies_equation(seed in prop::collection::vec(-1.0f64..1.0, 5..9), avg in -2.0f64..2.0) {
        let v = without_average(&smooth(&seed, 2, 1));
        let target = DMatrix::from_element(2, 1, avg);
        let u = solve_zero_average(&v, &OMEGA, &target, &SolverOptions::default()).unwrap();
        let back = u.lie_derivative(&OMEGA).unwrap();
        prop_assert!((&back - &v).sup_norm() <= 1e-12 * v.sup_norm().max(1.0));
        prop_assert!((u.average() - target).amax() < 1e-15);
    }

    #[test]
    fn first_melnikov_solutions_satisfy_equations(seed in prop::collection::vec(-1.0f64..1.0, 5..9)) {
        let f = freq();
        let g = normal_generator(&[], &f.beta);
        let v = smooth(&seed, 4, 3);
        let u = solve_melnikov1(&v, &f, Side::Left, &SolverOptions::default()).unwrap();
        let lhs = &u.lie_derivative(&f.omega).unwrap() + &u.left_mul_const(&g).unwrap();
        prop_assert!((&lhs - &v).sup_norm() <= 1e-12 * v.sup_norm());

        let v = v.transpose();
        let u = solve_melnikov1(&v, &f, Side::Right, &SolverOptions::default()).unwrap();
        let lhs = &u.lie_derivative(&f.omega).unwrap() - &u.right_mul_const(&g).unwrap();
        prop_assert!((&lhs - &v).sup_norm() <= 1e-12 * v.sup_norm());
    }

    #[test]
    fn second_melnikov_reproduces_projected_rhs(seed in prop::collection::vec(-1.0f64..1.0, 5..9)) {
        let f = freq();
        let g = normal_generator(&[], &f.beta);
        let v = smooth(&seed, 4, 4);
        // Remove the part of the averages outside the image.
        let avg = v.average();
        let mut fix = DMatrix::zeros(4, 4);
        for i in 0..2 {
            let (a, b) = (i, i + 2);
            let s = 0.5 * (avg[(a, a)] + avg[(b, b)]);
            let t = 0.5 * (avg[(a, b)] - avg[(b, a)]);
            fix[(a, a)] = -s;
            fix[(b, b)] = -s;
            fix[(a, b)] = -t;
            fix[(b, a)] = t;
        }
        let v = v.add_constant(&fix).unwrap();
        let sol = solve_melnikov2(&v, &f, &SolverOptions::default()).unwrap();
        prop_assert!(sol.defect < 1e-15);
        let u = &sol.u;
        let lhs = &(&u.lie_derivative(&f.omega).unwrap() + &u.left_mul_const(&g).unwrap()) - &u.right_mul_const(&g).unwrap();
        prop_assert!((&lhs - &v).sup_norm() <= 1e-12 * v.sup_norm());
        // Kernel convention on the free averages.
        let ua = u.average();
        for i in 0..2 {
            let (a, b) = (i, i + 2);
            prop_assert!((ua[(a, a)] + ua[(b, b)]).abs() < 1e-15);
            prop_assert!((ua[(a, b)] - ua[(b, a)]).abs() < 1e-15);
        }
    }

    #[test]
    fn solvers_are_linear(s1 in prop::collection::vec(-1.0f64..1.0, 5..9), s2 in prop::collection::vec(-1.0f64..1.0, 5..9), a in -3.0f64..3.0) {
        let f = freq();
        let opts = SolverOptions::default();
        let (v1, v2) = (smooth(&s1, 4, 2), smooth(&s2, 4, 2));
        let combo = &v1.scale(a) + &v2;
        let lhs = solve_melnikov1(&combo, &f, Side::Left, &opts).unwrap();
        let rhs = &solve_melnikov1(&v1, &f, Side::Left, &opts).unwrap().scale(a) + &solve_melnikov1(&v2, &f, Side::Left, &opts).unwrap();
        prop_assert!((&lhs - &rhs).sup_norm() <= 1e-12 * (1.0 + rhs.sup_norm()));

        let (w1, w2) = (without_average(&v1), without_average(&v2));
        let zero = DMatrix::zeros(4, 2);
        let lhs = solve_zero_average(&(&w1.scale(a) + &w2), &f.omega, &zero, &opts).unwrap();
        let rhs = &solve_zero_average(&w1, &f.omega, &zero, &opts).unwrap().scale(a) + &solve_zero_average(&w2, &f.omega, &zero, &opts).unwrap();
        prop_assert!((&lhs - &rhs).sup_norm() <= 1e-12 * (1.0 + rhs.sup_norm()));
    }
}
