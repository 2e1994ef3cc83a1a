use nalgebra::DMatrix;
use std::f64::consts::TAU;
use tori_core::init::{build_initial, pendulum_circle};
use tori_core::model::{make_pendula, CoupledPendula, ModelFamily, PendulaParams};
use tori_core::newton::{NewtonOptions, StepReport};
use tori_core::verify::*;
use tori_core::TorusError;

const Z0: [f64; 8] = [0.2, -0.1, 0.3, 0.5, 0.05, -0.02, -0.1, 0.08];

#[test]
fn long_orbits_conserve_energy() {
    let model = make_pendula(&PendulaParams::reference(0.1)).unwrap();
    let traj = integrate(&model, &[0.01, -0.02], &Z0, 100.0, 1.0, MIN_TOLERANCE).unwrap();
    assert_eq!(traj.times.len(), 101);
    assert!(traj.energy_drift <= 1e-10, "{:e}", traj.energy_drift);
}

#[test]
fn linearized_flow_is_symplectic_and_matches_differences() {
    let model = make_pendula(&PendulaParams::reference(0.1)).unwrap();
    let lam = [0.0, 0.0];
    let t = 5.0;
    let v = integrate_variational(&model, &lam, &Z0, &DMatrix::identity(8, 8), t, t, 1e-12).unwrap();
    let m = v.matrices.last().unwrap();
    assert!((m.determinant() - 1.0).abs() < 1e-9);
    let om = model.symplectic_form(&Z0);
    assert!((m.transpose() * &om * m - &om).amax() < 1e-9);

    let h = 1e-6;
    for c in 0..8 {
        let mut zp = Z0;
        let mut zm = Z0;
        zp[c] += h;
        zm[c] -= h;
        let fp = integrate(&model, &lam, &zp, t, t, 1e-12).unwrap();
        let fm = integrate(&model, &lam, &zm, t, t, 1e-12).unwrap();
        let (fp, fm) = (fp.states.last().unwrap(), fm.states.last().unwrap());
        for r in 0..8 {
            assert!(((fp[r] - fm[r]) / (2.0 * h) - m[(r, c)]).abs() < 1e-6, "({r}, {c})");
        }
    }
}

#[test]
fn libration_returns_after_one_period() {
    let ell = 0.45678;
    let omega = 1.3;
    let (k, _) = pendulum_circle(ell, omega, 128, &NewtonOptions::default()).unwrap();
    let model = CoupledPendula::single(ell).unwrap();
    let z0: Vec<f64> = k.eval_at(&[0.7]).iter().copied().collect();
    let t = return_time(&model, &[], &z0, TAU / omega * (1.0 + 1e-4), MIN_TOLERANCE).unwrap();
    assert!((t - TAU / omega).abs() <= 1e-9, "{t}");
}

#[test]
fn uncoupled_torus_and_bundle_are_invariant() {
    let params = PendulaParams::reference(0.0);
    let init = build_initial(&params, [2f64.sqrt(), 3f64.sqrt()], 64, &NewtonOptions::default()).unwrap();
    let sol = init.solution;
    let model = make_pendula(&params).unwrap();
    let opts = VerifyOptions {
        horizon: 5.0,
        samples: 4,
        ..VerifyOptions::default()
    };
    let thetas = random_angles(2, opts.samples, opts.seed);
    assert!(flow_invariance_error(&sol, &model, &thetas, &opts).unwrap() <= 1e-9);
    assert!(bundle_invariance_error(&sol, &model, &thetas, &opts).unwrap() <= 1e-9);

    let at_start = VerifyOptions { horizon: 0.0, ..opts };
    assert_eq!(bundle_invariance_error(&sol, &model, &thetas, &at_start).unwrap(), 0.0);
    assert_eq!(flow_invariance_error(&sol, &model, &thetas, &at_start).unwrap(), 0.0);

    let rates = measure_normal_frequencies(&sol, &model, &thetas[0], &opts).unwrap();
    for (r, b) in rates.iter().zip(&params.beta) {
        assert!((r - b).abs() < 1e-10, "{rates:?}");
    }
    assert!(matches!(
        measure_normal_frequencies(&sol, &model, &thetas[0], &at_start),
        Err(TorusError::Integration(_))
    ));
}

#[test]
fn random_angles_are_reproducible() {
    let a = random_angles(3, 5, 42);
    assert_eq!(a, random_angles(3, 5, 42));
    assert_ne!(a, random_angles(3, 5, 43));
    assert!(a.iter().flatten().all(|t| (0.0..TAU).contains(t)));
}

fn row(e_k: f64, e_w: f64, sym: f64, red: f64) -> StepReport {
    StepReport {
        step: 0,
        residual_k: e_k,
        residual_w: e_w,
        dlambda: 0.0,
        dalpha: 0.0,
        alpha: 0.0,
        sym_defect: sym,
        red_defect: red,
        omega_ll: 0.0,
        omega_lw: 0.0,
        tail_energy: 0.0,
        min_divisor_tangent: 1.0,
        min_divisor_first: 1.0,
        min_divisor_second: 1.0,
        solvability_defect: 0.0,
        average_defect: 0.0,
        torsion_condition: 1.0,
        transversality_condition: 1.0,
        normal_block_used: true,
    }
}

#[test]
fn defect_constant_is_the_worst_ratio() {
    let log = [
        row(1e-3, 1e-3, 4e-3, 1e-4),
        row(1e-6, 0.0, 0.0, 3e-5),
        row(0.0, 0.0, 0.0, 0.0),
    ];
    assert!((defect_constant(&log) - 30.0).abs() < 1e-12);
}
