use nalgebra::DMatrix;
use std::sync::OnceLock;
use tori_core::frame::*;
use tori_core::init::{build_initial, pendulum_circle};
use tori_core::model::*;
use tori_core::newton::{NewtonOptions, TorusSolution};
use tori_core::{FourierSeries, Grid, TorusError};

const L1: f64 = 0.45678;
const CIRCLE_N: usize = 256;

/// Initial data of the chain at zero outer coupling on a 64×64 grid.
fn initial() -> &'static (TorusSolution, CoupledPendula) {
    static DATA: OnceLock<(TorusSolution, CoupledPendula)> = OnceLock::new();
    DATA.get_or_init(|| {
        let params = PendulaParams::reference(0.0);
        let init = build_initial(&params, [2f64.sqrt(), 3f64.sqrt()], 64, &NewtonOptions::default()).unwrap();
        (init.solution, make_pendula(&params).unwrap())
    })
}

fn frame() -> AdaptedFrame {
    let (sol, model) = initial();
    build_frame(model, &sol.k, &sol.w, &sol.lambda, &sol.freq.omega).unwrap()
}

fn max_over_points(s: &FourierSeries, f: impl Fn(DMatrix<f64>) -> f64) -> f64 {
    (0..s.grid().len()).map(|p| f(s.value_at_point(p))).fold(0.0, f64::max)
}

#[test]
fn normal_bundle_has_unit_symplectic_pairing() {
    let fr = frame();
    let m = fr.normal_dim();
    let avg = fr.omega_ww.average();
    for i in 0..m {
        assert!((avg[(i, i + m)] - 1.0).abs() < 1e-13);
        assert!((avg[(i + m, i)] + 1.0).abs() < 1e-13);
    }
    let target = {
        let mut t = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            t[(i, i + m)] = 1.0;
            t[(i + m, i)] = -1.0;
        }
        t
    };
    assert!(max_over_points(&fr.omega_ww, |w| (w - &target).amax()) < 1e-13);
}

#[test]
fn metric_block_is_positive_and_a_is_antisymmetric() {
    let fr = frame();
    for p in 0..fr.b.grid().len() {
        let b = fr.b.value_at_point(p);
        assert!((&b - b.transpose()).amax() < 1e-12);
        assert!(b.clone().cholesky().is_some(), "B not positive definite at {p}");
        let a = fr.a.value_at_point(p);
        assert!((&a + a.transpose()).amax() < 1e-12);
    }
}

#[test]
fn invariant_torus_has_small_defects() {
    let (sol, model) = initial();
    let beta = &sol.freq.beta;
    let (omega, alpha) = (&sol.freq.omega, &sol.alpha);
    let coarse = oversampled_defects(model, &sol.k, &sol.w, &sol.lambda, omega, beta, alpha, 1).unwrap();
    let fine = oversampled_defects(model, &sol.k, &sol.w, &sol.lambda, omega, beta, alpha, 8).unwrap();
    // The frame needs far more modes than K; refining the grid removes its
    // truncation error.
    assert!(
        fine.reducibility < 1e-9 && fine.reducibility < 1e-6 * coarse.reducibility,
        "{coarse:?} {fine:?}"
    );
    assert!(fine.symplectic < 1e-10, "{fine:?}");
    assert!(fine.omega_ll < 1e-12 && fine.omega_lw < 1e-12, "{fine:?}");
    assert!(matches!(
        oversampled_defects(model, &sol.k, &sol.w, &sol.lambda, &sol.freq.omega, beta, &sol.alpha, 3),
        Err(TorusError::InvalidGrid(_))
    ));
}

#[test]
fn normal_block_of_the_reduced_flow_rotates_at_beta() {
    let (sol, model) = initial();
    let fr = frame();
    let eval = eval_on_torus(model, &sol.k, &sol.lambda).unwrap();
    let reduced = reduced_flow(&fr, &eval.jacobian, &sol.freq.omega).unwrap();
    let corner = reduced.block(4..8, 4..8).average();
    let gamma = tori_core::cohomology::normal_generator(&[], &sol.freq.beta);
    assert!((corner - gamma).amax() < 1e-10);
    assert!(fr.torsion_condition().is_finite());
}

#[test]
fn degenerate_bundles_are_rejected() {
    let (sol, model) = initial();
    let zero = FourierSeries::zeros(sol.k.grid(), 8, 4);
    assert!(matches!(
        build_frame(model, &sol.k, &zero, &sol.lambda, &sol.freq.omega),
        Err(TorusError::DegenerateFrame { .. })
    ));
    let short = FourierSeries::zeros(sol.k.grid(), 8, 2);
    assert!(matches!(
        build_frame(model, &sol.k, &short, &sol.lambda, &sol.freq.omega),
        Err(TorusError::ShapeMismatch(_))
    ));
}

/// `-⟨Lᵀ Ω ∂_ω K⟩`, the normal component of the change of the circle with
/// its frequency; it is constant along the circle.
fn normal_drift(model: &CoupledPendula, omega: f64, n: usize) -> (f64, f64) {
    let h = 1e-5;
    let opts = NewtonOptions::default();
    let (kp, _) = pendulum_circle(L1, omega + h, n, &opts).unwrap();
    let (km, _) = pendulum_circle(L1, omega - h, n, &opts).unwrap();
    let (k0, _) = pendulum_circle(L1, omega, n, &opts).unwrap();
    let dk = (&kp - &km).scale(0.5 / h);
    let l = k0.jacobian().unwrap();
    let om = model.symplectic_form(&[0.0, 0.0]);
    let b = l
        .transpose()
        .multiply(&dk.left_mul_const(&om).unwrap())
        .unwrap()
        .scale(-1.0);
    let area = |k: &FourierSeries| -> f64 {
        // Action ∮ y dx / 2π by the trapezoidal rule on a smooth closed curve.
        let dx = k.rows_range(1..2).jacobian().unwrap();
        k.rows_range(0..1).multiply(&dx).unwrap().average()[(0, 0)]
    };
    (b.average()[(0, 0)], (area(&kp) - area(&km)) / (2.0 * h))
}

fn circle_frame(model: &CoupledPendula, omega: f64) -> AdaptedFrame {
    let (k, _) = pendulum_circle(L1, omega, CIRCLE_N, &NewtonOptions::default()).unwrap();
    let w = FourierSeries::zeros(&Grid::new(&[CIRCLE_N]).unwrap(), 2, 0);
    build_frame(model, &k, &w, &[], &[omega]).unwrap()
}

#[test]
fn closed_form_inverse_inverts_the_frame() {
    let model = CoupledPendula::single(L1).unwrap();
    let fr = circle_frame(&model, 1.3);
    let err = (0..CIRCLE_N)
        .map(|q| (fr.pinv.value_at_point(q) * fr.p.value_at_point(q) - DMatrix::identity(2, 2)).amax())
        .fold(0.0, f64::max);
    assert!(err < 1e-12, "{err:e}");
}

#[test]
fn circle_torsion_matches_frequency_derivative() {
    let model = CoupledPendula::single(L1).unwrap();
    for omega in [1.3, 1.38, 1.44] {
        let torsion = circle_frame(&model, omega).torsion.average()[(0, 0)];
        let (drift, daction) = normal_drift(&model, omega, CIRCLE_N);
        // Differentiating the invariance equation in ω gives ⟨T⟩ · drift = 1.
        assert!((torsion * drift - 1.0).abs() < 1e-7, "ω = {omega}: {torsion} {drift}");
        // The drift is the derivative of the action, which grows as the
        // frequency falls: the torsion is negative.
        assert!((drift - daction).abs() < 1e-7 * daction.abs(), "{drift} {daction}");
        assert!(torsion < 0.0);
    }
}
