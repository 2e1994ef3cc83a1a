//! Checks that do not go through the Newton machinery: direct integration
//! of the flow and of its linearization along orbits started on the torus.

use nalgebra::DMatrix;
use ode_solvers::{DVector, Dop853, OutputType, System};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::error::{Result, TorusError};
use crate::model::ModelFamily;
use crate::newton::{StepReport, TorusSolution};

/// Smallest tolerance accepted by the integrator.
pub const MIN_TOLERANCE: f64 = 1e-13;

/// Sampled solution of `ż = X_h(z; λ)`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `max_t |h(z(t)) - h(z(0))|`.
    pub energy_drift: f64,
}

/// Sampled solution of `ż = X_h(z; λ)`, `Ṁ = D_z X_h(z; λ) M`.
#[derive(Clone, Debug)]
pub struct VariationalTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub matrices: Vec<DMatrix<f64>>,
    pub energy_drift: f64,
}

#[derive(Clone, Copy)]
struct Flow<'a> {
    model: &'a dyn ModelFamily,
    lambda: &'a [f64],
    dim: usize,
    /// Columns carried along by the linearized flow.
    cols: usize,
}

impl System<f64, DVector<f64>> for Flow<'_> {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let z = &y.as_slice()[..self.dim];
        for (i, v) in self.model.vector_field(z, self.lambda).into_iter().enumerate() {
            dy[i] = v;
        }
        if self.cols == 0 {
            return;
        }
        let jac = self.model.jacobian(z, self.lambda);
        // Matrix columns follow the state, column-major.
        for c in 0..self.cols {
            let col = &y.as_slice()[self.dim * (c + 1)..self.dim * (c + 2)];
            for r in 0..self.dim {
                dy[self.dim * (c + 1) + r] = (0..self.dim).map(|k| jac[(r, k)] * col[k]).sum();
            }
        }
    }
}

fn run(
    model: &dyn ModelFamily,
    lambda: &[f64],
    z0: &[f64],
    m0: Option<&DMatrix<f64>>,
    t_end: f64,
    sample_step: f64,
    tol: f64,
) -> Result<VariationalTrajectory> {
    let dim = 2 * model.degrees_of_freedom();
    if z0.len() != dim {
        return Err(TorusError::ShapeMismatch(format!(
            "initial state of length {}, model needs {dim}",
            z0.len()
        )));
    }
    if !(tol >= MIN_TOLERANCE) {
        return Err(TorusError::Integration(format!(
            "tolerance {tol:e} below {MIN_TOLERANCE:e}"
        )));
    }
    if !(t_end >= 0.0 && sample_step > 0.0) {
        return Err(TorusError::Integration(format!(
            "invalid horizon {t_end} or sampling step {sample_step}"
        )));
    }
    let cols = m0.map_or(0, |m| m.ncols());
    if let Some(m) = m0 {
        if m.nrows() != dim {
            return Err(TorusError::ShapeMismatch(format!(
                "variational matrix has {} rows",
                m.nrows()
            )));
        }
    }
    let mut y0 = DVector::zeros(dim * (cols + 1));
    y0.as_mut_slice()[..dim].copy_from_slice(z0);
    if let Some(m) = m0 {
        y0.as_mut_slice()[dim..].copy_from_slice(m.as_slice());
    }
    let h0 = model.energy(z0, lambda);
    let unpack = |y: &DVector<f64>| -> (Vec<f64>, DMatrix<f64>) {
        let s = y.as_slice();
        (s[..dim].to_vec(), DMatrix::from_column_slice(dim, cols, &s[dim..]))
    };
    if t_end == 0.0 {
        let (z, m) = unpack(&y0);
        return Ok(VariationalTrajectory {
            times: vec![0.0],
            states: vec![z],
            matrices: vec![m],
            energy_drift: 0.0,
        });
    }
    let flow = Flow {
        model,
        lambda,
        dim,
        cols,
    };
    // The crate's dense output is inaccurate whenever a sample falls inside
    // a step, so each sampling interval is integrated separately and only
    // step end points are used. The last full step seeds the next interval.
    let intervals = ((t_end / sample_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let mut out = VariationalTrajectory {
        times: Vec::with_capacity(intervals + 1),
        states: Vec::with_capacity(intervals + 1),
        matrices: Vec::with_capacity(intervals + 1),
        energy_drift: 0.0,
    };
    let (z, m) = unpack(&y0);
    out.times.push(0.0);
    out.states.push(z);
    out.matrices.push(m);
    let (mut t, mut y, mut h) = (0.0f64, y0, 0.0f64);
    for i in 1..=intervals {
        let t1 = if i == intervals { t_end } else { i as f64 * sample_step };
        let span = t1 - t;
        let mut solver = Dop853::from_param(
            flow,
            t,
            t1,
            span,
            y,
            tol,
            tol,
            0.9,
            0.0,
            0.333,
            6.0,
            span,
            h.min(span),
            100_000,
            1000,
            OutputType::Sparse,
        );
        solver.integrate().map_err(|e| TorusError::Integration(e.to_string()))?;
        let xs = solver.x_out();
        if xs.len() >= 3 {
            h = xs[xs.len() - 2] - xs[xs.len() - 3];
        }
        y = solver.y_out().last().expect("integrator returns its end point").clone();
        let (z, m) = unpack(&y);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(TorusError::Integration("non-finite state".into()));
        }
        out.energy_drift = out.energy_drift.max((model.energy(&z, lambda) - h0).abs());
        out.times.push(t1);
        out.states.push(z);
        out.matrices.push(m);
        t = t1;
    }
    Ok(out)
}

/// Integrate `ż = X_h(z; λ)` on `[0, t_end]` with local error `tol`,
/// sampling every `sample_step`.
pub fn integrate(
    model: &dyn ModelFamily,
    lambda: &[f64],
    z0: &[f64],
    t_end: f64,
    sample_step: f64,
    tol: f64,
) -> Result<Trajectory> {
    let v = run(model, lambda, z0, None, t_end, sample_step, tol)?;
    Ok(Trajectory {
        times: v.times,
        states: v.states,
        energy_drift: v.energy_drift,
    })
}

/// Integrate the flow together with `Ṁ = D_z X_h M`, `M(0) = m0`.
pub fn integrate_variational(
    model: &dyn ModelFamily,
    lambda: &[f64],
    z0: &[f64],
    m0: &DMatrix<f64>,
    t_end: f64,
    sample_step: f64,
    tol: f64,
) -> Result<VariationalTrajectory> {
    run(model, lambda, z0, Some(m0), t_end, sample_step, tol)
}

/// Horizon, sampling and tolerance of the invariance checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub horizon: f64,
    pub sample_step: f64,
    pub tol: f64,
    /// Number of random starting angles.
    pub samples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            horizon: 10.0,
            sample_step: 0.05,
            tol: MIN_TOLERANCE,
            samples: 16,
            seed: 20240601,
        }
    }
}

/// `count` angles drawn uniformly from `[0, 2π)^d`.
pub fn random_angles(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..d).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect())
        .collect()
}

fn shifted(theta: &[f64], omega: &[f64], t: f64) -> Vec<f64> {
    theta.iter().zip(omega).map(|(a, w)| a + w * t).collect()
}

fn row_sum_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(Γ_{0,β} t)`: a rotation by `β_j t` in each normal pair.
pub fn normal_rotation(beta: &[f64], t: f64) -> DMatrix<f64> {
    let m = beta.len();
    let mut r = DMatrix::zeros(2 * m, 2 * m);
    for (j, b) in beta.iter().enumerate() {
        let (s, c) = (b * t).sin_cos();
        r[(j, j)] = c;
        r[(j + m, j + m)] = c;
        r[(j, j + m)] = -s;
        r[(j + m, j)] = s;
    }
    r
}

/// `max |Φ_t(K(θ₀)) - K(θ₀ + ωt)|` over the starting angles and sampled
/// `t ∈ [0, horizon]`.
pub fn flow_invariance_error(
    sol: &TorusSolution,
    model: &dyn ModelFamily,
    thetas: &[Vec<f64>],
    opts: &VerifyOptions,
) -> Result<f64> {
    let omega = &sol.freq.omega;
    let errors = thetas
        .par_iter()
        .map(|theta| {
            let z0: Vec<f64> = sol.k.eval_at(theta).iter().copied().collect();
            let traj = integrate(model, &sol.lambda, &z0, opts.horizon, opts.sample_step, opts.tol)?;
            let mut worst = 0.0f64;
            for (t, z) in traj.times.iter().zip(&traj.states) {
                let target = sol.k.eval_at(&shifted(theta, omega, *t));
                for (a, b) in z.iter().zip(target.iter()) {
                    worst = worst.max((a - b).abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}

/// `max |M(t) W(θ₀) - W(θ₀ + ωt) exp(Γ_{0,β} t)|` along orbits of the torus,
/// with `M` the linearized flow.
pub fn bundle_invariance_error(
    sol: &TorusSolution,
    model: &dyn ModelFamily,
    thetas: &[Vec<f64>],
    opts: &VerifyOptions,
) -> Result<f64> {
    let omega = &sol.freq.omega;
    let beta = &sol.freq.beta;
    let errors = thetas
        .par_iter()
        .map(|theta| {
            let z0: Vec<f64> = sol.k.eval_at(theta).iter().copied().collect();
            let w0 = sol.w.eval_at(theta);
            let traj = integrate_variational(model, &sol.lambda, &z0, &w0, opts.horizon, opts.sample_step, opts.tol)?;
            let mut worst = 0.0f64;
            for (t, m) in traj.times.iter().zip(&traj.matrices) {
                let target = sol.w.eval_at(&shifted(theta, omega, *t)) * normal_rotation(beta, *t);
                worst = worst.max(row_sum_norm(&(m - target)));
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}

/// Rotation rates of the normal pairs under the linearized flow along the
/// orbit of `K(θ₀)`.
///
/// The transported frame `M(t) W(θ₀)` is expressed in the basis
/// `W(θ₀ + ωt)` through the symplectic pairing,
/// `R(t) = Ω_WW⁻¹ W(θ₀+ωt)ᵀ Ω M(t) W(θ₀)`, and the angle of each 2×2 block
/// of `R` is unwrapped in time. The rate is the final angle over the
/// horizon.
pub fn measure_normal_frequencies(
    sol: &TorusSolution,
    model: &dyn ModelFamily,
    theta: &[f64],
    opts: &VerifyOptions,
) -> Result<Vec<f64>> {
    let m = sol.freq.normal_dim();
    if m == 0 {
        return Ok(vec![]);
    }
    if opts.horizon <= 0.0 {
        return Err(TorusError::Integration(
            "normal frequencies need a positive horizon".into(),
        ));
    }
    let omega = &sol.freq.omega;
    let z0: Vec<f64> = sol.k.eval_at(theta).iter().copied().collect();
    let w0 = sol.w.eval_at(theta);
    let traj = integrate_variational(model, &sol.lambda, &z0, &w0, opts.horizon, opts.sample_step, opts.tol)?;
    let mut angles = vec![0.0; m];
    let mut last = vec![0.0; m];
    for (t, (z, mt)) in traj.times.iter().zip(traj.states.iter().zip(&traj.matrices)) {
        let wt = sol.w.eval_at(&shifted(theta, omega, *t));
        let om = model.symplectic_form(z);
        let wt_om = wt.transpose() * om;
        let om_ww = &wt_om * &wt;
        let inv = om_ww.try_inverse().ok_or_else(|| TorusError::DegenerateFrame {
            index: 0,
            detail: format!("Ω_WW singular along the orbit at t = {t}"),
        })?;
        let r = inv * wt_om * mt;
        for j in 0..m {
            let a = r[(j + m, j)].atan2(r[(j, j)]);
            let mut delta = a - last[j];
            delta -= std::f64::consts::TAU * (delta / std::f64::consts::TAU).round();
            angles[j] += delta;
            last[j] = a;
        }
    }
    let t_end = *traj.times.last().unwrap_or(&opts.horizon);
    Ok(angles.into_iter().map(|a| a / t_end).collect())
}

/// First return time of the orbit of `z0` near `t_guess`: the root of
/// `g(t) = (Φ_t(z0) - z0) · X_h(z0)`, found by secant iteration.
pub fn return_time(model: &dyn ModelFamily, lambda: &[f64], z0: &[f64], t_guess: f64, tol: f64) -> Result<f64> {
    let field = model.vector_field(z0, lambda);
    let g = |t: f64| -> Result<f64> {
        let traj = integrate(model, lambda, z0, t, t, tol)?;
        let z = traj.states.last().expect("trajectory has an end point");
        Ok(z.iter().zip(z0).zip(&field).map(|((a, b), f)| (a - b) * f).sum())
    };
    let (mut t0, mut t1) = (t_guess * (1.0 - 1e-6), t_guess);
    let (mut g0, mut g1) = (g(t0)?, g(t1)?);
    for _ in 0..30 {
        if g1 == 0.0 || (t1 - t0).abs() <= 1e-15 * t1.abs() {
            return Ok(t1);
        }
        let t2 = t1 - g1 * (t1 - t0) / (g1 - g0);
        (t0, g0) = (t1, g1);
        t1 = t2;
        g1 = g(t1)?;
    }
    Err(TorusError::Integration(format!("return time near {t_guess} not found")))
}

/// Smallest `C` with `sym, red, |α|, |Ω_LL|, |Ω_LW| ≤ C (|E_K| + |E_W|)` on
/// every row of a convergence log.
pub fn defect_constant(log: &[StepReport]) -> f64 {
    log.iter()
        .map(|r| {
            let e = r.residual_k + r.residual_w;
            let worst = [r.sym_defect, r.red_defect, r.alpha, r.omega_ll, r.omega_lw]
                .into_iter()
                .fold(0.0, f64::max);
            if worst == 0.0 {
                0.0
            } else {
                worst / e
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoupledPendula;

    #[test]
    fn small_libration_matches_harmonic_limit() {
        let ell = 0.45678f64;
        let model = CoupledPendula::single(ell).unwrap();
        let amp = 1e-3;
        let traj = integrate(&model, &[], &[0.0, amp], 10.0, 0.5, 1e-13).unwrap();
        let w = ell.powf(-0.5);
        for (t, z) in traj.times.iter().zip(&traj.states) {
            assert!((z[1] - amp * (w * t).cos()).abs() < 1e-6);
            assert!((z[0] + ell * ell * amp * w * (w * t).sin()).abs() < 1e-6);
        }
    }

    #[test]
    fn tolerance_floor_enforced() {
        let model = CoupledPendula::single(0.5).unwrap();
        let err = integrate(&model, &[], &[0.0, 0.1], 1.0, 0.1, 1e-15);
        assert!(matches!(err, Err(TorusError::Integration(_))));
    }

    #[test]
    fn zero_horizon_returns_initial_data() {
        let model = CoupledPendula::single(0.5).unwrap();
        let m0 = DMatrix::identity(2, 2);
        let v = integrate_variational(&model, &[], &[0.1, 0.2], &m0, 0.0, 0.1, 1e-12).unwrap();
        assert_eq!(v.matrices.len(), 1);
        assert_eq!(v.matrices[0], m0);
    }

    #[test]
    fn rotation_is_a_group() {
        let b = [1.3, 0.7];
        let r = normal_rotation(&b, 0.4) * normal_rotation(&b, 1.1);
        assert!((r - normal_rotation(&b, 1.5)).amax() < 1e-15);
    }
}
