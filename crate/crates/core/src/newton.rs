//! Newton iteration for a torus `K`, its normal bundle `W`, the parameters
//! `λ` and the dummy unfolding `α`.
//!
//! One step writes the corrections in the adapted frame, `ΔK = P ξ`,
//! `ΔW = P ξ_W`, which turns the linearized invariance equations into
//! constant-coefficient cohomological equations:
//!
//! ```text
//! L_ω ξ + Λ ξ = η - b Δλ                              (torus)
//! L_ω ξ_W + Λ ξ_W - ξ_W Γ = η̂ - B̂ Δλ + [0; 0; Γ_{Δα,0}]   (bundle)
//! ```
//!
//! The torus equation is solved first with `Δλ` left symbolic (one solve for
//! `η`, one per column of `b`). The averages of the bundle equation that
//! the operator cannot reach then fix `Δλ` and `Δα`.
//!
//! The frame itself is usually far less smooth than `K` (the pointwise
//! inverse `G_LL⁻¹` has singularities close to the real torus), so its
//! truncated spectrum pollutes the top modes of the corrections. `ΔK` and
//! `ΔW` are therefore restricted to the lower two thirds of the modes.
//!
//! Normal coordinates come in rotation pairs `(j, j + m)`; after every step
//! `W` is rescaled pairwise so that `⟨Ω_WW⟩` keeps the form `[[0, I], [-I, 0]]`.

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};

use crate::cohomology::{
    audit_divisors, normal_generator, solve_melnikov1, solve_melnikov2, solve_zero_average, DivisorAudit,
    FrequencyData, Side, SolverOptions,
};
use crate::error::{Result, TorusError};
use crate::fourier::FourierSeries;
use crate::frame::{
    build_frame_with, condition_number, frame_defects, oversampled_defects, AdaptedFrame, FrameDefects,
};
use crate::model::{eval_bilinear, eval_on_torus, symplectic_on_torus, Direction, ModelFamily, TorusEval};

/// A torus with its normal bundle and the parameters that make it invariant.
#[derive(Clone, Debug)]
pub struct TorusSolution {
    /// `T^d → R^{2n}`.
    pub k: FourierSeries,
    /// `T^d → R^{2n × 2(n-d)}`.
    pub w: FourierSeries,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub freq: FrequencyData,
}

impl TorusSolution {
    pub fn new(
        k: FourierSeries,
        w: FourierSeries,
        lambda: Vec<f64>,
        alpha: Vec<f64>,
        freq: FrequencyData,
    ) -> Result<Self> {
        let d = k.grid().dims();
        let (rows, cols) = k.shape();
        if cols != 1 || rows % 2 != 0 {
            return Err(TorusError::ShapeMismatch(format!(
                "embedding has shape {:?}",
                k.shape()
            )));
        }
        let n = rows / 2;
        if d > n || freq.tangent_dim() != d || freq.normal_dim() != n - d {
            return Err(TorusError::ShapeMismatch(format!(
                "{} tangent and {} normal frequencies for a {d}-torus in {n} degrees of freedom",
                freq.tangent_dim(),
                freq.normal_dim()
            )));
        }
        if w.shape() != (2 * n, 2 * (n - d)) || w.grid() != k.grid() {
            return Err(TorusError::ShapeMismatch(format!(
                "normal bundle has shape {:?}, expected {}x{}",
                w.shape(),
                2 * n,
                2 * (n - d)
            )));
        }
        if alpha.len() != n - d {
            return Err(TorusError::ShapeMismatch(
                "α must have one entry per normal pair".into(),
            ));
        }
        Ok(TorusSolution {
            k,
            w,
            lambda,
            alpha,
            freq,
        })
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.k.rows() / 2
    }

    pub fn tangent_dim(&self) -> usize {
        self.k.grid().dims()
    }

    pub fn normal_dim(&self) -> usize {
        self.freq.normal_dim()
    }
}

/// Tolerances and safeguards of the iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub solver: SolverOptions,
    /// Largest admissible condition number of `⟨T⟩`.
    pub torsion_cap: f64,
    /// Largest admissible condition number of the matrix that fixes `Δλ`.
    pub transversality_cap: f64,
    /// Stop once `max(|E_K|, |E_W|) ≤ tol`.
    pub tol: f64,
    pub max_steps: usize,
    /// Abort when the residual exceeds the initial one by this factor.
    pub divergence_factor: f64,
    /// Refinement of the grid on which the frame defects are measured;
    /// 1 measures them on the working grid.
    pub defect_oversampling: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            solver: SolverOptions::default(),
            torsion_cap: 1e8,
            transversality_cap: 1e8,
            tol: 1e-11,
            max_steps: 12,
            divergence_factor: 1e6,
            defect_oversampling: 4,
        }
    }
}

/// One row of the convergence log. Norms describe the solution entering the
/// step; `dlambda`, `dalpha` and the solver diagnostics describe the step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub residual_k: f64,
    pub residual_w: f64,
    pub dlambda: f64,
    pub dalpha: f64,
    pub alpha: f64,
    pub sym_defect: f64,
    pub red_defect: f64,
    pub omega_ll: f64,
    pub omega_lw: f64,
    pub tail_energy: f64,
    pub min_divisor_tangent: f64,
    pub min_divisor_first: f64,
    pub min_divisor_second: f64,
    /// Distance of the singular bundle averages from the solvable subspace.
    pub solvability_defect: f64,
    /// Largest `|⟨η^N⟩|`, `|⟨b^N⟩|`, which vanish for exact data.
    pub average_defect: f64,
    pub torsion_condition: f64,
    pub transversality_condition: f64,
    /// False when the step had no normal directions to handle.
    pub normal_block_used: bool,
}

impl StepReport {
    pub fn residual(&self) -> f64 {
        self.residual_k.max(self.residual_w)
    }
}

/// Invariance errors `E_K = L_ω K + X_h∘K` and
/// `E_W = L_ω W + D_z X_h∘K W - W Γ_{α,β}`.
#[derive(Clone, Debug)]
pub struct Residuals {
    pub e_k: FourierSeries,
    pub e_w: FourierSeries,
    pub eval: TorusEval,
}

fn check_model(sol: &TorusSolution, model: &dyn ModelFamily) -> Result<()> {
    if model.degrees_of_freedom() != sol.degrees_of_freedom() {
        return Err(TorusError::ShapeMismatch(format!(
            "model has {} degrees of freedom, solution {}",
            model.degrees_of_freedom(),
            sol.degrees_of_freedom()
        )));
    }
    if model.parameter_count() != sol.lambda.len() {
        return Err(TorusError::ShapeMismatch(
            "parameter count differs from the model".into(),
        ));
    }
    Ok(())
}

pub fn residuals(sol: &TorusSolution, model: &dyn ModelFamily) -> Result<Residuals> {
    check_model(sol, model)?;
    let omega = &sol.freq.omega;
    let eval = eval_on_torus(model, &sol.k, &sol.lambda)?;
    let e_k = &sol.k.lie_derivative(omega)? + &eval.field;
    let e_w = if sol.normal_dim() == 0 {
        FourierSeries::zeros(sol.k.grid(), sol.k.rows(), 0)
    } else {
        let gamma = normal_generator(&sol.alpha, &sol.freq.beta);
        &(&sol.w.lie_derivative(omega)? + &eval.jacobian.multiply(&sol.w)?) - &sol.w.right_mul_const(&gamma)?
    };
    Ok(Residuals { e_k, e_w, eval })
}

/// Everything a step needs from the current solution.
struct Linearization {
    res: Residuals,
    frame: AdaptedFrame,
    defects: FrameDefects,
}

fn linearize(sol: &TorusSolution, model: &dyn ModelFamily, opts: &NewtonOptions) -> Result<Linearization> {
    let res = residuals(sol, model)?;
    let frame = build_frame_with(model, &sol.k, &sol.w, &res.eval.jacobian, &sol.freq.omega)?;
    let freq = &sol.freq;
    let defects = if opts.defect_oversampling > 1 {
        oversampled_defects(
            model,
            &sol.k,
            &sol.w,
            &sol.lambda,
            &freq.omega,
            &freq.beta,
            &sol.alpha,
            opts.defect_oversampling,
        )?
    } else {
        frame_defects(&frame, &res.eval.jacobian, &freq.omega, &freq.beta, &sol.alpha)?
    };
    Ok(Linearization { res, frame, defects })
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn base_report(step: usize, sol: &TorusSolution, lin: &Linearization, audit: &DivisorAudit) -> StepReport {
    StepReport {
        step,
        residual_k: lin.res.e_k.sup_norm(),
        residual_w: lin.res.e_w.sup_norm(),
        dlambda: 0.0,
        dalpha: 0.0,
        alpha: sup(&sol.alpha),
        sym_defect: lin.defects.symplectic,
        red_defect: lin.defects.reducibility,
        omega_ll: lin.defects.omega_ll,
        omega_lw: lin.defects.omega_lw,
        tail_energy: sol.k.tail_energy().max(sol.w.tail_energy()),
        min_divisor_tangent: audit.min_tangent,
        min_divisor_first: audit.min_first,
        min_divisor_second: audit.min_second,
        solvability_defect: 0.0,
        average_defect: 0.0,
        torsion_condition: lin.frame.torsion_condition(),
        transversality_condition: 0.0,
        normal_block_used: false,
    }
}

/// Residual norms and frame diagnostics of `sol`, without taking a step.
pub fn diagnose(sol: &TorusSolution, model: &dyn ModelFamily, opts: &NewtonOptions) -> Result<StepReport> {
    let lin = linearize(sol, model, opts)?;
    let audit = audit_divisors(&sol.freq, sol.k.grid(), opts.solver.divisor_floor);
    Ok(base_report(0, sol, &lin, &audit))
}

/// Solutions of the torus equation for `η` and for each column of `b`.
#[derive(Clone, Debug)]
pub struct TorusCorrection {
    /// `2n × 1`.
    pub xi_eta: FourierSeries,
    /// `2n × p`.
    pub xi_b: FourierSeries,
    pub average_defect: f64,
    pub torsion_condition: f64,
}

/// Solve `L_ω ξ + Λ ξ = v` column by column for `Λ = [[0, T, 0], [0, 0, 0], [0, 0, Γ]]`.
///
/// The `N` rows are solved first. Their free average is chosen so the `L`
/// rows have zero average; `⟨ξ^L⟩` is fixed to zero. The average of `v^N`,
/// which vanishes for exact data, is removed and returned.
fn solve_reduced(
    v: &FourierSeries,
    frame: &AdaptedFrame,
    freq: &FrequencyData,
    opts: &NewtonOptions,
) -> Result<(FourierSeries, f64)> {
    let d = frame.tangent_dim();
    let m = frame.normal_dim();
    let cols = v.cols();
    let omega = &freq.omega;
    let t_avg = frame.torsion.average();
    let cond = condition_number(&t_avg);
    if !(cond <= opts.torsion_cap) {
        return Err(TorusError::DegenerateTorsion {
            condition: cond,
            cap: opts.torsion_cap,
        });
    }
    let v_l = v.rows_range(0..d);
    let v_n = v.rows_range(d..2 * d);

    let avg_n = v_n.average();
    let average_defect = avg_n.amax();
    let v_n = v_n.add_constant(&(-&avg_n))?;
    let xi_n0 = solve_zero_average(&v_n, omega, &DMatrix::zeros(d, cols), &opts.solver)?;
    let t_xi = frame.torsion.multiply(&xi_n0)?;
    let shift = t_avg
        .clone()
        .lu()
        .solve(&(v_l.average() - t_xi.average()))
        .ok_or(TorusError::DegenerateTorsion {
            condition: f64::INFINITY,
            cap: opts.torsion_cap,
        })?;
    let xi_n = xi_n0.add_constant(&shift)?;
    let rhs_l = &v_l - &frame.torsion.multiply(&xi_n)?;
    let xi_l = solve_zero_average(&rhs_l, omega, &DMatrix::zeros(d, cols), &opts.solver)?;

    let xi = if m > 0 {
        let v_w = v.rows_range(2 * d..2 * d + 2 * m);
        let xi_w = solve_melnikov1(&v_w, freq, Side::Left, &opts.solver)?;
        FourierSeries::vstack(&[&xi_l, &xi_n, &xi_w])?
    } else {
        FourierSeries::vstack(&[&xi_l, &xi_n])?
    };
    Ok((xi, average_defect))
}

/// Torus equation: `η = -P⁻¹ E_K`, `b = P⁻¹ D_λ X_h`.
pub fn solve_k_block(
    e_k: &FourierSeries,
    parameter_jacobian: &FourierSeries,
    frame: &AdaptedFrame,
    freq: &FrequencyData,
    opts: &NewtonOptions,
) -> Result<TorusCorrection> {
    let eta = frame.pinv.multiply(e_k)?.scale(-1.0);
    let p = parameter_jacobian.cols();
    let rhs = if p > 0 {
        let b = frame.pinv.multiply(parameter_jacobian)?;
        FourierSeries::hstack(&[&eta, &b])?
    } else {
        eta
    };
    let (xi, average_defect) = solve_reduced(&rhs, frame, freq, opts)?;
    Ok(TorusCorrection {
        xi_eta: xi.cols_range(0..1),
        xi_b: xi.cols_range(1..1 + p),
        average_defect,
        torsion_condition: frame.torsion_condition(),
    })
}

/// Corrections of the parameters and the projections of the singular
/// averages of the bundle equation.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterShift {
    pub dlambda: DVector<f64>,
    pub dalpha: DVector<f64>,
    pub s: DVector<f64>,
    pub t: DVector<f64>,
    pub condition: f64,
}

/// Fix `Δλ`, `Δα` so that the `k = 0` diagonal blocks of the bundle equation
/// are solvable. `eta_avg = ⟨η̂^W⟩` and `b_avgs[k] = ⟨B̂_k^W⟩` are
/// `2m × 2m`; the kernel directions of the solution are set to zero.
pub fn parameter_shift(eta_avg: &DMatrix<f64>, b_avgs: &[DMatrix<f64>], cap: f64) -> Result<ParameterShift> {
    let m = eta_avg.nrows() / 2;
    let p = b_avgs.len();
    if eta_avg.shape() != (2 * m, 2 * m) || b_avgs.iter().any(|b| b.shape() != (2 * m, 2 * m)) {
        return Err(TorusError::ShapeMismatch(
            "bundle averages must be square of even size".into(),
        ));
    }
    if p != m {
        return Err(TorusError::ShapeMismatch(format!(
            "{p} parameters cannot tune {m} normal frequencies"
        )));
    }
    let diag = |mat: &DMatrix<f64>, r: usize, c: usize| -> DVector<f64> {
        DVector::from_fn(m, |i, _| mat[(r * m + i, c * m + i)])
    };
    let blocks =
        |r: usize, c: usize| -> DMatrix<f64> { DMatrix::from_fn(m, p, |i, k| b_avgs[k][(r * m + i, c * m + i)]) };
    let (e11, e12, e21, e22) = (
        diag(eta_avg, 0, 0),
        diag(eta_avg, 0, 1),
        diag(eta_avg, 1, 0),
        diag(eta_avg, 1, 1),
    );
    let (b11, b12, b21, b22) = (blocks(0, 0), blocks(0, 1), blocks(1, 0), blocks(1, 1));

    let mat = &b12 - &b21;
    let condition = condition_number(&mat);
    if !(condition <= cap) {
        return Err(TorusError::Transversality { condition, cap });
    }
    let dlambda = mat
        .lu()
        .solve(&(&e12 - &e21))
        .ok_or(TorusError::Transversality { condition, cap })?;
    let s = (&e11 - &e22) * 0.5 - (&b11 - &b22) * &dlambda * 0.5;
    let t = (&e12 + &e21) * 0.5 - (&b12 + &b21) * &dlambda * 0.5;
    let dalpha = -(&e11 + &e22) * 0.5 + (&b11 + &b22) * &dlambda * 0.5;
    Ok(ParameterShift {
        dlambda,
        dalpha,
        s,
        t,
        condition,
    })
}

/// The bundle equation before `Δλ` is known: `η̂` and one `B̂_k` per
/// parameter, all `2n × 2m` in frame coordinates.
#[derive(Clone, Debug)]
pub struct BundleSystem {
    pub eta_hat: FourierSeries,
    pub b_hat: Vec<FourierSeries>,
}

/// `η̂ = -P⁻¹ E_W - P⁻¹ D_zz X[P ξ_η] W`,
/// `B̂_k = P⁻¹ D_λz X[e_k] W - P⁻¹ D_zz X[P ξ_b e_k] W`.
pub fn assemble_bundle_system(
    model: &dyn ModelFamily,
    sol: &TorusSolution,
    e_w: &FourierSeries,
    frame: &AdaptedFrame,
    correction: &TorusCorrection,
) -> Result<BundleSystem> {
    let pinv = &frame.pinv;
    let (k, w, lambda) = (&sol.k, &sol.w, &sol.lambda);
    let dk_eta = frame.p.multiply(&correction.xi_eta)?;
    let curv = eval_bilinear(model, k, lambda, Direction::State(&dk_eta), w)?;
    let eta_hat = &pinv.multiply(e_w)?.scale(-1.0) - &pinv.multiply(&curv)?;
    let dk_b = frame.p.multiply(&correction.xi_b)?;
    let mut b_hat = Vec::with_capacity(lambda.len());
    for j in 0..lambda.len() {
        let mut unit = vec![0.0; lambda.len()];
        unit[j] = 1.0;
        let direct = eval_bilinear(model, k, lambda, Direction::Parameters(&unit), w)?;
        let col = dk_b.cols_range(j..j + 1);
        let through_k = eval_bilinear(model, k, lambda, Direction::State(&col), w)?;
        b_hat.push(pinv.multiply(&(&direct - &through_k))?);
    }
    Ok(BundleSystem { eta_hat, b_hat })
}

/// Solve the bundle equation for `ξ_W` given the parameter shift.
///
/// The `W` rows use the second-Melnikov solver, then the `N` and `L` rows
/// the right first-Melnikov solver, with `T ξ^N` moved to the `L` rows.
/// Returns `ξ_W` and the solvability defect of the `W` rows.
pub fn solve_w_block(
    system: &BundleSystem,
    shift: &ParameterShift,
    frame: &AdaptedFrame,
    freq: &FrequencyData,
    opts: &NewtonOptions,
) -> Result<(FourierSeries, f64)> {
    let d = frame.tangent_dim();
    let m = frame.normal_dim();
    let mut rhs = system.eta_hat.clone();
    for (b, dl) in system.b_hat.iter().zip(shift.dlambda.iter()) {
        rhs = &rhs - &b.scale(*dl);
    }
    let rhs_w = rhs
        .rows_range(2 * d..2 * d + 2 * m)
        .add_constant(&normal_generator(shift.dalpha.as_slice(), &vec![0.0; m]))?;
    let sol_w = solve_melnikov2(&rhs_w, freq, &opts.solver)?;
    let xi_n = solve_melnikov1(&rhs.rows_range(d..2 * d), freq, Side::Right, &opts.solver)?;
    let rhs_l = &rhs.rows_range(0..d) - &frame.torsion.multiply(&xi_n)?;
    let xi_l = solve_melnikov1(&rhs_l, freq, Side::Right, &opts.solver)?;
    Ok((FourierSeries::vstack(&[&xi_l, &xi_n, &sol_w.u])?, sol_w.defect))
}

/// Rescale the normal pairs of `w` so that `⟨Ω_WW⟩_{i,i+m} = 1`.
pub fn normalize_bundle(model: &dyn ModelFamily, k: &FourierSeries, w: &FourierSeries) -> Result<FourierSeries> {
    let m = w.cols() / 2;
    if m == 0 {
        return Ok(w.clone());
    }
    let omega = symplectic_on_torus(model, k)?;
    let gram = omega.apply(w)?.transpose().scale(-1.0).multiply(w)?.average();
    let mut scale = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        let area = 0.5 * (gram[(i, i + m)] - gram[(i + m, i)]);
        if !(area > 0.0) {
            return Err(TorusError::NormalOrientation { pair: i, area });
        }
        let f = 1.0 / area.sqrt();
        scale[(i, i)] = f;
        scale[(i + m, i + m)] = f;
    }
    w.right_mul_const(&scale)
}

fn step_from(
    step: usize,
    sol: &TorusSolution,
    model: &dyn ModelFamily,
    lin: &Linearization,
    audit: &DivisorAudit,
    opts: &NewtonOptions,
) -> Result<(TorusSolution, StepReport)> {
    let mut report = base_report(step, sol, lin, audit);
    let frame = &lin.frame;
    let corr = solve_k_block(&lin.res.e_k, &lin.res.eval.parameter_jacobian, frame, &sol.freq, opts)?;
    report.average_defect = corr.average_defect;
    report.torsion_condition = corr.torsion_condition;

    if sol.normal_dim() == 0 {
        let k = &sol.k + &frame.p.multiply(&corr.xi_eta)?.low_pass();
        let next = TorusSolution { k, ..sol.clone() };
        return Ok((next, report));
    }

    let system = assemble_bundle_system(model, sol, &lin.res.e_w, frame, &corr)?;
    let b_avgs: Vec<DMatrix<f64>> = system
        .b_hat
        .iter()
        .map(|b| b.rows_range(2 * sol.tangent_dim()..b.rows()).average())
        .collect();
    let eta_avg = system
        .eta_hat
        .rows_range(2 * sol.tangent_dim()..system.eta_hat.rows())
        .average();
    let shift = parameter_shift(&eta_avg, &b_avgs, opts.transversality_cap)?;
    let (xi_w, defect) = solve_w_block(&system, &shift, frame, &sol.freq, opts)?;

    let xi_k = &corr.xi_eta
        - &corr.xi_b.right_mul_const(&DMatrix::from_column_slice(
            shift.dlambda.len(),
            1,
            shift.dlambda.as_slice(),
        ))?;
    let k = &sol.k + &frame.p.multiply(&xi_k)?.low_pass();
    let w = &sol.w + &frame.p.multiply(&xi_w)?.low_pass();
    let w = normalize_bundle(model, &k, &w)?;
    let lambda: Vec<f64> = sol
        .lambda
        .iter()
        .zip(shift.dlambda.iter())
        .map(|(a, b)| a + b)
        .collect();
    let alpha: Vec<f64> = sol.alpha.iter().zip(shift.dalpha.iter()).map(|(a, b)| a + b).collect();

    report.dlambda = shift.dlambda.amax();
    report.dalpha = shift.dalpha.amax();
    report.solvability_defect = defect;
    report.transversality_condition = shift.condition;
    report.normal_block_used = true;
    let next = TorusSolution {
        k,
        w,
        lambda,
        alpha,
        freq: sol.freq.clone(),
    };
    Ok((next, report))
}

/// One Newton step. On error `sol` is left untouched.
pub fn newton_step(
    sol: &TorusSolution,
    model: &dyn ModelFamily,
    opts: &NewtonOptions,
) -> Result<(TorusSolution, StepReport)> {
    let lin = linearize(sol, model, opts)?;
    let audit = audit_divisors(&sol.freq, sol.k.grid(), opts.solver.divisor_floor);
    step_from(0, sol, model, &lin, &audit, opts)
}

/// Newton steps until `max(|E_K|, |E_W|) ≤ tol`. The log has one row per
/// step plus a final row for the accepted solution.
pub fn iterate(
    sol: &TorusSolution,
    model: &dyn ModelFamily,
    opts: &NewtonOptions,
) -> Result<(TorusSolution, Vec<StepReport>)> {
    let audit = audit_divisors(&sol.freq, sol.k.grid(), opts.solver.divisor_floor);
    if !audit.passes() {
        warn!(
            "small divisors below {:e}: tangent {:e}, first {:e}, second {:e}",
            audit.floor, audit.min_tangent, audit.min_first, audit.min_second
        );
    }
    let mut current = sol.clone();
    let mut log: Vec<StepReport> = Vec::new();
    let mut initial = f64::NAN;
    for step in 0..=opts.max_steps {
        let lin = linearize(&current, model, opts)?;
        let r = lin.res.e_k.sup_norm().max(lin.res.e_w.sup_norm());
        if !r.is_finite() {
            return Err(TorusError::NonConvergence(format!(
                "non-finite residual at step {step}"
            )));
        }
        if step == 0 {
            initial = r;
        }
        if r <= opts.tol {
            log.push(base_report(step, &current, &lin, &audit));
            info!("converged in {step} steps, residual {r:.3e}");
            return Ok((current, log));
        }
        if r > opts.divergence_factor * initial.max(opts.tol) {
            return Err(TorusError::NonConvergence(format!(
                "residual grew from {initial:.3e} to {r:.3e} at step {step}"
            )));
        }
        if step == opts.max_steps {
            break;
        }
        let (next, report) = step_from(step, &current, model, &lin, &audit, opts)?;
        debug!(
            "step {step}: |E_K| {:.3e} |E_W| {:.3e} |Δλ| {:.3e} |Δα| {:.3e}",
            report.residual_k, report.residual_w, report.dlambda, report.dalpha
        );
        log.push(report);
        current = next;
    }
    Err(TorusError::NonConvergence(format!(
        "residual {:.3e} above {:e} after {} steps",
        log.last().map(|r| r.residual()).unwrap_or(f64::NAN),
        opts.tol,
        opts.max_steps
    )))
}

/// One converged node of a continuation.
#[derive(Clone, Debug)]
pub struct ContinuationNode {
    pub value: f64,
    pub log: Vec<StepReport>,
    pub lambda: Vec<f64>,
}

/// Follow a solution along a scalar parameter. `family(v)` builds the model
/// at value `v`. Every entry of the strictly monotone `schedule` is reached
/// exactly; a failed increment is halved until it drops below `min_step`.
/// The prediction for each node is the previous converged solution.
pub fn continue_parameter<M, F>(
    sol: &TorusSolution,
    family: F,
    schedule: &[f64],
    opts: &NewtonOptions,
    min_step: f64,
) -> Result<(TorusSolution, Vec<ContinuationNode>)>
where
    M: ModelFamily,
    F: Fn(f64) -> Result<M>,
{
    if schedule.is_empty() {
        return Err(TorusError::InvalidSchedule("empty schedule".into()));
    }
    if schedule.iter().any(|v| !v.is_finite()) {
        return Err(TorusError::InvalidSchedule("non-finite schedule value".into()));
    }
    let increasing = schedule.windows(2).all(|w| w[1] > w[0]);
    let decreasing = schedule.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(TorusError::InvalidSchedule(format!(
            "{schedule:?} is not strictly monotone"
        )));
    }
    let mut nodes = Vec::new();
    let model = family(schedule[0])?;
    let (mut current, log) = iterate(sol, &model, opts)?;
    nodes.push(ContinuationNode {
        value: schedule[0],
        log,
        lambda: current.lambda.clone(),
    });
    let mut value = schedule[0];
    for &target in &schedule[1..] {
        let mut h = target - value;
        while value != target {
            let trial = if (target - value).abs() <= h.abs() {
                target
            } else {
                value + h
            };
            let model = family(trial)?;
            match iterate(&current, &model, opts) {
                Ok((next, log)) => {
                    info!(
                        "continuation reached {trial:e} in {} steps",
                        log.len().saturating_sub(1)
                    );
                    current = next;
                    value = trial;
                    nodes.push(ContinuationNode {
                        value,
                        log,
                        lambda: current.lambda.clone(),
                    });
                    h *= 2.0;
                }
                Err(err) => {
                    h *= 0.5;
                    warn!("continuation to {trial:e} failed ({err}); halving increment to {h:e}");
                    if h.abs() < min_step {
                        return Err(TorusError::StepUnderflow { value, increment: h });
                    }
                }
            }
        }
    }
    Ok((current, nodes))
}
