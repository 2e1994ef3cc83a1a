//! The adapted frame `P = (L N W)` of an approximately invariant torus with
//! its normal bundle.
//!
//! `L = DK` spans the tangent directions, `W` the elliptic normal ones and
//! `N = L A + J L B + W C` completes them to a symplectic basis with
//! `B = G_LL⁻¹`, `C = Ω_WW⁻¹ G_WL B`, `A = ½ Cᵀ Ω_WW C`. Pairings are written
//! `Ω_XY = Xᵀ (Ω∘K) Y` and `G_XY = Xᵀ (G∘K) Y`.

use nalgebra::DMatrix;

use crate::cohomology::normal_generator;
use crate::error::{Result, TorusError};
use crate::fourier::{FourierSeries, Grid};
use crate::model::{
    complex_structure_on_torus, eval_on_torus, metric_on_torus, symplectic_on_torus, FormField, ModelFamily,
};

#[derive(Clone, Debug)]
pub struct AdaptedFrame {
    pub l: FourierSeries,
    pub n: FourierSeries,
    pub w: FourierSeries,
    pub a: FourierSeries,
    pub b: FourierSeries,
    pub c: FourierSeries,
    /// `(L N W)`, `2n × 2n`.
    pub p: FourierSeries,
    /// `[Nᵀ Ω; -Lᵀ Ω; Ω_WW⁻¹ Wᵀ Ω]`.
    pub pinv: FourierSeries,
    /// `Nᵀ Ω (L_ω N + D_z X_h N)`, `d × d`.
    pub torsion: FourierSeries,
    pub omega_ww: FourierSeries,
    pub omega_ww_inv: FourierSeries,
    pub omega_ll: FourierSeries,
    pub omega_lw: FourierSeries,
    pub omega: FormField,
}

impl AdaptedFrame {
    pub fn tangent_dim(&self) -> usize {
        self.l.cols()
    }

    pub fn normal_dim(&self) -> usize {
        self.w.cols() / 2
    }

    /// Condition number of `⟨T⟩` in the 2-norm.
    pub fn torsion_condition(&self) -> f64 {
        condition_number(&self.torsion.average())
    }
}

/// 2-norm condition number; infinite for singular or empty-rank matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Pointwise inverse of a square series; singular points are reported as a
/// degenerate frame.
fn pointwise_inverse(s: &FourierSeries, what: &str) -> Result<FourierSeries> {
    let k = s.rows();
    s.map_points(k, k, |pt, v, out| {
        let m = DMatrix::from_row_slice(k, k, v);
        let inv = m.clone().try_inverse().filter(|i| i.iter().all(|x| x.is_finite()));
        let inv = inv.ok_or_else(|| TorusError::DegenerateFrame {
            index: pt,
            detail: format!("{what} is singular"),
        })?;
        if k > 0 && condition_number(&m) > 1e14 {
            return Err(TorusError::DegenerateFrame {
                index: pt,
                detail: format!("{what} is numerically singular"),
            });
        }
        for r in 0..k {
            for c in 0..k {
                out[r * k + c] = inv[(r, c)];
            }
        }
        Ok(())
    })
}

/// `(Ω∘K) X` transposed from the left: `Xᵀ Ω = -(Ω X)ᵀ` for antisymmetric Ω.
fn pull_back(omega: &FormField, x: &FourierSeries) -> Result<FourierSeries> {
    Ok(omega.apply(x)?.transpose().scale(-1.0))
}

/// Build the frame from `K`, `W` and `D_z X_h∘K` (needed for the torsion).
pub fn build_frame_with(
    model: &dyn ModelFamily,
    k: &FourierSeries,
    w: &FourierSeries,
    jacobian: &FourierSeries,
    omega_freq: &[f64],
) -> Result<AdaptedFrame> {
    let dim = 2 * model.degrees_of_freedom();
    if w.rows() != dim || !w.cols().is_multiple_of(2) {
        return Err(TorusError::ShapeMismatch(format!(
            "normal bundle has shape {:?} for a {dim}-dimensional phase space",
            w.shape()
        )));
    }
    let d = k.grid().dims();
    if dim != 2 * d + w.cols() {
        return Err(TorusError::ShapeMismatch(format!(
            "{d} tangent and {} normal directions do not span {dim} dimensions",
            w.cols()
        )));
    }
    let omega = symplectic_on_torus(model, k)?;
    let metric = metric_on_torus(model, k)?;
    let cplx = complex_structure_on_torus(model, k)?;

    let l = k.jacobian()?;
    let gl = metric.apply(&l)?;
    let g_ll = l.transpose().multiply(&gl)?;
    let b = pointwise_inverse(&g_ll, "LᵀGL")?;

    let lt_omega = pull_back(&omega, &l)?;
    let wt_omega = pull_back(&omega, w)?;
    let omega_ll = lt_omega.multiply(&l)?;
    let omega_lw = lt_omega.multiply(w)?;
    let omega_ww = wt_omega.multiply(w)?;
    let omega_ww_inv = pointwise_inverse(&omega_ww, "Ω_WW")?;

    let c = omega_ww_inv.multiply(&w.transpose().multiply(&gl)?)?.multiply(&b)?;
    let a = c.transpose().multiply(&omega_ww)?.multiply(&c)?.scale(0.5);
    let jl = cplx.apply(&l)?;
    let n = &(&l.multiply(&a)? + &jl.multiply(&b)?) + &w.multiply(&c)?;

    let nt_omega = pull_back(&omega, &n)?;
    let pinv = FourierSeries::vstack(&[&nt_omega, &lt_omega.scale(-1.0), &omega_ww_inv.multiply(&wt_omega)?])?;
    let p = FourierSeries::hstack(&[&l, &n, w])?;
    let flow_n = &n.lie_derivative(omega_freq)? + &jacobian.multiply(&n)?;
    let torsion = nt_omega.multiply(&flow_n)?;

    Ok(AdaptedFrame {
        l,
        n,
        w: w.clone(),
        a,
        b,
        c,
        p,
        pinv,
        torsion,
        omega_ww,
        omega_ww_inv,
        omega_ll,
        omega_lw,
        omega,
    })
}

/// Build the frame, evaluating the model along `K`.
pub fn build_frame(
    model: &dyn ModelFamily,
    k: &FourierSeries,
    w: &FourierSeries,
    lambda: &[f64],
    omega_freq: &[f64],
) -> Result<AdaptedFrame> {
    let eval = eval_on_torus(model, k, lambda)?;
    build_frame_with(model, k, w, &eval.jacobian, omega_freq)
}

/// How far the frame is from symplectic and from reducing the linearized
/// flow to constant coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameDefects {
    /// `‖Pᵀ Ω P - diag(Ω_d, Ω_WW)‖` with `Ω_d = [[0, -I], [I, 0]]`.
    pub symplectic: f64,
    /// `‖P⁻¹(L_ω P + D_z X_h P) - Λ‖`.
    pub reducibility: f64,
    pub omega_ll: f64,
    pub omega_lw: f64,
}

/// `Ω_d = [[0, -I], [I, 0]]`, the pairing of `(L, N)` produced by the frame.
pub fn tangent_form(d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        m[(i, d + i)] = -1.0;
        m[(d + i, i)] = 1.0;
    }
    m
}

/// `Pinv (L_ω P + D_z X_h P)`, whose ideal form is `Λ`.
pub fn reduced_flow(frame: &AdaptedFrame, jacobian: &FourierSeries, omega_freq: &[f64]) -> Result<FourierSeries> {
    let flow_p = &frame.p.lie_derivative(omega_freq)? + &jacobian.multiply(&frame.p)?;
    frame.pinv.multiply(&flow_p)
}

/// Row-sum norm of one matrix, matching [`FourierSeries::sup_norm`].
fn row_sum_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn invert_at(m: DMatrix<f64>, index: usize, what: &str) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Ok(m);
    }
    let cond = condition_number(&m);
    m.try_inverse()
        .filter(|_| cond <= 1e14)
        .ok_or_else(|| TorusError::DegenerateFrame {
            index,
            detail: format!("{what} is singular"),
        })
}

/// Frame defects of the trigonometric polynomials `K`, `W`, measured on a
/// grid refined `factor` times along every angle.
///
/// `G_LL⁻¹` often has singularities close to the real torus, so the frame
/// needs many more modes than `K` itself and its truncation dominates
/// [`frame_defects`] long before the residual does. Here the frame and its
/// closed-form inverse are assembled point by point on the fine grid; only
/// `L`, `N` and `W` pass through coefficient space, for `L_ω`.
#[allow(clippy::too_many_arguments)]
pub fn oversampled_defects(
    model: &dyn ModelFamily,
    k: &FourierSeries,
    w: &FourierSeries,
    lambda: &[f64],
    omega_freq: &[f64],
    beta: &[f64],
    alpha: &[f64],
    factor: usize,
) -> Result<FrameDefects> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(TorusError::InvalidGrid(format!(
            "oversampling factor {factor} is not a power of two"
        )));
    }
    let sizes: Vec<usize> = k.grid().sizes().iter().map(|n| n * factor).collect();
    let fine = Grid::new(&sizes)?;
    let k = k.resample(&fine)?;
    let w = w.resample(&fine)?;
    let dim = k.rows();
    let d = fine.dims();
    let m = w.cols() / 2;
    let l = k.jacobian()?;
    let flow_l = l.lie_derivative(omega_freq)?;
    let flow_w = w.lie_derivative(omega_freq)?;

    let fixed = model.constant_forms().then(|| {
        let z = vec![0.0; dim];
        (model.symplectic_form(&z), model.metric(&z), model.complex_structure(&z))
    });
    let forms = |z: &[f64]| match &fixed {
        Some(f) => f.clone(),
        None => (model.symplectic_form(z), model.metric(z), model.complex_structure(z)),
    };
    let point = |p: usize| -> Vec<f64> { (0..dim).map(|i| k.samples()[i * fine.len() + p]).collect() };

    let n = k.map_points(dim, d, |p, z, out| {
        let (om, g, j) = forms(z);
        let lp = l.value_at_point(p);
        let wp = w.value_at_point(p);
        let gl = &g * &lp;
        let b = invert_at(lp.transpose() * &gl, p, "LᵀGL")?;
        let om_ww_inv = invert_at(wp.transpose() * &om * &wp, p, "Ω_WW")?;
        let c = &om_ww_inv * wp.transpose() * &gl * &b;
        let a = c.transpose() * (wp.transpose() * &om * &wp) * &c * 0.5;
        let np = &lp * a + j * &lp * b + &wp * c;
        for r in 0..dim {
            for col in 0..d {
                out[r * d + col] = np[(r, col)];
            }
        }
        Ok(())
    })?;
    let flow_n = n.lie_derivative(omega_freq)?;

    let corner = normal_generator(alpha, beta);
    let head = tangent_form(d);
    let mut out = FrameDefects {
        symplectic: 0.0,
        reducibility: 0.0,
        omega_ll: 0.0,
        omega_lw: 0.0,
    };
    for p in 0..fine.len() {
        let z = point(p);
        model
            .check_domain(&z)
            .map_err(|detail| TorusError::DomainEscape { index: p, detail })?;
        let (om, _, _) = forms(&z);
        let (lp, np, wp) = (l.value_at_point(p), n.value_at_point(p), w.value_at_point(p));
        let mut pp = DMatrix::zeros(dim, dim);
        pp.columns_mut(0, d).copy_from(&lp);
        pp.columns_mut(d, d).copy_from(&np);
        pp.columns_mut(2 * d, 2 * m).copy_from(&wp);
        let mut flow = DMatrix::zeros(dim, dim);
        flow.columns_mut(0, d).copy_from(&flow_l.value_at_point(p));
        flow.columns_mut(d, d).copy_from(&flow_n.value_at_point(p));
        flow.columns_mut(2 * d, 2 * m).copy_from(&flow_w.value_at_point(p));
        flow += model.jacobian(&z, lambda) * &pp;

        let om_ww = wp.transpose() * &om * &wp;
        let mut pinv = DMatrix::zeros(dim, dim);
        pinv.rows_mut(0, d).copy_from(&(np.transpose() * &om));
        pinv.rows_mut(d, d).copy_from(&(-lp.transpose() * &om));
        if m > 0 {
            let inv = invert_at(om_ww.clone(), p, "Ω_WW")?;
            pinv.rows_mut(2 * d, 2 * m).copy_from(&(inv * wp.transpose() * &om));
        }

        let mut gram = pp.transpose() * &om * &pp;
        let mut g = gram.view_mut((0, 0), (2 * d, 2 * d));
        g -= &head;
        let mut g = gram.view_mut((2 * d, 2 * d), (2 * m, 2 * m));
        g -= &om_ww;
        out.symplectic = out.symplectic.max(row_sum_norm(&gram));

        // The torsion block of Λ is defined by the same expression, so it
        // cancels exactly.
        let mut reduced = pinv * flow;
        reduced.view_mut((0, d), (d, d)).fill(0.0);
        let mut g = reduced.view_mut((2 * d, 2 * d), (2 * m, 2 * m));
        g -= &corner;
        out.reducibility = out.reducibility.max(row_sum_norm(&reduced));

        let lt_om = lp.transpose() * &om;
        out.omega_ll = out.omega_ll.max(row_sum_norm(&(&lt_om * &lp)));
        out.omega_lw = out.omega_lw.max(row_sum_norm(&(&lt_om * &wp)));
    }
    Ok(out)
}

/// Square `dim × dim` series with the given square blocks on the diagonal,
/// each starting at the given offset.
fn place_blocks(grid: &Grid, dim: usize, blocks: &[(usize, &FourierSeries)]) -> Result<FourierSeries> {
    let len = grid.len();
    let mut samples = vec![0.0; dim * dim * len];
    for (offset, blk) in blocks {
        let k = blk.rows();
        for i in 0..k {
            for j in 0..k {
                let dst = ((offset + i) * dim + offset + j) * len;
                samples[dst..dst + len].copy_from_slice(blk.component_samples(i, j));
            }
        }
    }
    FourierSeries::from_samples(grid, dim, dim, samples)
}

/// `Λ`'s torsion block: `T` in rows `0..d`, columns `d..2d`.
fn place_torsion(grid: &Grid, dim: usize, t: &FourierSeries) -> Result<FourierSeries> {
    let len = grid.len();
    let d = t.rows();
    let mut samples = vec![0.0; dim * dim * len];
    for i in 0..d {
        for j in 0..d {
            let dst = (i * dim + d + j) * len;
            samples[dst..dst + len].copy_from_slice(t.component_samples(i, j));
        }
    }
    FourierSeries::from_samples(grid, dim, dim, samples)
}

pub fn frame_defects(
    frame: &AdaptedFrame,
    jacobian: &FourierSeries,
    omega_freq: &[f64],
    beta: &[f64],
    alpha: &[f64],
) -> Result<FrameDefects> {
    let d = frame.tangent_dim();
    let m = frame.normal_dim();
    let dim = 2 * d + 2 * m;
    let grid = frame.p.grid();
    let pt_omega = pull_back(&frame.omega, &frame.p)?;
    let gram = pt_omega.multiply(&frame.p)?;
    let head = FourierSeries::constant(grid, &tangent_form(d));
    let target = place_blocks(grid, dim, &[(0, &head), (2 * d, &frame.omega_ww)])?;
    let symplectic = (&gram - &target).sup_norm();

    let reduced = reduced_flow(frame, jacobian, omega_freq)?;
    let corner = FourierSeries::constant(grid, &normal_generator(alpha, beta));
    let mut ideal = place_blocks(grid, dim, &[(2 * d, &corner)])?;
    ideal = &ideal + &place_torsion(grid, dim, &frame.torsion)?;
    let reducibility = (&reduced - &ideal).sup_norm();
    Ok(FrameDefects {
        symplectic,
        reducibility,
        omega_ll: frame.omega_ll.sup_norm(),
        omega_lw: frame.omega_lw.sup_norm(),
    })
}
