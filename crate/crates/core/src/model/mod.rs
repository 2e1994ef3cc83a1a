//! Parametric Hamiltonian families and their evaluation along a torus.

mod pendula;

pub use pendula::{make_pendula, CoupledPendula, PendulaParams};

use nalgebra::DMatrix;

use crate::error::{Result, TorusError};
use crate::fourier::FourierSeries;

/// A Hamiltonian family `h(z; λ)` on `R^{2n}` with compatible constant or
/// state-dependent structures `(Ω, G, J)`, `ΩJ = -G`.
///
/// The vector field is `X_h = Ω⁻¹ ∇h`. All callbacks must be pure.
pub trait ModelFamily: Send + Sync {
    /// `n`.
    fn degrees_of_freedom(&self) -> usize;

    /// Number of unfolding parameters `λ`.
    fn parameter_count(&self) -> usize;

    fn energy(&self, z: &[f64], lambda: &[f64]) -> f64;

    fn vector_field(&self, z: &[f64], lambda: &[f64]) -> Vec<f64>;

    /// `D_z X_h`, `2n × 2n`.
    fn jacobian(&self, z: &[f64], lambda: &[f64]) -> DMatrix<f64>;

    /// `D_λ X_h`, `2n × p`.
    fn parameter_jacobian(&self, z: &[f64], lambda: &[f64]) -> DMatrix<f64>;

    /// `Σ_k dλ_k ∂_{λ_k} D_z X_h`.
    fn jacobian_lambda_derivative(&self, z: &[f64], lambda: &[f64], dlambda: &[f64]) -> DMatrix<f64>;

    /// `Σ_k dz_k ∂_{z_k} D_z X_h`.
    fn jacobian_z_derivative(&self, z: &[f64], lambda: &[f64], dz: &[f64]) -> DMatrix<f64>;

    fn symplectic_form(&self, z: &[f64]) -> DMatrix<f64>;

    fn metric(&self, z: &[f64]) -> DMatrix<f64>;

    fn complex_structure(&self, z: &[f64]) -> DMatrix<f64>;

    /// When true, `Ω`, `G`, `J` do not depend on `z` and are evaluated once.
    fn constant_forms(&self) -> bool {
        false
    }

    /// Reject phase points outside the region where the family is meant to
    /// be used.
    fn check_domain(&self, _z: &[f64]) -> std::result::Result<(), String> {
        Ok(())
    }

    fn check_parameters(&self, _lambda: &[f64]) -> std::result::Result<(), String> {
        Ok(())
    }
}

/// A structure matrix evaluated along a torus.
#[derive(Clone, Debug)]
pub enum FormField {
    Constant(DMatrix<f64>),
    Varying(FourierSeries),
}

impl FormField {
    /// `F∘K · s`.
    pub fn apply(&self, s: &FourierSeries) -> Result<FourierSeries> {
        match self {
            FormField::Constant(m) => s.left_mul_const(m),
            FormField::Varying(f) => f.multiply(s),
        }
    }

    /// `s · F∘K`.
    pub fn apply_right(&self, s: &FourierSeries) -> Result<FourierSeries> {
        match self {
            FormField::Constant(m) => s.right_mul_const(m),
            FormField::Varying(f) => s.multiply(f),
        }
    }
}

fn form_on_torus<F>(model: &dyn ModelFamily, k: &FourierSeries, f: F) -> Result<FormField>
where
    F: Fn(&[f64]) -> DMatrix<f64>,
{
    let dim = 2 * model.degrees_of_freedom();
    if model.constant_forms() {
        return Ok(FormField::Constant(f(&vec![0.0; dim])));
    }
    let field = k.map_points(dim, dim, |_, z, out| {
        let m = f(z);
        for r in 0..dim {
            for c in 0..dim {
                out[r * dim + c] = m[(r, c)];
            }
        }
        Ok(())
    })?;
    Ok(FormField::Varying(field))
}

/// `Ω∘K`.
pub fn symplectic_on_torus(model: &dyn ModelFamily, k: &FourierSeries) -> Result<FormField> {
    form_on_torus(model, k, |z| model.symplectic_form(z))
}

/// `G∘K`.
pub fn metric_on_torus(model: &dyn ModelFamily, k: &FourierSeries) -> Result<FormField> {
    form_on_torus(model, k, |z| model.metric(z))
}

/// `J∘K`.
pub fn complex_structure_on_torus(model: &dyn ModelFamily, k: &FourierSeries) -> Result<FormField> {
    form_on_torus(model, k, |z| model.complex_structure(z))
}

/// Vector field and first derivatives sampled along `K`.
#[derive(Clone, Debug)]
pub struct TorusEval {
    /// `X_h∘K`, `2n × 1`.
    pub field: FourierSeries,
    /// `D_z X_h∘K`, `2n × 2n`.
    pub jacobian: FourierSeries,
    /// `D_λ X_h∘K`, `2n × p`.
    pub parameter_jacobian: FourierSeries,
}

fn check_embedding(model: &dyn ModelFamily, k: &FourierSeries, lambda: &[f64]) -> Result<()> {
    let dim = 2 * model.degrees_of_freedom();
    if k.shape() != (dim, 1) {
        return Err(TorusError::ShapeMismatch(format!(
            "embedding has shape {:?}, model needs {dim}x1",
            k.shape()
        )));
    }
    if lambda.len() != model.parameter_count() {
        return Err(TorusError::ShapeMismatch(format!(
            "{} parameters given, model has {}",
            lambda.len(),
            model.parameter_count()
        )));
    }
    model.check_parameters(lambda).map_err(TorusError::InvalidParameters)
}

fn copy_matrix(m: &DMatrix<f64>, out: &mut [f64]) {
    let cols = m.ncols();
    for r in 0..m.nrows() {
        for c in 0..cols {
            out[r * cols + c] = m[(r, c)];
        }
    }
}

/// Gridwise evaluation of `X_h`, `D_z X_h` and `D_λ X_h` at `(K(θ); λ)`.
pub fn eval_on_torus(model: &dyn ModelFamily, k: &FourierSeries, lambda: &[f64]) -> Result<TorusEval> {
    check_embedding(model, k, lambda)?;
    let dim = 2 * model.degrees_of_freedom();
    let p = model.parameter_count();
    let grid = k.grid();
    let len = grid.len();
    let mut field = vec![0.0; dim * len];
    let mut jac = vec![0.0; dim * dim * len];
    let mut pjac = vec![0.0; dim * p * len];
    let mut z = vec![0.0; dim];
    let mut buf = vec![0.0; dim * dim.max(p)];
    for pt in 0..len {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = k.samples()[i * len + pt];
        }
        model
            .check_domain(&z)
            .map_err(|detail| TorusError::DomainEscape { index: pt, detail })?;
        for (i, v) in model.vector_field(&z, lambda).into_iter().enumerate() {
            field[i * len + pt] = v;
        }
        copy_matrix(&model.jacobian(&z, lambda), &mut buf);
        for (c, v) in buf[..dim * dim].iter().enumerate() {
            jac[c * len + pt] = *v;
        }
        if p > 0 {
            copy_matrix(&model.parameter_jacobian(&z, lambda), &mut buf);
            for (c, v) in buf[..dim * p].iter().enumerate() {
                pjac[c * len + pt] = *v;
            }
        }
    }
    Ok(TorusEval {
        field: FourierSeries::from_samples(grid, dim, 1, field)?,
        jacobian: FourierSeries::from_samples(grid, dim, dim, jac)?,
        parameter_jacobian: FourierSeries::from_samples(grid, dim, p, pjac)?,
    })
}

/// Direction of the second derivative in [`eval_bilinear`].
#[derive(Clone, Copy, Debug)]
pub enum Direction<'a> {
    /// `D_{λz}X_h[Δλ, ·]`.
    Parameters(&'a [f64]),
    /// `D_{zz}X_h[ΔK, ·]` with `ΔK` a `2n × 1` series.
    State(&'a FourierSeries),
}

/// `D_{λz}X_h[Δλ, W]` or `D_{zz}X_h[ΔK, W]` along `K`.
pub fn eval_bilinear(
    model: &dyn ModelFamily,
    k: &FourierSeries,
    lambda: &[f64],
    direction: Direction<'_>,
    w: &FourierSeries,
) -> Result<FourierSeries> {
    check_embedding(model, k, lambda)?;
    let dim = 2 * model.degrees_of_freedom();
    if w.rows() != dim {
        return Err(TorusError::ShapeMismatch(format!(
            "W has {} rows, model needs {dim}",
            w.rows()
        )));
    }
    let len = k.grid().len();
    let mut dz = vec![0.0; dim];
    let op = match direction {
        Direction::Parameters(dl) => {
            if dl.len() != model.parameter_count() {
                return Err(TorusError::ShapeMismatch(
                    "parameter direction has the wrong length".into(),
                ));
            }
            k.map_points(dim, dim, |_, z, out| {
                copy_matrix(&model.jacobian_lambda_derivative(z, lambda, dl), out);
                Ok(())
            })?
        }
        Direction::State(dk) => {
            if dk.shape() != (dim, 1) || dk.grid() != k.grid() {
                return Err(TorusError::ShapeMismatch("state direction has the wrong shape".into()));
            }
            k.map_points(dim, dim, |pt, z, out| {
                for (i, v) in dz.iter_mut().enumerate() {
                    *v = dk.samples()[i * len + pt];
                }
                copy_matrix(&model.jacobian_z_derivative(z, lambda, &dz), out);
                Ok(())
            })?
        }
    };
    op.multiply(w)
}

/// Check the structural identities of a family at one phase point:
/// `Ω` antisymmetric and invertible, `G` symmetric positive definite,
/// `J² = -I`, `ΩJ = -G`, and `D_z X_h` against central differences.
pub fn validate_structure(model: &dyn ModelFamily, z: &[f64], lambda: &[f64]) -> Result<()> {
    let dim = 2 * model.degrees_of_freedom();
    let bad = |msg: String| Err(TorusError::InvalidParameters(msg));
    let omega = model.symplectic_form(z);
    let g = model.metric(z);
    let j = model.complex_structure(z);
    if omega.shape() != (dim, dim) || g.shape() != (dim, dim) || j.shape() != (dim, dim) {
        return bad("structure matrices have the wrong size".into());
    }
    let tol = 1e-12;
    if (&omega + omega.transpose()).amax() > tol {
        return bad("Ω is not antisymmetric".into());
    }
    if omega.clone().try_inverse().is_none() {
        return bad("Ω is singular".into());
    }
    if (&g - g.transpose()).amax() > tol || g.clone().cholesky().is_none() {
        return bad("G is not symmetric positive definite".into());
    }
    if (&j * &j + DMatrix::identity(dim, dim)).amax() > tol {
        return bad("J² ≠ -I".into());
    }
    if (&omega * &j + &g).amax() > tol {
        return bad("ΩJ ≠ -G".into());
    }
    let jac = model.jacobian(z, lambda);
    let h = 1e-6;
    let scale = jac.amax().max(1.0);
    for c in 0..dim {
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[c] += h;
        zm[c] -= h;
        let fp = model.vector_field(&zp, lambda);
        let fm = model.vector_field(&zm, lambda);
        for r in 0..dim {
            let fd = (fp[r] - fm[r]) / (2.0 * h);
            if (fd - jac[(r, c)]).abs() > 1e-6 * scale {
                return bad(format!(
                    "Jacobian entry ({r},{c}) = {} disagrees with finite difference {fd}",
                    jac[(r, c)]
                ));
            }
        }
    }
    Ok(())
}
