//! Starting data for the four-pendulum chain.
//!
//! At zero outer coupling the chain splits into the spring-coupled pair
//! (pendula 1, 2), which carries a Lagrangian 2-torus, and two free pendula
//! at rest whose linearization gives the elliptic normal directions.

use nalgebra::DMatrix;

use crate::cohomology::FrequencyData;
use crate::error::{Result, TorusError};
use crate::fourier::{FourierSeries, Grid};
use crate::model::{CoupledPendula, PendulaParams};
use crate::newton::{continue_parameter, iterate, ContinuationNode, NewtonOptions, TorusSolution};

/// Smallest admissible continuation increment in `k₁`.
const MIN_SPRING_STEP: f64 = 1e-12;

/// Invariant circle `θ ↦ (y, x)` of a pendulum of length `ell` on which the
/// motion is a libration with frequency `omega`, sampled on `n` points.
///
/// The Newton iteration starts from the harmonic guess
/// `x = A cos θ`, `y = -ℓ² A ω sin θ` with `A = 4 √(1 - ω √ℓ)`.
pub fn pendulum_circle(ell: f64, omega: f64, n: usize, opts: &NewtonOptions) -> Result<(FourierSeries, usize)> {
    let model = CoupledPendula::single(ell)?;
    if !(omega > 0.0 && omega * ell.sqrt() < 1.0) {
        return Err(TorusError::InvalidFrequencies(format!(
            "frequency {omega} is not a libration of a pendulum of length {ell} (needs 0 < ω < {})",
            1.0 / ell.sqrt()
        )));
    }
    let grid = Grid::new(&[n])?;
    let amp = 4.0 * (1.0 - omega * ell.sqrt()).sqrt();
    let guess = FourierSeries::from_fn(&grid, 2, 1, |t, o| {
        o[0] = -ell * ell * amp * omega * t[0].sin();
        o[1] = amp * t[0].cos();
    })?;
    let sol = TorusSolution::new(
        guess,
        FourierSeries::zeros(&grid, 2, 0),
        vec![],
        vec![],
        FrequencyData::new(vec![omega], vec![])?,
    )?;
    let (sol, log) = iterate(&sol, &model, opts)?;
    Ok((sol.k, log.len().saturating_sub(1)))
}

/// Initial data and the record of how it was built.
#[derive(Clone, Debug)]
pub struct InitialData {
    pub solution: TorusSolution,
    /// Converged torus of the pair at each `k₁` node.
    pub spring_continuation: Vec<ContinuationNode>,
}

/// Continuation nodes in `k₁`: `0, k₁/100, k₁/10, k₁`.
pub fn spring_schedule(k1: f64) -> Vec<f64> {
    if k1 == 0.0 {
        vec![0.0]
    } else {
        vec![0.0, k1 / 100.0, k1 / 10.0, k1]
    }
}

/// The constant normal frame of the two resting pendula, scaled so that each
/// pair has unit symplectic area.
pub fn resting_normal_frame(lengths: [f64; 2]) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(8, 4);
    for (j, &l) in lengths.iter().enumerate() {
        let a = l.powf(1.5) + l.powf(-1.5);
        let b = 1.0 / a.sqrt();
        // Rows: y_{3+j} = 4 + j, x_{3+j} = 6 + j.
        w[(4 + j, j)] = b;
        w[(6 + j, j)] = b;
        w[(4 + j, 2 + j)] = -l.powf(1.5) * b;
        w[(6 + j, 2 + j)] = l.powf(-1.5) * b;
    }
    w
}

/// Build `(K⁰, W⁰, λ = 0, α = 0)` for the chain at zero outer coupling.
///
/// `omega` are the frequencies of the pair torus; the normal frequencies
/// are `params.beta`. The pair torus is obtained from the product of two
/// pendulum circles by continuation in `k₁`.
pub fn build_initial(params: &PendulaParams, omega: [f64; 2], n: usize, opts: &NewtonOptions) -> Result<InitialData> {
    let (c1, _) = pendulum_circle(params.l1, omega[0], n, opts)?;
    let (c2, _) = pendulum_circle(params.l2, omega[1], n, opts)?;
    let grid = Grid::uniform(2, n)?;
    let len = grid.len();
    let mut samples = vec![0.0; 4 * len];
    for p in 0..len {
        let (j1, j2) = (p / n, p % n);
        samples[p] = c1.samples()[j1];
        samples[len + p] = c2.samples()[j2];
        samples[2 * len + p] = c1.samples()[n + j1];
        samples[3 * len + p] = c2.samples()[n + j2];
    }
    let product = TorusSolution::new(
        FourierSeries::from_samples(&grid, 4, 1, samples)?,
        FourierSeries::zeros(&grid, 4, 0),
        vec![],
        vec![],
        FrequencyData::new(omega.to_vec(), vec![])?,
    )?;
    let (l1, l2) = (params.l1, params.l2);
    let (pair, nodes) = continue_parameter(
        &product,
        |k1| CoupledPendula::pair(l1, l2, k1),
        &spring_schedule(params.k1),
        opts,
        MIN_SPRING_STEP,
    )?;

    let mut k = vec![0.0; 8 * len];
    k[..4 * len].copy_from_slice(pair.k.samples());
    let k = FourierSeries::from_samples(&grid, 8, 1, k)?;
    let lengths = [params.beta[0].powi(-2), params.beta[1].powi(-2)];
    let w = FourierSeries::constant(&grid, &resting_normal_frame(lengths));
    let freq = FrequencyData::new(omega.to_vec(), params.beta.to_vec())?;
    let solution = TorusSolution::new(k, w, vec![0.0; 2], vec![0.0; 2], freq)?;
    Ok(InitialData {
        solution,
        spring_continuation: nodes,
    })
}
