//! Mode-by-mode solvers for the linear equations met in a Newton step:
//!
//! * `L_ω u = v` (zero-average right-hand side, prescribed average),
//! * `L_ω u + Γ u = v` and `L_ω u - u Γ = v` (one normal frequency per pair),
//! * `L_ω U + Γ U - U Γ = V` (pairs of normal frequencies),
//!
//! where `Γ = [[0, -diag β], [diag β, 0]]` is the rotation generator of the
//! normal dynamics. Components `j` and `j + m` of the normal directions form
//! one rotation pair.

use nalgebra::{DMatrix, Matrix4, Vector4};
use num_complex::Complex64;

use crate::error::{Result, TorusError};
use crate::fourier::{FourierSeries, Grid};

/// Tangent and normal frequencies of a torus.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyData {
    pub omega: Vec<f64>,
    pub beta: Vec<f64>,
    /// Optional Diophantine constants `(γ, τ)`, used only by the audit.
    pub diophantine: Option<(f64, f64)>,
}

impl FrequencyData {
    pub fn new(omega: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if omega.is_empty() {
            return Err(TorusError::InvalidFrequencies("no tangent frequencies".into()));
        }
        if omega.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(TorusError::InvalidFrequencies("non-finite frequency".into()));
        }
        for (i, &b) in beta.iter().enumerate() {
            if b == 0.0 {
                return Err(TorusError::InvalidFrequencies(format!("normal frequency {i} is zero")));
            }
            for (j, &c) in beta.iter().enumerate().skip(i + 1) {
                if b.abs() == c.abs() {
                    return Err(TorusError::InvalidFrequencies(format!(
                        "normal frequencies {i} and {j} have equal modulus {}",
                        b.abs()
                    )));
                }
            }
        }
        Ok(FrequencyData {
            omega,
            beta,
            diophantine: None,
        })
    }

    pub fn with_diophantine(mut self, gamma: f64, tau: f64) -> Self {
        self.diophantine = Some((gamma, tau));
        self
    }

    pub fn tangent_dim(&self) -> usize {
        self.omega.len()
    }

    pub fn normal_dim(&self) -> usize {
        self.beta.len()
    }
}

/// `Γ_{α,β} = [[diag α, -diag β], [diag β, diag α]]`.
pub fn normal_generator(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let m = beta.len();
    let mut g = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        let a = alpha.get(i).copied().unwrap_or(0.0);
        g[(i, i)] = a;
        g[(i + m, i + m)] = a;
        g[(i, i + m)] = -beta[i];
        g[(i + m, i)] = beta[i];
    }
    g
}

/// Numerical thresholds shared by the solvers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Smallest admissible divisor.
    pub divisor_floor: f64,
    /// Largest admissible average of a zero-average right-hand side,
    /// relative to its sup norm.
    pub avg_tol: f64,
    /// Largest admissible distance of the singular averages from the image,
    /// relative to the sup norm of the right-hand side.
    pub solvability_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            divisor_floor: 1e-8,
            avg_tol: 1e-8,
            solvability_tol: 1e-7,
        }
    }
}

/// Smallest divisors over the represented (non-Nyquist) modes.
#[derive(Clone, Debug, PartialEq)]
pub struct DivisorAudit {
    pub floor: f64,
    /// `min |k·ω|` over `k ≠ 0`.
    pub min_tangent: f64,
    pub worst_tangent: Option<Vec<i64>>,
    /// `min |k·ω ± β_i|`.
    pub min_first: f64,
    pub worst_first: Option<(Vec<i64>, usize)>,
    /// `min |k·ω ± β_i ± β_j|`, skipping the identically zero combinations
    /// of the `k = 0, i = j` blocks.
    pub min_second: f64,
    pub worst_second: Option<(Vec<i64>, usize, usize)>,
    /// Largest `γ/|k|₁^τ - divisor` when Diophantine constants were given;
    /// positive values are violations.
    pub diophantine_excess: Option<f64>,
}

impl DivisorAudit {
    pub fn passes(&self) -> bool {
        self.min_tangent > self.floor && self.min_first > self.floor && self.min_second > self.floor
    }
}

fn second_divisor(kw: f64, bi: f64, bj: f64, same: bool) -> f64 {
    if same {
        kw.abs().min((kw - 2.0 * bi).abs()).min((kw + 2.0 * bi).abs())
    } else {
        [bi + bj, bi - bj, -bi + bj, -bi - bj]
            .iter()
            .map(|s| (kw + s).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

fn first_divisor(kw: f64, b: f64) -> f64 {
    (kw - b).abs().min((kw + b).abs())
}

/// Scan every represented mode of `grid` for small divisors.
pub fn audit_divisors(freq: &FrequencyData, grid: &Grid, floor: f64) -> DivisorAudit {
    let mut audit = DivisorAudit {
        floor,
        min_tangent: f64::INFINITY,
        worst_tangent: None,
        min_first: f64::INFINITY,
        worst_first: None,
        min_second: f64::INFINITY,
        worst_second: None,
        diophantine_excess: None,
    };
    let m = freq.normal_dim();
    let mut excess = f64::NEG_INFINITY;
    for idx in 0..grid.len() {
        if grid.is_nyquist(idx) {
            continue;
        }
        let k = grid.mode(idx);
        let kw = grid.mode_dot(idx, &freq.omega);
        let k1: i64 = k.iter().map(|v| v.abs()).sum();
        let bound = freq.diophantine.map(|(g, t)| g / (k1.max(1) as f64).powf(t));
        let zero = k1 == 0;
        if !zero {
            if kw.abs() < audit.min_tangent {
                audit.min_tangent = kw.abs();
                audit.worst_tangent = Some(k.to_vec());
            }
            if let Some(b) = bound {
                excess = excess.max(b - kw.abs());
            }
        }
        for i in 0..m {
            let dv = first_divisor(kw, freq.beta[i]);
            if dv < audit.min_first {
                audit.min_first = dv;
                audit.worst_first = Some((k.to_vec(), i));
            }
            if let Some(b) = bound {
                excess = excess.max(b - dv);
            }
            for j in 0..m {
                if zero && i == j {
                    continue;
                }
                let dv = second_divisor(kw, freq.beta[i], freq.beta[j], i == j);
                if dv < audit.min_second {
                    audit.min_second = dv;
                    audit.worst_second = Some((k.to_vec(), i, j));
                }
                if let Some(b) = bound {
                    excess = excess.max(b - dv);
                }
            }
        }
    }
    if freq.diophantine.is_some() && excess.is_finite() {
        audit.diophantine_excess = Some(excess);
    }
    audit
}

fn check_frequencies(v: &FourierSeries, omega: &[f64]) -> Result<()> {
    if omega.len() != v.grid().dims() {
        return Err(TorusError::ShapeMismatch(format!(
            "{} tangent frequencies on a {}-torus",
            omega.len(),
            v.grid().dims()
        )));
    }
    Ok(())
}

/// Solve `L_ω u = v - ⟨v⟩` with `⟨u⟩ = average`:
/// `û_k = i v̂_k / (k·ω)` for `k ≠ 0`.
pub fn solve_zero_average(
    v: &FourierSeries,
    omega: &[f64],
    average: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<FourierSeries> {
    check_frequencies(v, omega)?;
    if average.shape() != v.shape() {
        return Err(TorusError::ShapeMismatch(
            "prescribed average has the wrong shape".into(),
        ));
    }
    let grid = v.grid();
    let len = grid.len();
    let avg = v.average();
    let worst = avg.amax();
    let tol = opts.avg_tol * v.sup_norm();
    if worst > tol {
        return Err(TorusError::Unsolvable {
            defect: worst,
            tolerance: tol,
            detail: format!("right-hand side average {:?}", avg.as_slice()),
        });
    }
    let mut inv = vec![Complex64::default(); len];
    for (idx, slot) in inv.iter_mut().enumerate().skip(1) {
        if grid.is_nyquist(idx) {
            continue;
        }
        let kw = grid.mode_dot(idx, omega);
        if kw.abs() < opts.divisor_floor {
            return Err(TorusError::SmallDivisor {
                mode: grid.mode(idx).to_vec(),
                divisor: kw.abs(),
                detail: "|k·ω|".into(),
            });
        }
        *slot = Complex64::new(0.0, 1.0 / kw);
    }
    let (rows, cols) = v.shape();
    let mut coeffs = Vec::with_capacity(v.coeffs().len());
    for (c, block) in v.coeffs().chunks(len).enumerate() {
        let start = coeffs.len();
        coeffs.extend(block.iter().zip(&inv).map(|(a, b)| a * b));
        coeffs[start] = Complex64::new(average[(c / cols, c % cols)], 0.0);
    }
    FourierSeries::from_coeffs(grid, rows, cols, coeffs)
}

/// Which side Γ multiplies in the first-Melnikov equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `L_ω u + Γ u = v`, rows `j` and `j + m` paired.
    Left,
    /// `L_ω u - u Γ = v`, columns `j` and `j + m` paired.
    Right,
}

/// Both equations reduce per mode and pair to
/// `[[a, -β], [β, a]] (u₁, u₂) = (v₁, v₂)` with `a = -i k·ω`.
pub fn solve_melnikov1(
    v: &FourierSeries,
    freq: &FrequencyData,
    side: Side,
    opts: &SolverOptions,
) -> Result<FourierSeries> {
    check_frequencies(v, &freq.omega)?;
    let m = freq.normal_dim();
    let (rows, cols) = v.shape();
    let paired = match side {
        Side::Left => rows,
        Side::Right => cols,
    };
    if paired != 2 * m {
        return Err(TorusError::ShapeMismatch(format!(
            "{side:?} first-Melnikov solve needs {} paired {}, got {paired}",
            2 * m,
            if side == Side::Left { "rows" } else { "columns" }
        )));
    }
    let grid = v.grid();
    let len = grid.len();
    // Per mode and pair: (a/det, β/det).
    let mut factors = vec![(Complex64::default(), 0.0); len * m];
    for idx in 0..len {
        if grid.is_nyquist(idx) {
            continue;
        }
        let kw = grid.mode_dot(idx, &freq.omega);
        for (j, &b) in freq.beta.iter().enumerate() {
            let dv = first_divisor(kw, b);
            if dv < opts.divisor_floor {
                return Err(TorusError::SmallDivisor {
                    mode: grid.mode(idx).to_vec(),
                    divisor: dv,
                    detail: format!("|k·ω ± β_{j}|"),
                });
            }
            let det = b * b - kw * kw;
            factors[idx * m + j] = (Complex64::new(0.0, -kw / det), b / det);
        }
    }
    let src = v.coeffs();
    let mut coeffs = vec![Complex64::default(); src.len()];
    let other = if side == Side::Left { cols } else { rows };
    for o in 0..other {
        for j in 0..m {
            let (c1, c2) = match side {
                Side::Left => (j * cols + o, (j + m) * cols + o),
                Side::Right => (o * cols + j, o * cols + j + m),
            };
            for idx in 0..len {
                let (a, b) = factors[idx * m + j];
                let v1 = src[c1 * len + idx];
                let v2 = src[c2 * len + idx];
                coeffs[c1 * len + idx] = a * v1 + v2 * b;
                coeffs[c2 * len + idx] = a * v2 - v1 * b;
            }
        }
    }
    FourierSeries::from_coeffs(grid, rows, cols, coeffs)
}

/// Solution of the second-Melnikov equation together with the distance of
/// the singular averages from the solvable subspace.
#[derive(Clone, Debug)]
pub struct Melnikov2Solution {
    pub u: FourierSeries,
    pub defect: f64,
}

/// Solve `L_ω U + Γ U - U Γ = V` per mode with one 4×4 complex block per
/// pair `(i, j)`, unknowns ordered `(U_{i,j}, U_{i,j+m}, U_{i+m,j}, U_{i+m,j+m})`.
///
/// The `k = 0, i = j` block is singular: its image is `((p, q), (q, -p))`.
/// The right-hand side is projected onto it (the discarded part is the
/// returned defect) and the kernel `((a, b), (-b, a))` is set to zero.
pub fn solve_melnikov2(v: &FourierSeries, freq: &FrequencyData, opts: &SolverOptions) -> Result<Melnikov2Solution> {
    check_frequencies(v, &freq.omega)?;
    let m = freq.normal_dim();
    if v.shape() != (2 * m, 2 * m) {
        return Err(TorusError::ShapeMismatch(format!(
            "second-Melnikov solve needs a {0}x{0} right-hand side, got {1:?}",
            2 * m,
            v.shape()
        )));
    }
    let grid = v.grid();
    let len = grid.len();
    let n2 = 2 * m;
    let src = v.coeffs();
    let comp = |r: usize, c: usize| r * n2 + c;
    let mut coeffs = vec![Complex64::default(); src.len()];
    let mut defect = 0.0f64;

    for i in 0..m {
        let bi = freq.beta[i];
        let (p0, p1) = (i, i + m);
        let avg = |r: usize, c: usize| src[comp(r, c) * len].re;
        let p = 0.5 * (avg(p0, p0) - avg(p1, p1));
        let q = 0.5 * (avg(p0, p1) + avg(p1, p0));
        defect = defect
            .max((0.5 * (avg(p0, p0) + avg(p1, p1))).abs())
            .max((0.5 * (avg(p0, p1) - avg(p1, p0))).abs());
        coeffs[comp(p0, p0) * len] = Complex64::new(q / (2.0 * bi), 0.0);
        coeffs[comp(p1, p1) * len] = Complex64::new(-q / (2.0 * bi), 0.0);
        coeffs[comp(p0, p1) * len] = Complex64::new(-p / (2.0 * bi), 0.0);
        coeffs[comp(p1, p0) * len] = Complex64::new(-p / (2.0 * bi), 0.0);
    }
    let tol = opts.solvability_tol * v.sup_norm();
    if defect > tol {
        return Err(TorusError::Unsolvable {
            defect,
            tolerance: tol,
            detail: "average of the second-Melnikov right-hand side is outside the image".into(),
        });
    }

    let zero = Complex64::default();
    for idx in 0..len {
        if grid.is_nyquist(idx) {
            continue;
        }
        let kw = grid.mode_dot(idx, &freq.omega);
        let a = Complex64::new(0.0, -kw);
        for i in 0..m {
            for j in 0..m {
                if idx == 0 && i == j {
                    continue;
                }
                let (bi, bj) = (freq.beta[i], freq.beta[j]);
                let dv = second_divisor(kw, bi, bj, i == j);
                if dv < opts.divisor_floor {
                    return Err(TorusError::SmallDivisor {
                        mode: grid.mode(idx).to_vec(),
                        divisor: dv,
                        detail: format!("|k·ω ± β_{i} ± β_{j}|"),
                    });
                }
                let (bi, bj) = (Complex64::new(bi, 0.0), Complex64::new(bj, 0.0));
                #[rustfmt::skip]
                let mat = Matrix4::new(
                    a,  -bj, -bi, zero,
                    bj,  a,  zero, -bi,
                    bi, zero,  a,  -bj,
                    zero, bi,  bj,   a,
                );
                let slots = [comp(i, j), comp(i, j + m), comp(i + m, j), comp(i + m, j + m)];
                let rhs = Vector4::from_fn(|r, _| src[slots[r] * len + idx]);
                let sol = mat.lu().solve(&rhs).ok_or_else(|| TorusError::SmallDivisor {
                    mode: grid.mode(idx).to_vec(),
                    divisor: 0.0,
                    detail: format!("singular block for pair ({i}, {j})"),
                })?;
                for (r, &s) in slots.iter().enumerate() {
                    coeffs[s * len + idx] = sol[r];
                }
            }
        }
    }
    let u = FourierSeries::from_coeffs(grid, n2, n2, coeffs)?;
    Ok(Melnikov2Solution { u, defect })
}
